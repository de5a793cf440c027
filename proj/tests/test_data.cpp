#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "transit/data.hpp"
#include "transit/synth.hpp"

using namespace transit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("transit_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

struct Fixture {
    fs::path obs, outcomes, schema;
};

Fixture two_patient_fixture(const fs::path& dir) {
    Fixture f{dir / "obs.csv", dir / "outcomes.csv", dir / "schema.json"};
    write_file(f.schema, R"({"features": ["hr", "glucose"]})");
    write_file(f.obs,
               "patient_id,time_index,feature,value\n"
               "p1,0,hr,80\n"
               "p1,1,hr,85\n"
               "p1,0,glucose,5.5\n"
               "p2,0,hr,92\n"
               "p2,2,glucose,6.1\n");
    write_file(f.outcomes,
               "patient_id,outcome,los\n"
               "p1,0,3.5\n"
               "p2,1,7\n");
    return f;
}

}  // namespace

TEST_CASE("loading a small fixture", "[data]") {
    auto dir = temp_dir("fixture");
    Fixture f = two_patient_fixture(dir);
    Dataset ds = load_dataset(f.obs.string(), f.outcomes.string(), f.schema.string());
    REQUIRE(ds.records.size() == 2);
    CHECK(ds.schema.features == std::vector<std::string>{"hr", "glucose"});
    const PatientRecord* p1 = ds.find("p1");
    REQUIRE(p1 != nullptr);
    CHECK(p1->obs.at("hr").size() == 2);
    CHECK(p1->obs.at("glucose").size() == 1);
    CHECK(p1->y_outcome == 0);
    CHECK(p1->y_los == 3.5);
    const PatientRecord* p2 = ds.find("p2");
    REQUIRE(p2 != nullptr);
    CHECK(p2->y_outcome == 1);
}

TEST_CASE("malformed rows are reported with their line number", "[data]") {
    auto dir = temp_dir("malformed");
    Fixture f = two_patient_fixture(dir);
    write_file(f.obs,
               "patient_id,time_index,feature,value\n"
               "p1,0,hr,80\n"
               "p1,1,hr,not_a_number\n");
    REQUIRE_THROWS_MATCHES(load_dataset(f.obs.string(), f.outcomes.string(), f.schema.string()),
                           DataError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring(":3:")));
}

TEST_CASE("empty observations file with a valid header errors", "[data]") {
    auto dir = temp_dir("empty");
    Fixture f = two_patient_fixture(dir);
    write_file(f.obs, "patient_id,time_index,feature,value\n");
    REQUIRE_THROWS_MATCHES(load_dataset(f.obs.string(), f.outcomes.string(), f.schema.string()),
                           DataError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("empty dataset")));
}

TEST_CASE("duplicate observation errors", "[data]") {
    auto dir = temp_dir("dup");
    Fixture f = two_patient_fixture(dir);
    write_file(f.obs,
               "patient_id,time_index,feature,value\n"
               "p1,0,hr,80\n"
               "p1,0,hr,81\n");
    REQUIRE_THROWS_MATCHES(load_dataset(f.obs.string(), f.outcomes.string(), f.schema.string()),
                           DataError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("duplicate")));
}

TEST_CASE("missing label errors", "[data]") {
    auto dir = temp_dir("nolabel");
    Fixture f = two_patient_fixture(dir);
    write_file(f.outcomes, "patient_id,outcome,los\np1,0,3.5\n");
    REQUIRE_THROWS_MATCHES(load_dataset(f.obs.string(), f.outcomes.string(), f.schema.string()),
                           DataError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("p2")));
}

TEST_CASE("feature names are canonicalized on load", "[data]") {
    auto dir = temp_dir("canon");
    Fixture f = two_patient_fixture(dir);
    write_file(f.schema, R"({"features": [" Heart Rate ", "glucose"]})");
    write_file(f.obs,
               "patient_id,time_index,feature,value\n"
               "p1,0,HEART RATE,80\n"
               "p1,0,glucose,5\n"
               "p2,0,heart rate,70\n");
    Dataset ds = load_dataset(f.obs.string(), f.outcomes.string(), f.schema.string());
    CHECK(ds.schema.features[0] == "heart rate");
    CHECK(ds.find("p1")->obs.count("heart rate") == 1);
}

TEST_CASE("load, serialize, reload round-trips bit-exactly", "[data]") {
    auto dir = temp_dir("roundtrip");
    GeneratorConfig cfg;
    cfg.source_patients = 6;
    cfg.target_patients = 4;
    auto [source, target] = synth_generate(cfg, 99);
    save_dataset(source, (dir / "o.csv").string(), (dir / "y.csv").string(),
                 (dir / "s.json").string());
    Dataset re = load_dataset((dir / "o.csv").string(), (dir / "y.csv").string(),
                              (dir / "s.json").string());
    REQUIRE(re.records.size() == source.records.size());
    for (std::size_t i = 0; i < re.records.size(); ++i) {
        CHECK(re.records[i].id == source.records[i].id);
        CHECK(re.records[i].y_outcome == source.records[i].y_outcome);
        CHECK(re.records[i].y_los == source.records[i].y_los);
        REQUIRE(re.records[i].obs == source.records[i].obs);
    }
    // second serialization is byte-identical
    save_dataset(re, (dir / "o2.csv").string(), (dir / "y2.csv").string(),
                 (dir / "s2.json").string());
    auto bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(bytes(dir / "o.csv") == bytes(dir / "o2.csv"));
    CHECK(bytes(dir / "y.csv") == bytes(dir / "y2.csv"));
}

TEST_CASE("imputation", "[data]") {
    Dataset ds;
    ds.schema.features = {"hr"};
    PatientRecord r;
    r.id = "p1";
    r.obs["hr"] = {{0, 1.0}, {2, 3.0}};  // gap at t=1
    ds.records.push_back(r);
    SECTION("forward fill bridges interior gaps") {
        NormStats st;
        st.mean = {0.0};
        st.stdev = {1.0};
        DenseDataset dense = impute_and_normalize(ds, st);
        CHECK(dense.records[0].x[0] == std::vector<double>{1.0, 1.0, 3.0});
    }
    SECTION("leading gaps take the stats mean") {
        PatientRecord r2;
        r2.id = "p2";
        r2.obs["hr"] = {{2, 10.0}};
        Dataset ds2;
        ds2.schema.features = {"hr"};
        ds2.records.push_back(r2);
        NormStats st;
        st.mean = {4.0};
        st.stdev = {2.0};
        DenseDataset dense = impute_and_normalize(ds2, st);
        CHECK(dense.records[0].x[0] == std::vector<double>{0.0, 0.0, 3.0});
    }
    SECTION("constant feature z-scores to zero under the floor") {
        Dataset dc;
        dc.schema.features = {"flat"};
        PatientRecord rc;
        rc.id = "p";
        rc.obs["flat"] = {{0, 7.0}, {1, 7.0}, {2, 7.0}};
        dc.records.push_back(rc);
        NormStats st = compute_norm_stats(dc);
        CHECK(st.stdev[0] == 1e-6);
        DenseDataset dense = impute_and_normalize(dc, st);
        CHECK(dense.records[0].x[0] == std::vector<double>{0.0, 0.0, 0.0});
    }
    SECTION("all-missing feature becomes zeros and is flagged") {
        Dataset dm;
        dm.schema.features = {"hr", "never"};
        PatientRecord rm;
        rm.id = "p";
        rm.obs["hr"] = {{0, 1.0}};
        dm.records.push_back(rm);
        DenseDataset dense = impute_and_normalize(dm, compute_norm_stats(dm));
        CHECK(dense.records[0].x[1] == std::vector<double>{0.0});
        CHECK(dense.report.all_missing.at("never") == 1);
    }
}

TEST_CASE("training-fold self-normalization is centered and scaled", "[data]") {
    GeneratorConfig cfg;
    cfg.source_patients = 40;
    cfg.target_patients = 5;
    auto [source, _] = synth_generate(cfg, 5);
    NormStats st = compute_norm_stats(source);
    DenseDataset dense = impute_and_normalize(source, st);
    // means/stds over the *observed* values, recomputed post-normalization
    for (std::size_t f = 0; f < source.schema.size(); ++f) {
        double sum = 0.0, sum2 = 0.0;
        std::size_t n = 0;
        const std::string& name = source.schema.features[f];
        for (const auto& rec : source.records) {
            auto it = rec.obs.find(name);
            if (it == rec.obs.end()) continue;
            for (const auto& [t, v] : it->second) {
                double z = (v - st.mean[f]) / st.stdev[f];
                sum += z;
                sum2 += z * z;
                ++n;
            }
        }
        REQUIRE(n > 1);
        double mean = sum / static_cast<double>(n);
        double var = sum2 / static_cast<double>(n) - mean * mean;
        CHECK(std::fabs(mean) <= 1e-9);
        CHECK(std::fabs(std::sqrt(var) - 1.0) <= 1e-9);
    }
    (void)dense;
}

TEST_CASE("schema alignment", "[data]") {
    SECTION("identical schemas are fully shared") {
        FeatureSchema a, b;
        a.features = {"x", "y"};
        b.features = {"y", "x"};
        SchemaAlignment al = align_schemas(a, b);
        CHECK(al.shared == std::vector<std::string>{"x", "y"});
        CHECK(al.src_private.empty());
        CHECK(al.tar_private.empty());
        CHECK_FALSE(al.empty_shared);
    }
    SECTION("disjoint schemas warn with zero shared") {
        FeatureSchema a, b;
        a.features = {"x"};
        b.features = {"y"};
        SchemaAlignment al = align_schemas(a, b);
        CHECK(al.shared.empty());
        CHECK(al.empty_shared);
    }
    SECTION("partial overlap fixture: 18 shared of 34 and 75") {
        FeatureSchema src, tar;
        for (int i = 0; i < 18; ++i) src.features.push_back("both_" + std::to_string(i));
        for (int i = 0; i < 16; ++i) src.features.push_back("s_" + std::to_string(i));
        for (int i = 0; i < 57; ++i) tar.features.push_back("t_" + std::to_string(i));
        for (int i = 0; i < 18; ++i) tar.features.push_back("both_" + std::to_string(i));
        REQUIRE(src.features.size() == 34);
        REQUIRE(tar.features.size() == 75);
        SchemaAlignment al = align_schemas(src, tar);
        CHECK(al.shared.size() == 18);
        CHECK(al.src_private.size() == 16);
        CHECK(al.tar_private.size() == 57);
    }
    SECTION("shared set is symmetric") {
        Rng rng(71);
        for (int it = 0; it < 20; ++it) {
            FeatureSchema a, b;
            for (int i = 0; i < 8; ++i) {
                if (rng.uniform() < 0.6) a.features.push_back("f" + std::to_string(i));
                if (rng.uniform() < 0.6) b.features.push_back("f" + std::to_string(i));
            }
            auto ab = align_schemas(a, b);
            auto ba = align_schemas(b, a);
            std::set<std::string> s1(ab.shared.begin(), ab.shared.end());
            std::set<std::string> s2(ba.shared.begin(), ba.shared.end());
            CHECK(s1 == s2);
        }
    }
}

TEST_CASE("generator determinism", "[data]") {
    GeneratorConfig cfg;
    cfg.source_patients = 10;
    cfg.target_patients = 8;
    auto [s1, t1] = synth_generate(cfg, 123);
    auto [s2, t2] = synth_generate(cfg, 123);
    REQUIRE(s1.records.size() == s2.records.size());
    for (std::size_t i = 0; i < s1.records.size(); ++i) {
        CHECK(s1.records[i].obs == s2.records[i].obs);
        CHECK(s1.records[i].y_los == s2.records[i].y_los);
    }
    for (std::size_t i = 0; i < t1.records.size(); ++i)
        CHECK(t1.records[i].obs == t2.records[i].obs);
    auto [s3, t3] = synth_generate(cfg, 124);
    CHECK(s3.records[0].obs != s1.records[0].obs);
    (void)t3;
}

TEST_CASE("labels depend on the latent path only", "[data]") {
    GeneratorConfig cfg;
    cfg.source_patients = 12;
    cfg.target_patients = 12;
    cfg.missing_rate = 0.1;
    GeneratorConfig other = cfg;
    other.noise_salt = 999;
    auto [s1, t1] = synth_generate(cfg, 321);
    auto [s2, t2] = synth_generate(other, 321);
    bool any_obs_differ = false;
    for (std::size_t i = 0; i < s1.records.size(); ++i) {
        CHECK(s1.records[i].y_outcome == s2.records[i].y_outcome);
        CHECK(s1.records[i].y_los == s2.records[i].y_los);
        if (s1.records[i].obs != s2.records[i].obs) any_obs_differ = true;
    }
    for (std::size_t i = 0; i < t1.records.size(); ++i) {
        CHECK(t1.records[i].y_outcome == t2.records[i].y_outcome);
        CHECK(t1.records[i].y_los == t2.records[i].y_los);
    }
    CHECK(any_obs_differ);
}

TEST_CASE("zero shift aligns shared-feature means across domains", "[data]") {
    GeneratorConfig cfg;
    cfg.source_patients = 300;
    cfg.target_patients = 300;
    cfg.shift_magnitude = 0.0;
    auto [source, target] = synth_generate(cfg, 777);
    for (std::size_t f = 0; f < cfg.shared_features; ++f) {
        const std::string& name = source.schema.features[f];
        auto stats_of = [&](const Dataset& ds) {
            double sum = 0.0, sum2 = 0.0;
            std::size_t n = 0;
            for (const auto& rec : ds.records)
                for (const auto& [t, v] : rec.obs.at(name)) {
                    sum += v;
                    sum2 += v * v;
                    ++n;
                }
            double mean = sum / static_cast<double>(n);
            double var = sum2 / static_cast<double>(n) - mean * mean;
            return std::make_tuple(mean, var, n);
        };
        auto [m1, v1, n1] = stats_of(source);
        auto [m2, v2, n2] = stats_of(target);
        double se = std::sqrt(v1 / static_cast<double>(n1) + v2 / static_cast<double>(n2));
        CHECK(std::fabs(m1 - m2) < 3.0 * se + 1e-12);
    }
}

TEST_CASE("outcome base rate stays in the declared band", "[data]") {
    GeneratorConfig cfg;
    cfg.source_patients = 500;
    cfg.target_patients = 500;
    auto [source, target] = synth_generate(cfg, 2024);
    auto rate = [](const Dataset& ds) {
        std::size_t pos = 0;
        for (const auto& r : ds.records) pos += static_cast<std::size_t>(r.y_outcome);
        return static_cast<double>(pos) / static_cast<double>(ds.records.size());
    };
    CHECK(rate(source) >= cfg.outcome_rate_lo);
    CHECK(rate(source) <= cfg.outcome_rate_hi);
    CHECK(rate(target) >= cfg.outcome_rate_lo);
    CHECK(rate(target) <= cfg.outcome_rate_hi);
}

TEST_CASE("invalid generator configs are rejected", "[data]") {
    GeneratorConfig cfg;
    cfg.source_patients = 0;
    REQUIRE_THROWS_AS(synth_generate(cfg, 1), ValueError);
    GeneratorConfig cfg2;
    cfg2.t_max = 2;
    cfg2.t_min = 5;
    REQUIRE_THROWS_AS(synth_generate(cfg2, 1), ValueError);
}
