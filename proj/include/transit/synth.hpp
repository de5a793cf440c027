#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "transit/data.hpp"
#include "transit/rng.hpp"

namespace transit {

// Paired-cohort generator. Both domains observe the same low-dimensional
// latent AR(1) process through noisy linear readouts; shared features use
// identical readouts plus a domain shift on the target side, private
// features use per-domain readouts. Labels are functions of the latent path
// only, so regenerating with a different noise_salt changes observations but
// never labels.
struct GeneratorConfig {
    std::size_t source_patients = 200;
    std::size_t target_patients = 100;
    std::size_t shared_features = 8;
    std::size_t source_private = 4;
    std::size_t target_private = 4;
    std::size_t t_min = 6;
    std::size_t t_max = 12;
    double shift_magnitude = 1.0;
    std::size_t latent_dim = 3;
    double ar_coeff = 0.85;
    double obs_noise = 0.3;
    double target_obs_noise = -1.0;   // < 0: same as obs_noise
    double private_signal_scale = 1.0;  // readout magnitude of private features
    double missing_rate = 0.0;
    double los_base = 2.0;
    double los_scale = 1.0;
    double los_noise = 0.5;
    // expected outcome base rate band for the default threshold
    double outcome_rate_lo = 0.2;
    double outcome_rate_hi = 0.6;
    std::uint64_t noise_salt = 0;  // perturbs observations, never labels

    void validate() const {
        if (source_patients == 0 || target_patients == 0)
            throw ValueError("generator: patient counts must be positive");
        if (shared_features == 0)
            throw ValueError("generator: need at least one shared feature");
        if (t_min == 0 || t_max < t_min) throw ValueError("generator: bad time-step range");
        if (latent_dim == 0) throw ValueError("generator: latent dimension must be positive");
        if (missing_rate < 0.0 || missing_rate >= 1.0)
            throw ValueError("generator: missing rate must be in [0,1)");
    }
};

namespace detail {

struct Readout {
    std::vector<double> w;
    double b = 0.0;
    double shift_dir = 0.0;  // used by shared features only
};

inline Readout draw_readout(std::size_t latent_dim, Rng& rng, bool with_shift, double scale) {
    Readout r;
    r.w.resize(latent_dim);
    for (double& x : r.w) x = scale * rng.gaussian();
    r.b = 0.5 * rng.gaussian();
    if (with_shift) r.shift_dir = rng.gaussian();
    return r;
}

}  // namespace detail

inline std::pair<Dataset, Dataset> synth_generate(const GeneratorConfig& cfg,
                                                  std::uint64_t seed) {
    cfg.validate();
    Rng latent_rng = Rng(seed).fork("latent");
    Rng noise_rng = Rng(seed).fork("noise").fork(cfg.noise_salt);
    Rng readout_rng = Rng(seed).fork("readout");

    std::vector<std::string> shared_names, src_private_names, tar_private_names;
    for (std::size_t i = 0; i < cfg.shared_features; ++i)
        shared_names.push_back("shared_" + std::to_string(i));
    for (std::size_t i = 0; i < cfg.source_private; ++i)
        src_private_names.push_back("src_only_" + std::to_string(i));
    for (std::size_t i = 0; i < cfg.target_private; ++i)
        tar_private_names.push_back("tar_only_" + std::to_string(i));

    std::vector<detail::Readout> shared_ro, src_ro, tar_ro;
    for (std::size_t i = 0; i < cfg.shared_features; ++i)
        shared_ro.push_back(detail::draw_readout(cfg.latent_dim, readout_rng, true, 1.0));
    for (std::size_t i = 0; i < cfg.source_private; ++i)
        src_ro.push_back(
            detail::draw_readout(cfg.latent_dim, readout_rng, false, cfg.private_signal_scale));
    for (std::size_t i = 0; i < cfg.target_private; ++i)
        tar_ro.push_back(
            detail::draw_readout(cfg.latent_dim, readout_rng, false, cfg.private_signal_scale));

    const double theta = std::sqrt(static_cast<double>(cfg.latent_dim));
    const double ar_noise = std::sqrt(1.0 - cfg.ar_coeff * cfg.ar_coeff);

    auto make_domain = [&](bool is_target, std::size_t n_patients,
                           const std::vector<std::string>& private_names,
                           const std::vector<detail::Readout>& private_ro,
                           const std::string& id_prefix) {
        Dataset ds;
        ds.schema.features = shared_names;
        ds.schema.features.insert(ds.schema.features.end(), private_names.begin(),
                                  private_names.end());
        for (std::size_t p = 0; p < n_patients; ++p) {
            const std::size_t T =
                cfg.t_min + static_cast<std::size_t>(latent_rng.below(cfg.t_max - cfg.t_min + 1));
            std::vector<std::vector<double>> z(T, std::vector<double>(cfg.latent_dim));
            for (std::size_t d = 0; d < cfg.latent_dim; ++d) z[0][d] = latent_rng.gaussian();
            for (std::size_t t = 1; t < T; ++t)
                for (std::size_t d = 0; d < cfg.latent_dim; ++d)
                    z[t][d] = cfg.ar_coeff * z[t - 1][d] + ar_noise * latent_rng.gaussian();

            auto norm_at = [&](std::size_t t) {
                double s = 0.0;
                for (double v : z[t]) s += v * v;
                return std::sqrt(s);
            };
            std::size_t crossing = T;
            for (std::size_t t = 0; t < T; ++t)
                if (norm_at(t) > theta) {
                    crossing = t;
                    break;
                }
            PatientRecord rec;
            rec.id = id_prefix + std::to_string(p);
            rec.y_outcome = norm_at(T - 1) > theta ? 1 : 0;
            rec.y_los = std::max(
                0.0, cfg.los_base + cfg.los_scale * static_cast<double>(crossing) +
                         cfg.los_noise * latent_rng.gaussian());

            const double domain_noise =
                is_target && cfg.target_obs_noise >= 0.0 ? cfg.target_obs_noise : cfg.obs_noise;
            auto emit = [&](const std::string& name, const detail::Readout& ro, bool shifted) {
                for (std::size_t t = 0; t < T; ++t) {
                    double v = ro.b;
                    for (std::size_t d = 0; d < cfg.latent_dim; ++d) v += ro.w[d] * z[t][d];
                    if (shifted) v += cfg.shift_magnitude * ro.shift_dir;
                    v += domain_noise * noise_rng.gaussian();
                    const bool keep = !(noise_rng.uniform() < cfg.missing_rate);
                    if (keep) rec.obs[name].push_back({static_cast<int>(t), v});
                }
            };
            for (std::size_t i = 0; i < cfg.shared_features; ++i)
                emit(shared_names[i], shared_ro[i], is_target);
            for (std::size_t i = 0; i < private_names.size(); ++i)
                emit(private_names[i], private_ro[i], false);
            if (!rec.has_observations()) {
                // keep the record non-empty under extreme missingness
                double v = shared_ro[0].b;
                for (std::size_t d = 0; d < cfg.latent_dim; ++d) v += shared_ro[0].w[d] * z[0][d];
                if (is_target) v += cfg.shift_magnitude * shared_ro[0].shift_dir;
                rec.obs[shared_names[0]].push_back({0, v});
            }
            ds.records.push_back(std::move(rec));
        }
        return ds;
    };

    Dataset source = make_domain(false, cfg.source_patients, src_private_names, src_ro, "src_");
    Dataset target = make_domain(true, cfg.target_patients, tar_private_names, tar_ro, "tar_");
    return {std::move(source), std::move(target)};
}

}  // namespace transit
