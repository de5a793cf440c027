#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "transit/autodiff.hpp"
#include "transit/losses.hpp"

using namespace transit;
using testutil::grads_close;
using testutil::numeric_grad;
using testutil::random_vec;

TEST_CASE("matmul of ones", "[autodiff]") {
    ad::Graph g;
    ad::Var a = g.constant(Tensor::full({2, 3}, 1.0));
    ad::Var b = g.constant(Tensor::full({3, 1}, 1.0));
    ad::Var c = g.matmul(a, b);
    REQUIRE(g.val(c).shape == std::vector<std::size_t>{2, 1});
    CHECK(g.val(c).data[0] == 3.0);
    CHECK(g.val(c).data[1] == 3.0);
}

TEST_CASE("sigmoid of zero", "[autodiff]") {
    ad::Graph g;
    CHECK(g.scalar(g.sigmoid(g.constant(0.0))) == 0.5);
}

TEST_CASE("matmul shape mismatch names shapes and op", "[autodiff]") {
    ad::Graph g;
    ad::Var a = g.constant(Tensor::zeros(2, 3));
    ad::Var b = g.constant(Tensor::zeros(2, 3));
    REQUIRE_THROWS_MATCHES(g.matmul(a, b), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("matmul") &&
                               Catch::Matchers::ContainsSubstring("{2,3}")));
}

TEST_CASE("non-finite leaf is rejected", "[autodiff]") {
    ad::Graph g;
    Tensor bad({1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    REQUIRE_THROWS_AS(g.leaf(std::move(bad)), ValueError);
}

TEST_CASE("softmax rows", "[autodiff]") {
    ad::Graph g;
    SECTION("uniform under symmetry") {
        ad::Var s = g.softmax_rows(g.constant(Tensor::row({0.0, 0.0, 0.0})));
        for (double v : g.val(s).data) CHECK(v == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SECTION("max subtraction avoids overflow") {
        ad::Var s = g.softmax_rows(g.constant(Tensor::row({1000.0, 1000.0})));
        CHECK(g.val(s).data[0] == 0.5);
        CHECK(g.val(s).data[1] == 0.5);
    }
    SECTION("closed form e^a/(e^a+e^b)") {
        ad::Var s = g.softmax_rows(g.constant(Tensor::row({std::log(1.0), std::log(3.0)})));
        CHECK(g.val(s).data[0] == Catch::Approx(0.25).margin(1e-14));
        CHECK(g.val(s).data[1] == Catch::Approx(0.75).margin(1e-14));
    }
}

TEST_CASE("softmax rows sum to one up to 1e6 magnitudes", "[autodiff]") {
    Rng rng(7);
    for (int it = 0; it < 200; ++it) {
        std::size_t c = 1 + rng.below(6);
        Tensor t({1, c});
        for (double& v : t.data) v = rng.uniform(-1e6, 1e6);
        ad::Graph g;
        ad::Var s = g.softmax_rows(g.leaf(std::move(t)));
        double sum = 0.0;
        for (double v : g.val(s).data) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("backward of sum of squares", "[autodiff]") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::row({1.0, 2.0, 3.0}), true);
    ad::Var loss = g.sum(g.mul(x, x));
    g.backward(loss);
    CHECK(g.grad(x) == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("backward from a constant output leaves grads zero", "[autodiff]") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::row({1.0, -2.0}), true);
    (void)g.mul(x, x);
    ad::Var c = g.constant(5.0);
    g.backward(c);
    CHECK(g.grad(x) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward requires a scalar output", "[autodiff]") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::row({1.0, 2.0}), true);
    ad::Var y = g.mul(x, x);
    REQUIRE_THROWS_AS(g.backward(y), ShapeError);
}

TEST_CASE("second backward on the same tape errors", "[autodiff]") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::scalar(2.0), true);
    ad::Var y = g.mul(x, x);
    g.backward(y);
    REQUIRE_THROWS_AS(g.backward(y), Error);
}

TEST_CASE("random small MLP matches finite differences", "[autodiff]") {
    // 5 scalar parameters through a two-layer net with every scalar op kind.
    Rng rng(11);
    for (int it = 0; it < 20; ++it) {
        std::vector<double> theta = random_vec(5, rng);
        auto eval = [](const std::vector<double>& p) {
            ad::Graph g;
            ad::Var w1 = g.leaf(Tensor::row({p[0], p[1]}), true);
            ad::Var b1 = g.leaf(Tensor::row({p[2], p[3]}), true);
            ad::Var w2 = g.leaf(Tensor({2, 1}, {p[4], 0.7}), true);
            ad::Var x = g.constant(Tensor::row({0.3, -1.2}));
            ad::Var h = g.tanh(g.add(g.mul(w1, x), b1));
            ad::Var out = g.sigmoid(g.matmul(h, w2));
            return g.scalar(g.sum(out));
        };
        ad::Graph g;
        ad::Var w1 = g.leaf(Tensor::row({theta[0], theta[1]}), true);
        ad::Var b1 = g.leaf(Tensor::row({theta[2], theta[3]}), true);
        ad::Var w2 = g.leaf(Tensor({2, 1}, {theta[4], 0.7}), true);
        ad::Var x = g.constant(Tensor::row({0.3, -1.2}));
        ad::Var h = g.tanh(g.add(g.mul(w1, x), b1));
        ad::Var out = g.sigmoid(g.matmul(h, w2));
        g.backward(g.sum(out));
        std::vector<double> analytic = {g.grad(w1)[0], g.grad(w1)[1], g.grad(b1)[0],
                                        g.grad(b1)[1], g.grad(w2)[0]};
        auto full = [&](const std::vector<double>& p) { return eval(p); };
        REQUIRE(grads_close(analytic, numeric_grad(full, theta)));
    }
}

TEST_CASE("gradient reversal", "[autodiff]") {
    SECTION("forward is the identity") {
        ad::Graph g;
        ad::Var x = g.leaf(Tensor::row({1.5, -2.0}), true);
        ad::Var y = g.grad_reverse(x, 1.0);
        CHECK(g.val(y).data == g.val(x).data);
    }
    SECTION("upstream [1,1], lambda 1") {
        ad::Graph g;
        ad::Var x = g.leaf(Tensor::row({0.3, 0.4}), true);
        g.backward(g.sum(g.grad_reverse(x, 1.0)));
        CHECK(g.grad(x) == std::vector<double>{-1.0, -1.0});
    }
    SECTION("upstream [2,-4], lambda 0.5") {
        ad::Graph g;
        ad::Var x = g.leaf(Tensor::row({0.3, 0.4}), true);
        ad::Var y = g.grad_reverse(x, 0.5);
        ad::Var w = g.constant(Tensor::row({2.0, -4.0}));
        g.backward(g.sum(g.mul(y, w)));
        CHECK(g.grad(x) == std::vector<double>{-1.0, 2.0});
    }
    SECTION("non-positive lambda errors") {
        ad::Graph g;
        ad::Var x = g.leaf(Tensor::row({1.0}), true);
        REQUIRE_THROWS_AS(g.grad_reverse(x, 0.0), ValueError);
        REQUIRE_THROWS_AS(g.grad_reverse(x, -1.0), ValueError);
    }
}

TEST_CASE("double reversal with lambda 1 cancels exactly", "[autodiff]") {
    Rng rng(23);
    for (int it = 0; it < 50; ++it) {
        std::vector<double> xs = random_vec(4, rng);
        std::vector<double> ws = random_vec(4, rng);
        auto run = [&](bool reversed) {
            ad::Graph g;
            ad::Var x = g.leaf(Tensor::row(xs), true);
            ad::Var h = x;
            if (reversed) h = g.grad_reverse(g.grad_reverse(h, 1.0), 1.0);
            ad::Var w = g.constant(Tensor::row(ws));
            g.backward(g.sum(g.mul(g.tanh(h), w)));
            return g.grad(x);
        };
        REQUIRE(run(true) == run(false));
    }
}

namespace {

// Builds op `kind` over leaves and returns the scalar sum of its output.
double apply_op(const std::string& kind, ad::Graph& g, const std::vector<ad::Var>& ins) {
    ad::Var out = ins[0];
    if (kind == "add") out = g.add(ins[0], ins[1]);
    else if (kind == "sub") out = g.sub(ins[0], ins[1]);
    else if (kind == "mul") out = g.mul(ins[0], ins[1]);
    else if (kind == "scale") out = g.scale(ins[0], -1.7);
    else if (kind == "add_const") out = g.add_const(ins[0], 0.9);
    else if (kind == "matmul") out = g.matmul(ins[0], ins[1]);
    else if (kind == "add_row") out = g.add_row(ins[0], ins[1]);
    else if (kind == "sigmoid") out = g.sigmoid(ins[0]);
    else if (kind == "tanh") out = g.tanh(ins[0]);
    else if (kind == "log") out = g.log(ins[0]);
    else if (kind == "clamp") out = g.clamp(ins[0], -0.9, 0.9);
    else if (kind == "concat_rows") out = g.concat_rows({ins[0], ins[1]});
    else if (kind == "concat_cols") out = g.concat_cols({ins[0], ins[1]});
    else if (kind == "row_slice") out = g.row_slice(ins[0], 1);
    else if (kind == "reshape") out = g.flatten(ins[0]);
    else if (kind == "softmax") out = g.softmax_rows(ins[0]);
    else if (kind == "mean") out = g.mean(ins[0]);
    else if (kind == "pick") out = g.pick_per_row(ins[0], {1, 0});
    else if (kind != "sum") throw std::logic_error("unknown op kind " + kind);
    // weight the outputs so the upstream gradient is not uniform
    const Tensor& t = g.val(out);
    Tensor w(t.shape);
    for (std::size_t i = 0; i < w.data.size(); ++i)
        w.data[i] = 0.25 + 0.5 * static_cast<double>(i % 5);
    ad::Var s = g.sum(g.mul(out, g.constant(std::move(w))));
    g.backward(s);
    return g.scalar(s);
}

}  // namespace

TEST_CASE("every differentiable op matches finite differences", "[autodiff]") {
    const std::vector<std::string> kinds = {
        "add",  "sub",  "mul",         "scale",       "add_const", "matmul", "add_row",
        "sigmoid", "tanh", "log",      "clamp",       "concat_rows", "concat_cols",
        "row_slice", "reshape", "softmax", "mean",    "pick",      "sum"};
    Rng rng(31);
    for (const auto& kind : kinds) {
        // >= 100 random tensors across all op kinds combined; each kind gets 12
        for (int it = 0; it < 12; ++it) {
            const std::size_t r = 2, c = 2 + rng.below(2);
            const bool binary = kind == "add" || kind == "sub" || kind == "mul" ||
                                kind == "matmul" || kind == "add_row" ||
                                kind == "concat_rows" || kind == "concat_cols";
            std::vector<std::size_t> shape_a = {r, c};
            std::vector<std::size_t> shape_b = {r, c};
            if (kind == "matmul") shape_b = {c, 3};
            if (kind == "add_row") shape_b = {1, c};
            const double lo = kind == "log" ? 0.2 : -2.0;
            const double hi = kind == "log" ? 3.0 : 2.0;
            std::size_t na = shape_a[0] * shape_a[1];
            std::size_t nb = shape_b[0] * shape_b[1];
            std::vector<double> flat = random_vec(binary ? na + nb : na, rng, lo, hi);
            if (kind == "clamp")  // keep away from the clamp boundaries
                for (double& v : flat)
                    if (std::fabs(std::fabs(v) - 0.9) < 0.05) v += 0.1;

            auto eval = [&](const std::vector<double>& vals, std::vector<double>* grad_out) {
                ad::Graph g;
                std::vector<ad::Var> ins;
                ins.push_back(g.leaf(
                    Tensor(shape_a, std::vector<double>(vals.begin(),
                                                        vals.begin() + static_cast<long>(na))),
                    true));
                if (binary)
                    ins.push_back(g.leaf(Tensor(shape_b, std::vector<double>(
                                                             vals.begin() + static_cast<long>(na),
                                                             vals.end())),
                                         true));
                double out = apply_op(kind, g, ins);
                if (grad_out) {
                    *grad_out = g.grad(ins[0]);
                    if (binary) {
                        auto gb = g.grad(ins[1]);
                        grad_out->insert(grad_out->end(), gb.begin(), gb.end());
                    }
                }
                return out;
            };
            std::vector<double> analytic;
            eval(flat, &analytic);
            auto numeric = numeric_grad([&](const std::vector<double>& v) {
                return eval(v, nullptr);
            }, flat);
            INFO("op kind: " << kind);
            REQUIRE(grads_close(analytic, numeric));
        }
    }
}

TEST_CASE("identical inputs and op sequence give bitwise-identical results", "[autodiff]") {
    Rng rng(47);
    std::vector<double> xs = random_vec(6, rng);
    auto run = [&]() {
        ad::Graph g;
        ad::Var x = g.leaf(Tensor({2, 3}, xs), true);
        ad::Var w = g.constant(Tensor({3, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6}));
        ad::Var y = g.softmax_rows(g.tanh(g.matmul(x, w)));
        ad::Var loss = g.mean(g.mul(y, y));
        g.backward(loss);
        return std::make_pair(g.val(loss).data[0], g.grad(x));
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("log rejects non-positive input", "[autodiff]") {
    ad::Graph g;
    REQUIRE_THROWS_AS(g.log(g.constant(Tensor::row({1.0, 0.0}))), ValueError);
}

TEST_CASE("tensor rejects zero dimensions", "[autodiff]") {
    REQUIRE_THROWS_AS(Tensor({2, 0}), ShapeError);
}
