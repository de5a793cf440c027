#pragma once

#include <cmath>
#include <vector>

#include "transit/common.hpp"
#include "transit/tensor.hpp"

namespace transit {

// Adaptive-moments optimizer with bias correction. State is keyed by
// parameter position, so the parameter list must be identical across steps.
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Tensor*>& params, const std::vector<std::vector<double>>& grads) {
        if (params.size() != grads.size())
            throw ShapeError(detail::msg("adam: ", params.size(), " params vs ", grads.size(),
                                         " gradients"));
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->numel(), 0.0);
                v_[i].assign(params[i]->numel(), 0.0);
            }
        }
        if (m_.size() != params.size())
            throw ShapeError("adam: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const std::vector<double>& g = grads[i];
            if (g.size() != p.numel())
                throw ShapeError(detail::msg("adam: gradient size ", g.size(),
                                             " vs parameter size ", p.numel()));
            std::vector<double>& m = m_[i];
            std::vector<double>& v = v_[i];
            for (std::size_t k = 0; k < g.size(); ++k) {
                m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
                const double mhat = m[k] / c1;
                const double vhat = v[k] / c2;
                p.data[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace transit
