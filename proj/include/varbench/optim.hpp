#pragma once

#include <cmath>
#include <vector>

#include "varbench/tensor.hpp"

namespace varbench {

/// Plain SGD: p -= lr * grad.
class Sgd {
public:
    explicit Sgd(double lr) : lr_(lr) {
        if (lr <= 0.0) throw std::invalid_argument("Sgd: learning rate must be positive");
    }

    void step(std::vector<Tensor>& params) {
        for (auto& p : params) {
            auto g = p.grad();
            auto v = p.values();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
        }
    }

private:
    double lr_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moment state is keyed by call order, so the
/// parameter list must be identical on every step.
class Adam {
public:
    explicit Adam(AdamOptions opts) : opts_(opts) {
        if (opts.lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
    }

    void step(std::vector<Tensor>& params) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.numel(), 0.0);
                v_.emplace_back(p.numel(), 0.0);
            }
        }
        if (m_.size() != params.size())
            throw std::invalid_argument("Adam: parameter list changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
        const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto g = params[k].grad();
            auto p = params[k].values();
            if (m_[k].size() != p.size())
                throw std::invalid_argument("Adam: parameter shape changed between steps");
            for (std::size_t i = 0; i < p.size(); ++i) {
                m_[k][i] = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * g[i];
                v_[k][i] = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * g[i] * g[i];
                const double mhat = m_[k][i] / bc1;
                const double vhat = v_[k][i] / bc2;
                p[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
            }
        }
    }

private:
    AdamOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace varbench
