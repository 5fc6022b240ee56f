#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written from the metric/gradient definitions directly and stays clear of
// the library's computation paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "varbench/logit_model.hpp"
#include "varbench/ops.hpp"
#include "varbench/recsys.hpp"
#include "varbench/tensor.hpp"

namespace oracle {

using varbench::Id;
using varbench::Tensor;

// --------------------------------------------------------------------------
// gradients

/// Central finite differences of `loss()` with respect to every coordinate of
/// `param`. The callable must rebuild the forward pass from scratch.
inline std::vector<double> central_difference(Tensor param, const std::function<double()>& loss,
                                              double h = 1e-5) {
    std::vector<double> grad(static_cast<std::size_t>(param.numel()));
    auto v = param.values();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double up = loss();
        v[i] = keep - h;
        const double down = loss();
        v[i] = keep;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// Fraction of coordinates where analytic and numeric gradients agree to the
/// given relative error (|a| and |n| below `floor` are compared absolutely).
inline double gradient_agreement(std::span<const double> analytic, const std::vector<double>& numeric,
                                 double rel_tol = 1e-3, double floor_ = 1e-6) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double scale = std::max({std::abs(a), std::abs(n), floor_});
        if (std::abs(a - n) / scale <= rel_tol) ++ok;
    }
    return numeric.empty() ? 1.0 : static_cast<double>(ok) / numeric.size();
}

// --------------------------------------------------------------------------
// ranking metrics (straight from the definitions)

inline double chr_user(const std::vector<Id>& list, const std::set<Id>& category, int k) {
    int hits = 0;
    for (int r = 0; r < k && r < static_cast<int>(list.size()); ++r)
        if (category.count(list[static_cast<std::size_t>(r)])) ++hits;
    return static_cast<double>(hits) / k;
}

inline double ncdcg_user(const std::vector<Id>& list, const std::set<Id>& category, int k,
                         double s_max = 1.0, double tau = 1.0) {
    const double rel = std::exp2(s_max - tau + 1.0) - 1.0;
    double cdcg = 0.0;
    for (int r = 1; r <= k && r <= static_cast<int>(list.size()); ++r)
        if (category.count(list[static_cast<std::size_t>(r - 1)]))
            cdcg += rel / (std::log(1.0 + r) / std::log(2.0));
    double icdcg = 0.0;
    const int ideal = std::min<int>(k, static_cast<int>(category.size()));
    for (int r = 1; r <= ideal; ++r) icdcg += rel / (std::log(1.0 + r) / std::log(2.0));
    return cdcg / icdcg;
}

inline double recall_user(const std::vector<Id>& list, Id test_item, int k) {
    for (int r = 0; r < k && r < static_cast<int>(list.size()); ++r)
        if (list[static_cast<std::size_t>(r)] == test_item) return 1.0;
    return 0.0;
}

inline double ndcg_user(const std::vector<Id>& list, Id test_item, int k) {
    for (int r = 1; r <= k && r <= static_cast<int>(list.size()); ++r)
        if (list[static_cast<std::size_t>(r - 1)] == test_item)
            return 1.0 / (std::log(1.0 + r) / std::log(2.0));
    return 0.0;
}

/// Gini index via the mean-absolute-difference form: sum |xi - xj| / (2 n^2 mu).
inline double gini(const std::vector<double>& freq) {
    const double n = static_cast<double>(freq.size());
    double total = 0.0;
    for (double f : freq) total += f;
    if (total <= 0.0 || freq.size() < 2) return 0.0;
    const double mu = total / n;
    double acc = 0.0;
    for (double a : freq)
        for (double b : freq) acc += std::abs(a - b);
    return acc / (2.0 * n * n * mu);
}

/// Full-sort top-k reference: score descending, id ascending.
inline std::vector<Id> topk(const std::map<Id, double>& scores, int k) {
    std::vector<std::pair<Id, double>> rows(scores.begin(), scores.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<Id> out;
    for (int r = 0; r < k && r < static_cast<int>(rows.size()); ++r)
        out.push_back(rows[static_cast<std::size_t>(r)].first);
    return out;
}

// --------------------------------------------------------------------------
// attack fixtures

using varbench::Image;

/// Fixed-weight linear classifier z = W x + b over flattened pixels, with a
/// closed-form L2 distance to the 2-class decision boundary.
class LinearModel final : public varbench::LogitModel {
public:
    LinearModel(Tensor weights, Tensor bias) : w_(std::move(weights)), b_(std::move(bias)) {
        classes_ = w_.dim(1);
    }

    int num_classes() const override { return classes_; }

    Tensor logits(varbench::Tape& tape, const Tensor& x) const override {
        using namespace varbench::ops;
        const int n = x.dim(0);
        const int flat = static_cast<int>(x.numel() / n);
        Tensor row = Tensor::from_data({n, flat}, {x.values().begin(), x.values().end()});
        if (x.grad_enabled() || x.impl()->origin.lock())
            reshape_rows(tape, x, row);  // keep the caller's tensor in the graph
        return add(tape, matmul(tape, row, w_), b_);
    }

    /// L2 distance from x to the hyperplane z_a = z_b (2-class case).
    double boundary_distance(const Image& img) const {
        auto wv = w_.values();
        auto bv = b_.values();
        const std::size_t n = img.pixels.size();
        double margin = bv[0] - bv[1], norm2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dw = wv[i * 2 + 0] - wv[i * 2 + 1];
            margin += dw * img.pixels[i];
            norm2 += dw * dw;
        }
        return std::abs(margin) / std::sqrt(norm2);
    }

private:
    // identity node tying the flattened row's gradient back to x
    static void reshape_rows(varbench::Tape& tape, const Tensor& x, const Tensor& row) {
        tape.record(row, {x}, [x, row] {
            auto gx = varbench::detail::pull_grad(x.impl());
            auto gf = row.impl()->grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gf[i];
        });
    }

    Tensor w_, b_;
    int classes_ = 0;
};

inline Image random_image(int channels, int size, std::mt19937_64& rng, double lo = 0.0,
                          double hi = 1.0) {
    Image img = Image::blank(channels, size, size);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& p : img.pixels) p = dist(rng);
    return img;
}

}  // namespace oracle
