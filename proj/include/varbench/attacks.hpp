#pragma once

#include <cmath>
#include <optional>
#include <random>

#include "varbench/logit_model.hpp"
#include "varbench/optim.hpp"

// White-box attacks against a LogitModel. Pixel budgets (epsilon, alpha) are
// given on the 0-255 scale and applied as fractions of the [0,1] range, the
// convention used for 8-bit images. Every returned image satisfies the range
// constraint; L-inf attacks additionally keep |delta| <= epsilon/255 within
// one ulp.

namespace varbench {

enum class AttackKind { fgsm, pgd, cw_l2 };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::pgd: return "pgd";
        case AttackKind::cw_l2: return "cw_l2";
    }
    return "?";
}

struct AttackSpec {
    AttackKind kind = AttackKind::fgsm;
    std::optional<int> target;  // absent => untargeted
    double epsilon = 4.0;       // L-inf budget, 0-255 pixel units
    double alpha = 0.0;         // pgd step, same units
    int iterations = 10;
    bool random_start = true;   // pgd: delta0 ~ U(-eps, eps)

    // cw_l2
    double kappa = 0.0;
    int binary_search_steps = 5;
    double initial_tradeoff = 1e-2;
    double inner_lr = 5e-3;
    int max_inner_iterations = 1000;
    bool abort_early = true;

    void validate() const {
        if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
        if (kind == AttackKind::pgd) {
            if (alpha <= 0.0) throw std::invalid_argument("pgd: alpha must be positive");
            if (alpha > epsilon) throw std::invalid_argument("pgd: alpha must not exceed epsilon");
            if (iterations < 1) throw std::invalid_argument("pgd: iterations must be >= 1");
        }
        if (kind == AttackKind::cw_l2) {
            if (!target) throw std::invalid_argument("cw_l2: a target class is required");
            if (kappa < 0.0) throw std::invalid_argument("cw_l2: kappa must be >= 0");
            if (binary_search_steps < 1 || max_inner_iterations < 1)
                throw std::invalid_argument("cw_l2: search steps must be >= 1");
        }
    }
};

struct AttackedImage {
    Image original;
    Image perturbed;
    int achieved_class = -1;
    bool success = false;  // targeted: reached the target class; untargeted: left the true class
    double l2_norm = 0.0;
    double linf_norm = 0.0;

    Image delta() const {
        Image d = original;
        for (std::size_t i = 0; i < d.pixels.size(); ++i)
            d.pixels[i] = perturbed.pixels[i] - original.pixels[i];
        return d;
    }
};

namespace detail_attack {

inline void finish(AttackedImage& out, const LogitModel& model, std::optional<int> target,
                   int true_label) {
    out.achieved_class = model.predict(out.perturbed);
    out.success = target ? out.achieved_class == *target : out.achieved_class != true_label;
    double l2 = 0.0, linf = 0.0;
    for (std::size_t i = 0; i < out.original.pixels.size(); ++i) {
        const double d = out.perturbed.pixels[i] - out.original.pixels[i];
        l2 += d * d;
        linf = std::max(linf, std::abs(d));
    }
    out.l2_norm = std::sqrt(l2);
    out.linf_norm = linf;
}

/// d(cross-entropy)/dx at x for the given class.
inline std::vector<double> input_gradient(const LogitModel& model, const Image& img, int cls) {
    Tape tape;
    Tensor x = img.to_tensor().requires_grad();
    const Tensor z = model.logits(tape, x);
    const Tensor loss = ops::softmax_cross_entropy(tape, z, ops::one_hot(model.num_classes(), cls));
    tape.backward(loss);
    auto g = x.grad();
    return {g.begin(), g.end()};
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail_attack

/// One sign-gradient step. Targeted runs descend the loss toward the target;
/// untargeted ascend away from the true class.
inline AttackedImage fgsm(const LogitModel& model, const Image& img, const AttackSpec& spec,
                          std::optional<int> true_label = std::nullopt) {
    spec.validate();
    const double eps = spec.epsilon / 255.0;
    const int y = true_label ? *true_label : model.predict(img);
    const int cls = spec.target ? *spec.target : y;
    const double dir = spec.target ? -1.0 : 1.0;
    const auto g = detail_attack::input_gradient(model, img, cls);
    AttackedImage out;
    out.original = img;
    out.perturbed = img;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        out.perturbed.pixels[i] =
            std::clamp(img.pixels[i] + (dir * eps) * detail_attack::sign(g[i]), 0.0, 1.0);
    detail_attack::finish(out, model, spec.target, y);
    return out;
}

/// Iterated sign steps from a (seeded) uniform start, projected into the
/// eps-ball and the pixel range each step. Targeted runs stop as soon as the
/// target class is reached.
inline AttackedImage pgd(const LogitModel& model, const Image& img, const AttackSpec& spec,
                         std::uint64_t seed, std::optional<int> true_label = std::nullopt) {
    spec.validate();
    const double eps = spec.epsilon / 255.0;
    const double alpha = spec.alpha / 255.0;
    const int y = true_label ? *true_label : model.predict(img);
    const int cls = spec.target ? *spec.target : y;
    const double dir = spec.target ? -1.0 : 1.0;

    const std::size_t n = img.pixels.size();
    std::vector<double> lo(n), hi(n);
    for (std::size_t i = 0; i < n; ++i) {
        lo[i] = std::max(img.pixels[i] - eps, 0.0);
        hi[i] = std::min(img.pixels[i] + eps, 1.0);
    }
    Image adv = img;
    if (spec.random_start && eps > 0.0) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-eps, eps);
        for (std::size_t i = 0; i < n; ++i)
            adv.pixels[i] = std::clamp(img.pixels[i] + u(rng), lo[i], hi[i]);
    }
    for (int it = 0; it < spec.iterations; ++it) {
        const auto g = detail_attack::input_gradient(model, adv, cls);
        for (std::size_t i = 0; i < n; ++i)
            adv.pixels[i] =
                std::clamp(adv.pixels[i] + (dir * alpha) * detail_attack::sign(g[i]), lo[i], hi[i]);
        if (spec.target && model.predict(adv) == *spec.target) break;
    }
    AttackedImage out;
    out.original = img;
    out.perturbed = std::move(adv);
    detail_attack::finish(out, model, spec.target, y);
    return out;
}

/// L2 optimization attack: sigmoid change of variables keeps pixels in (0,1)
/// without clipping; minimizes ||delta||_2^2 + a * max(max_{j!=t} Z_j - Z_t, -kappa)
/// with Adam, searching the trade-off constant `a` by bracket doubling/halving.
/// Returns the smallest-norm successful candidate, or the last iterate flagged
/// unsuccessful.
inline AttackedImage cw_l2(const LogitModel& model, const Image& img, const AttackSpec& spec) {
    spec.validate();
    const int t = *spec.target;
    const std::size_t n = img.pixels.size();

    // w-space init: x = sigmoid(2w)  <=>  w = atanh(2x - 1)
    std::vector<double> w0(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double xc = std::clamp(img.pixels[i], 1e-6, 1.0 - 1e-6);
        w0[i] = std::atanh(2.0 * xc - 1.0);
    }
    const Tensor x_orig = img.to_tensor();
    const std::vector<int> xshape = x_orig.shape();

    double lower = 0.0, upper = std::numeric_limits<double>::infinity();
    double tradeoff = spec.initial_tradeoff;

    bool have_best = false;
    double best_l2 = std::numeric_limits<double>::infinity();
    std::vector<double> best_pixels, last_pixels(img.pixels);

    for (int bs = 0; bs < spec.binary_search_steps; ++bs) {
        Tensor w = Tensor::from_data(xshape, w0).requires_grad();
        Adam adam({.lr = spec.inner_lr});
        std::vector<Tensor> params{w};
        bool step_success = false;
        double prev_window_loss = std::numeric_limits<double>::infinity();
        const int check_every = std::max(spec.max_inner_iterations / 10, 10);

        for (int it = 0; it < spec.max_inner_iterations; ++it) {
            Tape tape;
            const Tensor x_adv = ops::sigmoid(tape, ops::scale(tape, w, 2.0));
            const Tensor dist2 =
                ops::scale(tape, ops::mse(tape, x_adv, x_orig), static_cast<double>(n));
            const Tensor z = model.logits(tape, x_adv);
            const Tensor margin = ops::targeted_margin(tape, z, t, spec.kappa);
            const Tensor loss = ops::add(tape, dist2, ops::scale(tape, margin, tradeoff));

            const int achieved = LogitModel::argmax_row(z.values().data(), model.num_classes());
            const double l2 = std::sqrt(dist2.scalar());
            last_pixels.assign(x_adv.values().begin(), x_adv.values().end());
            if (achieved == t) {
                step_success = true;
                if (l2 < best_l2) {
                    best_l2 = l2;
                    best_pixels = last_pixels;
                    have_best = true;
                }
            }
            if (spec.abort_early && it % check_every == 0) {
                const double cur = loss.scalar();
                if (cur > prev_window_loss * 0.9999) break;
                prev_window_loss = cur;
            }
            tape.backward(loss);
            adam.step(params);
        }

        if (step_success) {
            upper = tradeoff;
            tradeoff = (lower + upper) / 2.0;
        } else {
            lower = tradeoff;
            tradeoff = std::isinf(upper) ? tradeoff * 2.0 : (lower + upper) / 2.0;
        }
    }

    AttackedImage out;
    out.original = img;
    out.perturbed = img;
    out.perturbed.pixels = have_best ? std::move(best_pixels) : std::move(last_pixels);
    detail_attack::finish(out, model, spec.target, model.predict(img));
    if (!have_best) out.success = false;
    return out;
}

/// Dispatch on spec.kind; `seed` feeds pgd's random start only.
inline AttackedImage run_attack(const LogitModel& model, const Image& img, const AttackSpec& spec,
                                std::uint64_t seed, std::optional<int> true_label = std::nullopt) {
    switch (spec.kind) {
        case AttackKind::fgsm: return fgsm(model, img, spec, true_label);
        case AttackKind::pgd: return pgd(model, img, spec, seed, true_label);
        case AttackKind::cw_l2: return cw_l2(model, img, spec);
    }
    throw std::logic_error("unknown attack kind");
}

struct AttackManifestRow {
    Id item_id = 0;
    AttackKind kind = AttackKind::fgsm;
    double epsilon = 0.0;
    int target_class = -1;
    bool success = false;
    double l2_norm = 0.0;
    double linf_norm = 0.0;
};

inline void write_attack_manifest(const std::string& path, const std::vector<AttackManifestRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "item_id,kind,epsilon,target_class,success,l2_norm,linf_norm\n";
    char buf[64];
    for (const auto& r : rows) {
        os << r.item_id << ',' << attack_kind_name(r.kind) << ',';
        std::snprintf(buf, sizeof buf, "%g", r.epsilon);
        os << buf << ',' << r.target_class << ',' << (r.success ? 1 : 0) << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.l2_norm);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.linf_norm);
        os << buf << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

}  // namespace varbench
