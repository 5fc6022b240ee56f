#pragma once

#include <json.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "varbench/attacks.hpp"
#include "varbench/checkpoint.hpp"
#include "varbench/logit_model.hpp"
#include "varbench/optim.hpp"

// Image feature extractor: a small convolutional classifier whose pooled
// activations double as item features. Architecture:
//   conv 3x3 stride 2 -> relu -> conv 3x3 stride 2 -> relu
//   -> global average pool (feature_dim channels) -> dense head
// The feature vector is the pooled output, so features and class predictions
// come from the same forward pass by construction.

namespace varbench {

enum class TrainRegime { traditional, adv_train, free_adv_train };

inline const char* regime_name(TrainRegime r) {
    switch (r) {
        case TrainRegime::traditional: return "traditional";
        case TrainRegime::adv_train: return "adv_train";
        case TrainRegime::free_adv_train: return "free_adv_train";
    }
    return "?";
}

inline TrainRegime regime_from_name(const std::string& s) {
    if (s == "traditional") return TrainRegime::traditional;
    if (s == "adv_train") return TrainRegime::adv_train;
    if (s == "free_adv_train") return TrainRegime::free_adv_train;
    throw std::invalid_argument("unknown training regime: " + s);
}

struct ClassifierConfig {
    int in_channels = 3;
    int hidden_channels = 16;
    int feature_dim = 64;  // gamma: channels of the pooled layer
    int num_classes = 3;
};

struct TrainConfig {
    int epochs = 12;
    int batch_size = 16;
    double lr = 0.05;
    double holdout_fraction = 0.2;
    std::uint64_t seed = 1;

    // defenses
    double eps_def = 4.0;  // perturbation budget, 0-255 pixel units
    int inner_steps = 7;   // adversarial-training pgd steps (alpha = eps_def/4)
    int replay_m = 4;      // free training minibatch replays
};

struct TrainStats {
    int epochs_run = 0;
    std::int64_t backward_passes = 0;  // parameter-gradient backward calls
    double final_loss = 0.0;
    double holdout_accuracy = 0.0;
};

class ClassifierModel final : public LogitModel {
public:
    ClassifierModel(ClassifierConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.in_channels < 1 || cfg.hidden_channels < 1 || cfg.feature_dim < 1 || cfg.num_classes < 2)
            throw std::invalid_argument("classifier: bad architecture config");
        std::mt19937_64 rng(seed);
        conv1_ = fan_in_uniform({cfg.hidden_channels, cfg.in_channels, 3, 3}, cfg.in_channels * 9, rng);
        bias1_ = Tensor::zeros({cfg.hidden_channels}).requires_grad();
        conv2_ = fan_in_uniform({cfg.feature_dim, cfg.hidden_channels, 3, 3}, cfg.hidden_channels * 9, rng);
        bias2_ = Tensor::zeros({cfg.feature_dim}).requires_grad();
        head_w_ = fan_in_uniform({cfg.feature_dim, cfg.num_classes}, cfg.feature_dim, rng);
        head_b_ = Tensor::zeros({cfg.num_classes}).requires_grad();
    }

    int num_classes() const override { return cfg_.num_classes; }
    int feature_dim() const { return cfg_.feature_dim; }
    const ClassifierConfig& config() const { return cfg_; }
    TrainRegime regime() const { return regime_; }

    struct ForwardResult {
        Tensor features;  // N x feature_dim
        Tensor logits;    // N x num_classes
    };

    ForwardResult forward(Tape& tape, const Tensor& batch) const {
        using namespace ops;
        Tensor h = relu(tape, add(tape, conv2d(tape, batch, conv1_, 2, 1), bias1_));
        h = relu(tape, add(tape, conv2d(tape, h, conv2_, 2, 1), bias2_));
        Tensor feats = global_avg_pool(tape, h);
        Tensor z = add(tape, matmul(tape, feats, head_w_), head_b_);
        return {feats, z};
    }

    Tensor logits(Tape& tape, const Tensor& x) const override { return forward(tape, x).logits; }

    int predict_class(const Image& img) const { return predict(img); }

    std::vector<double> extract_features(const Image& img) const {
        Tape tape;
        const Tensor f = forward(tape, img.to_tensor()).features;
        return {f.values().begin(), f.values().end()};
    }

    std::vector<Tensor> parameters() { return {conv1_, bias1_, conv2_, bias2_, head_w_, head_b_}; }

    NamedTensors named_parameters() const {
        return {{"conv1.weight", conv1_}, {"conv1.bias", bias1_},
                {"conv2.weight", conv2_}, {"conv2.bias", bias2_},
                {"head.weight", head_w_}, {"head.bias", head_b_}};
    }

    void save(const std::string& path) const {
        save_tensors(path, named_parameters());
        nlohmann::json meta{{"regime", regime_name(regime_)},
                            {"in_channels", cfg_.in_channels},
                            {"hidden_channels", cfg_.hidden_channels},
                            {"feature_dim", cfg_.feature_dim},
                            {"num_classes", cfg_.num_classes},
                            {"eps_def", eps_def_},
                            {"replay_m", replay_m_},
                            {"seed", seed_}};
        std::ofstream os(path + ".json");
        if (!os) throw std::runtime_error("cannot write model metadata " + path + ".json");
        os << meta.dump(2) << '\n';
    }

    /// Deep copy: fresh parameter storage with the same values.
    ClassifierModel clone() const {
        ClassifierModel c(cfg_, 0);
        const auto src = named_parameters();
        for (const auto& [name, t] : src) {
            Tensor* dst = c.param_by_name(name);
            std::copy(t.values().begin(), t.values().end(), dst->values().begin());
        }
        c.regime_ = regime_;
        c.eps_def_ = eps_def_;
        c.replay_m_ = replay_m_;
        c.seed_ = seed_;
        return c;
    }

    static ClassifierModel load(const std::string& path) {
        std::ifstream is(path + ".json");
        if (!is) throw std::runtime_error("missing model metadata " + path + ".json");
        nlohmann::json meta = nlohmann::json::parse(is);
        ClassifierConfig cfg{meta.at("in_channels"), meta.at("hidden_channels"),
                             meta.at("feature_dim"), meta.at("num_classes")};
        ClassifierModel model(cfg, 0);
        model.regime_ = regime_from_name(meta.at("regime"));
        model.eps_def_ = meta.at("eps_def");
        model.replay_m_ = meta.at("replay_m");
        model.seed_ = meta.at("seed");
        auto tensors = load_tensors(path);
        for (auto& [name, t] : tensors) {
            Tensor* dst = model.param_by_name(name);
            if (!dst) throw std::runtime_error("checkpoint has unknown tensor " + name);
            if (t.shape() != dst->shape())
                throw std::runtime_error("checkpoint tensor " + name + " has wrong shape");
            std::copy(t.values().begin(), t.values().end(), dst->values().begin());
        }
        return model;
    }

private:
    friend struct ClassifierTrainer;

    static Tensor fan_in_uniform(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        return Tensor::uniform(std::move(shape), -bound, bound, rng).requires_grad();
    }

    Tensor* param_by_name(const std::string& name) {
        if (name == "conv1.weight") return &conv1_;
        if (name == "conv1.bias") return &bias1_;
        if (name == "conv2.weight") return &conv2_;
        if (name == "conv2.bias") return &bias2_;
        if (name == "head.weight") return &head_w_;
        if (name == "head.bias") return &head_b_;
        return nullptr;
    }

    ClassifierConfig cfg_;
    Tensor conv1_, bias1_, conv2_, bias2_, head_w_, head_b_;
    TrainRegime regime_ = TrainRegime::traditional;
    double eps_def_ = 0.0;
    int replay_m_ = 1;
    std::uint64_t seed_ = 0;
};

struct TrainedClassifier {
    ClassifierModel model;
    TrainStats stats;
};

namespace detail_train {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27; x *= 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

struct Batches {
    std::vector<const ImageSample*> train, holdout;
    int height = 0, width = 0, channels = 0;
};

inline Batches split_holdout(const std::vector<ImageSample>& data, double fraction,
                             std::uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("training data is empty");
    int classes_seen = 0;
    {
        std::unordered_set<int> labels;
        for (const auto& s : data) labels.insert(s.label);
        classes_seen = static_cast<int>(labels.size());
    }
    if (classes_seen < 2) throw std::invalid_argument("training requires at least 2 classes");
    for (const auto& s : data)
        if (!s.image.in_range())
            throw std::invalid_argument("image for item " + std::to_string(s.item_id) +
                                        " has pixels outside [0,1]");
    std::vector<const ImageSample*> all;
    all.reserve(data.size());
    for (const auto& s : data) all.push_back(&s);
    std::mt19937_64 rng(mix_seed(seed, 0x5eed));
    std::shuffle(all.begin(), all.end(), rng);
    Batches b;
    b.channels = data.front().image.channels;
    b.height = data.front().image.height;
    b.width = data.front().image.width;
    const auto n_holdout = static_cast<std::size_t>(std::floor(fraction * all.size()));
    b.holdout.assign(all.begin(), all.begin() + n_holdout);
    b.train.assign(all.begin() + n_holdout, all.end());
    if (b.train.empty()) throw std::invalid_argument("holdout fraction leaves no training data");
    return b;
}

inline Tensor stack_pixels(const std::vector<const ImageSample*>& samples, std::size_t begin,
                           std::size_t end, int c, int h, int w) {
    const auto n = static_cast<int>(end - begin);
    Tensor batch = Tensor::zeros({n, c, h, w});
    auto bv = batch.values();
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    for (std::size_t i = begin; i < end; ++i)
        std::copy(samples[i]->image.pixels.begin(), samples[i]->image.pixels.end(),
                  bv.begin() + static_cast<std::ptrdiff_t>((i - begin) * stride));
    return batch;
}

inline std::vector<int> batch_labels(const std::vector<const ImageSample*>& samples,
                                     std::size_t begin, std::size_t end) {
    std::vector<int> labels;
    labels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) labels.push_back(samples[i]->label);
    return labels;
}

}  // namespace detail_train

struct ClassifierTrainer {
    ClassifierConfig arch;
    TrainConfig cfg;

    /// When `init` is given the regime starts from those weights instead of a
    /// fresh initialization, mirroring a defense applied to a pre-trained
    /// traditional model.
    TrainedClassifier run(TrainRegime regime, const std::vector<ImageSample>& data,
                          const ClassifierModel* init = nullptr) const {
        using namespace detail_train;
        if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.lr <= 0.0)
            throw std::invalid_argument("train: epochs, batch size and lr must be positive");
        if (regime == TrainRegime::free_adv_train && cfg.replay_m < 1)
            throw std::invalid_argument("train_free: replay count m must be >= 1");
        if (regime != TrainRegime::traditional && cfg.eps_def < 0.0)
            throw std::invalid_argument("defended training: eps_def must be >= 0");

        auto batches = split_holdout(data, cfg.holdout_fraction, cfg.seed);
        ClassifierModel model =
            init ? init->clone() : ClassifierModel(arch, detail_train::mix_seed(cfg.seed, 1));
        if (init && (init->config().in_channels != arch.in_channels ||
                     init->config().hidden_channels != arch.hidden_channels ||
                     init->config().feature_dim != arch.feature_dim ||
                     init->config().num_classes != arch.num_classes))
            throw std::invalid_argument("warm-start model does not match the configured architecture");
        model.regime_ = regime;
        model.eps_def_ = regime == TrainRegime::traditional ? 0.0 : cfg.eps_def;
        model.replay_m_ = regime == TrainRegime::free_adv_train ? cfg.replay_m : 1;
        model.seed_ = cfg.seed;

        const int m = regime == TrainRegime::free_adv_train ? cfg.replay_m : 1;
        const int epochs = regime == TrainRegime::free_adv_train
                               ? (cfg.epochs + m - 1) / m
                               : cfg.epochs;
        auto params = model.parameters();
        Sgd sgd(cfg.lr);
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 2));
        TrainStats stats;

        // free training keeps one perturbation buffer alive across batches
        std::vector<double> delta(static_cast<std::size_t>(cfg.batch_size) * batches.channels *
                                      batches.height * batches.width,
                                  0.0);
        const double eps = cfg.eps_def / 255.0;

        AttackSpec defense_pgd;
        defense_pgd.kind = AttackKind::pgd;
        defense_pgd.epsilon = cfg.eps_def;
        defense_pgd.alpha = std::max(cfg.eps_def / 4.0, 1e-12);
        defense_pgd.iterations = cfg.inner_steps;

        auto order = batches.train;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            double epoch_loss = 0.0;
            int batch_count = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                Tensor batch = stack_pixels(order, start, stop, batches.channels, batches.height,
                                            batches.width);
                const auto labels = batch_labels(order, start, stop);
                const Tensor onehot = ops::one_hot_rows(arch.num_classes, labels);

                if (regime == TrainRegime::adv_train && cfg.eps_def > 0.0) {
                    // replace the minibatch by its untargeted pgd perturbation
                    auto bv = batch.values();
                    const std::size_t stride =
                        static_cast<std::size_t>(batches.channels) * batches.height * batches.width;
                    for (std::size_t i = start; i < stop; ++i) {
                        Image img = order[i]->image;
                        const auto adv =
                            pgd(model, img, defense_pgd,
                                mix_seed(cfg.seed, (epoch * 131071ull + start) * 31 + i),
                                order[i]->label);
                        std::copy(adv.perturbed.pixels.begin(), adv.perturbed.pixels.end(),
                                  bv.begin() + static_cast<std::ptrdiff_t>((i - start) * stride));
                    }
                }

                const int passes = regime == TrainRegime::free_adv_train ? m : 1;
                for (int pass = 0; pass < passes; ++pass) {
                    Tensor input = batch;
                    if (regime == TrainRegime::free_adv_train) {
                        input = Tensor::zeros(batch.shape());
                        auto iv = input.values();
                        auto bv = batch.values();
                        for (std::size_t i = 0; i < iv.size(); ++i)
                            iv[i] = std::clamp(bv[i] + delta[i], 0.0, 1.0);
                        input.requires_grad();
                    }
                    Tape tape;
                    const Tensor z = model.logits(tape, input);
                    const Tensor loss = ops::softmax_cross_entropy(tape, z, onehot);
                    const double lv = loss.scalar();
                    if (!std::isfinite(lv))
                        throw std::runtime_error(
                            "training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch_count) + ", regime " +
                            std::string(regime_name(regime)));
                    tape.backward(loss);
                    ++stats.backward_passes;
                    epoch_loss += lv;
                    if (regime == TrainRegime::free_adv_train && eps > 0.0) {
                        auto gx = input.grad();
                        for (std::size_t i = 0; i < gx.size(); ++i)
                            delta[i] = std::clamp(delta[i] + eps * detail_attack::sign(gx[i]),
                                                  -eps, eps);
                    }
                    sgd.step(params);
                }
                ++batch_count;
            }
            stats.final_loss = epoch_loss / std::max(batch_count, 1);
            ++stats.epochs_run;
        }

        int correct = 0;
        for (const auto* s : batches.holdout)
            if (model.predict(s->image) == s->label) ++correct;
        stats.holdout_accuracy =
            batches.holdout.empty() ? 1.0 : static_cast<double>(correct) / batches.holdout.size();
        return {std::move(model), stats};
    }
};

inline TrainedClassifier train_standard(const std::vector<ImageSample>& data,
                                        const ClassifierConfig& arch, const TrainConfig& cfg) {
    return ClassifierTrainer{arch, cfg}.run(TrainRegime::traditional, data);
}

inline TrainedClassifier train_adversarial(const std::vector<ImageSample>& data,
                                           const ClassifierConfig& arch, const TrainConfig& cfg,
                                           const ClassifierModel* init = nullptr) {
    return ClassifierTrainer{arch, cfg}.run(TrainRegime::adv_train, data, init);
}

inline TrainedClassifier train_free(const std::vector<ImageSample>& data,
                                    const ClassifierConfig& arch, const TrainConfig& cfg,
                                    const ClassifierModel* init = nullptr) {
    return ClassifierTrainer{arch, cfg}.run(TrainRegime::free_adv_train, data, init);
}

}  // namespace varbench
