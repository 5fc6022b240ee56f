#pragma once

#include <atomic>
#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <thread>

#include "varbench/classifier.hpp"
#include "varbench/ini.hpp"
#include "varbench/metrics.hpp"
#include "varbench/recsys.hpp"
#include "varbench/synthetic.hpp"

// Experiment orchestration: one config file drives the full grid
// defense x attack x recommender. Per grid cell the pipeline trains (or loads)
// the feature extractor under the defense, extracts clean features once,
// trains the recommender, perturbs the origin-category images toward the
// target category, re-extracts features for the attacked items, retrains the
// recommender from scratch and reports every metric.

namespace varbench {

enum class RecKind { fm, vbpr, amr };

inline const char* rec_kind_name(RecKind r) {
    switch (r) {
        case RecKind::fm: return "fm";
        case RecKind::vbpr: return "vbpr";
        case RecKind::amr: return "amr";
    }
    return "?";
}

inline RecKind rec_kind_from_name(const std::string& s) {
    if (s == "fm") return RecKind::fm;
    if (s == "vbpr") return RecKind::vbpr;
    if (s == "amr") return RecKind::amr;
    throw std::invalid_argument("unknown recommender: " + s);
}

struct NamedAttack {
    std::string name;  // e.g. "fgsm_eps4", "pgd_eps8", "cw"
    AttackSpec spec;
};

struct ExperimentConfig {
    std::string dataset_name = "synthetic";
    bool synthetic_source = true;
    std::string interactions_csv;
    std::string images_dir;
    int kcore = 1;
    SyntheticSpec synth;

    std::vector<TrainRegime> regimes{TrainRegime::traditional};
    ClassifierConfig arch;
    TrainConfig ife;
    double ife_defense_lr = 0.1;  // defended regimes fine-tune the traditional model
    std::map<std::string, std::string> ife_checkpoints;  // regime name -> checkpoint path

    std::vector<NamedAttack> attacks;
    std::vector<RecKind> recommenders{RecKind::vbpr};
    BprConfig bpr;
    AmrConfig amr;

    std::vector<int> k_values{20, 50};
    RelevanceConfig relevance;
    double category_ratio = 4.0;
    double category_tolerance = 2.0;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    bool parallel_cells = false;

    static ExperimentConfig from_ini(const IniFile& ini);
};

inline AttackSpec parse_attack_token(const std::string& token, const IniFile& ini) {
    AttackSpec spec;
    std::string kind = token;
    double eps = 0.0;
    if (auto colon = token.find(':'); colon != std::string::npos) {
        kind = token.substr(0, colon);
        eps = std::stod(token.substr(colon + 1));
    }
    if (kind == "fgsm") {
        spec.kind = AttackKind::fgsm;
        spec.epsilon = eps > 0.0 ? eps : 4.0;
    } else if (kind == "pgd") {
        spec.kind = AttackKind::pgd;
        spec.epsilon = eps > 0.0 ? eps : 8.0;
        spec.alpha = spec.epsilon / ini.get_double("attacks", "pgd_alpha_divisor", 6.0);
        spec.iterations = static_cast<int>(ini.get_int("attacks", "pgd_iterations", 10));
    } else if (kind == "cw") {
        spec.kind = AttackKind::cw_l2;
        spec.kappa = ini.get_double("attacks", "cw_kappa", 0.0);
        spec.binary_search_steps = static_cast<int>(ini.get_int("attacks", "cw_search_steps", 5));
        spec.initial_tradeoff = ini.get_double("attacks", "cw_initial_tradeoff", 1e-2);
        spec.inner_lr = ini.get_double("attacks", "cw_lr", 5e-3);
        spec.max_inner_iterations = static_cast<int>(ini.get_int("attacks", "cw_max_iterations", 1000));
    } else {
        throw std::invalid_argument("unknown attack token '" + token + "'");
    }
    return spec;
}

inline std::string attack_display_name(const AttackSpec& spec) {
    if (spec.kind == AttackKind::cw_l2) return "cw";
    std::ostringstream os;
    os << attack_kind_name(spec.kind) << "_eps" << spec.epsilon;
    return os.str();
}

inline ExperimentConfig ExperimentConfig::from_ini(const IniFile& ini) {
    ExperimentConfig cfg;
    cfg.dataset_name = ini.get("dataset", "name", "synthetic");
    const std::string kind = ini.get("dataset", "kind", "synthetic");
    if (kind == "synthetic") {
        cfg.synthetic_source = true;
    } else if (kind == "csv") {
        cfg.synthetic_source = false;
        cfg.interactions_csv = ini.require("dataset", "interactions");
        cfg.images_dir = ini.require("dataset", "images_dir");
    } else {
        throw std::invalid_argument("dataset.kind must be 'synthetic' or 'csv'");
    }
    cfg.kcore = static_cast<int>(ini.get_int("dataset", "kcore", 1));

    cfg.synth.num_classes = static_cast<int>(ini.get_int("synthetic", "num_classes", 3));
    cfg.synth.images_per_class = static_cast<int>(ini.get_int("synthetic", "images_per_class", 50));
    cfg.synth.image_size = static_cast<int>(ini.get_int("synthetic", "image_size", 16));
    cfg.synth.num_users = static_cast<int>(ini.get_int("synthetic", "num_users", 60));
    cfg.synth.interactions_per_user =
        static_cast<int>(ini.get_int("synthetic", "interactions_per_user", 12));
    cfg.synth.class_preference_skew = ini.get_double("synthetic", "class_preference_skew", 0.8);
    cfg.synth.stripe_amplitude = ini.get_double("synthetic", "stripe_amplitude", cfg.synth.stripe_amplitude);
    cfg.synth.amplitude_jitter = ini.get_double("synthetic", "amplitude_jitter", cfg.synth.amplitude_jitter);
    cfg.synth.noise_level = ini.get_double("synthetic", "noise_level", cfg.synth.noise_level);

    cfg.seed = static_cast<std::uint64_t>(ini.get_int("evaluation", "seed", 1));
    cfg.synth.seed = static_cast<std::uint64_t>(ini.get_int("synthetic", "seed", 7));

    cfg.regimes.clear();
    for (const auto& name : ini.get_list("ife", "regimes", {"traditional"}))
        cfg.regimes.push_back(regime_from_name(name));
    if (cfg.regimes.empty()) throw std::invalid_argument("config lists no ife regimes");

    cfg.arch.in_channels = static_cast<int>(ini.get_int("ife", "in_channels", 3));
    cfg.arch.hidden_channels = static_cast<int>(ini.get_int("ife", "hidden_channels", 16));
    cfg.arch.feature_dim = static_cast<int>(ini.get_int("ife", "gamma", 64));
    cfg.ife.epochs = static_cast<int>(ini.get_int("ife", "epochs", 36));
    cfg.ife.batch_size = static_cast<int>(ini.get_int("ife", "batch_size", 16));
    cfg.ife.lr = ini.get_double("ife", "lr", 0.5);
    cfg.ife_defense_lr = ini.get_double("ife", "defense_lr", 0.1);
    cfg.ife.holdout_fraction = ini.get_double("ife", "holdout_fraction", 0.2);
    cfg.ife.eps_def = ini.get_double("ife", "eps_def", 4.0);
    cfg.ife.inner_steps = static_cast<int>(ini.get_int("ife", "inner_steps", 7));
    cfg.ife.replay_m = static_cast<int>(ini.get_int("ife", "replay_m", 4));
    for (const auto& r : {"traditional", "adv_train", "free_adv_train"})
        if (ini.has("ife", std::string("checkpoint_") + r))
            cfg.ife_checkpoints[r] = ini.require("ife", std::string("checkpoint_") + r);

    for (const auto& token : ini.get_list("attacks", "grid"))
        cfg.attacks.push_back({"", parse_attack_token(token, ini)});
    for (auto& a : cfg.attacks) a.name = attack_display_name(a.spec);

    cfg.recommenders.clear();
    for (const auto& name : ini.get_list("recommenders", "grid", {"fm", "vbpr", "amr"}))
        cfg.recommenders.push_back(rec_kind_from_name(name));
    if (cfg.recommenders.empty()) throw std::invalid_argument("config lists no recommenders");
    cfg.bpr.epochs = static_cast<int>(ini.get_int("recommenders", "epochs", 100));
    cfg.bpr.lr = ini.get_double("recommenders", "lr", 0.05);
    cfg.bpr.reg = ini.get_double("recommenders", "reg", 1e-4);
    cfg.bpr.latent_dim = static_cast<int>(ini.get_int("recommenders", "latent_dim", 16));
    cfg.bpr.visual_dim = static_cast<int>(ini.get_int("recommenders", "visual_dim", 16));
    cfg.amr.bpr = cfg.bpr;
    cfg.amr.eps_adv = ini.get_double("recommenders", "amr_eps_adv", 0.5);
    cfg.amr.lambda_adv = ini.get_double("recommenders", "amr_lambda_adv", 1.0);

    cfg.k_values.clear();
    for (const auto& k : ini.get_list("evaluation", "k_values", {"20", "50"}))
        cfg.k_values.push_back(std::stoi(k));
    cfg.relevance.tau = ini.get_double("evaluation", "tau", 1.0);
    cfg.relevance.s_max = ini.get_double("evaluation", "s_max", 1.0);
    cfg.category_ratio = ini.get_double("evaluation", "category_ratio", 4.0);
    cfg.category_tolerance = ini.get_double("evaluation", "category_tolerance", 2.0);
    cfg.out_dir = ini.get("output", "dir", "out");
    cfg.parallel_cells = ini.get_bool("output", "parallel_cells", false);
    return cfg;
}

// ---------------------------------------------------------------------------
// category selection

struct CategoryPlan {
    int origin = -1;
    int target = -1;
    double origin_chr = 0.0;
    double target_chr = 0.0;
    bool within_tolerance = true;
};

/// Picks the ordered (origin, target) pair whose clean CHR ratio is closest to
/// `ratio`; ties break on the smaller origin then target class id. Falls back
/// to the closest pair (with a warning) when nothing is inside the tolerance.
inline CategoryPlan choose_category_pair(const std::map<int, double>& chr_by_class, double ratio,
                                         double tolerance) {
    int nonzero = 0;
    for (const auto& [cls, chr] : chr_by_class)
        if (chr > 0.0) ++nonzero;
    if (nonzero < 2)
        throw std::invalid_argument("category selection needs >= 2 classes with nonzero clean CHR");
    CategoryPlan best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& [o, chr_o] : chr_by_class) {
        if (chr_o <= 0.0) continue;
        for (const auto& [t, chr_t] : chr_by_class) {
            if (t == o || chr_t <= 0.0) continue;
            const double gap = std::abs(chr_t / chr_o - ratio);
            if (gap < best_gap) {
                best_gap = gap;
                best = {o, t, chr_o, chr_t, true};
            }
        }
    }
    if (best_gap > tolerance) {
        best.within_tolerance = false;
        std::cerr << "warning: no category pair within tolerance " << tolerance
                  << " of ratio " << ratio << "; using closest pair (" << best.origin << " -> "
                  << best.target << ", ratio " << best.target_chr / best.origin_chr << ")\n";
    }
    return best;
}

inline CategoryPlan select_categories(const std::vector<RankingList>& clean_lists,
                                      const std::vector<CategorySet>& categories, int k,
                                      double ratio = 4.0, double tolerance = 2.0) {
    std::map<int, double> chr_by_class;
    for (const auto& cat : categories)
        chr_by_class[cat.class_id] = cat.items.empty() ? 0.0 : chr_at_k(clean_lists, cat, k).mean;
    return choose_category_pair(chr_by_class, ratio, tolerance);
}

// ---------------------------------------------------------------------------
// report assembly

struct MetricRow {
    std::string recommender, defense, attack, metric;
    int k = 0;  // 0 = not applicable
    double value = 0.0;
};

struct ExperimentReport {
    std::string dataset;
    CategoryPlan plan;
    std::vector<int> k_values;
    std::vector<std::string> recommenders, defenses, attacks;  // grid axes, display order
    std::vector<MetricRow> rows;
    std::vector<std::string> failures;
    int completed_cells = 0;
};

namespace detail_exp {

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return detail_train::mix_seed(a, b);
}

template <class Fn>
void parallel_for(std::size_t n, bool parallel, Fn&& fn) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (!parallel || hw < 2 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const unsigned workers = std::min<std::size_t>(hw, n);
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail_exp

// ---------------------------------------------------------------------------
// pipeline stages

struct PipelineData {
    InteractionDataset dataset;
    SplitDataset split;
    std::vector<ImageSample> images;  // post-kcore catalog, loaded from disk
};

/// Writes interactions.csv plus images/<item>.png for a synthetic dataset.
inline void materialize_synthetic(const SyntheticDataset& synth, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    save_interactions((fs::path(dir) / "interactions.csv").string(), synth.interactions);
    for (const auto& s : synth.images)
        save_png(item_image_path((fs::path(dir) / "images").string(), s.item_id), s.image);
}

/// Loads the configured dataset, applies k-core filtering, reloads images from
/// disk (items live as PNG files, the lossless on-disk interface) and builds
/// the leave-one-out split.
inline PipelineData load_pipeline_data(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    PipelineData out;
    std::string images_dir;
    std::unordered_map<Id, int> labels;
    if (cfg.synthetic_source) {
        const auto synth = synthesize_dataset(cfg.synth);
        const auto dir = (fs::path(cfg.out_dir) / "dataset").string();
        materialize_synthetic(synth, dir);
        images_dir = (fs::path(dir) / "images").string();
        out.dataset = synth.interactions;
        for (const auto& s : synth.images) labels[s.item_id] = s.label;
    } else {
        out.dataset = load_interactions(cfg.interactions_csv);
        images_dir = cfg.images_dir;
    }
    out.dataset = kcore_filter(out.dataset, cfg.kcore);
    if (out.dataset.empty()) throw std::runtime_error("dataset is empty after k-core filtering");
    out.split = leave_one_out(out.dataset);
    out.images.reserve(out.dataset.num_items());
    for (Id item : out.dataset.items()) {
        ImageSample s;
        s.item_id = item;
        s.image = load_png(item_image_path(images_dir, item));
        if (auto it = labels.find(item); it != labels.end()) s.label = it->second;
        out.images.push_back(std::move(s));
    }
    return out;
}

inline FeatureStore extract_store(const ClassifierModel& model, const std::vector<ImageSample>& images,
                                  bool parallel = true) {
    FeatureStore store(model.feature_dim());
    std::vector<std::vector<double>> feats(images.size());
    detail_exp::parallel_for(images.size(), parallel, [&](std::size_t i) {
        feats[i] = model.extract_features(images[i].image);
    });
    for (std::size_t i = 0; i < images.size(); ++i) store.put(images[i].item_id, std::move(feats[i]));
    return store;
}

/// I_c for every class: items grouped by the classifier's prediction on the
/// clean images.
inline std::vector<CategorySet> classify_categories(const ClassifierModel& model,
                                                    const std::vector<ImageSample>& images,
                                                    bool parallel = true) {
    std::vector<CategorySet> cats(static_cast<std::size_t>(model.num_classes()));
    for (int c = 0; c < model.num_classes(); ++c) cats[static_cast<std::size_t>(c)].class_id = c;
    std::vector<int> pred(images.size());
    detail_exp::parallel_for(images.size(), parallel, [&](std::size_t i) {
        pred[i] = model.predict_class(images[i].image);
    });
    for (std::size_t i = 0; i < images.size(); ++i)
        cats[static_cast<std::size_t>(pred[i])].items.insert(images[i].item_id);
    return cats;
}

inline void save_categories(const std::string& path, const std::vector<CategorySet>& cats) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "item_id,class\n";
    std::map<Id, int> rows;
    for (const auto& c : cats)
        for (Id i : c.items) rows[i] = c.class_id;
    for (const auto& [item, cls] : rows) os << item << ',' << cls << '\n';
}

inline std::vector<CategorySet> load_categories(const std::string& path, int num_classes) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open categories file " + path);
    std::vector<CategorySet> cats(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) cats[static_cast<std::size_t>(c)].class_id = c;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("malformed categories row in " + path);
        const Id item = std::stoll(line.substr(0, comma));
        const int cls = std::stoi(line.substr(comma + 1));
        if (cls < 0 || cls >= num_classes)
            throw std::runtime_error("categories file references class " + std::to_string(cls));
        cats[static_cast<std::size_t>(cls)].items.insert(item);
    }
    return cats;
}

struct AttackStageResult {
    std::vector<Id> items;  // attacked items, ascending
    std::vector<AttackedImage> attacked;
    double sr = 0.0;
    double fl = 0.0;
    FeatureStore perturbed;
};

/// Attacks every origin-class image toward the target class, saves the
/// perturbed images losslessly, re-extracts features for the attacked items
/// from the saved files and swaps them into a copy of the clean store.
inline AttackStageResult run_attack_stage(const ClassifierModel& model, const FeatureStore& clean,
                                          const std::vector<ImageSample>& images,
                                          const CategorySet& origin, int target_class,
                                          AttackSpec spec, const std::string& out_dir,
                                          std::uint64_t seed, bool parallel = true) {
    namespace fs = std::filesystem;
    spec.target = target_class;
    fs::create_directories(out_dir);
    AttackStageResult res;
    std::vector<const ImageSample*> victims;
    for (const auto& s : images)
        if (origin.contains(s.item_id)) victims.push_back(&s);
    std::sort(victims.begin(), victims.end(),
              [](const ImageSample* a, const ImageSample* b) { return a->item_id < b->item_id; });
    if (victims.empty()) throw std::runtime_error("origin category has no items to attack");

    res.attacked.resize(victims.size());
    detail_exp::parallel_for(victims.size(), parallel, [&](std::size_t i) {
        res.attacked[i] = run_attack(model, victims[i]->image, spec,
                                     detail_exp::mix(seed, static_cast<std::uint64_t>(victims[i]->item_id)));
    });

    std::vector<AttackManifestRow> manifest;
    res.perturbed = clean;
    for (std::size_t i = 0; i < victims.size(); ++i) {
        const Id item = victims[i]->item_id;
        res.items.push_back(item);
        const auto path = item_image_path(out_dir, item);
        save_png(path, res.attacked[i].perturbed);
        manifest.push_back({item, spec.kind, spec.epsilon, target_class, res.attacked[i].success,
                            res.attacked[i].l2_norm, res.attacked[i].linf_norm});
    }
    std::vector<std::vector<double>> feats(victims.size());
    detail_exp::parallel_for(victims.size(), parallel, [&](std::size_t i) {
        feats[i] = model.extract_features(load_png(item_image_path(out_dir, victims[i]->item_id)));
    });
    for (std::size_t i = 0; i < victims.size(); ++i) res.perturbed.put(res.items[i], std::move(feats[i]));
    write_attack_manifest((fs::path(out_dir) / "manifest.csv").string(), manifest);

    res.sr = success_rate(res.attacked, target_class);
    res.fl = feature_loss(clean, res.perturbed, res.items);
    return res;
}

/// Trains the requested recommender on the given store.
inline std::unique_ptr<RecommenderBase> train_recommender(RecKind kind, const SplitDataset& split,
                                                          const FeatureStore& store,
                                                          const BprConfig& bpr, const AmrConfig& amr) {
    switch (kind) {
        case RecKind::fm: {
            auto m = std::make_unique<FmModel>(split, store, bpr);
            BprTrainer::train_fm(*m, split, bpr);
            return m;
        }
        case RecKind::vbpr: {
            auto m = std::make_unique<VbprModel>(split, store, bpr);
            BprTrainer::train_vbpr(*m, split, bpr);
            return m;
        }
        case RecKind::amr: {
            AmrConfig cfg = amr;
            cfg.bpr = bpr;
            auto m = std::make_unique<AmrModel>(split, store, cfg);
            BprTrainer::train_amr(*m, split, cfg);
            return m;
        }
    }
    throw std::logic_error("unknown recommender kind");
}

/// All K-dependent metric rows for one grid cell.
inline std::vector<MetricRow> cell_metric_rows(const std::string& rec, const std::string& defense,
                                               const std::string& attack,
                                               const std::vector<RankingList>& lists,
                                               const SplitDataset& split, const CategorySet& origin,
                                               const RelevanceConfig& rc,
                                               const std::vector<int>& k_values) {
    std::vector<MetricRow> rows;
    for (int k : k_values) {
        const double chr = chr_at_k(lists, origin, k).mean;
        rows.push_back({rec, defense, attack, "CHR", k, chr});
        rows.push_back({rec, defense, attack, "CHR_pct", k, chr * 100.0});
        rows.push_back({rec, defense, attack, "nCDCG", k, ncdcg_at_k(lists, origin, k, rc).mean});
        const auto acc = accuracy_metrics(lists, split, k);
        rows.push_back({rec, defense, attack, "Recall", k, acc.recall});
        rows.push_back({rec, defense, attack, "nDCG", k, acc.ndcg});
        const auto beyond = beyond_accuracy(lists, split, k);
        rows.push_back({rec, defense, attack, "ICov", k, beyond.icov});
        rows.push_back({rec, defense, attack, "Gini", k, beyond.gini});
        rows.push_back({rec, defense, attack, "EFD", k, beyond.efd});
    }
    return rows;
}

inline constexpr int kMetricsPerK = 8;  // CHR, CHR_pct, nCDCG, Recall, nDCG, ICov, Gini, EFD

// ---------------------------------------------------------------------------
// full run

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    fs::create_directories(fs::path(cfg.out_dir) / "ife");
    fs::create_directories(fs::path(cfg.out_dir) / "features");
    fs::create_directories(fs::path(cfg.out_dir) / "rankings");

    ExperimentReport report;
    report.dataset = cfg.dataset_name;
    report.k_values = cfg.k_values;
    for (auto r : cfg.recommenders) report.recommenders.emplace_back(rec_kind_name(r));
    for (auto d : cfg.regimes) report.defenses.emplace_back(regime_name(d));
    for (const auto& a : cfg.attacks) report.attacks.push_back(a.name);

    const PipelineData data = load_pipeline_data(cfg);
    const int max_k = *std::max_element(cfg.k_values.begin(), cfg.k_values.end());
    const int plan_k = std::count(cfg.k_values.begin(), cfg.k_values.end(), 50) ? 50 : max_k;

    struct RegimeState {
        bool ok = false;
        std::string error;
        std::unique_ptr<ClassifierModel> model;
        FeatureStore clean_store;
        std::vector<CategorySet> categories;
        std::vector<std::vector<RankingList>> clean_lists;  // per recommender
    };
    std::vector<RegimeState> states(cfg.regimes.size());

    // the defended regimes robustify the same pre-trained traditional model
    std::unique_ptr<ClassifierModel> base_model;
    const auto traditional_base = [&]() -> const ClassifierModel& {
        if (!base_model) {
            for (const auto& s : data.images)
                if (s.label < 0)
                    throw std::runtime_error(
                        "item " + std::to_string(s.item_id) +
                        " has no class label; provide an ife checkpoint for external datasets");
            ClassifierConfig arch = cfg.arch;
            arch.num_classes = 1 + std::max_element(data.images.begin(), data.images.end(),
                                                    [](const auto& a, const auto& b) {
                                                        return a.label < b.label;
                                                    })->label;
            TrainConfig tc = cfg.ife;
            tc.seed = detail_exp::mix(cfg.seed, 0x1fe);
            auto trained = ClassifierTrainer{arch, tc}.run(TrainRegime::traditional, data.images);
            std::cerr << "info: traditional classifier holdout accuracy "
                      << trained.stats.holdout_accuracy << "\n";
            base_model = std::make_unique<ClassifierModel>(std::move(trained.model));
        }
        return *base_model;
    };

    for (std::size_t d = 0; d < cfg.regimes.size(); ++d) {
        auto& st = states[d];
        const auto regime = cfg.regimes[d];
        const std::string dname = regime_name(regime);
        try {
            if (auto it = cfg.ife_checkpoints.find(dname); it != cfg.ife_checkpoints.end()) {
                st.model = std::make_unique<ClassifierModel>(ClassifierModel::load(it->second));
            } else if (regime == TrainRegime::traditional) {
                st.model = std::make_unique<ClassifierModel>(traditional_base().clone());
            } else {
                const auto& base = traditional_base();
                TrainConfig tc = cfg.ife;
                tc.lr = cfg.ife_defense_lr;
                tc.seed = detail_exp::mix(cfg.seed, 0x1fe + 1 + d);
                auto trained = ClassifierTrainer{base.config(), tc}.run(regime, data.images, &base);
                std::cerr << "info: " << dname << " classifier holdout accuracy "
                          << trained.stats.holdout_accuracy << "\n";
                st.model = std::make_unique<ClassifierModel>(std::move(trained.model));
            }
            st.model->save((fs::path(cfg.out_dir) / "ife" / (dname + ".ckpt")).string());
            st.clean_store = extract_store(*st.model, data.images);
            st.clean_store.save(
                (fs::path(cfg.out_dir) / "features" / (dname + "_clean.fstore")).string());
            st.categories = classify_categories(*st.model, data.images);
            save_categories((fs::path(cfg.out_dir) / "ife" / ("categories_" + dname + ".csv")).string(),
                            st.categories);
            st.clean_lists.resize(cfg.recommenders.size());
            for (std::size_t r = 0; r < cfg.recommenders.size(); ++r) {
                BprConfig bpr = cfg.bpr;
                bpr.seed = detail_exp::mix(cfg.seed, 1000 + d * 37 + r);
                auto model = train_recommender(cfg.recommenders[r], data.split, st.clean_store,
                                               bpr, cfg.amr);
                st.clean_lists[r] = model->recommend_all(max_k);
                save_rankings((fs::path(cfg.out_dir) / "rankings" /
                               (dname + "_original_" + rec_kind_name(cfg.recommenders[r]) + ".csv"))
                                  .string(),
                              st.clean_lists[r]);
            }
            st.ok = true;
        } catch (const std::exception& e) {
            st.error = e.what();
            report.failures.push_back(dname + ": " + e.what());
        }
    }

    // origin/target plan: clean per-class CHR averaged across defenses and recommenders
    std::map<int, double> chr_by_class;
    std::map<int, int> chr_counts;
    for (std::size_t d = 0; d < states.size(); ++d) {
        if (!states[d].ok) continue;
        for (const auto& lists : states[d].clean_lists)
            for (const auto& cat : states[d].categories) {
                if (cat.items.empty()) continue;
                chr_by_class[cat.class_id] += chr_at_k(lists, cat, plan_k).mean;
                ++chr_counts[cat.class_id];
            }
    }
    for (auto& [cls, total] : chr_by_class) total /= chr_counts[cls];
    report.plan = choose_category_pair(chr_by_class, cfg.category_ratio, cfg.category_tolerance);

    // clean metric rows, now that the monitored category is known
    for (std::size_t d = 0; d < states.size(); ++d) {
        if (!states[d].ok) continue;
        const auto& origin = states[d].categories[static_cast<std::size_t>(report.plan.origin)];
        for (std::size_t r = 0; r < cfg.recommenders.size(); ++r) {
            auto rows = cell_metric_rows(rec_kind_name(cfg.recommenders[r]), regime_name(cfg.regimes[d]),
                                         "original", states[d].clean_lists[r], data.split, origin,
                                         cfg.relevance, cfg.k_values);
            report.rows.insert(report.rows.end(), rows.begin(), rows.end());
            ++report.completed_cells;
        }
    }

    // attack cells
    for (std::size_t d = 0; d < states.size(); ++d) {
        const auto& st = states[d];
        const std::string dname = regime_name(cfg.regimes[d]);
        if (!st.ok) {
            for (const auto& a : cfg.attacks)
                for (auto rec : cfg.recommenders)
                    report.failures.push_back(dname + "/" + a.name + "/" + rec_kind_name(rec) +
                                              ": skipped (" + st.error + ")");
            continue;
        }
        const auto& origin = st.categories[static_cast<std::size_t>(report.plan.origin)];

        struct CellResult {
            bool ok = false;
            std::string error;
            std::vector<MetricRow> rows;
        };
        std::vector<CellResult> cells(cfg.attacks.size());

        detail_exp::parallel_for(cfg.attacks.size(), cfg.parallel_cells, [&](std::size_t a) {
            auto& cell = cells[a];
            try {
                const auto& att = cfg.attacks[a];
                const auto dir =
                    (fs::path(cfg.out_dir) / "attacks" / dname / att.name).string();
                auto stage = run_attack_stage(*st.model, st.clean_store, data.images, origin,
                                              report.plan.target, att.spec, dir,
                                              detail_exp::mix(cfg.seed, 7000 + d * 101 + a),
                                              !cfg.parallel_cells);
                stage.perturbed.save((fs::path(cfg.out_dir) / "features" /
                                      (dname + "_" + att.name + ".fstore"))
                                         .string());
                cell.rows.push_back({"", dname, att.name, "SR", 0, stage.sr});
                cell.rows.push_back({"", dname, att.name, "FL", 0, stage.fl});
                for (std::size_t r = 0; r < cfg.recommenders.size(); ++r) {
                    BprConfig bpr = cfg.bpr;
                    bpr.seed = detail_exp::mix(cfg.seed, 1000 + d * 37 + r);  // same init as clean run
                    auto model = train_recommender(cfg.recommenders[r], data.split, stage.perturbed,
                                                   bpr, cfg.amr);
                    const auto lists = model->recommend_all(max_k);
                    save_rankings((fs::path(cfg.out_dir) / "rankings" /
                                   (dname + "_" + att.name + "_" +
                                    rec_kind_name(cfg.recommenders[r]) + ".csv"))
                                      .string(),
                                  lists);
                    auto rows = cell_metric_rows(rec_kind_name(cfg.recommenders[r]), dname, att.name,
                                                 lists, data.split, origin, cfg.relevance,
                                                 cfg.k_values);
                    cell.rows.insert(cell.rows.end(), rows.begin(), rows.end());
                }
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
        });

        for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
            if (cells[a].ok) {
                report.rows.insert(report.rows.end(), cells[a].rows.begin(), cells[a].rows.end());
                report.completed_cells += static_cast<int>(cfg.recommenders.size());
            } else {
                report.failures.push_back(dname + "/" + cfg.attacks[a].name + ": " + cells[a].error);
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// report files

inline void write_report_csv(const ExperimentReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "dataset,recommender,defense,attack,metric,k,value\n";
    for (const auto& r : report.rows) {
        os << report.dataset << ',' << r.recommender << ',' << r.defense << ',' << r.attack << ','
           << r.metric << ',';
        if (r.k > 0) os << r.k;
        os << ',' << detail_exp::fmt(r.value) << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

namespace detail_exp {

inline const MetricRow* find_row(const ExperimentReport& rep, const std::string& rec,
                                 const std::string& defense, const std::string& attack,
                                 const std::string& metric, int k) {
    for (const auto& r : rep.rows)
        if (r.recommender == rec && r.defense == defense && r.attack == attack &&
            r.metric == metric && r.k == k)
            return &r;
    return nullptr;
}

}  // namespace detail_exp

/// summary.md: the origin/target plan, the SR/FL table and the category-push
/// table with per-<recommender, defense> column maxima in bold.
inline void write_report_markdown(const ExperimentReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "# Experiment report: " << report.dataset << "\n\n";
    os << "Origin category: class " << report.plan.origin << " (clean CHR "
       << detail_exp::fmt(report.plan.origin_chr * 100.0) << "); target category: class "
       << report.plan.target << " (clean CHR " << detail_exp::fmt(report.plan.target_chr * 100.0)
       << "). CHR values are percentages.\n\n";

    if (!report.attacks.empty()) {
        os << "## Attack success rate and feature loss\n\n|Attack|";
        for (const auto& d : report.defenses) os << d << " SR|" << d << " FL|";
        os << "\n|---|";
        for (std::size_t i = 0; i < report.defenses.size() * 2; ++i) os << "---|";
        os << "\n";
        for (const auto& a : report.attacks) {
            os << '|' << a << '|';
            for (const auto& d : report.defenses) {
                const auto* sr = detail_exp::find_row(report, "", d, a, "SR", 0);
                const auto* fl = detail_exp::find_row(report, "", d, a, "FL", 0);
                os << (sr ? detail_exp::fmt(sr->value) : "-") << '|'
                   << (fl ? detail_exp::fmt(fl->value) : "-") << '|';
            }
            os << "\n";
        }
        os << "\n";
    }

    std::vector<std::string> attack_order{"original"};
    attack_order.insert(attack_order.end(), report.attacks.begin(), report.attacks.end());
    const std::vector<std::string> cat_metrics{"CHR_pct", "nCDCG"};

    os << "## Category push (origin class " << report.plan.origin << ")\n\n|VRS|Attack|";
    for (const auto& d : report.defenses)
        for (const auto& m : cat_metrics)
            for (int k : report.k_values)
                os << d << ' ' << (m == "CHR_pct" ? "CHR" : m) << '@' << k << '|';
    os << "\n|---|---|";
    for (std::size_t i = 0; i < report.defenses.size() * cat_metrics.size() * report.k_values.size();
         ++i)
        os << "---|";
    os << "\n";
    for (const auto& rec : report.recommenders) {
        for (const auto& a : attack_order) {
            os << '|' << rec << '|' << a << '|';
            for (const auto& d : report.defenses)
                for (const auto& m : cat_metrics)
                    for (int k : report.k_values) {
                        const auto* row = detail_exp::find_row(report, rec, d, a, m, k);
                        if (!row) {
                            os << "-|";
                            continue;
                        }
                        // bold the maximum across attacks for this <rec, defense> column
                        double best = -std::numeric_limits<double>::infinity();
                        for (const auto& other : attack_order)
                            if (const auto* r2 = detail_exp::find_row(report, rec, d, other, m, k))
                                best = std::max(best, r2->value);
                        const bool is_max = row->value >= best;
                        os << (is_max ? "**" : "") << detail_exp::fmt(row->value)
                           << (is_max ? "**" : "") << '|';
                    }
            os << "\n";
        }
    }
    os << "\n## Recommendation accuracy and coverage\n\n|VRS|Defense|Attack|";
    const std::vector<std::string> acc_metrics{"Recall", "nDCG", "ICov", "Gini", "EFD"};
    for (const auto& m : acc_metrics)
        for (int k : report.k_values) os << m << '@' << k << '|';
    os << "\n|---|---|---|";
    for (std::size_t i = 0; i < acc_metrics.size() * report.k_values.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& rec : report.recommenders)
        for (const auto& d : report.defenses)
            for (const auto& a : attack_order) {
                if (!detail_exp::find_row(report, rec, d, a, "Recall", report.k_values.front()))
                    continue;
                os << '|' << rec << '|' << d << '|' << a << '|';
                for (const auto& m : acc_metrics)
                    for (int k : report.k_values) {
                        const auto* row = detail_exp::find_row(report, rec, d, a, m, k);
                        os << (row ? detail_exp::fmt(row->value) : "-") << '|';
                    }
                os << "\n";
            }

    if (!report.failures.empty()) {
        os << "\n## Failed cells\n\n";
        for (const auto& f : report.failures) os << "- " << f << "\n";
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline void emit_report(const ExperimentReport& report, const std::string& out_dir) {
    if (report.completed_cells < 1) throw std::runtime_error("no completed cells to report");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
    write_report_markdown(report, (fs::path(out_dir) / "summary.md").string());
}

}  // namespace varbench
