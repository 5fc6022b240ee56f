// Command-line driver for the evaluation toolkit. Every subcommand reads the
// same config file; --seed and --out override the configured values.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "varbench/experiment.hpp"

namespace fs = std::filesystem;
using namespace varbench;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::int64_t seed = -1;
    std::string out_dir;

    ExperimentConfig load() const {
        auto cfg = ExperimentConfig::from_ini(IniFile::parse_file(config_path));
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        return cfg;
    }
};

void add_common(CLI::App* cmd, GlobalArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--seed", args.seed, "override the evaluation seed");
    cmd->add_option("--out", args.out_dir, "override the output directory");
}

std::vector<ImageSample> labeled_images(const ExperimentConfig& cfg, const PipelineData& data) {
    for (const auto& s : data.images)
        if (s.label < 0)
            throw std::runtime_error("item " + std::to_string(s.item_id) +
                                     " has no class label; train-ife needs labeled (synthetic) data");
    (void)cfg;
    return data.images;
}

int cmd_synth(const GlobalArgs& args) {
    const auto cfg = args.load();
    if (!cfg.synthetic_source)
        throw std::runtime_error("synth requires dataset.kind = synthetic");
    const auto synth = synthesize_dataset(cfg.synth);
    const auto dir = (fs::path(cfg.out_dir) / "dataset").string();
    materialize_synthetic(synth, dir);
    std::cout << "wrote " << synth.interactions.num_interactions() << " interactions for "
              << synth.interactions.num_users() << " users and " << synth.interactions.num_items()
              << " items to " << dir << " (density " << synth.interactions.density() << ")\n";
    return 0;
}

int cmd_train_ife(const GlobalArgs& args, const std::string& regime_name_arg) {
    auto cfg = args.load();
    const auto data = load_pipeline_data(cfg);
    const auto labeled = labeled_images(cfg, data);
    fs::create_directories(fs::path(cfg.out_dir) / "ife");
    fs::create_directories(fs::path(cfg.out_dir) / "features");
    std::vector<TrainRegime> regimes = cfg.regimes;
    if (!regime_name_arg.empty()) regimes = {regime_from_name(regime_name_arg)};
    ClassifierConfig arch = cfg.arch;
    arch.num_classes = 1 + std::max_element(labeled.begin(), labeled.end(),
                                            [](const auto& a, const auto& b) {
                                                return a.label < b.label;
                                            })->label;
    TrainConfig base_tc = cfg.ife;
    base_tc.seed = cfg.seed;
    const auto base = ClassifierTrainer{arch, base_tc}.run(TrainRegime::traditional, labeled);
    for (auto regime : regimes) {
        std::optional<TrainedClassifier> defended;
        if (regime != TrainRegime::traditional) {
            TrainConfig tc = base_tc;
            tc.lr = cfg.ife_defense_lr;
            defended = ClassifierTrainer{arch, tc}.run(regime, labeled, &base.model);
        }
        const TrainedClassifier& trained = defended ? *defended : base;
        const auto path = (fs::path(cfg.out_dir) / "ife" / (std::string(regime_name(regime)) + ".ckpt")).string();
        trained.model.save(path);
        const auto cats = classify_categories(trained.model, data.images);
        save_categories((fs::path(cfg.out_dir) / "ife" /
                         ("categories_" + std::string(regime_name(regime)) + ".csv"))
                            .string(),
                        cats);
        const auto store = extract_store(trained.model, data.images);
        store.save((fs::path(cfg.out_dir) / "features" /
                    (std::string(regime_name(regime)) + "_clean.fstore"))
                       .string());
        std::cout << regime_name(regime) << ": holdout accuracy "
                  << trained.stats.holdout_accuracy << ", saved " << path << "\n";
    }
    return 0;
}

int cmd_attack(const GlobalArgs& args, const std::string& model_path, int origin_class,
               int target_class) {
    auto cfg = args.load();
    const auto data = load_pipeline_data(cfg);
    const auto model = ClassifierModel::load(model_path);
    const auto store = extract_store(model, data.images);
    const auto cats = classify_categories(model, data.images);
    if (origin_class < 0 || origin_class >= model.num_classes() || target_class < 0 ||
        target_class >= model.num_classes() || origin_class == target_class)
        throw std::runtime_error("attack needs distinct --origin-class/--target-class in range");
    if (cfg.attacks.empty()) throw std::runtime_error("config lists no attacks");
    for (const auto& att : cfg.attacks) {
        const auto dir =
            (fs::path(cfg.out_dir) / "attacks" / regime_name(model.regime()) / att.name).string();
        const auto stage =
            run_attack_stage(model, store, data.images, cats[static_cast<std::size_t>(origin_class)],
                             target_class, att.spec, dir, cfg.seed);
        std::cout << att.name << ": SR " << stage.sr << ", FL " << stage.fl << ", "
                  << stage.items.size() << " images in " << dir << "\n";
    }
    return 0;
}

int cmd_recommend(const GlobalArgs& args, const std::string& rec_name,
                  const std::string& features_path, int top_k) {
    auto cfg = args.load();
    const auto data = load_pipeline_data(cfg);
    const auto store = FeatureStore::load(features_path);
    const auto kind = rec_kind_from_name(rec_name);
    BprConfig bpr = cfg.bpr;
    bpr.seed = cfg.seed;
    const auto model = train_recommender(kind, data.split, store, bpr, cfg.amr);
    const int k = top_k > 0 ? top_k : *std::max_element(cfg.k_values.begin(), cfg.k_values.end());
    const auto lists = model->recommend_all(k);
    fs::create_directories(fs::path(cfg.out_dir) / "rankings");
    const auto path = (fs::path(cfg.out_dir) / "rankings" / (rec_name + ".csv")).string();
    save_rankings(path, lists);
    std::cout << "wrote top-" << k << " lists for " << lists.size() << " users to " << path << "\n";
    return 0;
}

int cmd_evaluate(const GlobalArgs& args, const std::string& rankings_path,
                 const std::string& categories_path, int origin_class) {
    auto cfg = args.load();
    const auto data = load_pipeline_data(cfg);
    const auto lists = load_rankings(rankings_path);
    const int num_classes = std::max(origin_class + 1, cfg.synth.num_classes);
    const auto cats = load_categories(categories_path, num_classes);
    const auto& origin = cats.at(static_cast<std::size_t>(origin_class));
    std::cout << "metric,k,value\n";
    for (int k : cfg.k_values) {
        std::cout << "CHR," << k << ',' << chr_at_k(lists, origin, k).mean << "\n";
        std::cout << "nCDCG," << k << ',' << ncdcg_at_k(lists, origin, k, cfg.relevance).mean << "\n";
        const auto acc = accuracy_metrics(lists, data.split, k);
        std::cout << "Recall," << k << ',' << acc.recall << "\n";
        std::cout << "nDCG," << k << ',' << acc.ndcg << "\n";
        const auto beyond = beyond_accuracy(lists, data.split, k);
        std::cout << "ICov," << k << ',' << beyond.icov << "\n";
        std::cout << "Gini," << k << ',' << beyond.gini << "\n";
        std::cout << "EFD," << k << ',' << beyond.efd << "\n";
    }
    return 0;
}

int cmd_run(const GlobalArgs& args) {
    const auto cfg = args.load();
    const auto report = run_experiment(cfg);
    emit_report(report, cfg.out_dir);
    std::cout << "completed " << report.completed_cells << " grid cells; report in " << cfg.out_dir
              << "/report.csv\n";
    if (!report.failures.empty()) {
        std::cerr << report.failures.size() << " cell(s) failed:\n";
        for (const auto& f : report.failures) std::cerr << "  " << f << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial robustness bench for visual recommenders"};
    app.require_subcommand(1);

    GlobalArgs args;
    std::string regime, model_path, rec_name = "vbpr", features_path, rankings_path, categories_path;
    int origin_class = -1, target_class = -1, top_k = 0;

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    add_common(synth, args);

    auto* train = app.add_subcommand("train-ife", "train the image feature extractor(s)");
    add_common(train, args);
    train->add_option("--regime", regime, "train a single regime instead of the configured list");

    auto* attack = app.add_subcommand("attack", "perturb origin-class images toward a target class");
    add_common(attack, args);
    attack->add_option("--model", model_path, "classifier checkpoint")->required();
    attack->add_option("--origin-class", origin_class, "class to perturb")->required();
    attack->add_option("--target-class", target_class, "class to imitate")->required();

    auto* recommend = app.add_subcommand("recommend", "train a recommender and emit top-K lists");
    add_common(recommend, args);
    recommend->add_option("--rec", rec_name, "recommender: fm, vbpr or amr");
    recommend->add_option("--features", features_path, "feature store file")->required();
    recommend->add_option("--top-k", top_k, "list length (default: max configured K)");

    auto* evaluate = app.add_subcommand("evaluate", "score saved ranking lists");
    add_common(evaluate, args);
    evaluate->add_option("--rankings", rankings_path, "rankings csv")->required();
    evaluate->add_option("--categories", categories_path, "categories csv")->required();
    evaluate->add_option("--origin-class", origin_class, "monitored category class")->required();

    auto* run = app.add_subcommand("run", "execute the full experiment grid");
    add_common(run, args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(args);
        if (train->parsed()) return cmd_train_ife(args, regime);
        if (attack->parsed()) return cmd_attack(args, model_path, origin_class, target_class);
        if (recommend->parsed()) return cmd_recommend(args, rec_name, features_path, top_k);
        if (evaluate->parsed()) return cmd_evaluate(args, rankings_path, categories_path, origin_class);
        if (run->parsed()) return cmd_run(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
