// Command-line harness: dataset generation, training, evaluation,
// cross-validation, ablation sweeps, gradient checking, and profiling.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "iqshrink/checkpoint.hpp"
#include "iqshrink/checks.hpp"
#include "iqshrink/metrics.hpp"
#include "iqshrink/model.hpp"
#include "iqshrink/signals.hpp"

using namespace iqshrink;

namespace {

// Training and evaluation run in 32-bit mode; gradient checks run in 64-bit.
using TrainReal = float;

constexpr double kTrainFrac = 0.7, kValFrac = 0.15, kTestFrac = 0.15;

struct ParsedConfigs {
    ModelConfig model;
    TrainConfig train;
};

ParsedConfigs load_train_config(const std::string& path) {
    KvReader kv(read_text_file(path));
    ParsedConfigs out;
    out.model = model_config_from(kv);
    out.train = train_config_from(kv);
    kv.finish("config file " + path);
    return out;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_path) {
    KvReader kv(read_text_file(spec_path));
    DatasetSpec spec = dataset_spec_from(kv);
    kv.finish("dataset spec " + spec_path);
    Dataset ds = generate_dataset(spec);
    write_dataset(ds, out_path);
    std::printf("wrote %zu frames (%zu schemes x %zu SNRs x %lld) to %s\n", ds.frames.size(),
                spec.schemes.size(), spec.snr_grid_db.size(),
                static_cast<long long>(spec.frames_per_cell), out_path.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir) {
    ParsedConfigs cfg = load_train_config(config_path);
    Dataset ds = read_dataset(data_path);
    if (ds.frame_len != cfg.model.frame_len) {
        throw config_error("dataset frame length " + std::to_string(ds.frame_len) +
                           " does not match config T = " + std::to_string(cfg.model.frame_len));
    }
    if (ds.num_classes != cfg.model.num_classes) {
        throw config_error("dataset has " + std::to_string(ds.num_classes) +
                           " classes, config expects " + std::to_string(cfg.model.num_classes));
    }
    SplitIndices split = split_stratified(ds, kTrainFrac, kValFrac, kTestFrac, cfg.model.seed);
    Model<TrainReal> model(cfg.model);
    AdamState<TrainReal> opt;
    Rng shuffle_rng = Rng::derive(cfg.model.seed, 0xf17, 0);
    TrainingLog log = fit(model, ds, split.train, split.val, cfg.train, &opt, &shuffle_rng);

    MetricsReport rep = evaluate_metrics(model, ds, split.test, cfg.train.batch_size);
    rep.inference_ms_per_sample = measure_latency_ms(model, 1);
    std::filesystem::create_directories(out_dir);
    emit_reports(rep, &log, out_dir);
    save_checkpoint(out_dir + "/checkpoint.iqck", model, &opt, shuffle_rng.state());
    std::printf("stopped after %zu epochs (best val loss %.6f at epoch %d)\n", log.epochs.size(),
                log.best_val_loss, log.best_epoch);
    std::printf("test accuracy %.4f, macro-F1 %.4f\n", rep.overall_accuracy, rep.macro_f1);
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& out_dir) {
    LoadedCheckpoint<TrainReal> loaded = load_checkpoint<TrainReal>(ckpt_path);
    Dataset ds = read_dataset(data_path);
    std::vector<std::int64_t> all(ds.frames.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
    MetricsReport rep = evaluate_metrics(*loaded.model, ds, all, 128);
    rep.inference_ms_per_sample = measure_latency_ms(*loaded.model, 1);
    emit_reports(rep, nullptr, out_dir);
    std::printf("accuracy %.4f, macro-P %.4f, macro-R %.4f, macro-F1 %.4f\n", rep.overall_accuracy,
                rep.macro_precision, rep.macro_recall, rep.macro_f1);
    return 0;
}

int cmd_crossval(const std::string& config_path, const std::string& data_path, int folds,
                 const std::string& out_dir) {
    ParsedConfigs cfg = load_train_config(config_path);
    Dataset ds = read_dataset(data_path);
    CrossvalSummary summary = run_crossval<TrainReal>(ds, folds, cfg.model, cfg.train);
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/crossval.csv", format_crossval_csv(summary));
    for (const auto& f : summary.folds) {
        write_text_file(out_dir + "/fold" + std::to_string(f.fold) + "_curves.csv",
                        format_training_curves_csv(f.log));
    }
    std::printf("accuracy %.4f +/- %.4f, macro-F1 %.4f +/- %.4f\n", summary.mean_accuracy,
                summary.std_accuracy, summary.mean_f1, summary.std_f1);
    return 0;
}

int cmd_ablate(const std::string& grid_path, const std::string& data_path, int seeds,
               const std::string& out_dir) {
    std::vector<ModelConfig> grid;
    for (const std::string& block : split_config_blocks(read_text_file(grid_path))) {
        KvReader kv(block);
        grid.push_back(model_config_from(kv));
        kv.finish("ablation grid block " + std::to_string(grid.size()));
    }
    if (grid.empty()) throw config_error("ablation grid file contains no configurations");
    ParsedConfigs defaults;  // training protocol for every cell
    Dataset ds = read_dataset(data_path);
    TrainConfig tc = defaults.train;
    std::vector<AblationRow> rows = run_ablation<TrainReal>(grid, ds, tc, seeds);
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/ablation.csv", format_ablation_csv(rows));
    std::printf("wrote %zu rows to %s/ablation.csv\n", rows.size(), out_dir.c_str());
    return 0;
}

int cmd_grad_check(bool full_model, std::uint64_t seed) {
    int failures = 0;
    auto report = [&](const char* name, double err, double tol) {
        const bool ok = err <= tol;
        std::printf("%-24s max rel err %.3e (tolerance %.0e) %s\n", name, err, tol,
                    ok ? "OK" : "FAIL");
        if (!ok) ++failures;
    };
    report("ccsa block", check_ccsa_block(seed), 1e-6);
    report("lstm", check_lstm(seed), 1e-6);
    report("shrink block A", check_shrink_block_a(seed), 1e-6);
    report("shrink block B", check_shrink_block_b(seed), 1e-6);
    if (full_model) {
        report("full model", check_full_model(seed), 1e-4);
    }
    return failures == 0 ? 0 : 1;
}

int cmd_profile(const std::string& config_path) {
    KvReader kv(read_text_file(config_path));
    ModelConfig mc = model_config_from(kv);
    TrainConfig tc = train_config_from(kv);  // accepted and ignored keys stay valid here
    (void)tc;
    kv.finish("config file " + config_path);
    Model<TrainReal> model(mc);
    const ParamCount pc = model.count_params();
    const FlopCount fc = model.count_flops();
    std::printf("parameters: %lld\n", static_cast<long long>(pc.total));
    for (const auto& [module, count] : pc.by_module) {
        std::printf("  %-10s %10lld\n", module.c_str(), static_cast<long long>(count));
    }
    std::printf("forward FLOPs (batch 1): %lld\n", static_cast<long long>(fc.total()));
    std::printf("  %-10s %12lld\n", "embed", static_cast<long long>(fc.embed));
    std::printf("  %-10s %12lld\n", "ccsa", static_cast<long long>(fc.ccsa));
    std::printf("  %-10s %12lld\n", "project", static_cast<long long>(fc.project));
    std::printf("  %-10s %12lld\n", "lstm", static_cast<long long>(fc.lstm));
    std::printf("  %-10s %12lld\n", "shrink", static_cast<long long>(fc.shrink));
    std::printf("  %-10s %12lld\n", "head", static_cast<long long>(fc.head));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-channel attention + residual shrinkage modulation classifier"};
    app.require_subcommand(1);

    std::string spec_path, out_path, config_path, data_path, out_dir, ckpt_path, grid_path;
    int folds = 5, seeds = 1;
    std::uint64_t seed = 1;
    bool full_model = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled I/Q dataset");
    gen->add_option("--spec", spec_path, "dataset spec file")->required();
    gen->add_option("--out", out_path, "output dataset file")->required();

    auto* train = app.add_subcommand("train", "train a model and emit reports + checkpoint");
    train->add_option("--config", config_path, "model/training config file")->required();
    train->add_option("--data", data_path, "dataset file")->required();
    train->add_option("--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_path, "dataset file")->required();
    eval->add_option("--out", out_dir, "output directory")->required();

    auto* crossval = app.add_subcommand("crossval", "stratified k-fold cross-validation");
    crossval->add_option("--config", config_path, "model/training config file")->required();
    crossval->add_option("--data", data_path, "dataset file")->required();
    crossval->add_option("--folds", folds, "fold count")->default_val(5);
    crossval->add_option("--out", out_dir, "output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "run a configuration grid");
    ablate->add_option("--grid", grid_path, "grid file: config blocks separated by --- lines")->required();
    ablate->add_option("--data", data_path, "dataset file")->required();
    ablate->add_option("--seeds", seeds, "seeds per configuration")->required();
    ablate->add_option("--out", out_dir, "output directory")->required();

    auto* gradcheck = app.add_subcommand("grad-check", "finite-difference gradient verification");
    gradcheck->add_flag("--full-model", full_model, "also check a tiny end-to-end model");
    gradcheck->add_option("--seed", seed, "seed")->required();

    auto* profile = app.add_subcommand("profile", "print parameter and FLOP breakdown");
    profile->add_option("--config", config_path, "model config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(spec_path, out_path);
        if (train->parsed()) return cmd_train(config_path, data_path, out_dir);
        if (eval->parsed()) return cmd_eval(ckpt_path, data_path, out_dir);
        if (crossval->parsed()) return cmd_crossval(config_path, data_path, folds, out_dir);
        if (ablate->parsed()) return cmd_ablate(grid_path, data_path, seeds, out_dir);
        if (gradcheck->parsed()) return cmd_grad_check(full_model, seed);
        if (profile->parsed()) return cmd_profile(config_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
