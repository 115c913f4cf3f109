#ifndef IQSHRINK_METRICS_HPP
#define IQSHRINK_METRICS_HPP

#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iqshrink/checkpoint.hpp"
#include "iqshrink/model.hpp"
#include "iqshrink/signals.hpp"

namespace iqshrink {

using Confusion = std::vector<std::vector<std::int64_t>>;  // [true][predicted]

struct MacroScores {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

// Per-class precision TP/(TP+FP), recall TP/(TP+FN), F1 harmonic mean; any
// zero denominator contributes 0. Macro scores are unweighted class means.
inline MacroScores scores_from_confusion(const Confusion& conf) {
    const std::size_t k = conf.size();
    MacroScores out;
    std::int64_t total = 0, correct = 0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) total += conf[i][j];
        correct += conf[i][i];
    }
    out.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        std::int64_t tp = conf[i][i], fp = 0, fn = 0;
        for (std::size_t r = 0; r < k; ++r) {
            if (r != i) {
                fp += conf[r][i];
                fn += conf[i][r];
            }
        }
        const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        out.macro_precision += precision;
        out.macro_recall += recall;
        out.macro_f1 += f1;
    }
    if (k > 0) {
        out.macro_precision /= static_cast<double>(k);
        out.macro_recall /= static_cast<double>(k);
        out.macro_f1 /= static_cast<double>(k);
    }
    return out;
}

struct MetricsReport {
    double overall_accuracy = 0.0;
    std::map<int, double> per_snr_accuracy;
    std::map<int, Confusion> confusion_per_snr;
    Confusion confusion;  // pooled
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    std::int64_t params = 0;
    std::int64_t flops = 0;
    double inference_ms_per_sample = 0.0;
};

template <typename Real>
MetricsReport evaluate_metrics(Model<Real>& model, const Dataset& ds,
                               const std::vector<std::int64_t>& idx, std::int64_t batch_size) {
    if (idx.empty()) throw contract_error("evaluate_metrics requires a non-empty test set");
    const std::int64_t K = model.config().num_classes;
    MetricsReport rep;
    rep.confusion.assign(static_cast<std::size_t>(K), std::vector<std::int64_t>(static_cast<std::size_t>(K), 0));
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    for (std::int64_t lo = 0; lo < n; lo += batch_size) {
        const std::int64_t hi = std::min(n, lo + batch_size);
        Tensor<Real> x = make_batch<Real>(ds, idx, lo, hi);
        std::vector<int> labels = batch_labels(ds, idx, lo, hi);
        Tensor<Real> probs = model.forward(x, Mode::Eval);
        for (std::int64_t b = 0; b < hi - lo; ++b) {
            std::int64_t best = 0;
            for (std::int64_t k = 1; k < K; ++k) {
                if (probs.at2(b, k) > probs.at2(b, best)) best = k;
            }
            const auto& frame = ds.frames[static_cast<std::size_t>(idx[static_cast<std::size_t>(lo + b)])];
            const int truth = labels[static_cast<std::size_t>(b)];
            const int snr = frame.snr_db;
            auto& snr_conf = rep.confusion_per_snr[snr];
            if (snr_conf.empty()) {
                snr_conf.assign(static_cast<std::size_t>(K),
                                std::vector<std::int64_t>(static_cast<std::size_t>(K), 0));
            }
            snr_conf[static_cast<std::size_t>(truth)][static_cast<std::size_t>(best)] += 1;
            rep.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(best)] += 1;
        }
    }
    const MacroScores pooled = scores_from_confusion(rep.confusion);
    rep.overall_accuracy = pooled.accuracy;
    rep.macro_precision = pooled.macro_precision;
    rep.macro_recall = pooled.macro_recall;
    rep.macro_f1 = pooled.macro_f1;
    for (const auto& [snr, conf] : rep.confusion_per_snr) {
        rep.per_snr_accuracy[snr] = scores_from_confusion(conf).accuracy;
    }
    rep.params = model.count_params().total;
    rep.flops = model.count_flops().total();
    return rep;
}

// Median wall time per frame over `reps` single-batch forward passes in eval
// mode, after `warmup` discarded passes.
template <typename Real>
double measure_latency_ms(Model<Real>& model, std::int64_t batch, int warmup = 10, int reps = 101) {
    Rng rng(12345);
    Tensor<Real> x(Shape{batch, model.config().frame_len, 2});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<Real>(rng.uniform(-1.0, 1.0));
    for (int i = 0; i < warmup; ++i) model.forward(x, Mode::Eval);
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(reps));
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        model.forward(x, Mode::Eval);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2] / static_cast<double>(batch);
}

// ---------------------------------------------------------------------------
// five-fold cross-validation
// ---------------------------------------------------------------------------

struct FoldResult {
    int fold = 0;
    MetricsReport metrics;
    TrainingLog log;
};

struct CrossvalSummary {
    std::vector<FoldResult> folds;
    double mean_accuracy = 0.0, std_accuracy = 0.0;
    double mean_precision = 0.0, std_precision = 0.0;
    double mean_recall = 0.0, std_recall = 0.0;
    double mean_f1 = 0.0, std_f1 = 0.0;
};

inline void summarize_crossval(CrossvalSummary& s) {
    const double n = static_cast<double>(s.folds.size());
    auto mean_std = [n](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= n;
        sd = 0.0;
        if (v.size() > 1) {
            for (double x : v) sd += (x - mean) * (x - mean);
            sd = std::sqrt(sd / (n - 1.0));  // sample standard deviation
        }
    };
    std::vector<double> acc, prec, rec, f1;
    for (const auto& f : s.folds) {
        acc.push_back(f.metrics.overall_accuracy);
        prec.push_back(f.metrics.macro_precision);
        rec.push_back(f.metrics.macro_recall);
        f1.push_back(f.metrics.macro_f1);
    }
    mean_std(acc, s.mean_accuracy, s.std_accuracy);
    mean_std(prec, s.mean_precision, s.std_precision);
    mean_std(rec, s.mean_recall, s.std_recall);
    mean_std(f1, s.mean_f1, s.std_f1);
}

// Fold k validates on stratified slice k and trains on the remainder; every
// frame lands in exactly one validation fold.
template <typename Real>
CrossvalSummary run_crossval(const Dataset& ds, int folds, const ModelConfig& cfg,
                             const TrainConfig& tc) {
    const std::vector<int> fold_of = assign_folds(ds, folds, cfg.seed);
    CrossvalSummary summary;
    for (int k = 0; k < folds; ++k) {
        std::vector<std::int64_t> train_idx, val_idx;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.frames.size()); ++i) {
            (fold_of[static_cast<std::size_t>(i)] == k ? val_idx : train_idx).push_back(i);
        }
        ModelConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed + static_cast<std::uint64_t>(k);
        Model<Real> model(fold_cfg);
        FoldResult fr;
        fr.fold = k;
        fr.log = fit(model, ds, train_idx, val_idx, tc);
        fr.metrics = evaluate_metrics(model, ds, val_idx, tc.batch_size);
        summary.folds.push_back(std::move(fr));
    }
    summarize_crossval(summary);
    return summary;
}

// ---------------------------------------------------------------------------
// ablation runner
// ---------------------------------------------------------------------------

struct AblationRow {
    ModelConfig cfg;
    std::uint64_t seed = 0;        // meaningful when !aggregated
    bool aggregated = false;       // mean row over all seeds
    int num_seeds = 1;
    double avg_accuracy = 0.0;     // mean of per-SNR accuracies
    double max_accuracy = 0.0;     // best per-SNR accuracy
    std::int64_t params = 0;
    std::int64_t flops = 0;
    double inference_ms_per_sample = 0.0;
};

template <typename Real>
std::vector<AblationRow> run_ablation(const std::vector<ModelConfig>& grid, const Dataset& ds,
                                      const TrainConfig& tc, int seeds,
                                      bool measure_latency = true) {
    std::vector<AblationRow> rows;
    for (const ModelConfig& base : grid) {
        AblationRow agg;
        agg.cfg = base;
        agg.aggregated = true;
        agg.num_seeds = seeds;
        for (int s = 0; s < seeds; ++s) {
            ModelConfig cfg = base;
            cfg.seed = base.seed + static_cast<std::uint64_t>(s);
            const SplitIndices split = split_stratified(ds, 0.7, 0.15, 0.15, cfg.seed);
            Model<Real> model(cfg);
            fit(model, ds, split.train, split.val, tc);
            MetricsReport rep = evaluate_metrics(model, ds, split.test, tc.batch_size);
            AblationRow row;
            row.cfg = cfg;
            row.seed = cfg.seed;
            row.num_seeds = 1;
            double sum = 0.0, best = 0.0;
            for (const auto& [snr, acc] : rep.per_snr_accuracy) {
                sum += acc;
                best = std::max(best, acc);
            }
            row.avg_accuracy = sum / static_cast<double>(rep.per_snr_accuracy.size());
            row.max_accuracy = best;
            row.params = rep.params;
            row.flops = rep.flops;
            if (measure_latency) row.inference_ms_per_sample = measure_latency_ms(model, 1);
            agg.avg_accuracy += row.avg_accuracy;
            agg.max_accuracy += row.max_accuracy;
            agg.params = row.params;
            agg.flops = row.flops;
            agg.inference_ms_per_sample += row.inference_ms_per_sample;
            rows.push_back(row);
        }
        agg.avg_accuracy /= static_cast<double>(seeds);
        agg.max_accuracy /= static_cast<double>(seeds);
        agg.inference_ms_per_sample /= static_cast<double>(seeds);
        rows.push_back(agg);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// report emission (implemented in reports.cpp)
// ---------------------------------------------------------------------------

std::string format_accuracy_vs_snr_csv(const MetricsReport& rep);
std::string format_confusion_csv(const Confusion& conf);
std::string format_training_curves_csv(const TrainingLog& log);
std::string format_crossval_csv(const CrossvalSummary& summary);
std::string format_ablation_csv(const std::vector<AblationRow>& rows);
std::string format_metrics_summary(const MetricsReport& rep);

// Writes the full report set into out_dir (created if absent); returns the
// list of files written.
std::vector<std::string> emit_reports(const MetricsReport& rep, const TrainingLog* log,
                                      const std::string& out_dir);

}  // namespace iqshrink

#endif
