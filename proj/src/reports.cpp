#include "iqshrink/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <sstream>

namespace iqshrink {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

std::string format_accuracy_vs_snr_csv(const MetricsReport& rep) {
    std::ostringstream os;
    os << "snr_db,accuracy\n";
    for (const auto& [snr, acc] : rep.per_snr_accuracy) {
        os << snr << ',' << fmt(acc) << '\n';
    }
    return os.str();
}

std::string format_confusion_csv(const Confusion& conf) {
    std::ostringstream os;
    os << "true_class";
    for (std::size_t j = 0; j < conf.size(); ++j) os << ",pred_" << j;
    os << '\n';
    for (std::size_t i = 0; i < conf.size(); ++i) {
        os << i;
        for (std::size_t j = 0; j < conf.size(); ++j) os << ',' << conf[i][j];
        os << '\n';
    }
    return os.str();
}

std::string format_training_curves_csv(const TrainingLog& log) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,train_acc,val_acc,lr\n";
    for (const auto& e : log.epochs) {
        os << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_loss) << ','
           << fmt(e.train_acc) << ',' << fmt(e.val_acc) << ',' << fmt(e.lr) << '\n';
    }
    return os.str();
}

std::string format_crossval_csv(const CrossvalSummary& summary) {
    std::ostringstream os;
    os << "fold,overall_accuracy,macro_precision,macro_recall,macro_f1\n";
    for (const auto& f : summary.folds) {
        os << f.fold << ',' << fmt(f.metrics.overall_accuracy) << ','
           << fmt(f.metrics.macro_precision) << ',' << fmt(f.metrics.macro_recall) << ','
           << fmt(f.metrics.macro_f1) << '\n';
    }
    os << "mean," << fmt(summary.mean_accuracy) << ',' << fmt(summary.mean_precision) << ','
       << fmt(summary.mean_recall) << ',' << fmt(summary.mean_f1) << '\n';
    os << "std," << fmt(summary.std_accuracy) << ',' << fmt(summary.std_precision) << ','
       << fmt(summary.std_recall) << ',' << fmt(summary.std_f1) << '\n';
    return os.str();
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "units,d,heads,ccsa_depth,depth_a,depth_b,threshold,seed,params,flops,"
          "avg_accuracy,max_accuracy,inference_ms_per_sample\n";
    for (const auto& r : rows) {
        os << r.cfg.units << ',' << r.cfg.d << ',' << r.cfg.heads << ',' << r.cfg.ccsa_depth << ','
           << r.cfg.depth_a << ',' << r.cfg.depth_b << ",garrote,";
        if (r.aggregated) {
            os << "mean_of_" << r.num_seeds;
        } else {
            os << r.seed;
        }
        os << ',' << r.params << ',' << r.flops << ',' << fmt(r.avg_accuracy) << ','
           << fmt(r.max_accuracy) << ',' << fmt(r.inference_ms_per_sample) << '\n';
    }
    return os.str();
}

std::string format_metrics_summary(const MetricsReport& rep) {
    std::ostringstream os;
    os << "overall_accuracy = " << fmt(rep.overall_accuracy) << '\n'
       << "macro_precision = " << fmt(rep.macro_precision) << '\n'
       << "macro_recall = " << fmt(rep.macro_recall) << '\n'
       << "macro_f1 = " << fmt(rep.macro_f1) << '\n'
       << "params = " << rep.params << '\n'
       << "flops = " << rep.flops << '\n'
       << "inference_ms_per_sample = " << fmt(rep.inference_ms_per_sample) << '\n';
    for (const auto& [snr, acc] : rep.per_snr_accuracy) {
        os << "accuracy_at_" << snr << "dB = " << fmt(acc) << '\n';
    }
    return os.str();
}

std::vector<std::string> emit_reports(const MetricsReport& rep, const TrainingLog* log,
                                      const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw config_error("cannot create output directory " + out_dir + ": " + ec.message());

    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        const std::string path = out_dir + "/" + name;
        write_text_file(path, content);
        written.push_back(path);
    };
    emit("accuracy_vs_snr.csv", format_accuracy_vs_snr_csv(rep));
    emit("confusion_pooled.csv", format_confusion_csv(rep.confusion));
    for (const auto& [snr, conf] : rep.confusion_per_snr) {
        emit("confusion_snr_" + std::to_string(snr) + ".csv", format_confusion_csv(conf));
    }
    if (log) emit("training_curves.csv", format_training_curves_csv(*log));
    emit("summary.txt", format_metrics_summary(rep));
    return written;
}

}  // namespace iqshrink
