#ifndef IQSHRINK_SIGNALS_HPP
#define IQSHRINK_SIGNALS_HPP

#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iqshrink/common.hpp"
#include "iqshrink/config.hpp"
#include "iqshrink/rng.hpp"

namespace iqshrink {

enum class Scheme { OOK, ASK4, BPSK, QPSK, PSK8, QAM16 };

Scheme scheme_from_string(const std::string& name);
std::string scheme_to_string(Scheme s);
int bits_per_symbol(Scheme s);

// Gray-labeled constellation, unit average power under equiprobable symbols.
// Index = integer formed by the symbol's bits, most significant bit first.
std::vector<std::complex<double>> constellation(Scheme s);

// Root-raised-cosine taps, span measured in symbols, unit peak group delay
// (span * sps / 2 samples).
std::vector<double> rrc_taps(int samples_per_symbol, double rolloff, int span_symbols);

struct DatasetSpec {
    std::vector<Scheme> schemes;
    std::vector<int> snr_grid_db;
    std::int64_t frames_per_cell = 100;
    std::int64_t frame_len = 128;  // T
    int samples_per_symbol = 4;
    double rrc_rolloff = 0.35;
    std::uint64_t seed = 1;

    void validate() const;
    std::int64_t num_cells() const {
        return static_cast<std::int64_t>(schemes.size() * snr_grid_db.size());
    }
};

DatasetSpec dataset_spec_from(KvReader& kv);

struct FrameRecord {
    std::uint16_t class_id = 0;
    std::int16_t snr_db = 0;
    std::vector<float> samples;  // 2T interleaved (I0, Q0, I1, Q1, ...)
};

struct Dataset {
    std::int64_t frame_len = 0;
    std::int64_t num_classes = 0;
    std::vector<int> snr_grid_db;
    std::vector<FrameRecord> frames;
};

// Noiseless modulated frame plus the data symbols it carries, for
// modulator-validation oracles.
struct ModulatedFrame {
    std::vector<std::complex<double>> samples;  // length T, unit average power
    std::vector<std::complex<double>> symbols;  // T / samples_per_symbol data symbols
    double power_scale = 1.0;                   // factor applied during normalization
};

ModulatedFrame modulate_frame(Scheme scheme, Rng& bit_source, const DatasetSpec& spec);

// Adds complex AWGN with total variance 10^(-snr_db/10), split evenly across
// the I and Q rails. The input frame is expected to have unit average power.
void apply_awgn(std::vector<std::complex<double>>& samples, double snr_db, Rng& rng);

Dataset generate_dataset(const DatasetSpec& spec);

// Deterministic per-frame regeneration of the noiseless signal; matches what
// generate_dataset produced for the same (spec, cell, frame) coordinates.
ModulatedFrame regenerate_clean_frame(const DatasetSpec& spec, std::int64_t cell_index,
                                      std::int64_t frame_index);

struct SplitIndices {
    std::vector<std::int64_t> train, val, test;
};

SplitIndices split_stratified(const Dataset& ds, double train_frac, double val_frac,
                              double test_frac, std::uint64_t seed);

// Stratified k-fold assignment: returns fold id per frame, every (class, SNR)
// cell spread as evenly as possible across folds.
std::vector<int> assign_folds(const Dataset& ds, int folds, std::uint64_t seed);

class dataset_io_error : public std::runtime_error {
public:
    enum class Kind { BadMagic, BadVersion, Truncated, CountMismatch, Io };
    dataset_io_error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
    Kind kind;
};

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// (class_id, snr_db) -> frame indices, in file order
std::map<std::pair<int, int>, std::vector<std::int64_t>> group_cells(const Dataset& ds);

}  // namespace iqshrink

#endif
