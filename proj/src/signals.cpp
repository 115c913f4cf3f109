#include "iqshrink/signals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace iqshrink {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kFilterSpanSymbols = 8;

const char* kSchemeNames[] = {"OOK", "4ASK", "BPSK", "QPSK", "8PSK", "16QAM"};

}  // namespace

Scheme scheme_from_string(const std::string& name) {
    for (int i = 0; i < 6; ++i) {
        if (name == kSchemeNames[i]) return static_cast<Scheme>(i);
    }
    throw contract_error("unsupported modulation scheme '" + name + "'");
}

std::string scheme_to_string(Scheme s) { return kSchemeNames[static_cast<int>(s)]; }

int bits_per_symbol(Scheme s) {
    switch (s) {
        case Scheme::OOK:
        case Scheme::BPSK:
            return 1;
        case Scheme::ASK4:
        case Scheme::QPSK:
            return 2;
        case Scheme::PSK8:
            return 3;
        case Scheme::QAM16:
            return 4;
    }
    throw contract_error("unsupported modulation scheme");
}

std::vector<std::complex<double>> constellation(Scheme s) {
    using C = std::complex<double>;
    switch (s) {
        case Scheme::OOK: {
            // bit 0 -> off, bit 1 -> on; unit average power for equiprobable bits
            const double a = std::sqrt(2.0);
            return {C(0, 0), C(a, 0)};
        }
        case Scheme::ASK4: {
            // Gray over amplitude: 00 01 11 10 -> -3 -1 +1 +3
            const double k = 1.0 / std::sqrt(5.0);
            return {C(-3 * k, 0), C(-1 * k, 0), C(3 * k, 0), C(1 * k, 0)};
        }
        case Scheme::BPSK:
            return {C(1, 0), C(-1, 0)};
        case Scheme::QPSK: {
            const double k = 1.0 / std::sqrt(2.0);
            // 00 -> (+1+j), 01 -> (-1+j), 11 -> (-1-j), 10 -> (+1-j)
            return {C(k, k), C(-k, k), C(k, -k), C(-k, -k)};
        }
        case Scheme::PSK8: {
            // point at phase pi*k/4 carries the Gray label k ^ (k >> 1)
            std::vector<C> pts(8);
            for (int k = 0; k < 8; ++k) {
                const int label = k ^ (k >> 1);
                pts[static_cast<std::size_t>(label)] =
                    C(std::cos(kPi * k / 4.0), std::sin(kPi * k / 4.0));
            }
            return pts;
        }
        case Scheme::QAM16: {
            // independent Gray per rail: 00 01 11 10 -> -3 -1 +1 +3, I from the
            // two leading bits, Q from the two trailing bits
            const double k = 1.0 / std::sqrt(10.0);
            const double rail[4] = {-3 * k, -1 * k, 3 * k, 1 * k};  // indexed by 2 bits
            std::vector<C> pts(16);
            for (int b = 0; b < 16; ++b) {
                pts[static_cast<std::size_t>(b)] = C(rail[(b >> 2) & 3], rail[b & 3]);
            }
            return pts;
        }
    }
    throw contract_error("unsupported modulation scheme");
}

std::vector<double> rrc_taps(int samples_per_symbol, double rolloff, int span_symbols) {
    const int taps = span_symbols * samples_per_symbol + 1;
    const int delay = (taps - 1) / 2;
    std::vector<double> h(static_cast<std::size_t>(taps));
    const double beta = rolloff;
    for (int i = 0; i < taps; ++i) {
        const double t = static_cast<double>(i - delay) / samples_per_symbol;
        double v;
        if (std::abs(t) < 1e-12) {
            v = 1.0 - beta + 4.0 * beta / kPi;
        } else if (beta > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * beta)) < 1e-9) {
            v = (beta / std::sqrt(2.0)) *
                ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * beta)) +
                 (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * beta)));
        } else {
            const double num = std::sin(kPi * t * (1.0 - beta)) +
                               4.0 * beta * t * std::cos(kPi * t * (1.0 + beta));
            const double den = kPi * t * (1.0 - 16.0 * beta * beta * t * t);
            v = num / den;
        }
        h[static_cast<std::size_t>(i)] = v;
    }
    return h;
}

DatasetSpec dataset_spec_from(KvReader& kv) {
    DatasetSpec s;
    s.schemes = {Scheme::OOK, Scheme::ASK4, Scheme::BPSK, Scheme::QPSK, Scheme::PSK8, Scheme::QAM16};
    s.snr_grid_db = {-10, -5, 0, 10, 20};
    std::vector<std::string> names;
    for (auto sc : s.schemes) names.push_back(scheme_to_string(sc));
    names = kv.get_list("schemes", names);
    s.schemes.clear();
    for (const auto& n : names) s.schemes.push_back(scheme_from_string(n));
    s.snr_grid_db = kv.get_int_list("snr_grid_db", s.snr_grid_db);
    s.frames_per_cell = kv.get_i64("frames_per_cell", s.frames_per_cell);
    s.frame_len = kv.get_i64("T", s.frame_len);
    s.samples_per_symbol = static_cast<int>(kv.get_i64("samples_per_symbol", s.samples_per_symbol));
    s.rrc_rolloff = kv.get_double("rrc_rolloff", s.rrc_rolloff);
    s.seed = kv.get_u64("seed", s.seed);
    s.validate();
    return s;
}

void DatasetSpec::validate() const {
    if (schemes.empty()) throw config_error("dataset spec needs at least one scheme");
    if (snr_grid_db.empty()) throw config_error("dataset spec needs at least one SNR level");
    for (std::size_t i = 1; i < snr_grid_db.size(); ++i) {
        if (snr_grid_db[i] <= snr_grid_db[i - 1]) {
            throw config_error("snr_grid_db must be strictly increasing");
        }
    }
    if (frames_per_cell < 1) throw config_error("frames_per_cell must be positive");
    if (frame_len < 1) throw config_error("T must be positive");
    if (samples_per_symbol < 1) throw config_error("samples_per_symbol must be positive");
    if (frame_len % samples_per_symbol != 0) {
        throw config_error("T must be a multiple of samples_per_symbol");
    }
    if (rrc_rolloff <= 0.0 || rrc_rolloff >= 1.0) {
        throw config_error("rrc_rolloff must lie in (0,1)");
    }
}

ModulatedFrame modulate_frame(Scheme scheme, Rng& bit_source, const DatasetSpec& spec) {
    const int sps = spec.samples_per_symbol;
    const std::int64_t n_data = spec.frame_len / sps;
    const int span = kFilterSpanSymbols;
    const std::int64_t n_sym = n_data + 2 * span;  // lead-in and flush symbols
    const int bps = bits_per_symbol(scheme);
    const auto pts = constellation(scheme);

    std::vector<std::complex<double>> symbols(static_cast<std::size_t>(n_sym));
    for (auto& s : symbols) {
        int idx = 0;
        for (int b = 0; b < bps; ++b) idx = (idx << 1) | static_cast<int>(bit_source.next_u64() >> 63);
        s = pts[static_cast<std::size_t>(idx)];
    }

    const auto h = rrc_taps(sps, spec.rrc_rolloff, span);
    const std::int64_t delay = (static_cast<std::int64_t>(h.size()) - 1) / 2;
    const std::int64_t start = span * sps;  // first sample of the steady region

    ModulatedFrame out;
    out.samples.assign(static_cast<std::size_t>(spec.frame_len), {0.0, 0.0});
    // y[i] = sum_k sym[k] * h[i + delay - k*sps], evaluated only on the frame window
    for (std::int64_t i = 0; i < spec.frame_len; ++i) {
        const std::int64_t pos = start + i + delay;
        std::complex<double> acc(0.0, 0.0);
        const std::int64_t k_lo = std::max<std::int64_t>(0, (pos - (static_cast<std::int64_t>(h.size()) - 1) + sps - 1) / sps);
        const std::int64_t k_hi = std::min<std::int64_t>(n_sym - 1, pos / sps);
        for (std::int64_t k = k_lo; k <= k_hi; ++k) {
            const std::int64_t tap = pos - k * sps;
            acc += symbols[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(tap)];
        }
        out.samples[static_cast<std::size_t>(i)] = acc;
    }

    double power = 0.0;
    for (const auto& s : out.samples) power += std::norm(s);
    power /= static_cast<double>(spec.frame_len);
    if (power < 1e-30) {
        throw numeric_error("modulated frame has vanishing power; cannot normalize");
    }
    const double scale = 1.0 / std::sqrt(power);
    for (auto& s : out.samples) s *= scale;
    out.power_scale = scale;

    out.symbols.assign(symbols.begin() + span, symbols.begin() + span + n_data);
    return out;
}

void apply_awgn(std::vector<std::complex<double>>& samples, double snr_db, Rng& rng) {
    const double noise_var = std::pow(10.0, -snr_db / 10.0);
    const double rail_std = std::sqrt(noise_var / 2.0);
    for (auto& s : samples) {
        const double ni = rng.normal();
        const double nq = rng.normal();
        s += std::complex<double>(rail_std * ni, rail_std * nq);
    }
}

namespace {

FrameRecord make_frame(const DatasetSpec& spec, std::int64_t cell, std::int64_t frame) {
    const std::int64_t num_snrs = static_cast<std::int64_t>(spec.snr_grid_db.size());
    const std::int64_t scheme_idx = cell / num_snrs;
    const int snr = spec.snr_grid_db[static_cast<std::size_t>(cell % num_snrs)];
    Rng bit_rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(cell),
                              static_cast<std::uint64_t>(frame), 0);
    Rng noise_rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(cell),
                                static_cast<std::uint64_t>(frame), 1);
    ModulatedFrame mod = modulate_frame(spec.schemes[static_cast<std::size_t>(scheme_idx)], bit_rng, spec);
    apply_awgn(mod.samples, static_cast<double>(snr), noise_rng);

    FrameRecord rec;
    rec.class_id = static_cast<std::uint16_t>(scheme_idx);
    rec.snr_db = static_cast<std::int16_t>(snr);
    rec.samples.resize(static_cast<std::size_t>(2 * spec.frame_len));
    for (std::int64_t i = 0; i < spec.frame_len; ++i) {
        rec.samples[static_cast<std::size_t>(2 * i)] = static_cast<float>(mod.samples[static_cast<std::size_t>(i)].real());
        rec.samples[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(mod.samples[static_cast<std::size_t>(i)].imag());
    }
    return rec;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.frame_len = spec.frame_len;
    ds.num_classes = static_cast<std::int64_t>(spec.schemes.size());
    ds.snr_grid_db = spec.snr_grid_db;
    ds.frames.reserve(static_cast<std::size_t>(spec.num_cells() * spec.frames_per_cell));
    for (std::int64_t cell = 0; cell < spec.num_cells(); ++cell) {
        for (std::int64_t frame = 0; frame < spec.frames_per_cell; ++frame) {
            ds.frames.push_back(make_frame(spec, cell, frame));
        }
    }
    return ds;
}

ModulatedFrame regenerate_clean_frame(const DatasetSpec& spec, std::int64_t cell_index,
                                      std::int64_t frame_index) {
    const std::int64_t num_snrs = static_cast<std::int64_t>(spec.snr_grid_db.size());
    const std::int64_t scheme_idx = cell_index / num_snrs;
    Rng bit_rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(cell_index),
                              static_cast<std::uint64_t>(frame_index), 0);
    return modulate_frame(spec.schemes[static_cast<std::size_t>(scheme_idx)], bit_rng, spec);
}

std::map<std::pair<int, int>, std::vector<std::int64_t>> group_cells(const Dataset& ds) {
    std::map<std::pair<int, int>, std::vector<std::int64_t>> cells;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.frames.size()); ++i) {
        const auto& f = ds.frames[static_cast<std::size_t>(i)];
        cells[{static_cast<int>(f.class_id), static_cast<int>(f.snr_db)}].push_back(i);
    }
    return cells;
}

SplitIndices split_stratified(const Dataset& ds, double train_frac, double val_frac,
                              double test_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || val_frac <= 0.0 || test_frac <= 0.0) {
        throw contract_error("split fractions must be positive");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw contract_error("split fractions must sum to 1");
    }
    SplitIndices out;
    std::uint64_t cell_id = 0;
    for (auto& [key, idx] : group_cells(ds)) {
        const std::int64_t n = static_cast<std::int64_t>(idx.size());
        if (n < 3) {
            throw contract_error("stratification error: cell (class " + std::to_string(key.first) +
                                 ", snr " + std::to_string(key.second) + ") has fewer than 3 frames");
        }
        // largest-remainder apportionment of the cell across the three splits
        const double fr[3] = {train_frac, val_frac, test_frac};
        std::int64_t cnt[3];
        double rem[3];
        std::int64_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double exact = fr[s] * static_cast<double>(n);
            cnt[s] = static_cast<std::int64_t>(exact);
            rem[s] = exact - static_cast<double>(cnt[s]);
            assigned += cnt[s];
        }
        while (assigned < n) {
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (rem[s] > rem[best]) best = s;
            }
            ++cnt[best];
            rem[best] = -1.0;
            ++assigned;
        }
        Rng rng = Rng::derive(seed, cell_id++, 0x5b117);
        std::vector<std::int64_t> shuffled = idx;
        for (std::int64_t i = n - 1; i > 0; --i) {
            const std::int64_t j = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
            std::swap(shuffled[static_cast<std::size_t>(i)], shuffled[static_cast<std::size_t>(j)]);
        }
        std::int64_t pos = 0;
        for (std::int64_t i = 0; i < cnt[0]; ++i) out.train.push_back(shuffled[static_cast<std::size_t>(pos++)]);
        for (std::int64_t i = 0; i < cnt[1]; ++i) out.val.push_back(shuffled[static_cast<std::size_t>(pos++)]);
        for (std::int64_t i = 0; i < cnt[2]; ++i) out.test.push_back(shuffled[static_cast<std::size_t>(pos++)]);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<int> assign_folds(const Dataset& ds, int folds, std::uint64_t seed) {
    if (folds < 2) throw contract_error("fold count must be at least 2");
    std::vector<int> fold_of(ds.frames.size(), -1);
    std::uint64_t cell_id = 0;
    for (auto& [key, idx] : group_cells(ds)) {
        const std::int64_t n = static_cast<std::int64_t>(idx.size());
        if (n < folds) {
            throw contract_error("stratification error: cell (class " + std::to_string(key.first) +
                                 ", snr " + std::to_string(key.second) + ") has fewer frames than folds");
        }
        Rng rng = Rng::derive(seed, cell_id++, 0xf01d5);
        std::vector<std::int64_t> shuffled = idx;
        for (std::int64_t i = n - 1; i > 0; --i) {
            const std::int64_t j = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
            std::swap(shuffled[static_cast<std::size_t>(i)], shuffled[static_cast<std::size_t>(j)]);
        }
        for (std::int64_t i = 0; i < n; ++i) {
            fold_of[static_cast<std::size_t>(shuffled[static_cast<std::size_t>(i)])] =
                static_cast<int>(i % folds);
        }
    }
    return fold_of;
}

// ---------------------------------------------------------------------------
// binary dataset format, little-endian throughout:
//   magic "IQDS" | u32 version=1 | u32 num_frames | u32 T | u32 num_classes |
//   u32 num_snr_levels | i16 * num_snr_levels | per frame:
//   u16 class_id | i16 snr_db | f32 * 2T interleaved I/Q
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_i16(std::string& buf, std::int16_t v) { put_u16(buf, static_cast<std::uint16_t>(v)); }
void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n) {
        if (pos + n > size) {
            throw dataset_io_error(dataset_io_error::Kind::Truncated,
                                   "truncated dataset payload: need " + std::to_string(n) +
                                       " bytes at offset " + std::to_string(pos));
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
    std::string buf;
    buf.reserve(24 + 2 * ds.snr_grid_db.size() + ds.frames.size() * (4 + 8 * static_cast<std::size_t>(ds.frame_len)));
    buf.append("IQDS");
    put_u32(buf, 1);
    put_u32(buf, static_cast<std::uint32_t>(ds.frames.size()));
    put_u32(buf, static_cast<std::uint32_t>(ds.frame_len));
    put_u32(buf, static_cast<std::uint32_t>(ds.num_classes));
    put_u32(buf, static_cast<std::uint32_t>(ds.snr_grid_db.size()));
    for (int snr : ds.snr_grid_db) put_i16(buf, static_cast<std::int16_t>(snr));
    for (const auto& f : ds.frames) {
        if (static_cast<std::int64_t>(f.samples.size()) != 2 * ds.frame_len) {
            throw dataset_io_error(dataset_io_error::Kind::CountMismatch,
                                   "frame sample count does not match declared T");
        }
        put_u16(buf, f.class_id);
        put_i16(buf, f.snr_db);
        for (float v : f.samples) put_f32(buf, v);
    }
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw dataset_io_error(dataset_io_error::Kind::Io, "cannot open for writing: " + path);
    const std::size_t written = std::fwrite(buf.data(), 1, buf.size(), fp);
    std::fclose(fp);
    if (written != buf.size()) {
        throw dataset_io_error(dataset_io_error::Kind::Io, "short write to " + path);
    }
}

Dataset read_dataset(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw dataset_io_error(dataset_io_error::Kind::Io, "cannot open for reading: " + path);
    std::fseek(fp, 0, SEEK_END);
    const long fsize = std::ftell(fp);
    std::fseek(fp, 0, SEEK_SET);
    std::vector<unsigned char> buf(static_cast<std::size_t>(fsize));
    const std::size_t got = std::fread(buf.data(), 1, buf.size(), fp);
    std::fclose(fp);
    if (got != buf.size()) throw dataset_io_error(dataset_io_error::Kind::Io, "short read from " + path);

    Reader r{buf.data(), buf.size()};
    r.need(4);
    if (std::memcmp(r.p, "IQDS", 4) != 0) {
        throw dataset_io_error(dataset_io_error::Kind::BadMagic, "bad magic in " + path);
    }
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw dataset_io_error(dataset_io_error::Kind::BadVersion,
                               "unsupported dataset version " + std::to_string(version));
    }
    const std::uint32_t num_frames = r.u32();
    Dataset ds;
    ds.frame_len = r.u32();
    ds.num_classes = r.u32();
    const std::uint32_t num_snrs = r.u32();
    ds.snr_grid_db.resize(num_snrs);
    for (auto& s : ds.snr_grid_db) s = r.i16();

    const std::size_t frame_bytes = 4 + 8 * static_cast<std::size_t>(ds.frame_len);
    if (r.size - r.pos != static_cast<std::size_t>(num_frames) * frame_bytes) {
        // distinguish a short payload from trailing garbage
        if (r.size - r.pos < static_cast<std::size_t>(num_frames) * frame_bytes) {
            throw dataset_io_error(dataset_io_error::Kind::Truncated,
                                   "payload shorter than declared frame count");
        }
        throw dataset_io_error(dataset_io_error::Kind::CountMismatch,
                               "payload length does not match declared frame count");
    }
    ds.frames.resize(num_frames);
    for (auto& f : ds.frames) {
        f.class_id = r.u16();
        f.snr_db = r.i16();
        f.samples.resize(static_cast<std::size_t>(2 * ds.frame_len));
        for (auto& v : f.samples) v = r.f32();
    }
    return ds;
}

}  // namespace iqshrink
