#ifndef IQSHRINK_CHECKPOINT_HPP
#define IQSHRINK_CHECKPOINT_HPP

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "iqshrink/model.hpp"

namespace iqshrink {

class checkpoint_error : public std::runtime_error {
public:
    explicit checkpoint_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Self-describing checkpoint container, little-endian:
//   magic "IQCK" | u32 version=1 | u32 config_len | config key=value text |
//   u32 n_params  | per param:  u16 name_len, name, u32 numel, f32 * numel |
//   u32 n_buffers | per buffer: u16 name_len, name, u32 numel, f32 * numel |
//   u8 has_optimizer | [u64 step | f32 m blobs | f32 v blobs, parameter order] |
//   u64 rng_state
// Values are stored as 32-bit IEEE-754 regardless of the in-memory precision.
namespace ckpt_detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > size) throw checkpoint_error("truncated checkpoint");
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = static_cast<std::uint64_t>(u32());
        v |= static_cast<std::uint64_t>(u32()) << 32;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
};

template <typename Real>
void put_blob(std::string& buf, const std::string& name, const Tensor<Real>& t) {
    put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<std::uint32_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) put_f32(buf, static_cast<float>(t[i]));
}

}  // namespace ckpt_detail

template <typename Real>
void save_checkpoint(const std::string& path, Model<Real>& model, const AdamState<Real>* opt,
                     std::uint64_t rng_state) {
    using namespace ckpt_detail;
    std::string buf;
    buf.append("IQCK");
    put_u32(buf, 1);
    const std::string cfg = model_config_to_text(model.config());
    put_u32(buf, static_cast<std::uint32_t>(cfg.size()));
    buf.append(cfg);

    auto& params = model.parameters();
    put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const Parameter<Real>* p : params) put_blob(buf, p->name, p->value);

    auto buffers = model.buffers();
    put_u32(buf, static_cast<std::uint32_t>(buffers.size()));
    for (auto& [name, t] : buffers) put_blob(buf, name, *t);

    buf.push_back(opt ? char(1) : char(0));
    if (opt) {
        put_u64(buf, static_cast<std::uint64_t>(opt->step));
        for (std::size_t i = 0; i < params.size(); ++i) put_blob(buf, params[i]->name + ".m", opt->m[i]);
        for (std::size_t i = 0; i < params.size(); ++i) put_blob(buf, params[i]->name + ".v", opt->v[i]);
    }
    put_u64(buf, rng_state);

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw checkpoint_error("cannot open checkpoint for writing: " + path);
    const std::size_t written = std::fwrite(buf.data(), 1, buf.size(), fp);
    std::fclose(fp);
    if (written != buf.size()) throw checkpoint_error("short write to " + path);
}

template <typename Real>
struct LoadedCheckpoint {
    std::unique_ptr<Model<Real>> model;
    AdamState<Real> opt;
    bool has_opt = false;
    std::uint64_t rng_state = 0;
};

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw checkpoint_error("cannot open checkpoint: " + path);
    std::fseek(fp, 0, SEEK_END);
    const long fsize = std::ftell(fp);
    std::fseek(fp, 0, SEEK_SET);
    std::vector<unsigned char> raw(static_cast<std::size_t>(fsize));
    const std::size_t got = std::fread(raw.data(), 1, raw.size(), fp);
    std::fclose(fp);
    if (got != raw.size()) throw checkpoint_error("short read from " + path);

    Reader r{raw.data(), raw.size()};
    r.need(4);
    if (std::memcmp(r.p, "IQCK", 4) != 0) throw checkpoint_error("bad magic in " + path);
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != 1) throw checkpoint_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t cfg_len = r.u32();
    KvReader kv(r.str(cfg_len));
    const ModelConfig cfg = model_config_from(kv);
    kv.finish("checkpoint config echo");

    LoadedCheckpoint<Real> out;
    out.model = std::make_unique<Model<Real>>(cfg);

    auto read_into = [&r](const std::string& expect_name, Tensor<Real>& t) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        if (name != expect_name) {
            throw checkpoint_error("checkpoint blob order mismatch: expected '" + expect_name +
                                   "', found '" + name + "'");
        }
        const std::uint32_t n = r.u32();
        if (static_cast<std::int64_t>(n) != t.numel()) {
            throw checkpoint_error("checkpoint blob '" + name + "' has " + std::to_string(n) +
                                   " values, expected " + std::to_string(t.numel()));
        }
        for (std::uint32_t i = 0; i < n; ++i) t[static_cast<std::int64_t>(i)] = static_cast<Real>(r.f32());
    };

    auto& params = out.model->parameters();
    const std::uint32_t n_params = r.u32();
    if (n_params != params.size()) {
        throw checkpoint_error("checkpoint parameter count mismatch");
    }
    for (Parameter<Real>* p : params) read_into(p->name, p->value);

    auto buffers = out.model->buffers();
    const std::uint32_t n_buffers = r.u32();
    if (n_buffers != buffers.size()) throw checkpoint_error("checkpoint buffer count mismatch");
    for (auto& [name, t] : buffers) read_into(name, *t);

    r.need(1);
    out.has_opt = r.p[r.pos++] != 0;
    if (out.has_opt) {
        out.opt.init(params);
        out.opt.step = static_cast<std::int64_t>(r.u64());
        for (std::size_t i = 0; i < params.size(); ++i) read_into(params[i]->name + ".m", out.opt.m[i]);
        for (std::size_t i = 0; i < params.size(); ++i) read_into(params[i]->name + ".v", out.opt.v[i]);
    }
    out.rng_state = r.u64();
    if (r.pos != r.size) throw checkpoint_error("trailing bytes in checkpoint " + path);
    return out;
}

}  // namespace iqshrink

#endif
