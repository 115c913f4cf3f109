#ifndef IQSHRINK_CONFIG_HPP
#define IQSHRINK_CONFIG_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iqshrink/common.hpp"

namespace iqshrink {

// Flat key/value configuration text: one `key = value` per line, `#` comments,
// blank lines ignored. Unknown and duplicate keys are hard errors.
class KvReader {
public:
    KvReader() = default;
    explicit KvReader(const std::string& text) { parse(text); }

    void parse(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def);
    std::int64_t get_i64(const std::string& key, std::int64_t def);
    std::uint64_t get_u64(const std::string& key, std::uint64_t def);
    double get_double(const std::string& key, double def);
    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& def);
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& def);

    // Throws if any parsed key was never consumed by a getter.
    void finish(const std::string& context) const;

private:
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> used_;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Splits a grid file into per-model blocks separated by `---` lines.
std::vector<std::string> split_config_blocks(const std::string& text);

}  // namespace iqshrink

#endif
