#include "iqshrink/config.hpp"

#include <cstdio>
#include <sstream>

namespace iqshrink {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void KvReader::parse(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw config_error("config line " + std::to_string(lineno) +
                               " is not of the form key = value: '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw config_error("config line " + std::to_string(lineno) + " has an empty key");
        }
        if (kv_.count(key)) {
            throw config_error("duplicate config key '" + key + "'");
        }
        kv_[key] = value;
    }
}

std::string KvReader::get_string(const std::string& key, const std::string& def) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
}

std::int64_t KvReader::get_i64(const std::string& key, std::int64_t def) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw config_error("key '" + key + "' expects an integer, got '" + it->second + "'");
    }
}

std::uint64_t KvReader::get_u64(const std::string& key, std::uint64_t def) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw config_error("key '" + key + "' expects an unsigned integer, got '" + it->second + "'");
    }
}

double KvReader::get_double(const std::string& key, double def) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw config_error("key '" + key + "' expects a number, got '" + it->second + "'");
    }
}

std::vector<std::string> KvReader::get_list(const std::string& key,
                                            const std::vector<std::string>& def) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(it->second);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw config_error("key '" + key + "' expects a non-empty list");
    return out;
}

std::vector<int> KvReader::get_int_list(const std::string& key, const std::vector<int>& def) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::vector<int> out;
    for (const auto& item : get_list(key, {})) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw config_error("key '" + key + "' expects integers, got '" + item + "'");
        }
    }
    return out;
}

void KvReader::finish(const std::string& context) const {
    std::string unknown;
    for (const auto& [key, value] : kv_) {
        if (!used_.count(key)) {
            if (!unknown.empty()) unknown += ", ";
            unknown += "'" + key + "'";
        }
    }
    if (!unknown.empty()) {
        throw config_error("unknown key(s) in " + context + ": " + unknown);
    }
}

std::string read_text_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw config_error("cannot open config file: " + path);
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, fp)) > 0) out.append(buf, n);
    std::fclose(fp);
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw config_error("cannot open file for writing: " + path);
    const std::size_t written = std::fwrite(content.data(), 1, content.size(), fp);
    std::fclose(fp);
    if (written != content.size()) throw config_error("short write to " + path);
}

std::vector<std::string> split_config_blocks(const std::string& text) {
    std::vector<std::string> blocks;
    std::string current;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t == "---") {
            if (!trim(current).empty()) blocks.push_back(current);
            current.clear();
        } else {
            current += line;
            current += '\n';
        }
    }
    if (!trim(current).empty()) blocks.push_back(current);
    return blocks;
}

}  // namespace iqshrink
