#pragma once

// Flat key=value config text and little-endian binary helpers.

#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace riskbf {

class KeyValues {
public:
    KeyValues() = default;

    /// Parses `key = value` lines; `#` starts a comment.
    static KeyValues parse(std::istream& in) {
        KeyValues kv;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
            kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return kv;
    }

    static KeyValues parse(const std::string& text) {
        std::istringstream in(text);
        return parse(in);
    }

    void set(const std::string& key, const std::string& value) {
        if (key.empty()) throw std::runtime_error("config: empty key");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.contains(key); }

    const std::string& raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::runtime_error("config: missing key '" + key + "'");
        used_.insert(key);
        return it->second;
    }

    double get_double(const std::string& key) const { return to_double(key, raw(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long long get_int(const std::string& key) const {
        const std::string& s = raw(key);
        std::size_t pos = 0;
        long long v = 0;
        try {
            v = std::stoll(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != s.size() || s.empty()) throw std::runtime_error("config: '" + key + "' is not an integer: " + s);
        return v;
    }
    long long get_int(const std::string& key, long long fallback) const { return has(key) ? get_int(key) : fallback; }

    std::vector<double> get_doubles(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(raw(key));
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
        if (out.empty()) throw std::runtime_error("config: '" + key + "' is empty");
        return out;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? raw(key) : fallback;
    }

    std::vector<std::string> unused_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.contains(k)) out.push_back(k);
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static double to_double(const std::string& key, const std::string& s) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != s.size() || s.empty()) throw std::runtime_error("config: '" + key + "' is not a number: " + s);
        return v;
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

/// Shortest round-trip decimal text for a double.
inline std::string format_double(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

inline std::string join_doubles(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (k) out += ',';
        out += format_double(xs[k]);
    }
    return out;
}

namespace binio {

inline void write_u64(std::ostream& out, std::uint64_t x) {
    char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((x >> (8 * k)) & 0xFF);
    out.write(b, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw std::runtime_error("binary read: unexpected end of file");
    std::uint64_t x = 0;
    for (int k = 7; k >= 0; --k) x = (x << 8) | b[k];
    return x;
}

inline void write_f64(std::ostream& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    write_u64(out, bits);
}

inline double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double x;
    std::memcpy(&x, &bits, sizeof x);
    return x;
}

}  // namespace binio

}  // namespace riskbf
