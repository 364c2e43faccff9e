#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "equikernel/backbone.hpp"

namespace equikernel {

/// Raised for unknown keys, malformed values and out-of-range settings.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& key, const std::string& detail) : std::invalid_argument(key + ": " + detail), key_(key) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

enum class ValueType { integer, real, boolean, text, int_list, choice };

struct KeySchema {
    std::string key;
    ValueType type;
    std::string default_value;
    double min = -std::numeric_limits<double>::infinity();
    double max = std::numeric_limits<double>::infinity();
    std::vector<std::string> choices;  // for ValueType::choice
    std::string help;
};

inline const std::vector<KeySchema>& config_schema() {
    using V = ValueType;
    static const std::vector<KeySchema> schema = {
        {"backbone.layers", V::int_list, "1,1,1,1", 1, 8, {}, "residual blocks per stage"},
        {"backbone.widths", V::int_list, "32,64,128,256", 1, 4096, {}, "learned channels per stage (x2 with reflection)"},
        {"backbone.strides", V::int_list, "1,2,2,1", 1, 4, {}, "first-block stride per stage"},
        {"backbone.parts", V::integer, "16", 1, 256, {}, "horizontal pooling strips P"},
        {"backbone.embed_dim", V::integer, "256", 1, 4096, {}, "embedding size per part"},
        {"backbone.audit_mode", V::boolean, "false", 0, 1, {}, "force all strides to 1"},
        {"backbone.use_reel", V::boolean, "true", 0, 1, {}, "reflect convolutions + group pool"},
        {"backbone.use_roel", V::boolean, "true", 0, 1, {}, "adaptive rotate block"},
        {"backbone.use_sel", V::boolean, "true", 0, 1, {}, "multi-scale block"},
        {"backbone.gpool_mode", V::choice, "max", 0, 0, {"max", "mean"}, "group pool aggregator"},
        {"backbone.hp_mode", V::choice, "max_mean", 0, 0, {"max_mean", "max"}, "strip pooling"},
        {"backbone.frame_h", V::integer, "64", 4, 1024, {}, "frame height"},
        {"backbone.frame_w", V::integer, "44", 4, 1024, {}, "frame width"},
        {"roel.theta_limit_deg", V::real, "40", 1e-3, 90, {}, "bound on the predicted angle"},
        {"sel.reduction_r", V::integer, "4", 1, 1024, {}, "channel reduction ratio"},
        {"sel.branch_mode", V::choice, "plain", 0, 0, {"plain", "dilated"}, "s2/s3 branch kernels"},
        {"train.iterations", V::integer, "2000", 1, 1e7, {}, "SGD steps"},
        {"train.p", V::integer, "4", 2, 1024, {}, "identities per batch"},
        {"train.k", V::integer, "4", 2, 1024, {}, "sequences per identity"},
        {"train.window", V::integer, "30", 1, 1000, {}, "frames per training clip"},
        {"train.lr", V::real, "0.01", 0, 10, {}, "initial learning rate"},
        {"train.momentum", V::real, "0.9", 0, 1, {}, "SGD momentum"},
        {"train.weight_decay", V::real, "0.0005", 0, 1, {}, "L2 weight decay"},
        {"train.milestones", V::int_list, "1000,1500", 0, 1e7, {}, "iterations where lr is multiplied by train.gamma"},
        {"train.gamma", V::real, "0.1", 0, 1, {}, "step decay factor"},
        {"train.margin", V::real, "0.2", 0, 10, {}, "triplet margin"},
        {"train.beta", V::real, "1.0", 0, 100, {}, "cross-entropy weight"},
        {"train.log_every", V::integer, "50", 1, 1e7, {}, "iterations between log lines"},
        {"data.identities", V::integer, "10", 2, 100000, {}, "synthetic identities"},
        {"data.train_seqs", V::integer, "8", 1, 1000, {}, "training sequences per identity"},
        {"data.gallery_seqs", V::integer, "2", 1, 1000, {}, "gallery sequences per identity"},
        {"data.probe_seqs", V::integer, "2", 1, 1000, {}, "probe sequences per identity"},
        {"data.frames", V::integer, "30", 1, 1000, {}, "frames per synthetic sequence"},
        {"data.probe_conditions", V::text, "reflect,rotate:20,rotate:-20,dilate:1", 0, 0, {}, "probe transforms, cycled"},
        {"data.manifest", V::text, "", 0, 0, {}, "dataset manifest (empty = synthetic)"},
    };
    return schema;
}

inline const KeySchema& schema_for(const std::string& key) {
    for (const auto& s : config_schema())
        if (s.key == key) return s;
    throw ConfigError(key, "unknown configuration key");
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& key, const std::string& text, bool integral) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = integral ? static_cast<double>(std::stoll(text, &used)) : std::stod(text, &used);
    } catch (const std::exception&) {
        throw ConfigError(key, "'" + text + "' is not a number");
    }
    if (used != text.size()) throw ConfigError(key, "'" + text + "' is not a" + std::string(integral ? "n integer" : " number"));
    return v;
}

inline std::vector<long long> parse_int_list(const std::string& key, const std::string& text) {
    std::vector<long long> out;
    if (trim(text).empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<long long>(parse_number(key, trim(item), true)));
    return out;
}

}  // namespace detail

/// Flat key=value configuration validated against `config_schema()`.
class RunConfig {
public:
    RunConfig() {
        for (const auto& s : config_schema()) values_[s.key] = s.default_value;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError(path, "cannot open config file");
        RunConfig c;
        c.merge(f);
        return c;
    }

    /// Reads `key=value` lines; `#` starts a comment.
    void merge(std::istream& in) {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected key=value");
            set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        validate(schema_for(key), value);
        values_[key] = value;
    }

    /// Applies "key=value".
    void set_assignment(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError(kv, "expected key=value");
        set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }

    const std::string& text(const std::string& key) const {
        schema_for(key);
        return values_.at(key);
    }
    long long integer(const std::string& key) const { return static_cast<long long>(detail::parse_number(key, text(key), true)); }
    double real(const std::string& key) const { return detail::parse_number(key, text(key), false); }
    bool boolean(const std::string& key) const { return text(key) == "true" || text(key) == "1"; }
    std::vector<long long> int_list(const std::string& key) const { return detail::parse_int_list(key, text(key)); }

    /// Canonical `key=value` dump in schema order.
    std::string canonical() const {
        std::ostringstream out;
        for (const auto& s : config_schema()) out << s.key << '=' << values_.at(s.key) << '\n';
        return out.str();
    }

    /// FNV-1a of the canonical dump.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : canonical()) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    std::string hash_hex() const {
        std::ostringstream s;
        s << std::hex << std::setw(16) << std::setfill('0') << hash();
        return s.str();
    }

private:
    static void validate(const KeySchema& s, const std::string& value) {
        auto range = [&](double v) {
            if (v < s.min || v > s.max) {
                std::ostringstream m;
                m << "value " << v << " outside [" << s.min << ", " << s.max << "]";
                throw ConfigError(s.key, m.str());
            }
        };
        switch (s.type) {
            case ValueType::integer: range(detail::parse_number(s.key, value, true)); break;
            case ValueType::real: range(detail::parse_number(s.key, value, false)); break;
            case ValueType::boolean:
                if (value != "true" && value != "false" && value != "1" && value != "0")
                    throw ConfigError(s.key, "expected true or false, got '" + value + "'");
                break;
            case ValueType::int_list:
                for (long long v : detail::parse_int_list(s.key, value)) range(static_cast<double>(v));
                break;
            case ValueType::choice:
                if (std::find(s.choices.begin(), s.choices.end(), value) == s.choices.end())
                    throw ConfigError(s.key, "'" + value + "' is not one of the allowed values");
                break;
            case ValueType::text: break;
        }
    }

    std::map<std::string, std::string> values_;
};

inline BackboneConfig backbone_config(const RunConfig& c, std::size_t num_classes) {
    BackboneConfig b;
    auto four = [&](const std::string& key) {
        const auto v = c.int_list(key);
        if (v.size() != 4) throw ConfigError(key, "expects 4 comma-separated values");
        return std::array<std::size_t, 4>{static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2]),
                                          static_cast<std::size_t>(v[3])};
    };
    b.layers = four("backbone.layers");
    b.widths = four("backbone.widths");
    b.strides = four("backbone.strides");
    b.parts = static_cast<std::size_t>(c.integer("backbone.parts"));
    b.embed_dim = static_cast<std::size_t>(c.integer("backbone.embed_dim"));
    b.audit_mode = c.boolean("backbone.audit_mode");
    b.use_reel = c.boolean("backbone.use_reel");
    b.use_roel = c.boolean("backbone.use_roel");
    b.use_sel = c.boolean("backbone.use_sel");
    b.gpool_mode = c.text("backbone.gpool_mode") == "mean" ? GroupPoolMode::mean : GroupPoolMode::max;
    b.hp_add_mean = c.text("backbone.hp_mode") == "max_mean";
    b.frame_h = static_cast<std::size_t>(c.integer("backbone.frame_h"));
    b.frame_w = static_cast<std::size_t>(c.integer("backbone.frame_w"));
    b.theta_limit_deg = c.real("roel.theta_limit_deg");
    b.reduction = static_cast<std::size_t>(c.integer("sel.reduction_r"));
    b.branch_mode = c.text("sel.branch_mode") == "dilated" ? BranchMode::dilated : BranchMode::plain;
    b.num_classes = num_classes;
    try {
        b.validate();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.substr(0, msg.find(':')), msg);
    }
    return b;
}

}  // namespace equikernel
