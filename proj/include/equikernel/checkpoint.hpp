#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "equikernel/backbone.hpp"

namespace equikernel {

// RRSG checkpoint: "RRSG", u32 version, u32 entry count, then per entry
// u32 name length, UTF-8 name, u32 rank, u64 extents, float32 data.
// All integers little-endian; entries sorted by name.

inline constexpr std::uint32_t checkpoint_version = 1;

class CheckpointError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Every persistent tensor of a model (parameters and running statistics),
/// sorted by module path.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(GaitModel<T>& m) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto* p : m.parameters()) out.emplace_back(p->name, &p->value);
    for (auto& [name, st] : m.norms()) {
        const std::string base = st->gamma.name.substr(0, st->gamma.name.size() - std::string(".gamma").size());
        out.emplace_back(base + ".running_mean", &st->running_mean);
        out.emplace_back(base + ".running_var", &st->running_var);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].first == out[i - 1].first) throw CheckpointError("duplicate tensor name " + out[i].first);
    return out;
}

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(U) > in.size()) throw CheckpointError("truncated checkpoint at byte " + std::to_string(pos));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(U);
    return static_cast<U>(v);
}

}  // namespace detail

template <typename T>
std::string encode_checkpoint(GaitModel<T>& m) {
    const auto tensors = named_tensors(m);
    std::string out = "RRSG";
    detail::put_le<std::uint32_t>(out, checkpoint_version);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t e : t->shape()) detail::put_le<std::uint64_t>(out, e);
        for (T v : t->data()) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            detail::put_le<std::uint32_t>(out, bits);
        }
    }
    return out;
}

/// Raw table of a checkpoint file.
inline std::map<std::string, Tensor<float>> decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "RRSG") != 0) throw CheckpointError("bad checkpoint magic");
    std::size_t pos = 4;
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != checkpoint_version) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto count = detail::get_le<std::uint32_t>(bytes, pos);
    std::map<std::string, Tensor<float>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::get_le<std::uint32_t>(bytes, pos);
        if (pos + len > bytes.size()) throw CheckpointError("truncated name at byte " + std::to_string(pos));
        std::string name = bytes.substr(pos, len);
        pos += len;
        const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(bytes, pos)));
        Tensor<float> t(shape);
        for (auto& v : t.data()) {
            const auto bits = detail::get_le<std::uint32_t>(bytes, pos);
            std::memcpy(&v, &bits, 4);
        }
        out.emplace(std::move(name), std::move(t));
    }
    if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint table");
    return out;
}

/// Copies a decoded table into the model; mismatches are reported together.
template <typename T>
void apply_checkpoint(GaitModel<T>& m, const std::map<std::string, Tensor<float>>& table) {
    std::vector<std::string> missing, mismatched, unexpected;
    const auto tensors = named_tensors(m);
    std::set<std::string> known;
    for (const auto& [name, t] : tensors) known.insert(name);
    for (const auto& [name, t] : table)
        if (!known.count(name)) unexpected.push_back(name);
    for (auto& [name, t] : tensors) {
        auto it = table.find(name);
        if (it == table.end()) {
            missing.push_back(name);
            continue;
        }
        if (it->second.shape() != t->shape()) {
            mismatched.push_back(name + " " + to_string(it->second.shape()) + " vs " + to_string(t->shape()));
            continue;
        }
        *t = it->second.template cast<T>();
    }
    if (missing.empty() && mismatched.empty() && unexpected.empty()) return;
    std::ostringstream msg;
    msg << "checkpoint does not match the configured model";
    if (!missing.empty()) {
        msg << "; missing parameters:";
        for (const auto& n : missing) msg << ' ' << n;
    }
    if (!mismatched.empty()) {
        msg << "; shape mismatches:";
        for (std::size_t i = 0; i < mismatched.size(); ++i) msg << (i ? ", " : " ") << mismatched[i];
    }
    if (!unexpected.empty()) {
        msg << "; unexpected tensors:";
        for (const auto& n : unexpected) msg << ' ' << n;
    }
    throw CheckpointError(msg.str());
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, GaitModel<T>& m) {
    const std::string bytes = encode_checkpoint(m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot write " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, GaitModel<T>& m) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    apply_checkpoint(m, decode_checkpoint(ss.str()));
}

}  // namespace equikernel
