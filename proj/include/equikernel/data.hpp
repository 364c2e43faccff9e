#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "equikernel/ops.hpp"
#include "equikernel/rotate.hpp"
#include "equikernel/tensor.hpp"

namespace equikernel {

struct GaitSequence {
    Tensor<float> frames;  // [T, H, W], values in [0, 1]
    int identity = 0;
    std::string condition;

    std::size_t length() const { return frames.dim(0); }
};

// ---------------------------------------------------------------- .gseq I/O

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

inline constexpr std::uint32_t gseq_version = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos, const char* field) {
    if (pos + 4 > in.size()) throw ParseError(std::string("truncated ") + field, in.size());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace detail

inline std::string encode_gseq(const Tensor<float>& frames) {
    if (frames.rank() != 3) throw ShapeError("encode_gseq", frames.shape(), "expects [T,H,W]");
    std::string out = "GSEQ";
    detail::put_u32(out, gseq_version);
    for (std::size_t i = 0; i < 3; ++i) detail::put_u32(out, static_cast<std::uint32_t>(frames.dim(static_cast<int>(i))));
    out.reserve(out.size() + frames.size());
    for (float v : frames.data()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("encode_gseq: pixel outside [0,1]");
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
    return out;
}

inline Tensor<float> decode_gseq(const std::string& bytes) {
    if (bytes.size() < 4) throw ParseError("truncated magic", bytes.size());
    if (bytes.compare(0, 4, "GSEQ") != 0) throw ParseError("bad magic", 0);
    std::size_t pos = 4;
    const std::uint32_t version = detail::get_u32(bytes, pos, "version");
    if (version != gseq_version) throw ParseError("unsupported version " + std::to_string(version), 4);
    const std::uint32_t t = detail::get_u32(bytes, pos, "T");
    const std::uint32_t h = detail::get_u32(bytes, pos, "H");
    const std::uint32_t w = detail::get_u32(bytes, pos, "W");
    if (t == 0 || h == 0 || w == 0) throw ParseError("empty extent in header", 8);
    const std::uint64_t payload = static_cast<std::uint64_t>(t) * h * w;
    if (bytes.size() - pos < payload) throw ParseError("truncated payload (" + std::to_string(payload) + " bytes expected)", bytes.size());
    if (bytes.size() - pos > payload) throw ParseError("trailing bytes after payload", pos + payload);
    Tensor<float> frames({t, h, w});
    for (std::size_t i = 0; i < payload; ++i) frames[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
    return frames;
}

inline void save_gseq(const std::filesystem::path& path, const Tensor<float>& frames) {
    const std::string bytes = encode_gseq(frames);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Tensor<float> load_gseq(const std::filesystem::path& path) { return decode_gseq(detail::read_file(path)); }

// ---------------------------------------------------------- synthetic walker

/// Body and gait parameters of one synthetic identity.
struct WalkerSpec {
    double height;        // head top to feet, pixels
    double torso_half_w;  // torso ellipse half width
    double head_r;
    double leg_frac;      // leg length / height
    double arm_frac;      // arm length / height
    double stride_deg;    // hip swing amplitude
    double arm_deg;       // shoulder swing amplitude
    double knee_deg;      // knee bend amplitude
    double lean_deg;      // forward lean of the torso
    double head_dx;       // head offset in walking direction
    double period;        // frames per gait cycle
    double limb_r;        // limb half thickness
    double backpack;      // radius of a blob behind the torso (0 = none)
    bool mirrored = false;
};

inline WalkerSpec walker_spec(std::uint64_t identity_seed) {
    std::mt19937_64 rng(identity_seed * 0x9E3779B97F4A7C15ull + 17);
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    WalkerSpec s{};
    s.height = u(48, 58);
    s.torso_half_w = u(3.0, 6.0);
    s.head_r = u(3.2, 5.2);
    s.leg_frac = u(0.42, 0.54);
    s.arm_frac = u(0.28, 0.40);
    s.stride_deg = u(12, 34);
    s.arm_deg = u(8, 40);
    s.knee_deg = u(5, 35);
    s.lean_deg = u(2, 12);
    s.head_dx = u(0.0, 2.5);
    s.period = u(10, 16);
    s.limb_r = u(1.2, 2.6);
    s.backpack = u(0, 1) < 0.4 ? u(2.0, 4.0) : 0.0;
    return s;
}

namespace detail {

struct Capsule {
    double x0, y0, x1, y1, r;
    bool contains(double x, double y) const {
        const double dx = x1 - x0, dy = y1 - y0;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = x - (x0 + t * dx), ey = y - (y0 + t * dy);
        return ex * ex + ey * ey <= r * r;
    }
};

struct Ellipse {
    double cx, cy, rx, ry, rot;  // rot in radians
    bool contains(double x, double y) const {
        const double c = std::cos(rot), s = std::sin(rot);
        const double dx = x - cx, dy = y - cy;
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
    }
};

}  // namespace detail

/// Renders one binary silhouette frame. The walker faces +x (right) unless
/// `spec.mirrored`, in which case every pixel samples the mirrored scene.
inline void render_walker_frame(const WalkerSpec& spec, double phase, double shift_x, std::size_t H, std::size_t W, float* out) {
    const double deg = std::numbers::pi / 180.0;
    const double cx = (static_cast<double>(W) - 1) / 2 + shift_x;
    const double feet_y = (static_cast<double>(H) + spec.height) / 2 - 1;
    const double leg = spec.leg_frac * spec.height;
    const double hip_y = feet_y - leg;
    const double lean = spec.lean_deg * deg;
    const double torso_len = spec.height - leg - 2 * spec.head_r;
    // Torso leans forward: shoulders ahead of the hips.
    const double sh_x = cx + std::sin(lean) * torso_len, sh_y = hip_y - std::cos(lean) * torso_len;
    std::vector<detail::Capsule> caps;
    std::vector<detail::Ellipse> ells;
    ells.push_back({(cx + sh_x) / 2, (hip_y + sh_y) / 2, spec.torso_half_w, torso_len / 2 + 1, lean});
    ells.push_back({sh_x + spec.head_dx, sh_y - spec.head_r + 0.5, spec.head_r * 0.9, spec.head_r, 0});
    if (spec.backpack > 0) ells.push_back({(cx + sh_x) / 2 - spec.torso_half_w - spec.backpack * 0.4, (hip_y + sh_y) / 2 - 2, spec.backpack, spec.backpack * 1.6, lean});
    const double w = 2 * std::numbers::pi * phase;
    for (int side = 0; side < 2; ++side) {
        const double sgn = side == 0 ? 1.0 : -1.0;
        // legs: thigh + shin with knee bend during swing
        const double hip_a = sgn * spec.stride_deg * deg * std::sin(w);
        const double knee_a = hip_a - spec.knee_deg * deg * std::max(0.0, sgn * std::cos(w));
        const double thigh = leg * 0.5, shin = leg * 0.5;
        const double kx = cx + std::sin(hip_a) * thigh, ky = hip_y + std::cos(hip_a) * thigh;
        const double fx = kx + std::sin(knee_a) * shin, fy = ky + std::cos(knee_a) * shin;
        caps.push_back({cx, hip_y, kx, ky, spec.limb_r + 0.4});
        caps.push_back({kx, ky, fx, fy, spec.limb_r});
        caps.push_back({fx, fy, fx + 2.5, fy, spec.limb_r * 0.7});  // foot points forward
        // arms swing opposite to the legs
        const double arm_a = -sgn * spec.arm_deg * deg * std::sin(w);
        const double arm = spec.arm_frac * spec.height;
        caps.push_back({sh_x, sh_y + 1, sh_x + std::sin(arm_a) * arm, sh_y + 1 + std::cos(arm_a) * arm, spec.limb_r * 0.8});
    }
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            const double x = spec.mirrored ? static_cast<double>(W - 1 - j) : static_cast<double>(j);
            const double y = static_cast<double>(i);
            bool in = false;
            for (const auto& e : ells) in = in || e.contains(x, y);
            for (const auto& c : caps) in = in || c.contains(x, y);
            out[i * W + j] = in ? 1.0f : 0.0f;
        }
}

/// Deterministic synthetic sequence. The identity seed fixes body and gait;
/// `sequence_index` varies start phase and horizontal placement between
/// recordings of the same identity. Conditions "reflect" and "mirror" render
/// the walker heading the other way; anything else renders the default view.
inline GaitSequence synth_walker(std::uint64_t identity_seed, std::size_t frames, const std::string& condition = "nm",
                                 std::uint64_t sequence_index = 0, std::size_t H = 64, std::size_t W = 44) {
    if (frames == 0) throw std::invalid_argument("synth_walker: T must be >= 1");
    WalkerSpec spec = walker_spec(identity_seed);
    spec.mirrored = condition == "reflect" || condition == "mirror";
    std::mt19937_64 rng(identity_seed * 1000003ull + sequence_index * 7919ull + 3);
    const double phase0 = std::uniform_real_distribution<double>(0, 1)(rng);
    const double shift = std::uniform_real_distribution<double>(-1.5, 1.5)(rng);
    GaitSequence seq;
    seq.identity = static_cast<int>(identity_seed);
    seq.condition = condition;
    seq.frames = Tensor<float>({frames, H, W});
    for (std::size_t t = 0; t < frames; ++t)
        render_walker_frame(spec, phase0 + static_cast<double>(t) / spec.period, shift, H, W, seq.frames.raw() + t * H * W);
    return seq;
}

// ---------------------------------------------------------------- transforms

enum class TransformKind { none, reflect, rotate, dilate, erode };

struct Transform {
    TransformKind kind = TransformKind::none;
    double angle_deg = 0;   // rotate
    std::size_t iters = 1;  // dilate / erode

    std::string label() const {
        switch (kind) {
            case TransformKind::none: return "nm";
            case TransformKind::reflect: return "reflect";
            case TransformKind::rotate: {
                std::ostringstream s;
                s << "rot" << (angle_deg >= 0 ? "+" : "") << angle_deg;
                return s.str();
            }
            case TransformKind::dilate: return "dilate" + std::to_string(iters);
            case TransformKind::erode: return "erode" + std::to_string(iters);
        }
        return "?";
    }
};

/// Parses "reflect", "rotate:15", "dilate:1", "erode:2", "none".
inline Transform parse_transform(const std::string& text) {
    const auto colon = text.find(':');
    const std::string name = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    Transform t;
    if (name == "none" || name == "nm") return t;
    if (name == "reflect") {
        t.kind = TransformKind::reflect;
    } else if (name == "rotate") {
        t.kind = TransformKind::rotate;
        t.angle_deg = arg.empty() ? 15.0 : std::stod(arg);
    } else if (name == "dilate" || name == "erode") {
        t.kind = name == "dilate" ? TransformKind::dilate : TransformKind::erode;
        t.iters = arg.empty() ? 1 : std::stoul(arg);
    } else {
        throw std::invalid_argument("unknown transform '" + text + "'");
    }
    return t;
}

namespace detail {

/// One step of grey-level morphology with a 3x3 cross; outside reads 0.
inline Tensor<float> cross_morph(const Tensor<float>& x, bool dilate) {
    const std::size_t h = x.dim(-2), w = x.dim(-1), planes = x.size() / (h * w);
    Tensor<float> out(x.shape());
    const int di[5] = {0, -1, 1, 0, 0}, dj[5] = {0, 0, 0, -1, 1};
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = x.raw() + p * h * w;
        float* dst = out.raw() + p * h * w;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                float v = src[i * w + j];
                for (int n = 1; n < 5; ++n) {
                    const long ii = static_cast<long>(i) + di[n], jj = static_cast<long>(j) + dj[n];
                    const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(h) && jj < static_cast<long>(w);
                    const float s = inside ? src[static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)] : 0.0f;
                    v = dilate ? std::max(v, s) : std::min(v, s);
                }
                dst[i * w + j] = v;
            }
    }
    return out;
}

}  // namespace detail

/// Deterministic transform of all frames.
inline Tensor<float> transform_frames(const Tensor<float>& frames, const Transform& t) {
    switch (t.kind) {
        case TransformKind::none: return frames;
        case TransformKind::reflect: return mirror_w(frames);
        case TransformKind::rotate: {
            if (std::abs(t.angle_deg) > 45.0) throw std::invalid_argument("rotate: |theta| must be <= 45 degrees");
            Tensor<float> r = rotate_image(frames, t.angle_deg);
            for (auto& v : r.data()) v = std::clamp(v, 0.0f, 1.0f);
            return r;
        }
        case TransformKind::dilate:
        case TransformKind::erode: {
            Tensor<float> r = frames;
            for (std::size_t i = 0; i < t.iters; ++i) r = detail::cross_morph(r, t.kind == TransformKind::dilate);
            return r;
        }
    }
    return frames;
}

/// Applies `t` to the whole sequence with the given probability.
inline GaitSequence apply_transform(const GaitSequence& seq, const Transform& t, double probability, std::mt19937_64& rng) {
    if (probability < 0 || probability > 1) throw std::invalid_argument("apply_transform: probability outside [0,1]");
    if (t.kind == TransformKind::rotate && std::abs(t.angle_deg) > 45.0)
        throw std::invalid_argument("rotate: |theta| must be <= 45 degrees");
    const bool fire = std::uniform_real_distribution<double>(0, 1)(rng) < probability;
    if (!fire) return seq;
    GaitSequence out = seq;
    out.frames = transform_frames(seq.frames, t);
    out.condition = t.label();
    return out;
}

// ------------------------------------------------------------------ manifest

enum class Role { probe, gallery, train };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::probe: return "probe";
        case Role::gallery: return "gallery";
        case Role::train: return "train";
    }
    return "?";
}

struct ManifestEntry {
    std::string path;
    int identity = 0;
    std::string condition;
    Role role = Role::gallery;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/// Checks that every probe identity is enrolled in the gallery.
inline void validate_manifest(const std::vector<ManifestEntry>& entries) {
    std::set<int> gallery;
    for (const auto& e : entries)
        if (e.role == Role::gallery) gallery.insert(e.identity);
    for (const auto& e : entries)
        if (e.role == Role::probe && !gallery.count(e.identity))
            throw std::invalid_argument("manifest: probe identity " + std::to_string(e.identity) + " (" + e.path + ") has no gallery entry");
}

inline std::vector<ManifestEntry> parse_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("manifest: empty file");
    const auto header = detail::split_csv_line(line);
    if (header != std::vector<std::string>{"path", "identity", "condition", "role"})
        throw std::invalid_argument("manifest: header must be path,identity,condition,role");
    std::vector<ManifestEntry> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 4) throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": expected 4 fields");
        ManifestEntry e;
        e.path = f[0];
        try {
            e.identity = std::stoi(f[1]);
        } catch (const std::exception&) {
            throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": identity '" + f[1] + "' is not an integer");
        }
        e.condition = f[2];
        if (f[3] == "probe") e.role = Role::probe;
        else if (f[3] == "gallery") e.role = Role::gallery;
        else if (f[3] == "train") e.role = Role::train;
        else throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": unknown role '" + f[3] + "'");
        out.push_back(std::move(e));
    }
    validate_manifest(out);
    return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest " + path.string());
    auto entries = parse_manifest(f);
    // relative paths resolve against the manifest directory
    for (auto& e : entries)
        if (std::filesystem::path(e.path).is_relative()) e.path = (path.parent_path() / e.path).string();
    return entries;
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
    out << "path,identity,condition,role\n";
    for (const auto& e : entries) out << e.path << ',' << e.identity << ',' << e.condition << ',' << role_name(e.role) << '\n';
}

}  // namespace equikernel
