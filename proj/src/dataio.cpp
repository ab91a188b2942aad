#include "ovda/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

namespace ovda {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

// Reads whitespace-separated header tokens of a netpbm-style file; '#'
// comments run to end of line. Leaves `pos` just past the token.
std::string next_token(const std::string& buf, std::size_t& pos, const fs::path& path) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw FormatError(path.string() + ": truncated header");
    return buf.substr(start, pos - start);
}

std::size_t parse_extent(const std::string& tok, const fs::path& path) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(tok, &used);
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed header value '" + tok + "'");
    }
    if (used != tok.size() || v <= 0) throw FormatError(path.string() + ": invalid extent '" + tok + "'");
    return static_cast<std::size_t>(v);
}

Vec3 vec3(const nlohmann::json& j, const char* key, Vec3 fallback) {
    if (!j.contains(key)) return fallback;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3) throw SpecError(std::string("scene: '") + key + "' must be a 3-vector");
    return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

Primitive primitive_from_json(const nlohmann::json& j) {
    Primitive p;
    const std::string type = j.value("type", "");
    if (type == "plane") {
        p.kind = PrimitiveKind::Plane;
        p.normal = vec3(j, "normal", {0, 0, 1});
        p.offset = j.value("offset", 10.0);
    } else if (type == "sphere") {
        p.kind = PrimitiveKind::Sphere;
        p.center = vec3(j, "center", {0, 0, 10});
        p.radius = j.value("radius", 1.0);
    } else if (type == "box") {
        p.kind = PrimitiveKind::Box;
        p.min = vec3(j, "min", {-1, -1, 9});
        p.max = vec3(j, "max", {1, 1, 11});
    } else {
        throw SpecError("scene: unknown primitive type '" + type + "'");
    }
    p.color = vec3(j, "color", p.color);
    p.checker = j.value("checker", p.checker);
    p.velocity = vec3(j, "velocity", p.velocity);
    return p;
}

nlohmann::json primitive_to_json(const Primitive& p) {
    nlohmann::json j;
    switch (p.kind) {
        case PrimitiveKind::Plane:
            j["type"] = "plane";
            j["normal"] = p.normal;
            j["offset"] = p.offset;
            break;
        case PrimitiveKind::Sphere:
            j["type"] = "sphere";
            j["center"] = p.center;
            j["radius"] = p.radius;
            break;
        case PrimitiveKind::Box:
            j["type"] = "box";
            j["min"] = p.min;
            j["max"] = p.max;
            break;
    }
    j["color"] = p.color;
    j["checker"] = p.checker;
    j["velocity"] = p.velocity;
    return j;
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

constexpr double kNear = 0.05;

// Ray origin o, direction d (d.z == 1, so the ray parameter is z-depth).
std::optional<double> intersect(const Primitive& p, const Vec3& o, const Vec3& d) {
    switch (p.kind) {
        case PrimitiveKind::Plane: {
            const double denom = dot(p.normal, d);
            if (std::abs(denom) < 1e-12) return std::nullopt;
            const double lam = (p.offset - dot(p.normal, o)) / denom;
            if (lam > kNear) return lam;
            return std::nullopt;
        }
        case PrimitiveKind::Sphere: {
            const Vec3 oc{o[0] - p.center[0], o[1] - p.center[1], o[2] - p.center[2]};
            const double a = dot(d, d), b = 2.0 * dot(oc, d), c = dot(oc, oc) - p.radius * p.radius;
            const double disc = b * b - 4 * a * c;
            if (disc < 0) return std::nullopt;
            const double sq = std::sqrt(disc);
            const double l0 = (-b - sq) / (2 * a), l1 = (-b + sq) / (2 * a);
            if (l0 > kNear) return l0;
            if (l1 > kNear) return l1;
            return std::nullopt;
        }
        case PrimitiveKind::Box: {
            double lo = -1e300, hi = 1e300;
            for (int k = 0; k < 3; ++k) {
                if (std::abs(d[k]) < 1e-12) {
                    if (o[k] < p.min[k] || o[k] > p.max[k]) return std::nullopt;
                    continue;
                }
                double t0 = (p.min[k] - o[k]) / d[k], t1 = (p.max[k] - o[k]) / d[k];
                if (t0 > t1) std::swap(t0, t1);
                lo = std::max(lo, t0);
                hi = std::min(hi, t1);
            }
            if (lo > hi) return std::nullopt;
            if (lo > kNear) return lo;
            if (hi > kNear) return hi;
            return std::nullopt;
        }
    }
    return std::nullopt;
}

Vec3 shade(const Primitive& p, const Vec3& hit) {
    double f = 1.0;
    if (p.checker > 0) {
        const long long parity = static_cast<long long>(std::floor(hit[0] * p.checker)) +
                                 static_cast<long long>(std::floor(hit[1] * p.checker)) +
                                 static_cast<long long>(std::floor(hit[2] * p.checker));
        f = (parity & 1) ? 0.55 : 1.0;
    }
    return {p.color[0] * f, p.color[1] * f, p.color[2] * f};
}

Primitive moved(const Primitive& p, double t) {
    Primitive q = p;
    const Vec3 dv{p.velocity[0] * t, p.velocity[1] * t, p.velocity[2] * t};
    for (int k = 0; k < 3; ++k) {
        q.center[k] += dv[k];
        q.min[k] += dv[k];
        q.max[k] += dv[k];
    }
    q.offset += dot(p.normal, dv);
    return q;
}

std::string frame_name(std::size_t n, const char* ext) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << n << ext;
    return os.str();
}

}  // namespace

// ---- PFM / PPM ------------------------------------------------------------

void write_pfm(const fs::path& path, const Tensor& map) {
    if (map.rank() != 2) throw ShapeError("write_pfm: expected [H, W], got " + shape_str(map.shape()));
    const std::size_t H = map.dim(0), W = map.dim(1);
    std::string out = "Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n";
    const std::size_t header = out.size();
    out.resize(header + H * W * 4);
    for (std::size_t r = 0; r < H; ++r) {
        const std::size_t src_row = H - 1 - r;
        for (std::size_t c = 0; c < W; ++c) {
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(map[src_row * W + c]);
            char* dst = out.data() + header + (r * W + c) * 4;
            for (int b = 0; b < 4; ++b) dst[b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
        }
    }
    spit(path, out);
}

Tensor read_pfm(const fs::path& path) {
    const std::string buf = slurp(path);
    std::size_t pos = 0;
    const std::string magic = next_token(buf, pos, path);
    if (magic == "PF") throw FormatError(path.string() + ": colour PFM is not supported, expected 'Pf'");
    if (magic != "Pf") throw FormatError(path.string() + ": not a PFM file (magic '" + magic + "')");
    const std::size_t W = parse_extent(next_token(buf, pos, path), path);
    const std::size_t H = parse_extent(next_token(buf, pos, path), path);
    const std::string scale_tok = next_token(buf, pos, path);
    double scale = 0.0;
    try {
        std::size_t used = 0;
        scale = std::stod(scale_tok, &used);
        if (used != scale_tok.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed scale '" + scale_tok + "'");
    }
    if (scale == 0.0 || !std::isfinite(scale)) throw FormatError(path.string() + ": scale must be non-zero");
    // Exactly one whitespace byte separates the header from the payload.
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
        throw FormatError(path.string() + ": truncated header");
    }
    ++pos;
    const bool little = scale < 0;
    if (buf.size() - pos < H * W * 4) {
        throw FormatError(path.string() + ": truncated payload (" + std::to_string(buf.size() - pos) + " of " +
                          std::to_string(H * W * 4) + " bytes)");
    }
    Tensor map({H, W});
    for (std::size_t r = 0; r < H; ++r) {
        const std::size_t dst_row = H - 1 - r;
        for (std::size_t c = 0; c < W; ++c) {
            const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + pos + (r * W + c) * 4);
            std::uint32_t bits = 0;
            for (int k = 0; k < 4; ++k) {
                const int shift = little ? 8 * k : 8 * (3 - k);
                bits |= static_cast<std::uint32_t>(b[k]) << shift;
            }
            map[dst_row * W + c] = std::bit_cast<float>(bits);
        }
    }
    return map;
}

void write_ppm(const fs::path& path, const Rgb8& image) {
    if (image.pixels.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0) {
        throw ShapeError("write_ppm: pixel buffer does not match " + std::to_string(image.width) + "x" +
                         std::to_string(image.height));
    }
    std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    spit(path, out);
}

Rgb8 read_ppm(const fs::path& path) {
    const std::string buf = slurp(path);
    std::size_t pos = 0;
    const std::string magic = next_token(buf, pos, path);
    if (magic != "P6") throw FormatError(path.string() + ": not a binary PPM (magic '" + magic + "')");
    Rgb8 img;
    img.width = parse_extent(next_token(buf, pos, path), path);
    img.height = parse_extent(next_token(buf, pos, path), path);
    const std::size_t maxval = parse_extent(next_token(buf, pos, path), path);
    if (maxval != 255) {
        throw FormatError(path.string() + ": unsupported max value " + std::to_string(maxval) + " (only 255)");
    }
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
        throw FormatError(path.string() + ": truncated header");
    }
    ++pos;
    const std::size_t n = img.width * img.height * 3;
    if (buf.size() - pos < n) throw FormatError(path.string() + ": truncated payload");
    img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

Rgb8 to_rgb8(const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("to_rgb8: expected [H, W, 3]");
    Rgb8 img{rgb.dim(1), rgb.dim(0), std::vector<std::uint8_t>(rgb.size())};
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
    }
    return img;
}

Tensor from_rgb8(const Rgb8& image) {
    Tensor rgb({image.height, image.width, 3});
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<float>(image.pixels[i]) / 255.0f;
    return rgb;
}

// ---- scenes -----------------------------------------------------------------

void SceneSpec::validate(std::size_t frames) const {
    if (frames == 0) throw SpecError("scene: frame count must be >= 1");
    if (!std::isfinite(forward_velocity)) throw SpecError("scene: forward velocity must be finite");
    if (!(focal > 0)) throw SpecError("scene: focal length must be positive");
    if (!(noise >= 0)) throw SpecError("scene: noise must be non-negative");
    if (!(invalid_fraction >= 0 && invalid_fraction <= 1)) throw SpecError("scene: invalid fraction must be in [0, 1]");
    if (primitives.empty() && !moving_object) throw SpecError("scene: no primitives");
    const double travel = forward_velocity * static_cast<double>(frames - 1);
    auto check = [&](const Primitive& p) {
        switch (p.kind) {
            case PrimitiveKind::Plane:
                if (dot(p.normal, p.normal) < 1e-12) throw SpecError("scene: plane normal is zero");
                // A frontal plane the camera would reach or pass.
                if (p.normal[0] == 0 && p.normal[1] == 0 && p.offset / p.normal[2] - travel <= kNear &&
                    p.offset / p.normal[2] > 0) {
                    throw SpecError("scene: camera reaches the frontal plane at z=" +
                                    std::to_string(p.offset / p.normal[2]) + " within " + std::to_string(frames) +
                                    " frames");
                }
                break;
            case PrimitiveKind::Sphere:
                if (!(p.radius > 0)) throw SpecError("scene: sphere radius must be positive");
                break;
            case PrimitiveKind::Box:
                for (int k = 0; k < 3; ++k)
                    if (!(p.min[k] < p.max[k])) throw SpecError("scene: box min must be below max");
                break;
        }
    };
    for (const auto& p : primitives) check(p);
    if (moving_object) check(*moving_object);
}

SceneSpec scene_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("scene: invalid JSON: ") + e.what());
    }
    try {
        SceneSpec s;
        s.forward_velocity = j.value("forward_velocity", s.forward_velocity);
        s.focal = j.value("focal", s.focal);
        s.noise = j.value("noise", s.noise);
        s.invalid_fraction = j.value("invalid_fraction", s.invalid_fraction);
        s.seed = j.value("seed", s.seed);
        for (const auto& p : j.value("primitives", nlohmann::json::array())) s.primitives.push_back(primitive_from_json(p));
        if (j.contains("moving_object") && !j["moving_object"].is_null()) {
            s.moving_object = primitive_from_json(j["moving_object"]);
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("scene: ") + e.what());
    }
}

std::string scene_to_json(const SceneSpec& s) {
    nlohmann::json j;
    j["forward_velocity"] = s.forward_velocity;
    j["focal"] = s.focal;
    j["noise"] = s.noise;
    j["invalid_fraction"] = s.invalid_fraction;
    j["seed"] = s.seed;
    j["primitives"] = nlohmann::json::array();
    for (const auto& p : s.primitives) j["primitives"].push_back(primitive_to_json(p));
    j["moving_object"] = s.moving_object ? primitive_to_json(*s.moving_object) : nlohmann::json();
    return j.dump(2) + "\n";
}

SceneSpec random_scene(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto color = [&] { return Vec3{0.2 + 0.8 * u(rng), 0.2 + 0.8 * u(rng), 0.2 + 0.8 * u(rng)}; };
    SceneSpec s;
    s.seed = seed;
    s.forward_velocity = 0.05 + 0.2 * u(rng);
    s.focal = 0.9;
    s.noise = 0.01;
    Primitive wall;
    wall.kind = PrimitiveKind::Plane;
    wall.normal = {0, 0, 1};
    wall.offset = 45.0 + 20.0 * u(rng);
    wall.color = color();
    wall.checker = 0.25;
    s.primitives.push_back(wall);
    Primitive floor;
    floor.kind = PrimitiveKind::Plane;
    floor.normal = {0, 1, 0};
    floor.offset = 1.5 + u(rng);
    floor.color = color();
    floor.checker = 1.0;
    s.primitives.push_back(floor);
    const int objects = 2 + static_cast<int>(u(rng) * 3);
    for (int k = 0; k < objects; ++k) {
        Primitive p;
        const double z = 6.0 + 24.0 * u(rng), x = (u(rng) - 0.5) * 0.8 * z;
        if (u(rng) < 0.5) {
            p.kind = PrimitiveKind::Sphere;
            p.radius = 0.5 + 1.5 * u(rng);
            p.center = {x, floor.offset - p.radius, z};
        } else {
            p.kind = PrimitiveKind::Box;
            const double hw = 0.4 + 1.2 * u(rng), hh = 0.5 + 2.0 * u(rng);
            p.min = {x - hw, floor.offset - 2 * hh, z - hw};
            p.max = {x + hw, floor.offset, z + hw};
        }
        p.color = color();
        p.checker = 2.0;
        s.primitives.push_back(p);
    }
    if (u(rng) < 0.5) {
        Primitive m;
        m.kind = PrimitiveKind::Sphere;
        m.radius = 0.6;
        m.center = {-3.0, floor.offset - 1.5, 10.0 + 5.0 * u(rng)};
        m.velocity = {0.08, 0.0, 0.0};
        m.color = color();
        m.checker = 3.0;
        s.moving_object = m;
    }
    return s;
}

GeneratedSequence generate_sequence(const SceneSpec& spec, std::size_t frames, std::size_t width, std::size_t height) {
    spec.validate(frames);
    if (width == 0 || height == 0) throw SpecError("scene: resolution must be positive");
    std::mt19937_64 rng(spec.seed * 0x2545F4914F6CDD1DULL + 1);
    std::normal_distribution<double> noise(0.0, spec.noise > 0 ? spec.noise : 1.0);
    std::bernoulli_distribution drop(spec.invalid_fraction);
    const double f = spec.focal * static_cast<double>(width);
    const double cx = 0.5 * static_cast<double>(width), cy = 0.5 * static_cast<double>(height);
    const Vec3 sky{0.7, 0.8, 0.95};

    GeneratedSequence out;
    for (std::size_t t = 0; t < frames; ++t) {
        const double td = static_cast<double>(t);
        const Vec3 origin{0.0, 0.0, spec.forward_velocity * td};
        std::vector<Primitive> prims;
        for (const auto& p : spec.primitives) prims.push_back(moved(p, td));
        if (spec.moving_object) prims.push_back(moved(*spec.moving_object, td));

        Tensor rgb({height, width, 3}), depth({height, width}, 1.0f), valid({height, width});
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const Vec3 dir{(static_cast<double>(x) + 0.5 - cx) / f, (static_cast<double>(y) + 0.5 - cy) / f, 1.0};
                double best = 1e300;
                const Primitive* hit = nullptr;
                for (const auto& p : prims) {
                    if (auto lam = intersect(p, origin, dir); lam && *lam < best) {
                        best = *lam;
                        hit = &p;
                    }
                }
                Vec3 c = sky;
                const std::size_t i = y * width + x;
                if (hit && best <= kMaxDepth) {
                    c = shade(*hit, {origin[0] + best * dir[0], origin[1] + best * dir[1], origin[2] + best * dir[2]});
                    depth[i] = static_cast<float>(best);
                    valid[i] = 1.0f;
                }
                for (int k = 0; k < 3; ++k) {
                    double v = c[k];
                    if (spec.noise > 0) v += noise(rng);
                    rgb[i * 3 + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
                if (spec.invalid_fraction > 0 && drop(rng)) valid[i] = 0.0f;
            }
        }
        out.rgb.push_back(std::move(rgb));
        out.depth.push_back(std::move(depth));
        out.valid.push_back(std::move(valid));
    }
    return out;
}

// ---- manifests ---------------------------------------------------------------

void write_manifest(const fs::path& path, const SequenceManifest& m) {
    std::ostringstream os;
    os << "format=ovda-manifest-1\n";
    os << "id=" << m.id << '\n';
    os << "frames=" << m.frame_count << '\n';
    os << "width=" << m.width << '\n';
    os << "height=" << m.height << '\n';
    os << "stride=" << m.stride << '\n';
    for (const auto& [k, v] : m.extra) os << k << '=' << v << '\n';
    for (const auto& f : m.frames) os << f.rgb << ' ' << f.depth << ' ' << f.valid << '\n';
    spit(path, os.str());
}

SequenceManifest read_manifest(const fs::path& path) {
    std::istringstream in(slurp(path));
    SequenceManifest m;
    m.directory = path.parent_path();
    std::map<std::string, std::string> header;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            if (!m.frames.empty()) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": header after frames");
            header[line.substr(0, eq)] = line.substr(eq + 1);
            continue;
        }
        std::istringstream ls(line);
        FramePaths f;
        std::string extra;
        if (!(ls >> f.rgb >> f.depth >> f.valid) || (ls >> extra)) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'rgb depth valid'");
        }
        m.frames.push_back(std::move(f));
    }
    auto take = [&](const std::string& key) {
        auto it = header.find(key);
        if (it == header.end()) throw FormatError(path.string() + ": missing header '" + key + "'");
        std::string v = it->second;
        header.erase(it);
        return v;
    };
    auto take_size = [&](const std::string& key) {
        const std::string v = take(key);
        try {
            return static_cast<std::size_t>(std::stoull(v));
        } catch (const std::exception&) {
            throw FormatError(path.string() + ": header '" + key + "' is not a number");
        }
    };
    if (take("format") != "ovda-manifest-1") throw FormatError(path.string() + ": unknown manifest format");
    m.id = take("id");
    m.frame_count = take_size("frames");
    m.width = take_size("width");
    m.height = take_size("height");
    m.stride = take_size("stride");
    m.extra = std::move(header);
    if (m.frame_count != m.frames.size()) {
        throw FormatError(path.string() + ": header says " + std::to_string(m.frame_count) + " frames, listing has " +
                          std::to_string(m.frames.size()));
    }
    return m;
}

SequenceManifest write_sequence(const fs::path& dir, const std::string& id, const SceneSpec& spec,
                                const GeneratedSequence& seq) {
    fs::create_directories(dir / "rgb");
    fs::create_directories(dir / "depth");
    fs::create_directories(dir / "valid");
    SequenceManifest m;
    m.id = id;
    m.frame_count = seq.rgb.size();
    m.height = seq.rgb.empty() ? 0 : seq.rgb[0].dim(0);
    m.width = seq.rgb.empty() ? 0 : seq.rgb[0].dim(1);
    m.stride = 1;
    m.directory = dir;
    std::ostringstream vel;
    vel << std::setprecision(17) << spec.forward_velocity;
    m.extra["seed"] = std::to_string(spec.seed);
    m.extra["forward_velocity"] = vel.str();
    m.extra["scene"] = "scene.json";
    spit(dir / "scene.json", scene_to_json(spec));
    for (std::size_t n = 0; n < seq.rgb.size(); ++n) {
        FramePaths f{"rgb/" + frame_name(n, ".ppm"), "depth/" + frame_name(n, ".pfm"), "valid/" + frame_name(n, ".pfm")};
        write_ppm(dir / f.rgb, to_rgb8(seq.rgb[n]));
        write_pfm(dir / f.depth, seq.depth[n]);
        write_pfm(dir / f.valid, seq.valid[n]);
        m.frames.push_back(std::move(f));
    }
    write_manifest(dir / "manifest.txt", m);
    return m;
}

LoadedSequence load_sequence(const SequenceManifest& manifest, std::size_t stride) {
    if (stride < 1 || stride > 4) throw std::invalid_argument("load_sequence: stride must be 1..4");
    LoadedSequence out;
    out.id = manifest.id;
    out.depth.kind = SequenceKind::GroundTruth;
    for (std::size_t n = 0; n < manifest.frames.size(); n += stride) {
        const FramePaths& f = manifest.frames[n];
        for (const auto* rel : {&f.rgb, &f.depth, &f.valid}) {
            if (!fs::exists(manifest.directory / *rel)) {
                throw FormatError("load_sequence: missing file " + (manifest.directory / *rel).string());
            }
        }
        out.rgb.push_back(from_rgb8(read_ppm(manifest.directory / f.rgb)));
        out.depth.frames.push_back(read_pfm(manifest.directory / f.depth));
        out.depth.valid.push_back(read_pfm(manifest.directory / f.valid));
        out.source_frames.push_back(n);
    }
    return out;
}

std::vector<SequenceManifest> list_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.txt")) paths.push_back(entry.path() / "manifest.txt");
    }
    if (fs::exists(dir / "manifest.txt")) paths.push_back(dir / "manifest.txt");
    std::sort(paths.begin(), paths.end());
    std::vector<SequenceManifest> out;
    for (const auto& p : paths) out.push_back(read_manifest(p));
    if (out.empty()) throw FormatError("no manifests found under " + dir.string());
    return out;
}

}  // namespace ovda
