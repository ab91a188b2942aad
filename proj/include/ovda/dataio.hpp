#pragma once

// Synthetic depth videos and their on-disk formats:
//   - depth and validity maps: grayscale PFM ("Pf"), little-endian on write
//   - colour frames: binary PPM ("P6"), 8-bit
//   - one manifest per sequence (key=value header, then "rgb depth valid" lines)

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovda/alignment.hpp"
#include "ovda/tensor.hpp"

namespace ovda {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- PFM / PPM ------------------------------------------------------------

// map is [H, W]; rows are written bottom-up as the format requires.
void write_pfm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pfm(const std::filesystem::path& path);

struct Rgb8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB, top row first
};

void write_ppm(const std::filesystem::path& path, const Rgb8& image);
Rgb8 read_ppm(const std::filesystem::path& path);

Rgb8 to_rgb8(const Tensor& rgb);     // [H, W, 3] in [0, 1] -> 8-bit, rounded
Tensor from_rgb8(const Rgb8& image);  // -> [H, W, 3] in [0, 1]

// ---- synthetic scenes -----------------------------------------------------

class SpecError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Vec3 = std::array<double, 3>;

enum class PrimitiveKind { Plane, Sphere, Box };

// Plane: points X with dot(normal, X) = offset. Sphere: center, radius.
// Box: axis-aligned [min, max]. Camera space: x right, y down, z forward.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Plane;
    Vec3 normal{0, 0, 1};
    double offset = 0.0;
    Vec3 center{0, 0, 0};
    double radius = 1.0;
    Vec3 min{0, 0, 0}, max{0, 0, 0};
    Vec3 color{0.5, 0.5, 0.5};
    double checker = 1.0;  // checker cells per world unit (0 = flat colour)
    Vec3 velocity{0, 0, 0};  // world units per frame (moving objects)
};

struct SceneSpec {
    double forward_velocity = 0.1;  // camera z advance per frame
    double focal = 1.0;             // focal length in units of image width
    double noise = 0.0;             // stddev of additive RGB noise
    double invalid_fraction = 0.0;  // probability that a pixel is marked invalid
    std::uint64_t seed = 0;
    std::vector<Primitive> primitives;
    std::optional<Primitive> moving_object;

    void validate(std::size_t frames) const;
};

SceneSpec scene_from_json(const std::string& text);
std::string scene_to_json(const SceneSpec& spec);

// Deterministic random scene: back wall, floor and a few objects.
SceneSpec random_scene(std::uint64_t seed);

struct GeneratedSequence {
    std::vector<Tensor> rgb;    // [H, W, 3]
    std::vector<Tensor> depth;  // [H, W], z-depth, 1 where invalid
    std::vector<Tensor> valid;  // [H, W], {0, 1}
};

GeneratedSequence generate_sequence(const SceneSpec& spec, std::size_t frames, std::size_t width, std::size_t height);

// ---- manifests and datasets ------------------------------------------------

struct FramePaths {
    std::string rgb, depth, valid;  // relative to the manifest's directory
};

struct SequenceManifest {
    std::string id;
    std::size_t frame_count = 0;
    std::size_t width = 0, height = 0;
    std::size_t stride = 1;
    std::map<std::string, std::string> extra;  // generator parameters and anything else
    std::vector<FramePaths> frames;
    std::filesystem::path directory;
};

void write_manifest(const std::filesystem::path& path, const SequenceManifest& m);
SequenceManifest read_manifest(const std::filesystem::path& path);

// Writes frames, manifest and scene.json under dir; returns the manifest.
SequenceManifest write_sequence(const std::filesystem::path& dir, const std::string& id, const SceneSpec& spec,
                                const GeneratedSequence& seq);

struct LoadedSequence {
    std::string id;
    std::vector<Tensor> rgb;  // [H, W, 3]
    DepthSequence depth;
    std::vector<std::size_t> source_frames;
};

// Every `stride`-th frame starting at 0; stride must be 1..4.
LoadedSequence load_sequence(const SequenceManifest& manifest, std::size_t stride = 1);

// Manifests of all `*/manifest.txt` under dir, sorted by path.
std::vector<SequenceManifest> list_dataset(const std::filesystem::path& dir);

}  // namespace ovda
