#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ovda/depth_model.hpp"

namespace ovda {

namespace {

constexpr char kMagic[8] = {'O', 'V', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("save_checkpoint: cannot open " + path);
    }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out_.write(reinterpret_cast<const char*>(b), 4);
    }
    void u64(std::uint64_t v) {
        u32(static_cast<std::uint32_t>(v));
        u32(static_cast<std::uint32_t>(v >> 32));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
    void finish(const std::string& path) {
        out_.flush();
        if (!out_) throw std::runtime_error("save_checkpoint: write failed for " + path);
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("load_checkpoint: cannot open " + path);
    }
    std::uint32_t u32() {
        unsigned char b[4];
        read(reinterpret_cast<char*>(b), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void read(char* p, std::size_t n) {
        in_.read(p, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw std::runtime_error("load_checkpoint: truncated file " + path_);
        }
    }

private:
    std::ifstream in_;
    std::string path_;
};

}  // namespace

void save_checkpoint(const std::string& path, Model<float>& model, std::uint64_t step) {
    Writer w(path);
    const ModelConfig& c = model.config;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(c.patch));
    w.u32(static_cast<std::uint32_t>(c.encoder_channels));
    w.u32(static_cast<std::uint32_t>(c.head_channels));
    w.u32(static_cast<std::uint32_t>(c.motion_modules));
    w.u32(static_cast<std::uint32_t>(c.context));
    w.u32(static_cast<std::uint32_t>(c.caches));
    w.u32(c.precision == PrecisionMode::Full32 ? 0u : 1u);
    w.u64(c.seed);
    w.u64(step);
    auto params = model.named_parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (auto& [name, tensor] : params) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u32(static_cast<std::uint32_t>(tensor->rank()));
        for (std::size_t d : tensor->shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : tensor->data()) w.f32(v);
    }
    w.finish(path);
}

std::pair<Model<float>, std::uint64_t> load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.read(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    }
    ModelConfig c;
    c.patch = r.u32();
    c.encoder_channels = r.u32();
    c.head_channels = r.u32();
    c.motion_modules = r.u32();
    c.context = r.u32();
    c.caches = r.u32();
    c.precision = r.u32() == 0 ? PrecisionMode::Full32 : PrecisionMode::Emulated16;
    c.seed = r.u64();
    const std::uint64_t step = r.u64();

    Model<float> model = Model<float>::create(c);
    auto params = model.named_parameters();
    const std::uint32_t count = r.u32();
    if (count != params.size()) {
        throw std::runtime_error("load_checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                                 std::to_string(count));
    }
    for (auto& [name, tensor] : params) {
        const std::uint32_t len = r.u32();
        std::string stored(len, '\0');
        r.read(stored.data(), len);
        if (stored != name) throw std::runtime_error("load_checkpoint: expected tensor " + name + ", found " + stored);
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        if (shape != tensor->shape()) {
            throw std::runtime_error("load_checkpoint: tensor " + name + " has shape " + shape_str(shape) +
                                     ", config implies " + shape_str(tensor->shape()));
        }
        for (float& v : tensor->data()) v = r.f32();
    }
    return {std::move(model), step};
}

}  // namespace ovda
