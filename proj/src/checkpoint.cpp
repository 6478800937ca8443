#include "mar/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mar {
namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) {
    const auto v = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    bool done() const { return pos_ == bytes_.size(); }

    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated record");
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint64_t u64() {
        auto s = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
        return v;
    }

    float f32() {
        auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
        return std::bit_cast<float>(v);
    }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const TensorMap& tensors) {
    std::string out(kCheckpointMagic);
    for (const auto& [name, t] : tensors) {
        put_u64(out, name.size());
        out += name;
        put_u64(out, t.rank());
        for (auto e : t.shape()) put_u64(out, e);
        for (float v : t.data()) put_f32(out, v);
    }
    return out;
}

TensorMap decode_checkpoint(std::string_view bytes) {
    if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
        throw std::runtime_error("checkpoint: bad magic");
    }
    Reader in(bytes.substr(kCheckpointMagic.size()));
    TensorMap out;
    while (!in.done()) {
        std::string name(in.take(in.u64()));
        const auto rank = in.u64();
        if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
        Shape shape(rank);
        for (auto& e : shape) e = in.u64();
        std::vector<float> data(shape_numel(shape));
        for (auto& v : data) v = in.f32();
        if (!out.emplace(name, Tensor<float>(std::move(shape), std::move(data))).second) {
            throw std::runtime_error("checkpoint: duplicate tensor " + name);
        }
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path.string());
    const auto bytes = encode_checkpoint(tensors);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace mar
