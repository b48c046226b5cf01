#include "pcdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pcd::ad {

namespace {

constexpr char kMagic[4] = {'P', 'C', 'D', 'K'};

template <typename T>
void put_le(std::ofstream& out, T value) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>) {
        bits = std::bit_cast<std::uint64_t>(value);
    } else {
        bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        return std::bit_cast<double>(bits);
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorMap& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, tensors.size());
    for (const auto& [name, tensor] : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t e : tensor.shape()) put_le<std::uint64_t>(out, e);
        for (std::size_t i = 0; i < tensor.size(); ++i) put_le<double>(out, tensor.flat(i));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

TensorMap load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: '" + path + "' is not a PCDK file");
    }
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    }
    const auto count = get_le<std::uint64_t>(in);
    TensorMap tensors;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = get_le<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error("checkpoint: truncated file");
        const auto rank = get_le<std::uint32_t>(in);
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(in));
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = get_le<double>(in);
        tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return tensors;
}

}  // namespace pcd::ad
