#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dsp/errors.hpp"
#include "dsp/nn.hpp"

namespace dsp {

// Flat binary container for dense networks. Layout (all little-endian):
//   magic "DSPCKPT1"
//   u32 section_count
//   per section: u32 name_len, name bytes, u32 layer_count,
//     per layer: u32 out_dim, u32 in_dim,
//                f64 weights (out*in, row-major), f64 biases (out)
// Activations are positional: every layer but the last of a section is ReLU,
// the last is Identity. See docs/formats.md.
inline constexpr char kCheckpointMagic[9] = "DSPCKPT1";

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void put_f64(std::ostream& os, double d) {
    const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw DataError("checkpoint truncated while reading " + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw DataError("checkpoint truncated while reading " + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace detail

using CheckpointSections = std::vector<std::pair<std::string, MlpParams>>;

inline void save_checkpoint(const std::filesystem::path& path,
                            const CheckpointSections& sections) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, net] : sections) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(net.layers.size()));
        for (const DenseLayer& layer : net.layers) {
            detail::put_u32(os, static_cast<std::uint32_t>(layer.out_dim));
            detail::put_u32(os, static_cast<std::uint32_t>(layer.in_dim));
            for (double w : layer.weight) detail::put_f64(os, w);
            for (double b : layer.bias) detail::put_f64(os, b);
        }
    }
    if (!os) throw DataError("write failed for checkpoint: " + path.string());
}

inline CheckpointSections load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw DataError("bad checkpoint magic in " + path.string());

    CheckpointSections sections;
    const std::uint32_t n_sections = detail::get_u32(is, "section count");
    for (std::uint32_t s = 0; s < n_sections; ++s) {
        const std::uint32_t name_len = detail::get_u32(is, "section name length");
        if (name_len > 1024) throw DataError("unreasonable section name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw DataError("checkpoint truncated while reading section name");
        const std::uint32_t n_layers = detail::get_u32(is, "layer count");
        MlpParams net;
        net.layers.resize(n_layers);
        for (std::uint32_t k = 0; k < n_layers; ++k) {
            DenseLayer& layer = net.layers[k];
            layer.out_dim = detail::get_u32(is, "out dim");
            layer.in_dim = detail::get_u32(is, "in dim");
            if (layer.out_dim == 0 || layer.in_dim == 0)
                throw DataError("checkpoint layer with zero dimension");
            layer.weight.resize(layer.out_dim * layer.in_dim);
            for (double& w : layer.weight) w = detail::get_f64(is, "weight");
            layer.bias.resize(layer.out_dim);
            for (double& b : layer.bias) b = detail::get_f64(is, "bias");
            layer.activation = (k + 1 == n_layers) ? Activation::Identity : Activation::ReLU;
        }
        sections.emplace_back(std::move(name), std::move(net));
    }
    return sections;
}

}  // namespace dsp
