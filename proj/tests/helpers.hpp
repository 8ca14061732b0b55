#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dsp/rng.hpp"

namespace testutil {

// Scripted random source; each channel cycles through its list.
class StubRandom : public dsp::RandomSource {
public:
    std::vector<double> normals{0.0};
    std::vector<double> uniforms{0.0};
    std::vector<int> ints{1};

    std::uint64_t next_u64() override { return dsp::splitmix64(counter_++); }
    double normal() override { return normals[n_++ % normals.size()]; }
    double uniform01() override { return uniforms[u_++ % uniforms.size()]; }
    int uniform_int(int lo, int hi) override {
        return std::clamp(ints[i_++ % ints.size()], lo, hi);
    }
    void reset() { n_ = u_ = i_ = 0; counter_ = 0; }

private:
    std::size_t n_ = 0, u_ = 0, i_ = 0;
    std::uint64_t counter_ = 0;
};

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        std::random_device rd;
        const auto tag = std::to_string(rd()) + "_" + std::to_string(rd());
        path = std::filesystem::temp_directory_path() / ("dsp_test_" + tag);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline bool close_rel(double a, double b, double rtol, double floor = 1e-7) {
    const double diff = std::abs(a - b);
    return diff <= floor || diff <= rtol * std::max(std::abs(a), std::abs(b));
}

}  // namespace testutil
