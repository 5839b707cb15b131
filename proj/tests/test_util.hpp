#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "rotatelab/tensor.hpp"

namespace testutil {

inline rotatelab::Unembedding gaussian_unembedding(std::size_t V, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    rotatelab::Matrix m(V, d);
    for (auto& x : m.data()) x = static_cast<float>(g(rng));
    return rotatelab::Unembedding(std::move(m));
}

inline rotatelab::Vec gaussian_vec(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    rotatelab::Vec v(d);
    for (auto& x : v) x = g(rng);
    return v;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("rotatelab_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Small instance with one heavy row so the kurtosis term is not clamped.
/// Frozen reference values in the tests were produced by autograd on exactly
/// this construction (float32-rounded U).
struct SinInstance {
    rotatelab::Unembedding U;
    rotatelab::Vec w, h1, h2;
};

inline SinInstance sin_instance() {
    const std::size_t d = 6, V = 10;
    rotatelab::Matrix m(V, d);
    for (std::size_t i = 0; i < V; ++i)
        for (std::size_t j = 0; j < d; ++j)
            m(i, j) = static_cast<float>(std::sin(0.7 * i + 1.3 * j + 0.1));
    for (std::size_t j = 0; j < d; ++j) m(5, j) = static_cast<float>(3.0 * std::cos(0.5 * j + 0.2));
    SinInstance s{rotatelab::Unembedding(std::move(m)), {}, {}, {}};
    for (std::size_t j = 0; j < d; ++j) {
        s.w.push_back(std::cos(0.5 * j + 0.2) + 0.1 * j);
        s.h1.push_back(std::sin(1.1 * j + 0.4) + 0.05);
        s.h2.push_back(std::cos(0.9 * j) + 0.2);
    }
    return s;
}

}  // namespace testutil
