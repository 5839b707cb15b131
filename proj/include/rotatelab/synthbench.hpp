#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rotatelab/channels.hpp"
#include "rotatelab/rotate.hpp"
#include "rotatelab/tensor.hpp"

namespace rotatelab {

struct PlantConfig {
    std::size_t d = 64;
    std::size_t V = 512;
    std::size_t K = 3;
    std::size_t sparsity = 8;
    double noise_level = 0.05;  // noise norm relative to the noiseless mixture
    std::uint64_t seed = 0;
    double jitter = 0.1;        // per-row perturbation of the support rows
    double overlap = 0.0;       // pairwise cosine between planted directions, in [0, 1)
    int whiten_passes = 20;     // 0 keeps the background i.i.d. Gaussian
    std::vector<double> coefficients;  // empty: seeded default in [0.5, 1.5]

    void validate() const;
};

struct PlantedNeuron {
    Vec w;
    std::vector<Vec> directions;  // unit norm, pairwise cosine = overlap
    Vec coefficients;
    Vec noise;                    // w = sum_k coefficients[k] directions[k] + noise
    std::vector<std::vector<TokenId>> token_supports;  // ascending, pairwise disjoint
    std::uint64_t seed = 0;
};

struct PlantedInstance {
    PlantedNeuron neuron;
    Unembedding unembedding;
};

/// Synthetic unembedding with K planted sparse directions and the neuron
/// mixing them. Deterministic per config.
PlantedInstance plant(const PlantConfig& config);

struct DirectionRecovery {
    std::size_t direction = 0;
    std::size_t channel = 0;       // best channel by |cosine|
    double abs_cosine = 0.0;
    double support_jaccard = 0.0;  // channel's top-|support| tokens vs. the support
};

/// Per planted direction, the best matching channel. The channel's tokens are
/// taken on the side of its sign relative to the direction.
std::vector<DirectionRecovery> recovery_score(std::span<const Vec> channels,
                                              const PlantedNeuron& planted,
                                              const Unembedding& unembedding);

struct SeedPairReport {
    std::size_t a = 0;
    std::size_t b = 0;
    MatchReport report;
};

struct ConsistencyReport {
    std::vector<std::uint64_t> seeds;
    std::vector<Decomposition> runs;
    std::vector<SeedPairReport> pairs;  // every a < b
    double mean_cosine = 0.0;           // over all matched pairs of all seed pairs
    double mean_jaccard = 0.0;
};

/// Decompose w once per seed and match every pair of runs.
ConsistencyReport consistency_experiment(const WeightVector& w, const Unembedding& unembedding,
                                         const RotateConfig& config,
                                         std::span<const std::uint64_t> seeds,
                                         std::span<const TokenId> glitch_ids,
                                         std::size_t topk = 20, std::size_t parallelism = 1);

double harmonic_mean(double a, double b);

struct SweepPoint {
    double lambda = 0.3;
    double eta = 2e-3;
    double k_sigma = 4.0;

    friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

struct SweepGrid {
    std::vector<double> lambdas{0.1, 0.3, 0.5};
    std::vector<double> etas{8e-4, 2e-3};
    std::vector<double> k_sigmas{4.0, 6.0, 8.0};

    /// Cartesian product, lambda outermost then eta then k_sigma.
    std::vector<SweepPoint> points() const;
};

struct SweepResult {
    SweepPoint point;
    double explained_norm = 0.0;
    double orthogonality = 0.0;
    double harmonic_mean = 0.0;
    std::size_t neurons = 0;  // neurons that contributed to the means
};

struct SweepFailure {
    SweepPoint point;
    std::string message;
};

struct SweepReport {
    std::vector<SweepResult> ranked;  // harmonic mean descending
    std::vector<SweepFailure> failures;
};

/// Stable sort by harmonic mean descending; equal scores keep input order.
std::vector<SweepResult> rank_sweep(std::vector<SweepResult> results);

/// The base config used when a sweep is not given one: defaults with a
/// reduced step budget.
RotateConfig default_sweep_config();

SweepReport sweep(std::span<const WeightVector> neurons, const Unembedding& unembedding,
                  const SweepGrid& grid, const RotateConfig& base,
                  std::span<const TokenId> glitch_ids, std::size_t parallelism = 1);

}  // namespace rotatelab
