#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rotatelab/channels.hpp"
#include "rotatelab/householder.hpp"
#include "rotatelab/linstats.hpp"
#include "rotatelab/tensor.hpp"
#include "rotatelab/token_mask.hpp"

namespace rotatelab {

/// What happens to the search space after a channel is found.
enum class Depletion { masking, subtraction, none };

const char* to_string(Depletion d);
Depletion depletion_from_string(const std::string& s);

struct RotateConfig {
    double lambda = 0.3;
    double eta = 2e-3;
    double k_sigma = 4.0;
    std::int64_t n_iter = 50;
    std::int64_t n_step = 3000;
    std::optional<double> tau;  // kurtosis stop threshold, disabled by default
    double eps_conv = 1e-6;
    std::uint64_t seed = 0;
    MomentMode moment_mode = MomentMode::zero_fill;
    Depletion depletion = Depletion::masking;
    int reflections = 1;         // 2 composes two Householder reflections
    std::size_t top_k = 50;      // tokens kept per channel list
    ResidualMode residual_mode = ResidualMode::sequential;

    /// Throws InputError when an invariant is violated.
    void validate() const;
    ChannelOptions channel_options() const;

    friend bool operator==(const RotateConfig&, const RotateConfig&) = default;
};

struct NeuronId {
    std::int64_t layer = -1;
    std::string role;  // gate | in | out | synthetic
    std::int64_t index = 0;

    std::string str() const;
    friend bool operator==(const NeuronId&, const NeuronId&) = default;
};

struct WeightVector {
    NeuronId id;
    Vec values;
};

struct ReconstructionPoint {
    double explained_norm = 0.0;  // cumulative after this channel
    double cosine = 0.0;          // cosine of this channel with w
};

struct SkippedChannel {
    std::int64_t iteration = 0;
    std::string reason;
};

struct Decomposition {
    NeuronId neuron;
    std::vector<Channel> channels;  // discovery order
    TokenMask final_mask;
    std::vector<ReconstructionPoint> trace;
    RotateConfig config;
    std::vector<double> seconds_per_iteration;  // not serialized
    std::vector<SkippedChannel> skipped;
};

/// All tokens admissible except the glitch ids. Duplicates count once.
TokenMask init_mask(const Unembedding& unembedding, std::span<const TokenId> glitch_ids);
TokenMask init_mask(std::size_t vocab_size, std::span<const TokenId> glitch_ids);

/// Masks every admissible token whose logit is more than k_sigma standard
/// deviations from the mean of the admissible logits. Returns a new mask.
TokenMask update_mask(const LogitVector& z, const TokenMask& mask, double k_sigma,
                      std::int32_t channel_index);

/// Seed for one channel optimization, independent of batch order.
std::uint64_t derive_seed(std::uint64_t base, const NeuronId& neuron, std::int64_t iteration,
                          int attempt);

/// Iterative channel discovery on a single weight vector.
Decomposition decompose(const WeightVector& w, const Unembedding& unembedding,
                        const RotateConfig& config, std::span<const TokenId> glitch_ids);

struct BatchFailure {
    std::size_t position = 0;
    NeuronId neuron;
    std::string message;
};

struct BatchResult {
    std::vector<std::optional<Decomposition>> decompositions;  // input order
    std::vector<BatchFailure> failures;
};

/// decompose() over many neurons on up to `parallelism` threads. Results are
/// identical to running decompose() sequentially.
BatchResult decompose_batch(std::span<const WeightVector> neurons,
                            const Unembedding& unembedding, const RotateConfig& config,
                            std::span<const TokenId> glitch_ids, std::size_t parallelism);

}  // namespace rotatelab
