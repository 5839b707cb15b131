#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "rotatelab/tensor.hpp"
#include "rotatelab/token_mask.hpp"

namespace rotatelab {

/// Logits of one direction over the whole vocabulary.
struct LogitVector {
    Vec values;
    std::optional<std::size_t> source_channel;
};

struct MomentSummary {
    double mean = 0.0;
    double std = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    std::size_t count = 0;
};

/// How masked entries enter the moment sums.
///  zero_fill: masked entries are replaced by 0 and all V entries count.
///  exclude:   masked entries are dropped.
enum class MomentMode { zero_fill, exclude };

const char* to_string(MomentMode mode);
MomentMode moment_mode_from_string(const std::string& s);

/// z[i] = dot(v, U.row(i)), accumulated in double.
LogitVector project_logits(std::span<const double> v, const Unembedding& unembedding);

/// Allocation-free variant used by the optimizer's inner loop.
void project_logits_into(std::span<const double> v, const Unembedding& unembedding,
                         std::span<double> out);

/// out += U^T g, i.e. out[j] += sum_i g[i] * U(i, j).
void accumulate_transpose(std::span<const double> g, const Unembedding& unembedding,
                          std::span<double> out);

/// Two-pass standardized moments. Throws DegenerateDistribution when the
/// included entries have zero spread and InputError when fewer than two
/// entries are included.
MomentSummary moments(std::span<const double> z, const TokenMask& mask, MomentMode mode);
MomentSummary moments(std::span<const double> z);

/// Standard cosine similarity. Throws ZeroVector when either input has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace rotatelab
