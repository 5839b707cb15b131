#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rotatelab/householder.hpp"
#include "rotatelab/tensor.hpp"
#include "rotatelab/token_mask.hpp"

namespace rotatelab {

struct TokenScore {
    TokenId id = 0;
    std::string token;
    double logit = 0.0;

    friend bool operator==(const TokenScore&, const TokenScore&) = default;
};

struct TokenLists {
    std::vector<TokenScore> top;     // logit descending
    std::vector<TokenScore> bottom;  // logit ascending
};

/// One discovered direction v = R w. |v| = |w| by construction.
struct Channel {
    Vec v;
    std::vector<Vec> normals;  // Householder normal(s) that produced v
    std::int64_t iteration = 0;
    double masked_excess_kurtosis = 0.0;
    double skewness = 0.0;
    double cosine_with_w = 0.0;
    std::int64_t steps = 0;
    Termination termination = Termination::max_steps;
    double final_loss = 0.0;
    std::vector<TokenScore> top_tokens;
    std::vector<TokenScore> bottom_tokens;
};

/// The k largest and k smallest logits of v over admissible tokens. Ties are
/// broken by ascending token id. Lists are truncated when fewer than k tokens
/// are admissible.
TokenLists top_tokens(std::span<const double> v, const Unembedding& unembedding, std::size_t k,
                      const TokenMask* mask = nullptr);

/// Same selection over a precomputed logit vector.
TokenLists top_tokens_from_logits(std::span<const double> z, const Unembedding& unembedding,
                                  std::size_t k, const TokenMask* mask = nullptr);

/// How the residual of w against a channel list is accumulated.
///  sequential:     r_t = r_{t-1} - (r_{t-1} . v^_t) v^_t  (never increases |r|)
///  projection_sum: r_t = w - sum_i (w . v^_i) v^_i        (literal sum; can overshoot
///                  when channels are correlated)
enum class ResidualMode { sequential, projection_sum };

const char* to_string(ResidualMode mode);
ResidualMode residual_mode_from_string(const std::string& s);

/// 1 - |r_t| / |w| with unit-normalized channels.
double explained_norm(std::span<const double> w, std::span<const Vec> channels,
                      ResidualMode mode = ResidualMode::sequential);

/// explained_norm after each prefix of `channels`; entry t-1 covers channels[0..t).
std::vector<double> explained_norm_curve(std::span<const double> w,
                                         std::span<const Vec> channels,
                                         ResidualMode mode = ResidualMode::sequential);

double per_channel_cosine(std::span<const double> w, const Channel& channel);

enum class AblationMode { unit, paper_raw };

const char* to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& s);

/// unit:      w - (w . v^) v^
/// paper_raw: w - (w . v) v
Vec ablate(std::span<const double> w, std::span<const double> v,
           AblationMode mode = AblationMode::unit);

/// argmax_i dot(x, channels[i]); the lowest index wins ties.
std::size_t top_channel(std::span<const double> x, std::span<const Vec> channels);

struct MatchPair {
    std::size_t a = 0;
    std::size_t b = 0;
    double cosine = 0.0;
    double topk_jaccard = 0.0;
};

struct MatchReport {
    std::vector<MatchPair> pairs;
    double mean_cosine = 0.0;
    double mean_jaccard = 0.0;
    std::vector<std::size_t> unmatched_a;
    std::vector<std::size_t> unmatched_b;
};

/// Greedy one-to-one matching: all cross pairs sorted by cosine descending,
/// a pair is accepted when both endpoints are still free.
MatchReport match_channels(std::span<const Channel> a, std::span<const Channel> b,
                           std::size_t topk);

/// Jaccard similarity of the first k top-token ids of two channels.
double topk_jaccard(const Channel& a, const Channel& b, std::size_t k);

/// 1 - mean over ordered distinct pairs of |cos(v_i, v_j)|. Needs >= 2 channels.
double orthogonality_score(std::span<const Vec> channels);

std::vector<Vec> directions(std::span<const Channel> channels);

/// Linear-interpolation percentile of an ascending-sorted sample, q in [0, 100].
double percentile(std::span<const double> sorted, double q);

/// Percentage of the sample strictly below x plus half of the ties.
double percentile_rank(std::span<const double> sorted, double x);

struct SurveySummary {
    std::size_t count = 0;    // rows with a defined kurtosis
    std::size_t missing = 0;  // degenerate rows
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double p90 = 0.0;
    double p95 = 0.0;
};

struct SurveyResult {
    std::vector<std::optional<double>> kurtosis;  // per row; nullopt when degenerate
    SurveySummary summary;
    std::vector<double> sorted;  // defined values, ascending

    double percentile(double q) const;
    double percentile_rank(double x) const;
};

/// Excess kurtosis of each row's masked vocabulary projection.
SurveyResult layer_kurtosis_survey(const Matrix& rows, const Unembedding& unembedding,
                                   const TokenMask& mask,
                                   MomentMode mode = MomentMode::exclude);

}  // namespace rotatelab
