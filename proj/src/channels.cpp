#include "rotatelab/channels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "rotatelab/errors.hpp"
#include "rotatelab/linstats.hpp"

namespace rotatelab {

TokenLists top_tokens_from_logits(std::span<const double> z, const Unembedding& unembedding,
                                  std::size_t k, const TokenMask* mask) {
    if (k == 0) throw InputError("top_tokens: k must be >= 1");
    if (mask && mask->size() != z.size())
        throw InputError("top_tokens: mask size does not match vocabulary");
    std::vector<std::size_t> ids;
    ids.reserve(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        if (!mask || mask->admissible(i)) ids.push_back(i);
    const std::size_t n = std::min(k, ids.size());

    auto make = [&](std::span<const std::size_t> chosen) {
        std::vector<TokenScore> out;
        out.reserve(chosen.size());
        for (auto i : chosen) {
            const auto id = static_cast<TokenId>(i);
            out.push_back({id, unembedding.has_tokens() ? unembedding.token(id) : std::string{},
                           z[i]});
        }
        return out;
    };

    TokenLists lists;
    std::vector<std::size_t> work = ids;
    std::partial_sort(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(n), work.end(),
                      [&](std::size_t a, std::size_t b) {
                          return z[a] > z[b] || (z[a] == z[b] && a < b);
                      });
    lists.top = make(std::span(work).first(n));
    work = ids;
    std::partial_sort(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(n), work.end(),
                      [&](std::size_t a, std::size_t b) {
                          return z[a] < z[b] || (z[a] == z[b] && a < b);
                      });
    lists.bottom = make(std::span(work).first(n));
    return lists;
}

TokenLists top_tokens(std::span<const double> v, const Unembedding& unembedding, std::size_t k,
                      const TokenMask* mask) {
    const auto z = project_logits(v, unembedding);
    return top_tokens_from_logits(z.values, unembedding, k, mask);
}

const char* to_string(ResidualMode mode) {
    return mode == ResidualMode::sequential ? "sequential" : "projection_sum";
}

ResidualMode residual_mode_from_string(const std::string& s) {
    if (s == "sequential") return ResidualMode::sequential;
    if (s == "projection_sum") return ResidualMode::projection_sum;
    throw InputError("unknown residual mode '" + s + "' (expected sequential | projection_sum)");
}

std::vector<double> explained_norm_curve(std::span<const double> w,
                                         std::span<const Vec> channels, ResidualMode mode) {
    const double nw = norm(w);
    if (nw == 0.0) throw ZeroVector("explained_norm: weight vector");
    Vec r(w.begin(), w.end());
    std::vector<double> curve;
    curve.reserve(channels.size());
    for (const auto& c : channels) {
        const Vec u = normalized(c);
        const double coef = mode == ResidualMode::sequential ? dot(r, u) : dot(w, u);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] -= coef * u[j];
        curve.push_back(1.0 - norm(r) / nw);
    }
    return curve;
}

double explained_norm(std::span<const double> w, std::span<const Vec> channels,
                      ResidualMode mode) {
    if (channels.empty()) {
        if (norm(w) == 0.0) throw ZeroVector("explained_norm: weight vector");
        return 0.0;
    }
    return explained_norm_curve(w, channels, mode).back();
}

double per_channel_cosine(std::span<const double> w, const Channel& channel) {
    return cosine(w, channel.v);
}

const char* to_string(AblationMode mode) {
    return mode == AblationMode::unit ? "unit" : "paper_raw";
}

AblationMode ablation_mode_from_string(const std::string& s) {
    if (s == "unit") return AblationMode::unit;
    if (s == "paper_raw") return AblationMode::paper_raw;
    throw InputError("unknown ablation mode '" + s + "' (expected unit | paper_raw)");
}

Vec ablate(std::span<const double> w, std::span<const double> v, AblationMode mode) {
    const double nv = norm(v);
    if (nv == 0.0) throw ZeroVector("ablate: channel direction");
    const double scale = mode == AblationMode::unit ? dot(w, v) / (nv * nv) : dot(w, v);
    Vec out(w.begin(), w.end());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] -= scale * v[j];
    return out;
}

std::size_t top_channel(std::span<const double> x, std::span<const Vec> channels) {
    if (channels.empty()) throw EmptySet("top_channel: no channels");
    std::size_t best = 0;
    double best_dot = dot(x, channels[0]);
    for (std::size_t i = 1; i < channels.size(); ++i) {
        const double d = dot(x, channels[i]);
        if (d > best_dot) {
            best = i;
            best_dot = d;
        }
    }
    return best;
}

double topk_jaccard(const Channel& a, const Channel& b, std::size_t k) {
    std::set<TokenId> sa, sb;
    for (std::size_t i = 0; i < std::min(k, a.top_tokens.size()); ++i) sa.insert(a.top_tokens[i].id);
    for (std::size_t i = 0; i < std::min(k, b.top_tokens.size()); ++i) sb.insert(b.top_tokens[i].id);
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (auto id : sa) inter += sb.count(id);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

MatchReport match_channels(std::span<const Channel> a, std::span<const Channel> b,
                           std::size_t topk) {
    if (a.empty() || b.empty()) throw EmptySet("match_channels: both channel sets must be nonempty");
    std::vector<std::tuple<double, std::size_t, std::size_t>> cands;
    cands.reserve(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) cands.emplace_back(cosine(a[i].v, b[j].v), i, j);
    std::stable_sort(cands.begin(), cands.end(), [](const auto& x, const auto& y) {
        return std::get<0>(x) > std::get<0>(y);
    });

    std::vector<bool> used_a(a.size(), false), used_b(b.size(), false);
    MatchReport report;
    for (const auto& [c, i, j] : cands) {
        if (used_a[i] || used_b[j]) continue;
        used_a[i] = used_b[j] = true;
        report.pairs.push_back({i, j, c, topk_jaccard(a[i], b[j], topk)});
    }
    double sc = 0.0, sj = 0.0;
    for (const auto& p : report.pairs) {
        sc += p.cosine;
        sj += p.topk_jaccard;
    }
    report.mean_cosine = sc / static_cast<double>(report.pairs.size());
    report.mean_jaccard = sj / static_cast<double>(report.pairs.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!used_a[i]) report.unmatched_a.push_back(i);
    for (std::size_t j = 0; j < b.size(); ++j)
        if (!used_b[j]) report.unmatched_b.push_back(j);
    return report;
}

double orthogonality_score(std::span<const Vec> channels) {
    const std::size_t n = channels.size();
    if (n < 2) throw Undefined("orthogonality_score needs at least 2 channels");
    std::vector<Vec> units;
    units.reserve(n);
    for (const auto& c : channels) units.push_back(normalized(c));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) sum += 2.0 * std::min(1.0, std::abs(dot(units[i], units[j])));
    return 1.0 - sum / static_cast<double>(n * (n - 1));
}

std::vector<Vec> directions(std::span<const Channel> channels) {
    std::vector<Vec> out;
    out.reserve(channels.size());
    for (const auto& c : channels) out.push_back(c.v);
    return out;
}

double percentile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw EmptySet("percentile of an empty sample");
    if (q <= 0.0) return sorted.front();
    if (q >= 100.0) return sorted.back();
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double percentile_rank(std::span<const double> sorted, double x) {
    if (sorted.empty()) throw EmptySet("percentile rank against an empty sample");
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x);
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), x);
    const double below = static_cast<double>(lo - sorted.begin());
    const double ties = static_cast<double>(hi - lo);
    return 100.0 * (below + 0.5 * ties) / static_cast<double>(sorted.size());
}

double SurveyResult::percentile(double q) const { return rotatelab::percentile(sorted, q); }

double SurveyResult::percentile_rank(double x) const {
    return rotatelab::percentile_rank(sorted, x);
}

SurveyResult layer_kurtosis_survey(const Matrix& rows, const Unembedding& unembedding,
                                   const TokenMask& mask, MomentMode mode) {
    if (rows.cols() != unembedding.dim()) {
        throw InputError("survey: weight rows have d = " + std::to_string(rows.cols()) +
                         ", unembedding has d = " + std::to_string(unembedding.dim()));
    }
    SurveyResult result;
    result.kurtosis.reserve(rows.rows());
    Vec z(unembedding.vocab_size());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const Vec w = rows.row_vec(i);
        project_logits_into(w, unembedding, z);
        try {
            const auto m = moments(z, mask, mode);
            result.kurtosis.emplace_back(m.excess_kurtosis);
            result.sorted.push_back(m.excess_kurtosis);
        } catch (const DegenerateDistribution&) {
            result.kurtosis.emplace_back(std::nullopt);
            ++result.summary.missing;
        }
    }
    std::sort(result.sorted.begin(), result.sorted.end());
    auto& s = result.summary;
    s.count = result.sorted.size();
    if (s.count > 0) {
        s.q1 = result.percentile(25.0);
        s.median = result.percentile(50.0);
        s.q3 = result.percentile(75.0);
        s.p90 = result.percentile(90.0);
        s.p95 = result.percentile(95.0);
    }
    return result;
}

}  // namespace rotatelab
