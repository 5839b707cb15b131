#include "rotatelab/linstats.hpp"

#include <cmath>
#include <string>

#include "rotatelab/errors.hpp"

namespace rotatelab {

const char* to_string(MomentMode mode) {
    return mode == MomentMode::zero_fill ? "zero_fill" : "exclude";
}

MomentMode moment_mode_from_string(const std::string& s) {
    if (s == "zero_fill") return MomentMode::zero_fill;
    if (s == "exclude") return MomentMode::exclude;
    throw InputError("unknown moment mode '" + s + "' (expected zero_fill | exclude)");
}

namespace {

void check_dim(std::size_t got, const Unembedding& u) {
    if (got != u.dim()) {
        throw InputError("dimension mismatch: vector has d = " + std::to_string(got) +
                         ", unembedding has d = " + std::to_string(u.dim()));
    }
}

// Fixed association order: four interleaved partial sums combined at the end.
double row_dot(std::span<const float> row, std::span<const double> v) {
    const std::size_t n = v.size();
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        a0 += static_cast<double>(row[j]) * v[j];
        a1 += static_cast<double>(row[j + 1]) * v[j + 1];
        a2 += static_cast<double>(row[j + 2]) * v[j + 2];
        a3 += static_cast<double>(row[j + 3]) * v[j + 3];
    }
    for (; j < n; ++j) a0 += static_cast<double>(row[j]) * v[j];
    return (a0 + a1) + (a2 + a3);
}

}  // namespace

void project_logits_into(std::span<const double> v, const Unembedding& unembedding,
                         std::span<double> out) {
    check_dim(v.size(), unembedding);
    if (out.size() != unembedding.vocab_size())
        throw InputError("logit buffer size does not match vocabulary size");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = row_dot(unembedding.row(i), v);
}

LogitVector project_logits(std::span<const double> v, const Unembedding& unembedding) {
    LogitVector z;
    z.values.resize(unembedding.vocab_size());
    project_logits_into(v, unembedding, z.values);
    return z;
}

void accumulate_transpose(std::span<const double> g, const Unembedding& unembedding,
                          std::span<double> out) {
    check_dim(out.size(), unembedding);
    if (g.size() != unembedding.vocab_size())
        throw InputError("gradient size does not match vocabulary size");
    const std::size_t d = out.size();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        auto row = unembedding.row(i);
        for (std::size_t j = 0; j < d; ++j) out[j] += gi * static_cast<double>(row[j]);
    }
}

MomentSummary moments(std::span<const double> z, const TokenMask& mask, MomentMode mode) {
    if (mask.size() != z.size()) {
        throw InputError("mask covers " + std::to_string(mask.size()) +
                         " tokens, logit vector has " + std::to_string(z.size()));
    }
    const bool exclude = mode == MomentMode::exclude;
    auto value = [&](std::size_t i) { return mask.admissible(i) ? z[i] : 0.0; };

    std::size_t count = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (exclude && !mask.admissible(i)) continue;
        sum += value(i);
        ++count;
    }
    if (count < 2) {
        throw InputError("moments need at least 2 included entries, got " + std::to_string(count));
    }
    const double n = static_cast<double>(count);
    const double mu = sum / n;

    double s2 = 0.0, s3 = 0.0, s4 = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (exclude && !mask.admissible(i)) continue;
        const double c = value(i) - mu;
        const double c2 = c * c;
        s2 += c2;
        s3 += c2 * c;
        s4 += c2 * c2;
    }
    const double m2 = s2 / n;
    if (!(m2 > 0.0)) throw DegenerateDistribution(mu);

    MomentSummary out;
    out.mean = mu;
    out.std = std::sqrt(m2);
    out.skewness = (s3 / n) / (m2 * out.std);
    out.excess_kurtosis = (s4 / n) / (m2 * m2) - 3.0;
    out.count = count;
    return out;
}

MomentSummary moments(std::span<const double> z) {
    return moments(z, TokenMask(z.size()), MomentMode::zero_fill);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw ZeroVector("cosine of a zero-norm vector");
    double c = dot(a, b) / (na * nb);
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

}  // namespace rotatelab
