#include "rotatelab/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "parallel.hpp"
#include "rotatelab/errors.hpp"
#include "rotatelab/linstats.hpp"

namespace rotatelab {

void PlantConfig::validate() const {
    auto fail = [](const std::string& m) { throw InputError("infeasible plant: " + m); };
    if (K < 1) fail("K must be >= 1");
    if (sparsity < 1) fail("sparsity must be >= 1");
    if (d < K) fail("d = " + std::to_string(d) + " < K = " + std::to_string(K));
    if (K * sparsity > V) {
        fail("K * sparsity = " + std::to_string(K * sparsity) + " exceeds V = " + std::to_string(V));
    }
    if (whiten_passes > 0 && V - K * sparsity < d)
        fail("whitening needs at least d background rows");
    if (!(noise_level >= 0.0)) fail("noise_level must be >= 0");
    if (!(jitter >= 0.0)) fail("jitter must be >= 0");
    if (!(overlap >= 0.0 && overlap < 1.0)) fail("overlap must be in [0, 1)");
    if (overlap > 0.0 && d < K + 1) fail("overlap needs d >= K + 1");
    if (!coefficients.empty() && coefficients.size() != K)
        fail("expected " + std::to_string(K) + " coefficients, got " +
             std::to_string(coefficients.size()));
}

namespace {

using Mat = Eigen::MatrixXd;

void normalize_rows(Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (n > 0.0) m.row(i) /= n;
    }
}

// Alternating row normalization and whitening pushes the rows toward a tight
// frame, so no direction of R^d is favoured by the background tokens.
void whiten_rows(Mat& b, int passes) {
    const auto d = static_cast<double>(b.cols());
    for (int p = 0; p < passes; ++p) {
        normalize_rows(b);
        const Mat c = b.transpose() * b * (d / static_cast<double>(b.rows()));
        Eigen::SelfAdjointEigenSolver<Mat> eig(c);
        const Mat inv_sqrt = eig.eigenvectors() *
                             eig.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                             eig.eigenvectors().transpose();
        b = b * inv_sqrt;
    }
    normalize_rows(b);
}

}  // namespace

PlantedInstance plant(const PlantConfig& config) {
    config.validate();
    const std::size_t d = config.d, V = config.V, K = config.K, s = config.sparsity;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const std::size_t basis = config.overlap > 0.0 ? K + 1 : K;
    Mat g(d, basis);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < basis; ++k) g(i, k) = gauss(rng);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(d, basis);
    if (config.overlap > 0.0) {
        // d_k = sqrt(1 - rho) q_k + sqrt(rho) q_K gives unit vectors with d_j . d_k = rho.
        const Eigen::VectorXd shared = q.col(static_cast<Eigen::Index>(K));
        q = q.leftCols(static_cast<Eigen::Index>(K)) * std::sqrt(1.0 - config.overlap) +
            shared * Eigen::RowVectorXd::Constant(static_cast<Eigen::Index>(K), std::sqrt(config.overlap));
    }

    PlantedInstance out;
    PlantedNeuron& p = out.neuron;
    p.seed = config.seed;
    for (std::size_t k = 0; k < K; ++k) {
        Vec dir(d);
        for (std::size_t i = 0; i < d; ++i) dir[i] = q(i, k);
        p.directions.push_back(normalized(dir));
    }

    std::vector<TokenId> perm(V);
    std::iota(perm.begin(), perm.end(), TokenId{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> owner(V, -1);
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<TokenId> support(perm.begin() + static_cast<std::ptrdiff_t>(k * s),
                                     perm.begin() + static_cast<std::ptrdiff_t>((k + 1) * s));
        std::sort(support.begin(), support.end());
        for (auto id : support) owner[static_cast<std::size_t>(id)] = static_cast<int>(k);
        p.token_supports.push_back(std::move(support));
    }

    std::vector<std::size_t> background;
    for (std::size_t i = 0; i < V; ++i)
        if (owner[i] < 0) background.push_back(i);
    Mat b(static_cast<Eigen::Index>(background.size()), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < b.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) = gauss(rng);
    whiten_rows(b, config.whiten_passes);

    Matrix u(V, d);
    std::vector<std::string> tokens(V);
    for (std::size_t r = 0; r < background.size(); ++r) {
        const std::size_t i = background[r];
        for (std::size_t j = 0; j < d; ++j) u(i, j) = static_cast<float>(b(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)));
        tokens[i] = "t" + std::to_string(i);
    }
    const double jitter_scale = config.jitter / std::sqrt(static_cast<double>(d));
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t n = 0; n < s; ++n) {
            const auto i = static_cast<std::size_t>(p.token_supports[k][n]);
            Vec row = p.directions[k];
            for (auto& x : row) x += jitter_scale * gauss(rng);
            row = normalized(row);
            for (std::size_t j = 0; j < d; ++j) u(i, j) = static_cast<float>(row[j]);
            tokens[i] = "d" + std::to_string(k) + "_" + std::to_string(n);
        }
    }

    if (config.coefficients.empty()) {
        std::uniform_real_distribution<double> coef(0.5, 1.5);
        for (std::size_t k = 0; k < K; ++k) p.coefficients.push_back(coef(rng));
    } else {
        p.coefficients = config.coefficients;
    }

    Vec signal(d, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < d; ++j) signal[j] += p.coefficients[k] * p.directions[k][j];
    const double noise_scale =
        config.noise_level * norm(signal) / std::sqrt(static_cast<double>(d));
    p.noise.resize(d);
    for (auto& x : p.noise) x = noise_scale * gauss(rng);
    p.w = signal;
    for (std::size_t j = 0; j < d; ++j) p.w[j] += p.noise[j];

    out.unembedding = Unembedding(std::move(u), std::move(tokens));
    return out;
}

std::vector<DirectionRecovery> recovery_score(std::span<const Vec> channels,
                                              const PlantedNeuron& planted,
                                              const Unembedding& unembedding) {
    if (channels.empty()) throw EmptySet("recovery_score: no channels");
    if (planted.directions.empty()) throw EmptySet("recovery_score: no planted directions");
    std::vector<DirectionRecovery> out;
    for (std::size_t k = 0; k < planted.directions.size(); ++k) {
        DirectionRecovery r;
        r.direction = k;
        double signed_best = 0.0;
        for (std::size_t c = 0; c < channels.size(); ++c) {
            const double cs = cosine(channels[c], planted.directions[k]);
            if (c == 0 || std::abs(cs) > r.abs_cosine) {
                r.channel = c;
                r.abs_cosine = std::abs(cs);
                signed_best = cs;
            }
        }
        const auto& support = planted.token_supports[k];
        Vec oriented = channels[r.channel];
        if (signed_best < 0.0)
            for (auto& x : oriented) x = -x;
        const auto lists = top_tokens(oriented, unembedding, std::max<std::size_t>(1, support.size()));
        std::set<TokenId> mine, theirs(support.begin(), support.end());
        for (const auto& t : lists.top) mine.insert(t.id);
        std::size_t inter = 0;
        for (auto id : mine) inter += theirs.count(id);
        const std::size_t uni = mine.size() + theirs.size() - inter;
        r.support_jaccard = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        out.push_back(r);
    }
    return out;
}

ConsistencyReport consistency_experiment(const WeightVector& w, const Unembedding& unembedding,
                                         const RotateConfig& config,
                                         std::span<const std::uint64_t> seeds,
                                         std::span<const TokenId> glitch_ids, std::size_t topk,
                                         std::size_t parallelism) {
    if (seeds.size() < 2) throw InputError("consistency_experiment needs at least 2 seeds");
    config.validate();
    ConsistencyReport report;
    report.seeds.assign(seeds.begin(), seeds.end());

    std::vector<std::optional<Decomposition>> runs(seeds.size());
    std::vector<std::string> errors(seeds.size());
    detail::parallel_for(seeds.size(), parallelism, [&](std::size_t i) {
        RotateConfig c = config;
        c.seed = seeds[i];
        try {
            runs[i] = decompose(w, unembedding, c, glitch_ids);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (!runs[i]) throw Error("seed " + std::to_string(seeds[i]) + ": " + errors[i]);
        report.runs.push_back(std::move(*runs[i]));
    }

    double sc = 0.0, sj = 0.0;
    std::size_t n = 0;
    for (std::size_t a = 0; a < report.runs.size(); ++a) {
        for (std::size_t b = a + 1; b < report.runs.size(); ++b) {
            auto m = match_channels(report.runs[a].channels, report.runs[b].channels, topk);
            for (const auto& p : m.pairs) {
                sc += p.cosine;
                sj += p.topk_jaccard;
                ++n;
            }
            report.pairs.push_back({a, b, std::move(m)});
        }
    }
    report.mean_cosine = sc / static_cast<double>(n);
    report.mean_jaccard = sj / static_cast<double>(n);
    return report;
}

double harmonic_mean(double a, double b) {
    if (a + b == 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

std::vector<SweepPoint> SweepGrid::points() const {
    std::vector<SweepPoint> out;
    for (double l : lambdas)
        for (double e : etas)
            for (double k : k_sigmas) out.push_back({l, e, k});
    return out;
}

std::vector<SweepResult> rank_sweep(std::vector<SweepResult> results) {
    std::stable_sort(results.begin(), results.end(), [](const SweepResult& a, const SweepResult& b) {
        return a.harmonic_mean > b.harmonic_mean;
    });
    return results;
}

RotateConfig default_sweep_config() {
    RotateConfig c;
    c.n_step = 500;
    return c;
}

SweepReport sweep(std::span<const WeightVector> neurons, const Unembedding& unembedding,
                  const SweepGrid& grid, const RotateConfig& base,
                  std::span<const TokenId> glitch_ids, std::size_t parallelism) {
    const auto points = grid.points();
    if (points.empty()) throw InputError("sweep: empty grid");
    if (neurons.empty()) throw InputError("sweep: no neurons");

    SweepReport report;
    std::vector<SweepResult> results;
    for (const auto& pt : points) {
        RotateConfig c = base;
        c.lambda = pt.lambda;
        c.eta = pt.eta;
        c.k_sigma = pt.k_sigma;
        try {
            c.validate();
            const auto batch = decompose_batch(neurons, unembedding, c, glitch_ids, parallelism);
            if (!batch.failures.empty()) {
                const auto& f = batch.failures.front();
                report.failures.push_back({pt, f.neuron.str() + ": " + f.message});
                continue;
            }
            SweepResult r;
            r.point = pt;
            double en = 0.0, orth = 0.0;
            for (std::size_t i = 0; i < neurons.size(); ++i) {
                const auto& dec = *batch.decompositions[i];
                if (dec.channels.size() < 2) continue;
                en += dec.trace.back().explained_norm;
                orth += orthogonality_score(directions(dec.channels));
                ++r.neurons;
            }
            if (r.neurons == 0) {
                report.failures.push_back({pt, "no neuron produced at least 2 channels"});
                continue;
            }
            r.explained_norm = en / static_cast<double>(r.neurons);
            r.orthogonality = orth / static_cast<double>(r.neurons);
            r.harmonic_mean = harmonic_mean(r.explained_norm, r.orthogonality);
            results.push_back(r);
        } catch (const std::exception& e) {
            report.failures.push_back({pt, e.what()});
        }
    }
    report.ranked = rank_sweep(std::move(results));
    return report;
}

}  // namespace rotatelab
