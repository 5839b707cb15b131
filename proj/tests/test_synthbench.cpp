#include <gtest/gtest.h>

#include <set>

#include "rotatelab/errors.hpp"
#include "rotatelab/linstats.hpp"
#include "rotatelab/synthbench.hpp"

using namespace rotatelab;

TEST(Plant, Invariants) {
    PlantConfig c;
    const auto inst = plant(c);
    const auto& n = inst.neuron;
    ASSERT_EQ(n.directions.size(), 3u);
    ASSERT_EQ(n.coefficients.size(), 3u);
    EXPECT_EQ(inst.unembedding.vocab_size(), 512u);
    EXPECT_EQ(inst.unembedding.dim(), 64u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(norm(n.directions[k]), 1.0, 1e-12);
        EXPECT_GE(n.coefficients[k], 0.5);
        EXPECT_LE(n.coefficients[k], 1.5);
        for (std::size_t j = k + 1; j < 3; ++j)
            EXPECT_NEAR(dot(n.directions[k], n.directions[j]), 0.0, 1e-12);
    }
    Vec rebuilt = n.noise;
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 64; ++i) rebuilt[i] += n.coefficients[k] * n.directions[k][i];
    for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(rebuilt[i], n.w[i], 1e-12);
    // noise norm relative to the mixture is close to the requested level
    Vec signal(64, 0.0);
    for (std::size_t i = 0; i < 64; ++i) signal[i] = n.w[i] - n.noise[i];
    EXPECT_NEAR(norm(n.noise) / norm(signal), 0.05, 0.03);

    std::set<TokenId> all;
    for (const auto& s : n.token_supports) {
        EXPECT_EQ(s.size(), 8u);
        EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
        all.insert(s.begin(), s.end());
    }
    EXPECT_EQ(all.size(), 24u);
    // support tokens are named after their direction
    EXPECT_EQ(inst.unembedding.token(n.token_supports[1][0]).rfind("d1_", 0), 0u);
}

TEST(Plant, SupportRowsAlignWithTheirDirection) {
    const auto inst = plant({});
    const auto& n = inst.neuron;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto z = project_logits(n.directions[k], inst.unembedding).values;
        std::vector<std::pair<double, TokenId>> order;
        for (std::size_t i = 0; i < z.size(); ++i) order.push_back({-z[i], static_cast<TokenId>(i)});
        std::sort(order.begin(), order.end());
        std::set<TokenId> top;
        for (std::size_t i = 0; i < 8; ++i) top.insert(order[i].second);
        EXPECT_EQ(top, std::set<TokenId>(n.token_supports[k].begin(), n.token_supports[k].end()));
    }
}

TEST(Plant, DeterministicPerSeed) {
    PlantConfig c;
    const auto a = plant(c), b = plant(c);
    EXPECT_EQ(a.neuron.w, b.neuron.w);
    EXPECT_EQ(a.unembedding.weights(), b.unembedding.weights());
    c.seed = 1;
    EXPECT_NE(plant(c).neuron.w, a.neuron.w);
}

TEST(Plant, ExplicitCoefficientsAndOverlap) {
    PlantConfig c;
    c.coefficients = {1.0, 2.0, 3.0};
    c.overlap = 0.3;
    const auto inst = plant(c);
    EXPECT_EQ(inst.neuron.coefficients, (Vec{1.0, 2.0, 3.0}));
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = k + 1; j < 3; ++j)
            EXPECT_NEAR(dot(inst.neuron.directions[k], inst.neuron.directions[j]), 0.3, 1e-12);
}

TEST(Plant, InfeasibleConfigs) {
    auto bad = [](auto mutate) {
        PlantConfig c;
        mutate(c);
        EXPECT_THROW(plant(c), InputError);
    };
    bad([](PlantConfig& c) { c.K = 0; });
    bad([](PlantConfig& c) { c.K = 65; });
    bad([](PlantConfig& c) { c.sparsity = 200; });  // 3 * 200 > 512
    bad([](PlantConfig& c) { c.noise_level = -1; });
    bad([](PlantConfig& c) { c.overlap = 1.0; });
    bad([](PlantConfig& c) { c.coefficients = {1.0}; });
}

TEST(Recovery, ExactDirectionsScorePerfectly) {
    const auto inst = plant({});
    const auto& n = inst.neuron;
    // reverse order and flip one sign: recovery is order- and sign-agnostic
    std::vector<Vec> ch{n.directions[2], n.directions[1], n.directions[0]};
    for (auto& x : ch[1]) x = -x;
    const auto r = recovery_score(ch, n, inst.unembedding);
    ASSERT_EQ(r.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(r[k].channel, 2 - k);
        EXPECT_NEAR(r[k].abs_cosine, 1.0, 1e-12);
        EXPECT_DOUBLE_EQ(r[k].support_jaccard, 1.0);
    }
    EXPECT_THROW(recovery_score(std::vector<Vec>{}, n, inst.unembedding), EmptySet);
}

TEST(Sweep, HarmonicMean) {
    EXPECT_NEAR(harmonic_mean(0.72, 0.78), 0.749, 5e-4);
    EXPECT_DOUBLE_EQ(harmonic_mean(0.5, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(harmonic_mean(0.0, 0.9), 0.0);
}

TEST(Sweep, GridOrderAndDefaults) {
    const SweepGrid g;
    const auto p = g.points();
    ASSERT_EQ(p.size(), 18u);
    EXPECT_EQ(p.front(), (SweepPoint{0.1, 8e-4, 4.0}));
    EXPECT_EQ(p[1], (SweepPoint{0.1, 8e-4, 6.0}));
    EXPECT_EQ(p[3], (SweepPoint{0.1, 2e-3, 4.0}));
    EXPECT_EQ(p.back(), (SweepPoint{0.5, 2e-3, 8.0}));
}

TEST(Sweep, RankingIsStableDescending) {
    std::vector<SweepResult> rs;
    const std::vector<double> hm{0.4, 0.7, 0.7, 0.1, 0.9};
    for (std::size_t i = 0; i < hm.size(); ++i) {
        SweepResult r;
        r.point.lambda = static_cast<double>(i);
        r.harmonic_mean = hm[i];
        rs.push_back(r);
    }
    const auto ranked = rank_sweep(rs);
    std::vector<double> order;
    for (const auto& r : ranked) order.push_back(r.point.lambda);
    EXPECT_EQ(order, (std::vector<double>{4, 1, 2, 0, 3}));
}

TEST(Sweep, SmallGridRuns) {
    PlantConfig pc;
    pc.d = 24;
    pc.V = 160;
    pc.sparsity = 6;
    const auto inst = plant(pc);
    const std::vector<WeightVector> ws{{{0, "synthetic", 0}, inst.neuron.w}};
    SweepGrid g{{0.3, 0.5}, {2e-3}, {4.0}};
    auto base = default_sweep_config();
    EXPECT_EQ(base.n_step, 500);
    base.n_iter = 3;
    base.n_step = 200;
    const auto rep = sweep(ws, inst.unembedding, g, base, {}, 1);
    ASSERT_EQ(rep.ranked.size(), 2u);
    EXPECT_TRUE(rep.failures.empty());
    EXPECT_GE(rep.ranked[0].harmonic_mean, rep.ranked[1].harmonic_mean);
    for (const auto& r : rep.ranked) {
        EXPECT_NEAR(r.harmonic_mean, harmonic_mean(r.explained_norm, r.orthogonality), 1e-12);
        EXPECT_EQ(r.neurons, 1u);
    }
}

TEST(Consistency, RequiresTwoSeeds) {
    const auto inst = plant({});
    const std::vector<std::uint64_t> one{0};
    EXPECT_THROW(consistency_experiment({{0, "synthetic", 0}, inst.neuron.w}, inst.unembedding, {},
                                        one, {}),
                 InputError);
}

TEST(Consistency, PairsAndMeans) {
    PlantConfig pc;
    pc.d = 24;
    pc.V = 160;
    pc.sparsity = 6;
    const auto inst = plant(pc);
    RotateConfig c;
    c.n_iter = 3;
    c.n_step = 300;
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    const auto r =
        consistency_experiment({{0, "synthetic", 0}, inst.neuron.w}, inst.unembedding, c, seeds, {});
    ASSERT_EQ(r.runs.size(), 3u);
    ASSERT_EQ(r.pairs.size(), 3u);
    EXPECT_EQ(r.pairs[0].a, 0u);
    EXPECT_EQ(r.pairs[0].b, 1u);
    double sum = 0;
    std::size_t n = 0;
    for (const auto& p : r.pairs)
        for (const auto& m : p.report.pairs) sum += m.cosine, ++n;
    EXPECT_NEAR(r.mean_cosine, sum / static_cast<double>(n), 1e-12);
    EXPECT_GT(r.mean_cosine, 0.5);
}
