#include <gtest/gtest.h>

#include <array>
#include <random>

#include "rotatelab/householder.hpp"
#include "test_util.hpp"

using namespace rotatelab;

namespace {

double det3(const std::array<std::array<double, 3>, 3>& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Columns are the images of the basis vectors.
template <class F>
std::array<std::array<double, 3>, 3> implied_matrix(F apply) {
    std::array<std::array<double, 3>, 3> m{};
    for (int j = 0; j < 3; ++j) {
        Vec e(3, 0.0);
        e[j] = 1.0;
        const Vec c = apply(e);
        for (int i = 0; i < 3; ++i) m[i][j] = c[i];
    }
    return m;
}

void expect_vec_near(const Vec& got, const std::vector<double>& want, double tol) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
        EXPECT_NEAR(got[i], want[i], tol * std::max(1.0, std::abs(want[i]))) << "coordinate " << i;
}

}  // namespace

TEST(Reflect, InvolutionAndNorm) {
    std::mt19937_64 rng(5);
    for (std::size_t d : {2u, 17u, 256u}) {
        const Vec w = testutil::gaussian_vec(d, rng), h = testutil::gaussian_vec(d, rng);
        const Vec v = reflect(w, h);
        EXPECT_NEAR(norm(v), norm(w), 1e-12 * norm(w));
        const Vec back = reflect(v, h);
        for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(back[i], w[i], 1e-12 * norm(w));
    }
}

TEST(Reflect, ScaleInvariantInH) {
    std::mt19937_64 rng(6);
    const Vec w = testutil::gaussian_vec(9, rng);
    Vec h = testutil::gaussian_vec(9, rng);
    const Vec a = reflect(w, h);
    for (auto& x : h) x *= -37.5;
    const Vec b = reflect(w, h);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Reflect, MapsHToMinusH) {
    Vec h{1, 2, 2};
    const Vec v = reflect(h, h);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(v[i], -h[i], 1e-14);
    Vec perp{2, -1, 0};
    const Vec u = reflect(perp, h);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(u[i], perp[i], 1e-14);
}

TEST(Reflect, Determinants) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const Vec h1 = testutil::gaussian_vec(3, rng), h2 = testutil::gaussian_vec(3, rng);
        EXPECT_NEAR(det3(implied_matrix([&](const Vec& e) { return reflect(e, h1); })), -1.0, 1e-9);
        EXPECT_NEAR(
            det3(implied_matrix([&](const Vec& e) { return compose_reflect(e, h1, h2); })), 1.0, 1e-9);
    }
}

TEST(Reflect, ZeroNormalThrows) {
    Vec w{1, 2}, h{0, 0};
    EXPECT_THROW(reflect(w, h), ZeroVector);
}

// Reference values from autograd on testutil::sin_instance, lambda 0.3, token 3 masked.
TEST(Objective, FrozenLossAndGradientSingleReflection) {
    const auto s = testutil::sin_instance();
    TokenMask mask(10);
    mask.mask(3, 0);
    ObjectiveParams p;
    p.lambda = 0.3;

    p.moment_mode = MomentMode::zero_fill;
    auto l = loss(s.w, s.h1, s.U, mask, p);
    EXPECT_NEAR(l.total, 1.3689155265519737, 1e-10);
    EXPECT_NEAR(l.masked_kurtosis, -0.5828384702939582, 1e-10);
    expect_vec_near(loss_gradient(s.w, s.h1, s.U, mask, p),
                    {1.5453423805552453, 0.2861150946568678, 0.0394894579751629, 0.6809994577779832,
                     0.8327241702594628, -0.3506737158635575},
                    1e-9);

    p.moment_mode = MomentMode::exclude;
    l = loss(s.w, s.h1, s.U, mask, p);
    EXPECT_NEAR(l.total, 1.3141129503502647, 1e-10);
    EXPECT_NEAR(l.masked_kurtosis, -0.4992290743925998, 1e-10);
    expect_vec_near(loss_gradient(s.w, s.h1, s.U, mask, p),
                    {1.5714418445821956, 0.2763013094584912, 0.060915878993322514,
                     0.7314969177198196, 0.8441666536316841, -0.41783389925500325},
                    1e-9);
}

TEST(Objective, FrozenLossAndGradientTwoReflections) {
    const auto s = testutil::sin_instance();
    TokenMask mask(10);
    mask.mask(3, 0);
    ObjectiveParams p;
    const std::vector<Vec> normals{s.h1, s.h2};

    p.moment_mode = MomentMode::zero_fill;
    auto e = evaluate_objective(s.w, normals, s.U, mask, p);
    EXPECT_NEAR(e.loss.total, 0.6302310488862968, 1e-10);
    EXPECT_NEAR(e.loss.masked_kurtosis, -0.49286184926290977, 1e-10);
    expect_vec_near(e.grads[0],
                    {-2.128860449978731, -0.32091102632983337, 2.3359216679862587,
                     2.5100983708244478, -0.14418436897513026, -3.145209249540401},
                    1e-9);
    expect_vec_near(e.grads[1],
                    {2.180484317036401, -0.9541223673872588, -1.843092895744712,
                     0.23693186930798493, 2.432084263386169, 1.9830316022307664},
                    1e-9);

    p.moment_mode = MomentMode::exclude;
    e = evaluate_objective(s.w, normals, s.U, mask, p);
    EXPECT_NEAR(e.loss.total, 0.8546202958347922, 1e-10);
    expect_vec_near(e.grads[0],
                    {-3.5531428854408, -0.6684602025338168, 3.9638021302761013,
                     4.351877693285354, -0.30290050930737933, -5.624313139096668},
                    1e-9);
    expect_vec_near(e.grads[1],
                    {3.673798189495226, -1.5563694790131448, -3.1322721485865737,
                     0.365829667776046, 4.189727101047872, 3.5416937261142336},
                    1e-9);
}

TEST(Objective, BreakdownAddsUp) {
    const auto s = testutil::sin_instance();
    ObjectiveParams p;
    p.lambda = 0.7;
    const auto l = loss(s.w, s.h1, s.U, TokenMask(10), p);
    EXPECT_NEAR(l.total, -0.7 * l.kurtosis_term + l.regularization_term, 1e-12);
    EXPECT_DOUBLE_EQ(l.lambda, 0.7);
}

TEST(Objective, LogFloorClampsAndZeroesKurtosisGradient) {
    // Plain sin rows without the heavy row have 1 + Kurt < 0 for this h.
    auto s = testutil::sin_instance();
    Matrix m(10, 6);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 6; ++j) m(i, j) = static_cast<float>(std::sin(0.7 * i + 1.3 * j + 0.1));
    const Unembedding U(std::move(m));
    ObjectiveParams p;
    const auto l = loss(s.w, s.h1, U, TokenMask(10), p);
    EXPECT_LT(1.0 + l.masked_kurtosis, 1e-6);
    EXPECT_NEAR(l.kurtosis_term, std::log(1e-6), 1e-12);
    // gradient then equals that of 1 - cos(w, v) alone
    ObjectiveParams q = p;
    q.lambda = 1e-300;
    const Vec g1 = loss_gradient(s.w, s.h1, U, TokenMask(10), p);
    const Vec g2 = loss_gradient(s.w, s.h1, U, TokenMask(10), q);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g1[i], g2[i], 1e-12);
}

TEST(Objective, FiniteDifferencesAndScaleInvariance) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 10; ++t) {
        const std::size_t d = 4 + t * 2, V = 30 + t * 9;
        const auto U = testutil::gaussian_unembedding(V, d, 100 + t);
        const Vec w = testutil::gaussian_vec(d, rng), h = testutil::gaussian_vec(d, rng);
        TokenMask mask(V);
        mask.mask(0, 0);
        for (auto mode : {MomentMode::zero_fill, MomentMode::exclude}) {
            ObjectiveParams p;
            p.moment_mode = mode;
            const Vec g = loss_gradient(w, h, U, mask, p);
            for (std::size_t i = 0; i < d; ++i) {
                const double eps = 1e-6;
                Vec hp = h, hm = h;
                hp[i] += eps;
                hm[i] -= eps;
                const double fd =
                    (loss(w, hp, U, mask, p).total - loss(w, hm, U, mask, p).total) / (2 * eps);
                EXPECT_NEAR(g[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
            }
            EXPECT_LE(std::abs(dot(g, h)), 1e-8 * norm(g) * norm(h) + 1e-14);
        }
    }
}

TEST(Objective, ZeroWeightThrows) {
    const auto s = testutil::sin_instance();
    Vec w(6, 0.0);
    EXPECT_THROW(loss(w, s.h1, s.U, TokenMask(10), {}), ZeroVector);
}

TEST(AdamW, FirstStepIsSignedLearningRate) {
    AdamW opt(3, {});
    Vec p{1.0, -2.0, 0.5};
    const Vec g{0.3, -4.0, 0.0};
    opt.step(p, g);
    // bias-corrected first step: -lr * g / (|g| + eps)
    EXPECT_NEAR(p[0], 1.0 - 2e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
    EXPECT_NEAR(p[1], -2.0 + 2e-3 * 4.0 / (4.0 + 1e-8), 1e-15);
    EXPECT_DOUBLE_EQ(p[2], 0.5);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, MatchesReferenceRecurrence) {
    AdamW::Options o;
    o.lr = 0.01;
    o.weight_decay = 0.1;
    AdamW opt(1, o);
    Vec p{2.0};
    double m = 0, v = 0, ref = 2.0;
    for (int t = 1; t <= 5; ++t) {
        const double g = 0.5 * t - 1.0;
        opt.step(p, Vec{g});
        ref -= o.lr * o.weight_decay * ref;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        ref -= o.lr * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(p[0], ref, 1e-14);
    }
}

TEST(OptimizeChannel, DeterministicAndNormPreserving) {
    const auto U = testutil::gaussian_unembedding(200, 16, 3);
    std::mt19937_64 rng(2);
    const Vec w = testutil::gaussian_vec(16, rng);
    ChannelOptions o;
    o.n_step = 400;
    const auto a = optimize_channel(w, U, TokenMask(200), o, 77);
    const auto b = optimize_channel(w, U, TokenMask(200), o, 77);
    EXPECT_EQ(a.v, b.v);
    EXPECT_EQ(a.state.step, b.state.step);
    EXPECT_NEAR(norm(a.v), norm(w), 1e-10 * norm(w));
    const auto c = optimize_channel(w, U, TokenMask(200), o, 78);
    EXPECT_NE(a.v, c.v);
    ASSERT_FALSE(a.trace.records.empty());
    // the optimizer should not end worse than it started
    EXPECT_LE(a.final_loss.total, a.trace.records.front().loss + 1e-9);
}

TEST(OptimizeChannel, ConvergesBeforeBudgetOnEasyProblem) {
    const auto U = testutil::gaussian_unembedding(100, 8, 4);
    std::mt19937_64 rng(3);
    const Vec w = testutil::gaussian_vec(8, rng);
    ChannelOptions o;
    o.n_step = 20000;
    o.adam.lr = 1e-2;
    const auto r = optimize_channel(w, U, TokenMask(100), o, 1);
    EXPECT_EQ(r.trace.termination, Termination::converged);
    EXPECT_LT(r.state.step, 20000);
}

TEST(OptimizeChannel, TwoReflectionsKeepNorm) {
    const auto U = testutil::gaussian_unembedding(100, 8, 5);
    std::mt19937_64 rng(4);
    const Vec w = testutil::gaussian_vec(8, rng);
    ChannelOptions o;
    o.n_step = 300;
    o.reflections = 2;
    const auto r = optimize_channel(w, U, TokenMask(100), o, 9);
    EXPECT_EQ(r.state.normals.size(), 2u);
    EXPECT_NEAR(norm(r.v), norm(w), 1e-10 * norm(w));
    const Vec v = compose_reflect(w, r.state.normals[0], r.state.normals[1]);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(v[i], r.v[i], 1e-10);
}

TEST(OptimizeChannel, RejectsBadOptions) {
    const auto s = testutil::sin_instance();
    ChannelOptions o;
    o.reflections = 3;
    EXPECT_THROW(optimize_channel(s.w, s.U, TokenMask(10), o, 0), InputError);
    o.reflections = 1;
    o.n_step = 0;
    EXPECT_THROW(optimize_channel(s.w, s.U, TokenMask(10), o, 0), InputError);
}

TEST(Termination, StringRoundTrip) {
    for (auto t : {Termination::converged, Termination::max_steps, Termination::non_finite})
        EXPECT_EQ(termination_from_string(to_string(t)), t);
}
