#include "rotatelab/householder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rotatelab {

namespace {

void check_normal(std::span<const double> w, std::span<const double> h) {
    if (w.size() != h.size()) {
        throw InputError("dimension mismatch: w has d = " + std::to_string(w.size()) +
                         ", h has d = " + std::to_string(h.size()));
    }
}

bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

ObjectiveEval evaluate(std::span<const double> w, std::span<const Vec> normals,
                       const Unembedding& unembedding, const TokenMask& mask,
                       const ObjectiveParams& params, bool need_grad) {
    if (normals.empty()) throw InputError("at least one reflection normal is required");
    if (mask.size() != unembedding.vocab_size()) {
        throw InputError("mask covers " + std::to_string(mask.size()) +
                         " tokens, unembedding has V = " + std::to_string(unembedding.vocab_size()));
    }

    const double nw = norm(w);
    if (nw == 0.0) throw ZeroVector("neuron weight vector");

    // Forward: inputs[k] is the vector fed to reflection k.
    std::vector<Vec> inputs;
    inputs.reserve(normals.size() + 1);
    inputs.emplace_back(w.begin(), w.end());
    for (const auto& h : normals) inputs.push_back(reflect(inputs.back(), h));

    ObjectiveEval out;
    out.v = inputs.back();
    const Vec& v = out.v;

    Vec z(unembedding.vocab_size());
    project_logits_into(v, unembedding, z);

    const bool exclude = params.moment_mode == MomentMode::exclude;
    const std::size_t V = z.size();
    for (std::size_t i = 0; i < V; ++i)
        if (!mask.admissible(i)) z[i] = 0.0;

    std::size_t count = exclude ? mask.admissible_count() : V;
    if (count < 2) throw InputError("fewer than 2 tokens left to compute kurtosis");
    const double n = static_cast<double>(count);
    double sum = 0.0;
    for (std::size_t i = 0; i < V; ++i)
        if (!exclude || mask.admissible(i)) sum += z[i];
    const double mu = sum / n;
    double s2 = 0.0, s3 = 0.0, s4 = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
        if (exclude && !mask.admissible(i)) continue;
        const double c = z[i] - mu;
        const double c2 = c * c;
        s2 += c2;
        s3 += c2 * c;
        s4 += c2 * c2;
    }
    const double m2 = s2 / n, m3 = s3 / n, m4 = s4 / n;
    if (!(m2 > 0.0)) throw DegenerateDistribution(mu);
    const double kurt = m4 / (m2 * m2) - 3.0;
    const double arg = 1.0 + kurt;
    const bool clamped = !(arg > params.log_floor);
    const double kurt_term = std::log(clamped ? params.log_floor : arg);

    const double nv = norm(v);
    const double wv = dot(w, v);
    const double cos = wv / (nw * nv);
    const double reg = 1.0 - std::clamp(cos, -1.0, 1.0);

    out.loss.lambda = params.lambda;
    out.loss.kurtosis_term = kurt_term;
    out.loss.regularization_term = reg;
    out.loss.masked_kurtosis = kurt;
    out.loss.total = -params.lambda * kurt_term + reg;
    if (!need_grad) return out;

    // dL/dz for admissible tokens; masked tokens are constants in both modes.
    const double coef = clamped ? 0.0 : -params.lambda / arg;
    const double a = 4.0 / (n * m2 * m2);
    const double b = 4.0 * m4 / (n * m2 * m2 * m2);
    Vec gz(V, 0.0);
    if (coef != 0.0) {
        for (std::size_t i = 0; i < V; ++i) {
            if (!mask.admissible(i)) continue;
            const double c = z[i] - mu;
            gz[i] = coef * (a * (c * c * c - m3) - b * c);
        }
    }
    Vec g(w.size(), 0.0);
    accumulate_transpose(gz, unembedding, g);
    const double inv = 1.0 / (nw * nv);
    const double vcoef = wv / (nw * nv * nv * nv);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] -= w[j] * inv - v[j] * vcoef;

    // Backward through the reflection chain.
    out.grads.resize(normals.size());
    for (std::size_t k = normals.size(); k-- > 0;) {
        const Vec& x = inputs[k];
        const Vec& h = normals[k];
        const double hn = norm(h);
        const double ax = dot(x, h) / hn;
        const double bg = dot(g, h) / hn;
        Vec dh(h.size());
        for (std::size_t j = 0; j < h.size(); ++j) dh[j] = -2.0 * (bg * x[j] + ax * g[j]);
        const double radial = dot(dh, h) / hn;
        for (std::size_t j = 0; j < h.size(); ++j) dh[j] = (dh[j] - radial * h[j] / hn) / hn;
        out.grads[k] = std::move(dh);
        if (k > 0) g = reflect(g, h);
    }
    return out;
}

}  // namespace

Vec reflect(std::span<const double> w, std::span<const double> h) {
    check_normal(w, h);
    const double hh = dot(h, h);
    if (hh == 0.0) throw ZeroVector("reflection normal");
    const double s = 2.0 * dot(w, h) / hh;
    Vec v(w.begin(), w.end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= s * h[i];
    return v;
}

Vec compose_reflect(std::span<const double> w, std::span<const double> h1,
                    std::span<const double> h2) {
    return reflect(reflect(w, h1), h2);
}

ObjectiveEval evaluate_objective(std::span<const double> w, std::span<const Vec> normals,
                                 const Unembedding& unembedding, const TokenMask& mask,
                                 const ObjectiveParams& params) {
    return evaluate(w, normals, unembedding, mask, params, true);
}

LossBreakdown loss(std::span<const double> w, std::span<const double> h,
                   const Unembedding& unembedding, const TokenMask& mask,
                   const ObjectiveParams& params) {
    const Vec normal(h.begin(), h.end());
    return evaluate(w, std::span<const Vec>(&normal, 1), unembedding, mask, params, false).loss;
}

Vec loss_gradient(std::span<const double> w, std::span<const double> h,
                  const Unembedding& unembedding, const TokenMask& mask,
                  const ObjectiveParams& params) {
    const Vec normal(h.begin(), h.end());
    auto eval = evaluate(w, std::span<const Vec>(&normal, 1), unembedding, mask, params, true);
    return std::move(eval.grads.front());
}

AdamW::AdamW(std::size_t size, Options options)
    : opt_(options), m_(size, 0.0), v_(size, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (opt_.weight_decay != 0.0) params[i] *= 1.0 - opt_.lr * opt_.weight_decay;
        m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grad[i];
        v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        params[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
}

const char* to_string(Termination t) {
    switch (t) {
        case Termination::converged: return "converged";
        case Termination::max_steps: return "max_steps";
        case Termination::non_finite: return "non_finite";
    }
    return "unknown";
}

Termination termination_from_string(const std::string& s) {
    if (s == "converged") return Termination::converged;
    if (s == "max_steps") return Termination::max_steps;
    if (s == "non_finite") return Termination::non_finite;
    throw InputError("unknown termination '" + s + "'");
}

ChannelResult optimize_channel(std::span<const double> w, const Unembedding& unembedding,
                               const TokenMask& mask, const ChannelOptions& options,
                               std::uint64_t seed) {
    if (options.n_step < 1) throw InputError("n_step must be >= 1");
    if (options.reflections < 1 || options.reflections > 2)
        throw InputError("reflections must be 1 or 2");
    if (w.size() != unembedding.dim()) {
        throw InputError("dimension mismatch: w has d = " + std::to_string(w.size()) +
                         ", unembedding has d = " + std::to_string(unembedding.dim()));
    }
    const std::size_t d = w.size();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ChannelResult result;
    auto& state = result.state;
    std::vector<double> target_norm;
    for (int k = 0; k < options.reflections; ++k) {
        Vec h(d);
        for (auto& x : h) x = gauss(rng);
        target_norm.push_back(norm(h));
        state.normals.push_back(std::move(h));
    }
    std::vector<AdamW> optimizers;
    for (int k = 0; k < options.reflections; ++k) optimizers.emplace_back(d, options.adam);

    OptTrace& trace = result.trace;
    trace.termination = Termination::max_steps;
    const std::int64_t window = options.conv_window;
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(options.n_step));

    for (std::int64_t step = 0; step < options.n_step; ++step) {
        ObjectiveEval eval =
            evaluate(w, state.normals, unembedding, mask, options.objective, true);
        bool finite = std::isfinite(eval.loss.total);
        for (const auto& g : eval.grads) finite = finite && all_finite(g);
        if (!finite) {
            trace.termination = Termination::non_finite;
            throw NonFinite(step, std::move(trace));
        }
        if (options.record_trace) {
            trace.records.push_back({step, eval.loss.total, eval.loss.masked_kurtosis,
                                     1.0 - eval.loss.regularization_term});
        }
        for (int k = 0; k < options.reflections; ++k)
            optimizers[k].step(state.normals[k], eval.grads[k]);
        state.step = step + 1;

        if (options.renorm_every > 0 && state.step % options.renorm_every == 0) {
            for (int k = 0; k < options.reflections; ++k) {
                auto& h = state.normals[k];
                const double s = target_norm[k] / norm(h);
                for (auto& x : h) x *= s;
            }
        }

        losses.push_back(eval.loss.total);
        if (window > 0 && static_cast<std::int64_t>(losses.size()) >= 2 * window) {
            const auto end = losses.end();
            const double recent = std::accumulate(end - window, end, 0.0);
            const double previous = std::accumulate(end - 2 * window, end - window, 0.0);
            if (std::abs(recent - previous) / static_cast<double>(window) < options.eps_conv) {
                trace.termination = Termination::converged;
                break;
            }
        }
    }

    ObjectiveEval final_eval =
        evaluate(w, state.normals, unembedding, mask, options.objective, false);
    if (!std::isfinite(final_eval.loss.total)) {
        trace.termination = Termination::non_finite;
        throw NonFinite(state.step, std::move(trace));
    }
    result.v = std::move(final_eval.v);
    result.final_loss = final_eval.loss;
    for (const auto& opt : optimizers) {
        state.first_moment.push_back(opt.first_moment());
        state.second_moment.push_back(opt.second_moment());
    }
    return result;
}

}  // namespace rotatelab
