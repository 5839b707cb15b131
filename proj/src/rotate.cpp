#include "rotatelab/rotate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>

#include <spdlog/spdlog.h>

#include "parallel.hpp"
#include "rotatelab/errors.hpp"

namespace rotatelab {

const char* to_string(Depletion d) {
    switch (d) {
        case Depletion::masking: return "masking";
        case Depletion::subtraction: return "subtraction";
        case Depletion::none: return "none";
    }
    return "unknown";
}

Depletion depletion_from_string(const std::string& s) {
    if (s == "masking") return Depletion::masking;
    if (s == "subtraction") return Depletion::subtraction;
    if (s == "none") return Depletion::none;
    throw InputError("unknown depletion '" + s + "' (expected masking | subtraction | none)");
}

void RotateConfig::validate() const {
    auto fail = [](const std::string& m) { throw InputError("invalid config: " + m); };
    if (!(lambda > 0.0)) fail("lambda must be > 0");
    if (!(eta > 0.0)) fail("eta must be > 0");
    if (!(k_sigma > 0.0)) fail("k_sigma must be > 0");
    if (n_iter < 1) fail("n_iter must be >= 1");
    if (n_step < 1) fail("n_step must be >= 1");
    if (!(eps_conv >= 0.0)) fail("eps_conv must be >= 0");
    if (reflections != 1 && reflections != 2) fail("reflections must be 1 or 2");
    if (top_k < 1) fail("top_k must be >= 1");
}

ChannelOptions RotateConfig::channel_options() const {
    ChannelOptions o;
    o.objective.lambda = lambda;
    o.objective.moment_mode = moment_mode;
    o.adam.lr = eta;
    o.n_step = n_step;
    o.eps_conv = eps_conv;
    o.reflections = reflections;
    return o;
}

std::string NeuronId::str() const {
    return "L" + std::to_string(layer) + "." + role + "." + std::to_string(index);
}

TokenMask init_mask(std::size_t vocab_size, std::span<const TokenId> glitch_ids) {
    TokenMask mask(vocab_size);
    for (auto id : glitch_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
            throw InputError("glitch token id " + std::to_string(id) + " outside [0, " +
                             std::to_string(vocab_size) + ")");
        }
        mask.mask(static_cast<std::size_t>(id), TokenMask::kGlitch);
    }
    return mask;
}

TokenMask init_mask(const Unembedding& unembedding, std::span<const TokenId> glitch_ids) {
    return init_mask(unembedding.vocab_size(), glitch_ids);
}

TokenMask update_mask(const LogitVector& z, const TokenMask& mask, double k_sigma,
                      std::int32_t channel_index) {
    const auto stats = moments(z.values, mask, MomentMode::exclude);
    TokenMask next = mask;
    const double threshold = k_sigma * stats.std;
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        if (mask.admissible(i) && std::abs(z.values[i] - stats.mean) > threshold)
            next.mask(i, channel_index);
    }
    return next;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, const NeuronId& neuron, std::int64_t iteration,
                          int attempt) {
    std::uint64_t h = splitmix(static_cast<std::uint64_t>(neuron.layer));
    h = splitmix(h ^ fnv1a(neuron.role));
    h = splitmix(h ^ static_cast<std::uint64_t>(neuron.index));
    h = splitmix(h ^ static_cast<std::uint64_t>(iteration));
    h = splitmix(h ^ static_cast<std::uint64_t>(attempt));
    return base ^ h;
}

Decomposition decompose(const WeightVector& w, const Unembedding& unembedding,
                        const RotateConfig& config, std::span<const TokenId> glitch_ids) {
    config.validate();
    if (w.values.size() != unembedding.dim()) {
        throw InputError("neuron " + w.id.str() + " has d = " + std::to_string(w.values.size()) +
                         ", unembedding has d = " + std::to_string(unembedding.dim()));
    }
    const double w_norm = norm(w.values);
    if (w_norm == 0.0) throw ZeroVector("neuron " + w.id.str() + " has zero norm");

    Decomposition out;
    out.neuron = w.id;
    out.config = config;
    TokenMask mask = init_mask(unembedding, glitch_ids);
    Vec current = w.values;
    ChannelOptions options = config.channel_options();
    options.record_trace = false;
    std::vector<Vec> found;

    for (std::int64_t it = 0; it < config.n_iter; ++it) {
        if (mask.admissible_count() < 2) {
            spdlog::info("{}: vocabulary exhausted after {} channels", w.id.str(), out.channels.size());
            break;
        }
        const auto t0 = std::chrono::steady_clock::now();
        std::optional<ChannelResult> result;
        for (int attempt = 0; attempt < 2 && !result; ++attempt) {
            try {
                result = optimize_channel(current, unembedding, mask, options,
                                          derive_seed(config.seed, w.id, it, attempt));
            } catch (const NonFinite& e) {
                spdlog::warn("{}: iteration {} attempt {}: {}", w.id.str(), it, attempt, e.what());
            }
        }
        if (!result) {
            out.skipped.push_back({it, "non-finite loss or gradient"});
            out.seconds_per_iteration.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            continue;
        }

        const LogitVector z = project_logits(result->v, unembedding);
        const auto stats = moments(z.values, mask, config.moment_mode);
        const auto lists = top_tokens_from_logits(z.values, unembedding, config.top_k, &mask);

        Channel ch;
        ch.v = result->v;
        ch.normals = result->state.normals;
        ch.iteration = it;
        ch.masked_excess_kurtosis = stats.excess_kurtosis;
        ch.skewness = stats.skewness;
        ch.cosine_with_w = cosine(w.values, ch.v);
        ch.steps = result->state.step;
        ch.termination = result->trace.termination;
        ch.final_loss = result->final_loss.total;
        ch.top_tokens = lists.top;
        ch.bottom_tokens = lists.bottom;
        const auto channel_index = static_cast<std::int32_t>(out.channels.size());
        out.channels.push_back(std::move(ch));
        found.push_back(result->v);

        out.trace.push_back(
            {explained_norm(w.values, found, config.residual_mode), out.channels.back().cosine_with_w});

        bool stop = false;
        switch (config.depletion) {
            case Depletion::masking:
                mask = update_mask(z, mask, config.k_sigma, channel_index);
                break;
            case Depletion::subtraction: {
                const Vec u = normalized(result->v);
                const double c = dot(current, u);
                for (std::size_t j = 0; j < current.size(); ++j) current[j] -= c * u[j];
                if (norm(current) <= 1e-12 * w_norm) stop = true;
                break;
            }
            case Depletion::none:
                break;
        }
        out.seconds_per_iteration.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (config.tau && stats.excess_kurtosis < *config.tau) stop = true;
        if (stop) break;
    }
    out.final_mask = std::move(mask);
    return out;
}

BatchResult decompose_batch(std::span<const WeightVector> neurons,
                            const Unembedding& unembedding, const RotateConfig& config,
                            std::span<const TokenId> glitch_ids, std::size_t parallelism) {
    config.validate();
    BatchResult result;
    result.decompositions.resize(neurons.size());
    if (neurons.empty()) return result;

    std::mutex failures_mutex;
    detail::parallel_for(neurons.size(), parallelism, [&](std::size_t i) {
        try {
            result.decompositions[i] = decompose(neurons[i], unembedding, config, glitch_ids);
        } catch (const std::exception& e) {
            std::lock_guard lock(failures_mutex);
            result.failures.push_back({i, neurons[i].id, e.what()});
        }
    });
    std::sort(result.failures.begin(), result.failures.end(),
              [](const BatchFailure& a, const BatchFailure& b) { return a.position < b.position; });
    return result;
}

}  // namespace rotatelab
