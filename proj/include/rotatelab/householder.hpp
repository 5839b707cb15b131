#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rotatelab/errors.hpp"
#include "rotatelab/linstats.hpp"
#include "rotatelab/tensor.hpp"
#include "rotatelab/token_mask.hpp"

namespace rotatelab {

/// v = w - 2 (w . h^) h^ with h^ = h / |h|. O(d); never forms the d x d matrix.
Vec reflect(std::span<const double> w, std::span<const double> h);

/// Applies reflect with h1 and then with h2. Two reflections compose to a
/// proper rotation.
Vec compose_reflect(std::span<const double> w, std::span<const double> h1,
                    std::span<const double> h2);

struct ObjectiveParams {
    double lambda = 0.3;
    MomentMode moment_mode = MomentMode::zero_fill;
    /// Floor applied to 1 + Kurt before the log.
    double log_floor = 1e-6;
};

struct LossBreakdown {
    double total = 0.0;
    double kurtosis_term = 0.0;        // log(max(1 + Kurt(z^), floor))
    double regularization_term = 0.0;  // 1 - cos(w, v)
    double lambda = 0.0;
    double masked_kurtosis = 0.0;      // Kurt(z^) itself
};

/// Loss and gradients for a chain of reflections v = R_k ... R_1 w.
struct ObjectiveEval {
    LossBreakdown loss;
    Vec v;
    std::vector<Vec> grads;  // one per reflection normal, same order as input
};

/// Evaluates the loss of the channel produced by applying the given
/// reflections to w, and its gradient with respect to every normal.
ObjectiveEval evaluate_objective(std::span<const double> w, std::span<const Vec> normals,
                                 const Unembedding& unembedding, const TokenMask& mask,
                                 const ObjectiveParams& params);

LossBreakdown loss(std::span<const double> w, std::span<const double> h,
                   const Unembedding& unembedding, const TokenMask& mask,
                   const ObjectiveParams& params);

Vec loss_gradient(std::span<const double> w, std::span<const double> h,
                  const Unembedding& unembedding, const TokenMask& mask,
                  const ObjectiveParams& params);

/// Adam with decoupled weight decay.
class AdamW {
public:
    struct Options {
        double lr = 2e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::size_t size, Options options);

    void step(std::span<double> params, std::span<const double> grad);

    std::int64_t steps() const noexcept { return t_; }
    const Vec& first_moment() const noexcept { return m_; }
    const Vec& second_moment() const noexcept { return v_; }

private:
    Options opt_;
    Vec m_;
    Vec v_;
    std::int64_t t_ = 0;
};

struct HouseholderState {
    std::vector<Vec> normals;  // one for k = 1, two for the rotation variant
    std::int64_t step = 0;
    std::vector<Vec> first_moment;
    std::vector<Vec> second_moment;
};

enum class Termination { converged, max_steps, non_finite };
const char* to_string(Termination t);
Termination termination_from_string(const std::string& s);

struct TraceRecord {
    std::int64_t step = 0;
    double loss = 0.0;
    double kurtosis = 0.0;
    double cosine = 0.0;
};

struct OptTrace {
    std::vector<TraceRecord> records;
    Termination termination = Termination::max_steps;
};

struct ChannelOptions {
    ObjectiveParams objective;
    AdamW::Options adam;
    std::int64_t n_step = 3000;
    double eps_conv = 1e-6;
    std::int64_t conv_window = 50;
    std::int64_t renorm_every = 100;
    int reflections = 1;
    bool record_trace = true;
};

struct ChannelResult {
    HouseholderState state;
    Vec v;
    OptTrace trace;
    LossBreakdown final_loss;
};

/// Raised when the loss or gradient stops being finite. Carries the trace up
/// to the failing step.
class NonFinite : public Error {
public:
    NonFinite(std::int64_t step, OptTrace trace)
        : Error("non-finite loss or gradient at step " + std::to_string(step)),
          step_(step),
          trace_(std::move(trace)) {}
    std::int64_t step() const noexcept { return step_; }
    const OptTrace& trace() const noexcept { return trace_; }

private:
    std::int64_t step_;
    OptTrace trace_;
};

/// Optimizes one channel starting from h ~ N(0, I) drawn from `seed`.
ChannelResult optimize_channel(std::span<const double> w, const Unembedding& unembedding,
                               const TokenMask& mask, const ChannelOptions& options,
                               std::uint64_t seed);

}  // namespace rotatelab
