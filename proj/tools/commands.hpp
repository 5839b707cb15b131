#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rotatelab/modelio.hpp"
#include "rotatelab/rotate.hpp"
#include "rotatelab/synthbench.hpp"

namespace rotatelab::cli {

struct CommandResult {
    int exit_code = 0;
    std::string summary;
    std::vector<std::filesystem::path> artifacts;
};

/// Flags that override RotateConfig fields. Unset flags fall back to the
/// config file, then to the built-in defaults.
struct ConfigFlags {
    std::string config_path;
    std::optional<double> lambda, eta, k_sigma, tau, eps_conv;
    std::optional<std::int64_t> n_iter, n_step;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> moment_mode, depletion, residual_mode;
    std::optional<int> reflections;
    std::optional<std::size_t> top_k;

    RotateConfig resolve(RotateConfig base = {}) const;
};

/// "all", "random:N" (seeded) or a list like "0,3,10-12".
std::vector<std::int64_t> select_neurons(const std::string& selector, std::size_t count,
                                         std::uint64_t seed);

struct DecomposeOptions {
    std::filesystem::path bundle;
    std::int64_t layer = 0;
    std::string role = "gate";
    std::string neurons = "random:100";
    std::filesystem::path glitch;  // overrides the bundle's glitch.txt
    std::filesystem::path out;
    std::size_t jobs = 0;
    ConfigFlags config;
};
CommandResult cmd_decompose(const DecomposeOptions& o);

struct SurveyOptions {
    std::filesystem::path bundle;
    std::string layers = "all";
    std::string role = "gate";
    std::string mode = "exclude";
    std::filesystem::path out;
    std::filesystem::path summary_out;
    std::filesystem::path neuron_ids;  // lines "layer,index" to locate in the distribution
    std::filesystem::path svg;
};
CommandResult cmd_survey(const SurveyOptions& o);

struct ReconstructOptions {
    std::filesystem::path archive;
    std::filesystem::path bundle;
    std::filesystem::path out;
    std::filesystem::path svg;
};
CommandResult cmd_reconstruct(const ReconstructOptions& o);

struct AblateOptions {
    std::filesystem::path archive;
    std::filesystem::path bundle;
    std::optional<std::int64_t> layer;
    std::int64_t neuron = 0;
    std::size_t channel = 0;
    std::string mode = "unit";
    std::filesystem::path out;
};
CommandResult cmd_ablate(const AblateOptions& o);

struct PlantFlags {
    std::size_t K = 3, d = 64, V = 512, sparsity = 8;
    double noise = 0.05;
    std::uint64_t seed = 0;

    PlantConfig config() const;
};

struct MatchOptions {
    std::filesystem::path bundle;  // empty: use a planted instance
    std::int64_t layer = 0;
    std::string role = "gate";
    std::int64_t neuron = 0;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3};
    std::size_t topk = 20;
    std::filesystem::path out;
    std::size_t jobs = 0;
    PlantFlags plant;
    ConfigFlags config;
};
CommandResult cmd_match(const MatchOptions& o);

struct BenchOptions {
    PlantFlags plant;
    std::filesystem::path out;
    std::filesystem::path archive;
    std::filesystem::path bundle_out;
    ConfigFlags config;
};
CommandResult cmd_bench(const BenchOptions& o);

struct SweepOptions {
    std::filesystem::path bundle;  // empty: use a planted instance
    std::int64_t layer = 0;
    std::string role = "gate";
    std::string neurons = "random:100";
    std::vector<double> lambdas{0.1, 0.3, 0.5};
    std::vector<double> etas{8e-4, 2e-3};
    std::vector<double> k_sigmas{4.0, 6.0, 8.0};
    std::filesystem::path out;
    std::size_t jobs = 0;
    PlantFlags plant;
    ConfigFlags config;
};
CommandResult cmd_sweep(const SweepOptions& o);

/// Bundle holding a planted instance: its unembedding and one layer-0 gate
/// matrix. Row 0 is the planted neuron, rows 1..K the bare directions.
ModelBundle planted_bundle(const PlantedInstance& instance);

}  // namespace rotatelab::cli
