#include "app.hpp"

#include <cstdlib>
#include <functional>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "rotatelab/errors.hpp"

namespace rotatelab::cli {

struct Invocation {
    DecomposeOptions decompose;
    SurveyOptions survey;
    ReconstructOptions reconstruct;
    AblateOptions ablate;
    MatchOptions match;
    BenchOptions bench;
    SweepOptions sweep;
    std::function<CommandResult()> action;
};

namespace {

void add_config_flags(CLI::App* app, ConfigFlags& f) {
    app->add_option("--config", f.config_path, "TOML or JSON file with RotateConfig keys")
        ->check(CLI::ExistingFile);
    app->add_option("--lambda", f.lambda, "kurtosis weight (default 0.3)");
    app->add_option("--eta", f.eta, "learning rate (default 2e-3)");
    app->add_option("--k-sigma", f.k_sigma, "masking threshold in standard deviations (default 4)");
    app->add_option("--n-iter", f.n_iter, "channels per neuron (default 50)");
    app->add_option("--n-step", f.n_step, "optimizer steps per channel (default 3000)");
    app->add_option("--tau", f.tau, "stop when masked kurtosis falls below this");
    app->add_option("--eps-conv", f.eps_conv, "convergence tolerance (default 1e-6)");
    app->add_option("--seed", f.seed, "base seed (default 0)");
    app->add_option("--moment-mode", f.moment_mode, "zero_fill | exclude");
    app->add_option("--depletion", f.depletion, "masking | subtraction | none");
    app->add_option("--residual-mode", f.residual_mode, "sequential | projection_sum");
    app->add_option("--reflections", f.reflections, "1 or 2 Householder reflections");
    app->add_option("--top-k", f.top_k, "tokens kept per channel list (default 50)");
}

void add_plant_flags(CLI::App* app, PlantFlags& p) {
    app->add_option("--K", p.K, "planted directions")->capture_default_str();
    app->add_option("--d", p.d, "model dimension")->capture_default_str();
    app->add_option("--V", p.V, "vocabulary size")->capture_default_str();
    app->add_option("--sparsity", p.sparsity, "tokens per planted direction")->capture_default_str();
    app->add_option("--noise", p.noise, "noise norm relative to the mixture")->capture_default_str();
    app->add_option("--plant-seed", p.seed, "seed of the planted instance")->capture_default_str();
}

}  // namespace

std::unique_ptr<CLI::App> make_app(Invocation& s) {
    auto app = std::make_unique<CLI::App>("Channel decomposition of MLP neuron weights", "rotatelab");
    app->require_subcommand(1);
    app->set_version_flag("--version", std::string(kToolVersion));

    {
        auto* c = app->add_subcommand("decompose", "find channels of selected neurons, write an archive");
        auto& o = s.decompose;
        c->add_option("--bundle", o.bundle, "model bundle directory")->required()->check(CLI::ExistingDirectory);
        c->add_option("--layer", o.layer, "layer index")->required();
        c->add_option("--role", o.role, "gate | in | out")->capture_default_str();
        c->add_option("--neurons", o.neurons, "all | random:N | list such as 0,3,10-12")->capture_default_str();
        c->add_option("--glitch", o.glitch, "glitch token list, replaces the bundle's")->check(CLI::ExistingFile);
        c->add_option("--out", o.out, "archive path (.jsonl)")->required();
        c->add_option("--jobs", o.jobs, "worker threads, 0 = all cores")->capture_default_str();
        add_config_flags(c, o.config);
        c->callback([&s] { s.action = [&s] { return cmd_decompose(s.decompose); }; });
    }
    {
        auto* c = app->add_subcommand("survey", "per-layer vocabulary kurtosis of neuron weights");
        auto& o = s.survey;
        c->add_option("--bundle", o.bundle, "model bundle directory")->required()->check(CLI::ExistingDirectory);
        c->add_option("--layers", o.layers, "all or a list such as 18,22")->capture_default_str();
        c->add_option("--role", o.role, "gate | in | out")->capture_default_str();
        c->add_option("--mode", o.mode, "zero_fill | exclude")->capture_default_str();
        c->add_option("--out", o.out, "per-neuron CSV")->required();
        c->add_option("--summary-out", o.summary_out, "per-layer quantile CSV");
        c->add_option("--neuron-ids", o.neuron_ids, "file of layer,index lines to locate")->check(CLI::ExistingFile);
        c->add_option("--svg", o.svg, "quantile plot");
        c->callback([&s] { s.action = [&s] { return cmd_survey(s.survey); }; });
    }
    {
        auto* c = app->add_subcommand("reconstruct", "cosine and explained norm curves from an archive");
        auto& o = s.reconstruct;
        c->add_option("--archive", o.archive, "archive path")->required()->check(CLI::ExistingFile);
        c->add_option("--bundle", o.bundle, "bundle the archive was made from")->required()->check(CLI::ExistingDirectory);
        c->add_option("--out", o.out, "per-iteration CSV")->required();
        c->add_option("--svg", o.svg, "curve plot");
        c->callback([&s] { s.action = [&s] { return cmd_reconstruct(s.reconstruct); }; });
    }
    {
        auto* c = app->add_subcommand("ablate", "remove one channel from a neuron's weights");
        auto& o = s.ablate;
        c->add_option("--archive", o.archive, "archive path")->required()->check(CLI::ExistingFile);
        c->add_option("--bundle", o.bundle, "bundle the archive was made from")->required()->check(CLI::ExistingDirectory);
        c->add_option("--layer", o.layer, "layer, when the archive has several");
        c->add_option("--neuron", o.neuron, "neuron index")->required();
        c->add_option("--channel", o.channel, "channel index in discovery order")->required();
        c->add_option("--mode", o.mode, "unit | paper_raw")->capture_default_str();
        c->add_option("--out", o.out, "JSON with diagnostics and the ablated vector");
        c->callback([&s] { s.action = [&s] { return cmd_ablate(s.ablate); }; });
    }
    {
        auto* c = app->add_subcommand("match", "seed consistency of one neuron's channels");
        auto& o = s.match;
        c->add_option("--bundle", o.bundle, "bundle directory; omitted = planted instance")->check(CLI::ExistingDirectory);
        c->add_option("--layer", o.layer, "layer index")->capture_default_str();
        c->add_option("--role", o.role, "gate | in | out")->capture_default_str();
        c->add_option("--neuron", o.neuron, "neuron index")->capture_default_str();
        c->add_option("--seeds", o.seeds, "seeds to compare")->capture_default_str()->delimiter(',');
        c->add_option("--topk", o.topk, "tokens for the Jaccard score")->capture_default_str();
        c->add_option("--out", o.out, "matched pair CSV")->required();
        c->add_option("--jobs", o.jobs, "worker threads, 0 = all cores")->capture_default_str();
        add_plant_flags(c, o.plant);
        add_config_flags(c, o.config);
        c->callback([&s] { s.action = [&s] { return cmd_match(s.match); }; });
    }
    {
        auto* c = app->add_subcommand("bench", "recovery of planted directions");
        auto& o = s.bench;
        add_plant_flags(c, o.plant);
        c->add_option("--out", o.out, "recovery CSV")->required();
        c->add_option("--archive", o.archive, "also write the decomposition archive");
        c->add_option("--bundle-out", o.bundle_out, "also write the planted instance as a bundle");
        add_config_flags(c, o.config);
        c->callback([&s] { s.action = [&s] { return cmd_bench(s.bench); }; });
    }
    {
        auto* c = app->add_subcommand("sweep", "grid search over lambda, eta and k-sigma");
        auto& o = s.sweep;
        c->add_option("--bundle", o.bundle, "bundle directory; omitted = planted instance")->check(CLI::ExistingDirectory);
        c->add_option("--layer", o.layer, "layer index")->capture_default_str();
        c->add_option("--role", o.role, "gate | in | out")->capture_default_str();
        c->add_option("--neurons", o.neurons, "all | random:N | list")->capture_default_str();
        c->add_option("--lambdas", o.lambdas, "lambda axis")->capture_default_str()->delimiter(',');
        c->add_option("--etas", o.etas, "eta axis")->capture_default_str()->delimiter(',');
        c->add_option("--k-sigmas", o.k_sigmas, "k-sigma axis")->capture_default_str()->delimiter(',');
        c->add_option("--out", o.out, "ranking CSV")->required();
        c->add_option("--jobs", o.jobs, "worker threads, 0 = all cores")->capture_default_str();
        add_plant_flags(c, o.plant);
        add_config_flags(c, o.config);
        c->callback([&s] { s.action = [&s] { return cmd_sweep(s.sweep); }; });
    }
    return app;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Invocation state;
    auto app = make_app(state);
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app->parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app->help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app->help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion& e) {
        out << e.what() << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    // A subcommand's --help is raised before its callback, so this only
    // runs after a successful parse.
    try {
        const CommandResult r = state.action();
        out << r.summary;
        return r.exit_code;
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

void configure_logging() {
    auto logger = spdlog::stderr_color_mt("rotatelab");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("ROTATELAB_LOG")) {
        const auto level = spdlog::level::from_str(env);
        if (level == spdlog::level::off && std::string(env) != "off")
            spdlog::warn("ignoring unknown ROTATELAB_LOG value '{}'", env);
        else
            spdlog::set_level(level);
    }
}

}  // namespace rotatelab::cli
