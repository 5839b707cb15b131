#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "app.hpp"
#include "commands.hpp"
#include "rotatelab/errors.hpp"
#include "test_util.hpp"

using namespace rotatelab;
using namespace rotatelab::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    f << s;
}

// small planted problem so every command finishes quickly
const std::vector<std::string> kSmall = {"--d",      "32",  "--V",       "256", "--K",
                                         "2",        "--sparsity", "12", "--n-iter", "2",
                                         "--n-step", "300"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

/// Planted bundle and its archive, made once through the CLI.
struct Fixture {
    fs::path dir, bundle, archive;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture x;
        x.dir = testutil::temp_dir("cli_fixture");
        x.bundle = x.dir / "bundle";
        x.archive = x.dir / "bench.jsonl";
        const auto r = invoke(with({"bench", "--out", (x.dir / "bench.csv").string(), "--archive",
                                    x.archive.string(), "--bundle-out", x.bundle.string()},
                                   kSmall));
        if (r.code != 0) throw std::runtime_error("fixture bench failed: " + r.err);
        return x;
    }();
    return f;
}

}  // namespace

TEST(SelectNeurons, Forms) {
    EXPECT_EQ(select_neurons("all", 3, 0), (std::vector<std::int64_t>{0, 1, 2}));
    EXPECT_EQ(select_neurons("4,0-2,1", 10, 0), (std::vector<std::int64_t>{4, 0, 1, 2}));
    const auto r = select_neurons("random:5", 100, 7);
    EXPECT_EQ(r.size(), 5u);
    EXPECT_TRUE(std::is_sorted(r.begin(), r.end()));
    EXPECT_EQ(r, select_neurons("random:5", 100, 7));
    EXPECT_NE(r, select_neurons("random:5", 100, 8));
    EXPECT_THROW(select_neurons("random:500", 10, 0), InputError);
    EXPECT_EQ(select_neurons("random:10", 10, 0).size(), 10u);
    EXPECT_THROW(select_neurons("10", 10, 0), InputError);
    EXPECT_THROW(select_neurons("3-1", 10, 0), InputError);
    EXPECT_THROW(select_neurons("x", 10, 0), InputError);
    EXPECT_THROW(select_neurons("random:abc", 10, 0), InputError);
}

TEST(ConfigFlags, FlagBeatsFileBeatsDefault) {
    const auto dir = testutil::temp_dir("cli_flags");
    spit(dir / "c.toml", "lambda = 0.7\neta = 0.01\n");
    ConfigFlags f;
    f.config_path = (dir / "c.toml").string();
    f.lambda = 0.9;
    const auto c = f.resolve();
    EXPECT_DOUBLE_EQ(c.lambda, 0.9);
    EXPECT_DOUBLE_EQ(c.eta, 0.01);
    EXPECT_DOUBLE_EQ(c.k_sigma, RotateConfig{}.k_sigma);
    ConfigFlags bad;
    bad.depletion = "erase";
    EXPECT_THROW(bad.resolve(), InputError);
    ConfigFlags neg;
    neg.n_step = 0;
    EXPECT_THROW(neg.resolve(), InputError);
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"frobnicate"}).code, 2);
    EXPECT_EQ(invoke({"bench"}).code, 2);  // --out missing
    EXPECT_EQ(invoke({"bench", "--out", "x.csv", "--lambda", "abc"}).code, 2);
    const auto r = invoke({"decompose", "--bundle", "/nonexistent", "--layer", "0", "--out", "x"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error:"), std::string::npos);
    EXPECT_EQ(invoke({"--version"}).code, 0);
}

TEST(Cli, BenchIsReproducible) {
    const auto dir = testutil::temp_dir("cli_bench");
    const auto a = with({"bench", "--out", (dir / "a.csv").string(), "--archive", (dir / "a.jsonl").string()}, kSmall);
    const auto b = with({"bench", "--out", (dir / "b.csv").string(), "--archive", (dir / "b.jsonl").string()}, kSmall);
    ASSERT_EQ(invoke(a).code, 0);
    ASSERT_EQ(invoke(b).code, 0);
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
    EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
    EXPECT_EQ(slurp(dir / "a.csv").substr(0, 10), "direction,");
}

TEST(Cli, DecomposeJobsAgree) {
    const auto& fx = fixture();
    const auto dir = testutil::temp_dir("cli_decompose");
    auto cmd = [&](const std::string& jobs, const std::string& name) {
        return invoke({"decompose", "--bundle", fx.bundle.string(), "--layer", "0", "--neurons", "0-2",
                       "--n-iter", "2", "--n-step", "200", "--jobs", jobs, "--out", (dir / name).string()});
    };
    const auto r1 = cmd("1", "j1.jsonl");
    ASSERT_EQ(r1.code, 0) << r1.err;
    ASSERT_EQ(cmd("3", "j3.jsonl").code, 0);
    EXPECT_EQ(slurp(dir / "j1.jsonl"), slurp(dir / "j3.jsonl"));
    EXPECT_EQ(read_decompositions(dir / "j1.jsonl").records.size(), 3u);
    EXPECT_NE(r1.out.find("explained_norm"), std::string::npos);
}

TEST(Cli, UnknownLayerListsValidOnes) {
    const auto& fx = fixture();
    const auto r = invoke({"decompose", "--bundle", fx.bundle.string(), "--layer", "9", "--out",
                           (fx.dir / "never.jsonl").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("0"), std::string::npos);
    EXPECT_FALSE(fs::exists(fx.dir / "never.jsonl"));
}

TEST(Cli, ReconstructAndAblate) {
    const auto& fx = fixture();
    const auto dir = testutil::temp_dir("cli_recon");
    const auto r = invoke({"reconstruct", "--archive", fx.archive.string(), "--bundle", fx.bundle.string(),
                           "--out", (dir / "r.csv").string(), "--svg", (dir / "r.svg").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir / "r.csv");
    EXPECT_EQ(csv.rfind("iteration,neurons,cosine_q1,", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);  // header + 2 iterations
    EXPECT_NE(slurp(dir / "r.svg").find("<svg"), std::string::npos);

    const auto a = invoke({"ablate", "--archive", fx.archive.string(), "--bundle", fx.bundle.string(),
                           "--neuron", "0", "--channel", "0", "--out", (dir / "a.json").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    const auto j = nlohmann::json::parse(slurp(dir / "a.json"));
    EXPECT_LT(std::abs(j.at("component_after").get<double>()),
              std::abs(j.at("component_before").get<double>()));
    EXPECT_EQ(invoke({"ablate", "--archive", fx.archive.string(), "--bundle", fx.bundle.string(),
                      "--neuron", "0", "--channel", "7"})
                  .code,
              2);
}

TEST(Cli, ReconstructRefusesForeignBundle) {
    const auto& fx = fixture();
    const auto dir = testutil::temp_dir("cli_foreign");
    auto other = nlohmann::json::parse(slurp(fx.bundle / "meta.json"));
    fs::copy(fx.bundle, dir / "other", fs::copy_options::recursive);
    other["model_id"] = "someone-else";
    spit(dir / "other" / "meta.json", other.dump());
    const auto r = invoke({"reconstruct", "--archive", fx.archive.string(), "--bundle",
                           (dir / "other").string(), "--out", (dir / "r.csv").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("someone-else"), std::string::npos) << r.err;
}

TEST(Cli, EmptyArchiveGivesHeaderOnlyCsv) {
    const auto& fx = fixture();
    const auto dir = testutil::temp_dir("cli_empty");
    const auto model = load_bundle(fx.bundle).meta.model_id;
    write_decompositions(dir / "e.jsonl", {model, 0, "gate", {}}, {});
    const auto r = invoke({"reconstruct", "--archive", (dir / "e.jsonl").string(), "--bundle",
                           fx.bundle.string(), "--out", (dir / "e.csv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir / "e.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
}

TEST(Cli, SurveyWritesPerNeuronRows) {
    const auto& fx = fixture();
    const auto dir = testutil::temp_dir("cli_survey");
    spit(dir / "ids.txt", "0,0\n");
    const auto r = invoke({"survey", "--bundle", fx.bundle.string(), "--out", (dir / "s.csv").string(),
                           "--summary-out", (dir / "q.csv").string(), "--neuron-ids",
                           (dir / "ids.txt").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir / "s.csv");
    EXPECT_EQ(csv.rfind("layer,role,neuron,excess_kurtosis\n", 0), 0u);
    EXPECT_EQ(slurp(dir / "q.csv").rfind("layer,role,count,missing,q1,median,q3,p90,p95\n", 0), 0u);
}

TEST(Cli, MatchAndSweepOnPlantedInstance) {
    const auto dir = testutil::temp_dir("cli_match");
    const auto m = invoke(with({"match", "--seeds", "0,1", "--out", (dir / "m.csv").string()}, kSmall));
    ASSERT_EQ(m.code, 0) << m.err;
    EXPECT_EQ(slurp(dir / "m.csv").rfind("seed_a,seed_b,channel_a,channel_b,cosine,jaccard\n", 0), 0u);
    const auto s = invoke(with({"sweep", "--neurons", "0", "--lambdas", "0.1,0.3", "--etas", "2e-3",
                                "--k-sigmas", "4", "--out", (dir / "s.csv").string()},
                               kSmall));
    ASSERT_EQ(s.code, 0) << s.err;
    const auto csv = slurp(dir / "s.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

// Help text is compared against files in tests/golden. Set
// ROTATELAB_UPDATE_GOLDEN=1 to rewrite them after an intended change.
class HelpGolden : public ::testing::TestWithParam<std::string> {};

TEST_P(HelpGolden, MatchesFile) {
    const std::string name = GetParam();
    std::vector<std::string> args;
    if (name != "main") args.push_back(name);
    args.push_back("--help");
    const auto r = invoke(args);
    ASSERT_EQ(r.code, 0);
    const fs::path golden = fs::path(ROTATELAB_GOLDEN_DIR) / ("help_" + name + ".txt");
    if (const char* env = std::getenv("ROTATELAB_UPDATE_GOLDEN"); env && std::string(env) == "1") {
        spit(golden, r.out);
        GTEST_SKIP() << "rewrote " << golden;
    }
    ASSERT_TRUE(fs::exists(golden)) << golden << " missing; run with ROTATELAB_UPDATE_GOLDEN=1";
    EXPECT_EQ(r.out, slurp(golden));
}

INSTANTIATE_TEST_SUITE_P(Commands, HelpGolden,
                         ::testing::Values("main", "decompose", "survey", "reconstruct", "ablate",
                                           "match", "bench", "sweep"));
