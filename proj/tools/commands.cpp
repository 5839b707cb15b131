#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "rotatelab/errors.hpp"
#include "svg.hpp"

namespace rotatelab::cli {

namespace {

using nlohmann::json;

std::int64_t parse_int(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw InputError("invalid " + what + ": '" + s + "'");
    }
    if (used != s.size()) throw InputError("invalid " + what + ": '" + s + "'");
    return v;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// "0,3,10-12" -> {0,3,10,11,12}, in the given order, duplicates removed.
std::vector<std::int64_t> parse_id_list(const std::string& list, const std::string& what) {
    std::vector<std::int64_t> out;
    std::set<std::int64_t> seen;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw InputError("empty entry in " + what + " list '" + list + "'");
        const auto dash = item.find('-', 1);
        std::int64_t lo = 0, hi = 0;
        if (dash == std::string::npos) {
            lo = hi = parse_int(item, what);
        } else {
            lo = parse_int(trim(item.substr(0, dash)), what);
            hi = parse_int(trim(item.substr(dash + 1)), what);
            if (hi < lo) throw InputError("descending range '" + item + "' in " + what + " list");
        }
        for (auto i = lo; i <= hi; ++i)
            if (seen.insert(i).second) out.push_back(i);
    }
    if (out.empty()) throw InputError("empty " + what + " list");
    return out;
}

class CsvFile {
public:
    explicit CsvFile(const std::filesystem::path& path) : path_(path) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        f_.open(path, std::ios::binary | std::ios::trunc);
        if (!f_) throw IoError("cannot open for writing: " + path.string());
    }
    void line(const std::string& s) { f_ << s << '\n'; }
    void close() {
        f_.close();
        if (!f_) throw IoError("write failed: " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream f_;
};

std::string num(double x) { return fmt::format("{:.6g}", x); }

void write_json_file(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << j.dump(2) << '\n';
    if (!f) throw IoError("write failed: " + path.string());
}

void require_out(const std::filesystem::path& p, const char* flag) {
    if (p.empty()) throw InputError(std::string("missing required option ") + flag);
}

double quartile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    return percentile(v, q);
}

std::string model_id_for(const PlantConfig& c) {
    return fmt::format("planted-d{}-V{}-K{}-s{}-seed{}", c.d, c.V, c.K, c.sparsity, c.seed);
}

struct Source {
    Unembedding unembedding;
    std::vector<TokenId> glitch;
    std::string model_id;
};

}  // namespace

RotateConfig ConfigFlags::resolve(RotateConfig base) const {
    RotateConfig c = std::move(base);
    if (!config_path.empty()) apply_config(c, read_config_file(config_path));
    if (lambda) c.lambda = *lambda;
    if (eta) c.eta = *eta;
    if (k_sigma) c.k_sigma = *k_sigma;
    if (tau) c.tau = *tau;
    if (eps_conv) c.eps_conv = *eps_conv;
    if (n_iter) c.n_iter = *n_iter;
    if (n_step) c.n_step = *n_step;
    if (seed) c.seed = *seed;
    if (moment_mode) c.moment_mode = moment_mode_from_string(*moment_mode);
    if (depletion) c.depletion = depletion_from_string(*depletion);
    if (residual_mode) c.residual_mode = residual_mode_from_string(*residual_mode);
    if (reflections) c.reflections = *reflections;
    if (top_k) c.top_k = *top_k;
    c.validate();
    return c;
}

std::vector<std::int64_t> select_neurons(const std::string& selector, std::size_t count,
                                         std::uint64_t seed) {
    const auto n = static_cast<std::int64_t>(count);
    if (selector == "all") {
        std::vector<std::int64_t> ids(count);
        std::iota(ids.begin(), ids.end(), 0);
        return ids;
    }
    if (selector.rfind("random:", 0) == 0) {
        const auto k = parse_int(selector.substr(7), "neuron count");
        if (k < 1 || k > n)
            throw InputError(fmt::format("cannot sample {} neurons from {}", k, count));
        std::vector<std::int64_t> ids(count);
        std::iota(ids.begin(), ids.end(), 0);
        std::mt19937_64 rng(seed);
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(static_cast<std::size_t>(k));
        std::sort(ids.begin(), ids.end());
        return ids;
    }
    auto ids = parse_id_list(selector, "neuron");
    for (auto i : ids)
        if (i < 0 || i >= n)
            throw InputError(fmt::format("neuron index {} out of range [0, {})", i, count));
    return ids;
}

PlantConfig PlantFlags::config() const {
    PlantConfig c;
    c.K = K;
    c.d = d;
    c.V = V;
    c.sparsity = sparsity;
    c.noise_level = noise;
    c.seed = seed;
    c.validate();
    return c;
}

ModelBundle planted_bundle(const PlantedInstance& instance) {
    ModelBundle b;
    const auto& U = instance.unembedding;
    b.meta.d = U.dim();
    b.meta.V = U.vocab_size();
    b.meta.layers = {0};
    b.unembedding = U;
    const auto& dirs = instance.neuron.directions;
    Matrix gate(1 + dirs.size(), U.dim());
    for (std::size_t j = 0; j < U.dim(); ++j) {
        gate(0, j) = static_cast<float>(instance.neuron.w[j]);
        for (std::size_t k = 0; k < dirs.size(); ++k) gate(1 + k, j) = static_cast<float>(dirs[k][j]);
    }
    b.weights[0][Role::gate] = std::move(gate);
    return b;
}

// ---- decompose -----------------------------------------------------------

CommandResult cmd_decompose(const DecomposeOptions& o) {
    require_out(o.out, "--out");
    const RotateConfig config = o.config.resolve();
    const Role role = role_from_string(o.role);
    const ModelBundle bundle = load_bundle(o.bundle);
    const Matrix& m = bundle.matrix(o.layer, role);
    const std::vector<TokenId> glitch =
        o.glitch.empty() ? bundle.glitch_ids : load_glitch_list(o.glitch);
    init_mask(bundle.unembedding, glitch);  // range check before any work

    const auto ids = select_neurons(o.neurons, m.rows(), config.seed);
    std::vector<WeightVector> neurons;
    neurons.reserve(ids.size());
    for (auto i : ids) neurons.push_back(bundle.neuron(o.layer, role, i));

    spdlog::info("decomposing {} neurons of layer {} ({}) on {} threads", neurons.size(),
                 o.layer, o.role, o.jobs == 0 ? std::string("all") : std::to_string(o.jobs));
    auto batch = decompose_batch(neurons, bundle.unembedding, config, glitch, o.jobs);

    std::vector<Decomposition> records;
    for (auto& d : batch.decompositions)
        if (d) records.push_back(std::move(*d));
    ArchiveHeader header{bundle.meta.model_id, o.layer, o.role, config};
    if (o.out.has_parent_path()) std::filesystem::create_directories(o.out.parent_path());
    write_decompositions(o.out, header, records);

    CommandResult r;
    r.artifacts.push_back(o.out);
    std::string s = fmt::format("{:<16} {:>8} {:>14} {:>12}\n", "neuron", "channels",
                                "explained_norm", "orthogonality");
    for (const auto& d : records) {
        const auto dirs = directions(d.channels);
        const double en = d.trace.empty() ? 0.0 : d.trace.back().explained_norm;
        const std::string orth = dirs.size() >= 2 ? num(orthogonality_score(dirs)) : "-";
        s += fmt::format("{:<16} {:>8} {:>14} {:>12}\n", d.neuron.str(), d.channels.size(),
                         num(en), orth);
    }
    for (const auto& f : batch.failures) {
        s += fmt::format("FAILED {}: {}\n", f.neuron.str(), f.message);
        r.exit_code = 1;
    }
    s += fmt::format("wrote {} records to {}\n", records.size(), o.out.string());
    r.summary = std::move(s);
    return r;
}

// ---- survey --------------------------------------------------------------

CommandResult cmd_survey(const SurveyOptions& o) {
    require_out(o.out, "--out");
    const Role role = role_from_string(o.role);
    const MomentMode mode = moment_mode_from_string(o.mode);
    const ModelBundle bundle = load_bundle(o.bundle);

    std::vector<std::int64_t> layers;
    if (o.layers == "all") {
        for (const auto& [l, roles] : bundle.weights)
            if (roles.count(role)) layers.push_back(l);
        if (layers.empty()) throw InputError("bundle has no " + o.role + " matrices");
    } else {
        layers = parse_id_list(o.layers, "layer");
        for (auto l : layers) bundle.matrix(l, role);
    }

    const TokenMask mask = init_mask(bundle.unembedding, bundle.glitch_ids);
    std::map<std::int64_t, SurveyResult> results;
    CsvFile csv(o.out);
    csv.line("layer,role,neuron,excess_kurtosis");
    for (auto l : layers) {
        auto res = layer_kurtosis_survey(bundle.matrix(l, role), bundle.unembedding, mask, mode);
        for (std::size_t i = 0; i < res.kurtosis.size(); ++i)
            csv.line(fmt::format("{},{},{},{}", l, o.role, i,
                                 res.kurtosis[i] ? num(*res.kurtosis[i]) : std::string("")));
        results.emplace(l, std::move(res));
    }
    csv.close();

    CommandResult r;
    r.artifacts.push_back(o.out);
    std::string s = fmt::format("{:>6} {:>7} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10}\n", "layer",
                                "count", "missing", "q1", "median", "q3", "p90", "p95");
    for (const auto& [l, res] : results) {
        const auto& m = res.summary;
        s += fmt::format("{:>6} {:>7} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10}\n", l, m.count,
                         m.missing, num(m.q1), num(m.median), num(m.q3), num(m.p90), num(m.p95));
    }
    if (!o.summary_out.empty()) {
        CsvFile sum(o.summary_out);
        sum.line("layer,role,count,missing,q1,median,q3,p90,p95");
        for (const auto& [l, res] : results) {
            const auto& m = res.summary;
            sum.line(fmt::format("{},{},{},{},{},{},{},{},{}", l, o.role, m.count, m.missing,
                                 num(m.q1), num(m.median), num(m.q3), num(m.p90), num(m.p95)));
        }
        sum.close();
        r.artifacts.push_back(o.summary_out);
    }

    if (!o.neuron_ids.empty()) {
        std::ifstream f(o.neuron_ids);
        if (!f) throw InputError("cannot open " + o.neuron_ids.string());
        std::string line;
        std::size_t lineno = 0;
        std::vector<double> ranks;
        s += "\nlocated neurons:\n";
        while (std::getline(f, line)) {
            ++lineno;
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            std::int64_t layer = 0, index = 0;
            const auto comma = line.find(',');
            try {
                if (comma == std::string::npos) {
                    if (results.size() != 1)
                        throw InputError("entry without a layer needs a single surveyed layer");
                    layer = results.begin()->first;
                    index = parse_int(line, "neuron index");
                } else {
                    layer = parse_int(trim(line.substr(0, comma)), "layer");
                    index = parse_int(trim(line.substr(comma + 1)), "neuron index");
                }
            } catch (const InputError& e) {
                throw InputError(fmt::format("{}:{}: {}", o.neuron_ids.string(), lineno, e.what()));
            }
            auto it = results.find(layer);
            if (it == results.end())
                throw InputError(fmt::format("{}:{}: layer {} was not surveyed",
                                             o.neuron_ids.string(), lineno, layer));
            const auto& res = it->second;
            if (index < 0 || static_cast<std::size_t>(index) >= res.kurtosis.size())
                throw InputError(fmt::format("{}:{}: neuron {} out of range [0, {})",
                                             o.neuron_ids.string(), lineno, index,
                                             res.kurtosis.size()));
            const auto& k = res.kurtosis[static_cast<std::size_t>(index)];
            if (!k) {
                s += fmt::format("  L{}.{}.{}  degenerate\n", layer, o.role, index);
                continue;
            }
            const double rank = res.percentile_rank(*k);
            ranks.push_back(rank);
            s += fmt::format("  L{}.{}.{}  kurtosis {}  percentile {}\n", layer, o.role, index,
                             num(*k), num(rank));
        }
        if (!ranks.empty())
            s += fmt::format("  median percentile of {} located neurons: {}\n", ranks.size(),
                             num(quartile(ranks, 50)));
    }

    if (!o.svg.empty()) {
        Series q1{"q1", {}, {}, true}, med{"median", {}, {}, false}, q3{"q3", {}, {}, true};
        for (const auto& [l, res] : results) {
            for (auto* sr : {&q1, &med, &q3}) sr->x.push_back(static_cast<double>(l));
            q1.y.push_back(res.summary.q1);
            med.y.push_back(res.summary.median);
            q3.y.push_back(res.summary.q3);
        }
        write_line_plot(o.svg, "Vocabulary kurtosis by layer", "layer", "excess kurtosis",
                        {q1, med, q3});
        r.artifacts.push_back(o.svg);
    }
    r.summary = std::move(s);
    return r;
}

// ---- reconstruct ---------------------------------------------------------

CommandResult cmd_reconstruct(const ReconstructOptions& o) {
    require_out(o.out, "--out");
    const ChannelArchive archive = read_decompositions(o.archive);
    const ModelBundle bundle = load_bundle(o.bundle);
    if (archive.header.model_id != bundle.meta.model_id)
        throw InputError("archive was produced from model '" + archive.header.model_id +
                         "' but the bundle is '" + bundle.meta.model_id + "'");

    std::vector<std::vector<double>> cos_curves, en_curves;
    for (const auto& d : archive.records) {
        if (d.neuron.role == "synthetic")
            throw InputError("record " + d.neuron.str() + " has no weights in a bundle");
        const Vec w = bundle.neuron(d.neuron.layer, role_from_string(d.neuron.role), d.neuron.index)
                          .values;
        for (const auto& c : d.channels)
            if (c.v.size() != w.size())
                throw InputError(fmt::format("record {} has dimension {} but the bundle has {}",
                                             d.neuron.str(), c.v.size(), w.size()));
        const auto dirs = directions(d.channels);
        std::vector<double> cs;
        for (const auto& v : dirs) cs.push_back(cosine(w, v));
        cos_curves.push_back(std::move(cs));
        en_curves.push_back(explained_norm_curve(w, dirs, archive.header.config.residual_mode));
    }

    std::size_t T = 0;
    for (const auto& c : cos_curves) T = std::max(T, c.size());

    CsvFile csv(o.out);
    csv.line(
        "iteration,neurons,cosine_q1,cosine_median,cosine_q3,explained_norm_q1,"
        "explained_norm_median,explained_norm_q3");
    Series emed{"explained norm", {}, {}, false}, cmed{"cosine with w", {}, {}, false};
    Series eq1{"EN q1", {}, {}, true}, eq3{"EN q3", {}, {}, true};
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> cs, es;
        for (std::size_t n = 0; n < cos_curves.size(); ++n) {
            if (cos_curves[n].size() <= t) continue;
            cs.push_back(cos_curves[n][t]);
            es.push_back(en_curves[n][t]);
        }
        const double x = static_cast<double>(t + 1);
        csv.line(fmt::format("{},{},{},{},{},{},{},{}", t + 1, cs.size(), num(quartile(cs, 25)),
                             num(quartile(cs, 50)), num(quartile(cs, 75)), num(quartile(es, 25)),
                             num(quartile(es, 50)), num(quartile(es, 75))));
        for (auto* s : {&emed, &cmed, &eq1, &eq3}) s->x.push_back(x);
        emed.y.push_back(quartile(es, 50));
        eq1.y.push_back(quartile(es, 25));
        eq3.y.push_back(quartile(es, 75));
        cmed.y.push_back(quartile(cs, 50));
    }
    csv.close();

    CommandResult r;
    r.artifacts.push_back(o.out);
    if (!o.svg.empty()) {
        write_line_plot(o.svg, "Reconstruction by iteration", "iteration", "median",
                        {emed, eq1, eq3, cmed});
        r.artifacts.push_back(o.svg);
    }
    r.summary = fmt::format("{} neurons, up to {} iterations", archive.records.size(), T);
    if (T > 0)
        r.summary += fmt::format("; final median explained norm {}",
                                 num(emed.y.back()));
    r.summary += "\n";
    return r;
}

// ---- ablate --------------------------------------------------------------

CommandResult cmd_ablate(const AblateOptions& o) {
    const AblationMode mode = ablation_mode_from_string(o.mode);
    const ChannelArchive archive = read_decompositions(o.archive);
    const ModelBundle bundle = load_bundle(o.bundle);
    if (archive.header.model_id != bundle.meta.model_id)
        throw InputError("archive was produced from model '" + archive.header.model_id +
                         "' but the bundle is '" + bundle.meta.model_id + "'");

    const Decomposition* rec = nullptr;
    for (const auto& d : archive.records) {
        if (d.neuron.index != o.neuron) continue;
        if (o.layer && d.neuron.layer != *o.layer) continue;
        if (rec) throw InputError("several records match; pass --layer");
        rec = &d;
    }
    if (!rec) throw InputError(fmt::format("no record for neuron {} in the archive", o.neuron));
    if (o.channel >= rec->channels.size())
        throw InputError(fmt::format("channel {} out of range; {} has {} channels", o.channel,
                                     rec->neuron.str(), rec->channels.size()));

    const Vec w =
        bundle.neuron(rec->neuron.layer, role_from_string(rec->neuron.role), rec->neuron.index)
            .values;
    const Vec& v = rec->channels[o.channel].v;
    if (v.size() != w.size())
        throw InputError(fmt::format("channel has dimension {} but the bundle has {}", v.size(),
                                     w.size()));
    const Vec wa = ablate(w, v, mode);
    const Vec vh = normalized(v);
    const double nw = norm(w);

    json others = json::array();
    for (std::size_t i = 0; i < rec->channels.size(); ++i) {
        if (i == o.channel) continue;
        const Vec u = normalized(rec->channels[i].v);
        const double before = dot(w, u) / nw, after = dot(wa, u) / nw;
        others.push_back({{"channel", i}, {"before", before}, {"after", after}});
    }
    json diag = {
        {"neuron", rec->neuron.str()},
        {"channel", o.channel},
        {"mode", to_string(mode)},
        {"component_before", dot(w, vh) / nw},
        {"component_after", dot(wa, vh) / nw},
        {"norm_ratio", norm(wa) / nw},
        {"cosine_with_original", cosine(w, wa)},
        {"other_channels", others},
        {"ablated", wa},
    };

    CommandResult r;
    r.summary = fmt::format(
        "{} channel {} ({}): component {} -> {}, norm ratio {}, cosine with original {}\n",
        rec->neuron.str(), o.channel, to_string(mode), num(diag["component_before"].get<double>()),
        num(diag["component_after"].get<double>()), num(diag["norm_ratio"].get<double>()), num(diag["cosine_with_original"].get<double>()));
    if (!o.out.empty()) {
        write_json_file(o.out, diag);
        r.artifacts.push_back(o.out);
    }
    return r;
}

// ---- match ---------------------------------------------------------------

CommandResult cmd_match(const MatchOptions& o) {
    require_out(o.out, "--out");
    if (o.seeds.size() < 2) throw InputError("need at least two seeds");
    const RotateConfig config = o.config.resolve();

    WeightVector w;
    Source src;
    if (o.bundle.empty()) {
        auto inst = plant(o.plant.config());
        w = {{0, "synthetic", 0}, inst.neuron.w};
        src.unembedding = std::move(inst.unembedding);
    } else {
        auto bundle = load_bundle(o.bundle);
        w = bundle.neuron(o.layer, role_from_string(o.role), o.neuron);
        src.unembedding = std::move(bundle.unembedding);
        src.glitch = bundle.glitch_ids;
    }
    const auto rep = consistency_experiment(w, src.unembedding, config, o.seeds, src.glitch,
                                            o.topk, o.jobs);

    CsvFile csv(o.out);
    csv.line("seed_a,seed_b,channel_a,channel_b,cosine,jaccard");
    std::string s;
    for (const auto& p : rep.pairs) {
        for (const auto& m : p.report.pairs)
            csv.line(fmt::format("{},{},{},{},{},{}", rep.seeds[p.a], rep.seeds[p.b], m.a, m.b,
                                 num(m.cosine), num(m.topk_jaccard)));
        s += fmt::format("seeds {} vs {}: {} matched, mean cosine {}, mean jaccard@{} {}\n",
                         rep.seeds[p.a], rep.seeds[p.b], p.report.pairs.size(),
                         num(p.report.mean_cosine), o.topk, num(p.report.mean_jaccard));
    }
    csv.close();
    s += fmt::format("overall: mean cosine {}, mean jaccard {}\n", num(rep.mean_cosine),
                     num(rep.mean_jaccard));
    return {0, s, {o.out}};
}

// ---- bench ---------------------------------------------------------------

CommandResult cmd_bench(const BenchOptions& o) {
    require_out(o.out, "--out");
    const PlantConfig pc = o.plant.config();
    const RotateConfig config = o.config.resolve();
    const auto inst = plant(pc);
    const WeightVector w{{0, to_string(Role::gate), 0}, inst.neuron.w};
    const auto dec = decompose(w, inst.unembedding, config, {});
    const auto dirs = directions(dec.channels);
    const auto rec = recovery_score(dirs, inst.neuron, inst.unembedding);

    CommandResult r;
    CsvFile csv(o.out);
    csv.line("direction,coefficient,channel,abs_cosine,support_jaccard");
    std::string s = fmt::format("{} channels found for {} planted directions\n",
                                dec.channels.size(), pc.K);
    for (const auto& x : rec) {
        csv.line(fmt::format("{},{},{},{},{}", x.direction,
                             num(inst.neuron.coefficients[x.direction]), x.channel,
                             num(x.abs_cosine), num(x.support_jaccard)));
        s += fmt::format("direction {} (coefficient {}): channel {}, |cos| {}, jaccard {}\n",
                         x.direction, num(inst.neuron.coefficients[x.direction]), x.channel,
                         num(x.abs_cosine), num(x.support_jaccard));
    }
    csv.close();
    r.artifacts.push_back(o.out);

    if (!o.archive.empty()) {
        if (o.archive.has_parent_path())
            std::filesystem::create_directories(o.archive.parent_path());
        write_decompositions(o.archive, {model_id_for(pc), 0, to_string(Role::gate), config},
                             {dec});
        r.artifacts.push_back(o.archive);
    }
    if (!o.bundle_out.empty()) {
        auto b = planted_bundle(inst);
        b.meta.model_id = model_id_for(pc);
        write_bundle(o.bundle_out, b);
        json truth = {
            {"seed", pc.seed},
            {"coefficients", inst.neuron.coefficients},
            {"directions", inst.neuron.directions},
            {"token_supports", inst.neuron.token_supports},
            {"noise", inst.neuron.noise},
            {"w", inst.neuron.w},
        };
        write_json_file(o.bundle_out / "planted.json", truth);
        r.artifacts.push_back(o.bundle_out);
    }
    r.summary = std::move(s);
    return r;
}

// ---- sweep ---------------------------------------------------------------

CommandResult cmd_sweep(const SweepOptions& o) {
    require_out(o.out, "--out");
    const RotateConfig base = o.config.resolve(default_sweep_config());
    SweepGrid grid{o.lambdas, o.etas, o.k_sigmas};
    if (grid.lambdas.empty() || grid.etas.empty() || grid.k_sigmas.empty())
        throw InputError("sweep grid has an empty axis");

    std::vector<WeightVector> neurons;
    Source src;
    if (o.bundle.empty()) {
        auto inst = plant(o.plant.config());
        neurons.push_back({{0, "synthetic", 0}, inst.neuron.w});
        src.unembedding = std::move(inst.unembedding);
    } else {
        auto bundle = load_bundle(o.bundle);
        const Role role = role_from_string(o.role);
        const auto ids = select_neurons(o.neurons, bundle.matrix(o.layer, role).rows(), base.seed);
        for (auto i : ids) neurons.push_back(bundle.neuron(o.layer, role, i));
        src.unembedding = std::move(bundle.unembedding);
        src.glitch = bundle.glitch_ids;
    }

    const auto rep = sweep(neurons, src.unembedding, grid, base, src.glitch, o.jobs);
    CsvFile csv(o.out);
    csv.line("rank,lambda,eta,k_sigma,explained_norm,orthogonality,harmonic_mean,neurons");
    std::string s = fmt::format("{:>4} {:>7} {:>8} {:>7} {:>10} {:>10} {:>10}\n", "rank",
                                "lambda", "eta", "k_sigma", "EN", "orth", "hmean");
    for (std::size_t i = 0; i < rep.ranked.size(); ++i) {
        const auto& x = rep.ranked[i];
        csv.line(fmt::format("{},{},{},{},{},{},{},{}", i + 1, num(x.point.lambda),
                             num(x.point.eta), num(x.point.k_sigma), num(x.explained_norm),
                             num(x.orthogonality), num(x.harmonic_mean), x.neurons));
        s += fmt::format("{:>4} {:>7} {:>8} {:>7} {:>10} {:>10} {:>10}\n", i + 1,
                         num(x.point.lambda), num(x.point.eta), num(x.point.k_sigma),
                         num(x.explained_norm), num(x.orthogonality), num(x.harmonic_mean));
    }
    csv.close();
    for (const auto& f : rep.failures)
        s += fmt::format("FAILED lambda={} eta={} k_sigma={}: {}\n", num(f.point.lambda),
                         num(f.point.eta), num(f.point.k_sigma), f.message);
    return {rep.ranked.empty() ? 1 : 0, s, {o.out}};
}

}  // namespace rotatelab::cli
