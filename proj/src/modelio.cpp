#include "rotatelab/modelio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "rotatelab/errors.hpp"

namespace rotatelab {

static_assert(std::endian::native == std::endian::little,
              "safetensors payloads are little-endian; big-endian hosts are not supported");

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return std::move(ss).str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(what + ": invalid JSON: " + e.what());
    }
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "F32") return 4;
    if (dtype == "F16" || dtype == "BF16") return 2;
    return 0;
}

}  // namespace

// ---- safetensors -------------------------------------------------------

const char* to_string(DType t) {
    switch (t) {
        case DType::f32: return "F32";
        case DType::f16: return "F16";
        case DType::bf16: return "BF16";
    }
    return "?";
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t mant = h & 0x3FFu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3FFu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1F) {
        bits = sign | 0x7F800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

float bfloat16_to_float(std::uint16_t h) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

namespace {

struct RawHeader {
    json header;
    std::size_t data_start = 0;
};

RawHeader parse_header(const std::string& bytes, const fs::path& path) {
    if (bytes.size() < 8) throw InputError(path.string() + ": too short for a safetensors file");
    std::uint64_t n = 0;
    std::memcpy(&n, bytes.data(), 8);
    if (n > bytes.size() - 8) {
        throw InputError(path.string() + ": header length " + std::to_string(n) +
                         " exceeds file size");
    }
    RawHeader h;
    h.header = parse_json(bytes.substr(8, n), path.string());
    if (!h.header.is_object()) throw InputError(path.string() + ": header is not a JSON object");
    h.data_start = 8 + n;
    return h;
}

std::vector<std::size_t> parse_shape(const json& entry, const std::string& name) {
    if (!entry.contains("shape") || !entry["shape"].is_array())
        throw InputError("tensor " + name + ": missing shape");
    std::vector<std::size_t> shape;
    for (const auto& s : entry["shape"]) {
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
            throw InputError("tensor " + name + ": bad shape entry");
        shape.push_back(s.get<std::size_t>());
    }
    return shape;
}

}  // namespace

std::map<std::string, std::pair<std::string, std::vector<std::size_t>>> read_safetensors_header(
    const fs::path& path) {
    const auto raw = parse_header(read_file(path), path);
    std::map<std::string, std::pair<std::string, std::vector<std::size_t>>> out;
    for (const auto& [name, entry] : raw.header.items()) {
        if (name == "__metadata__") continue;
        out[name] = {entry.value("dtype", std::string{}), parse_shape(entry, name)};
    }
    return out;
}

std::map<std::string, Tensor> read_safetensors(const fs::path& path) {
    const std::string bytes = read_file(path);
    const auto raw = parse_header(bytes, path);
    const std::size_t payload = bytes.size() - raw.data_start;
    std::map<std::string, Tensor> out;
    for (const auto& [name, entry] : raw.header.items()) {
        if (name == "__metadata__") continue;
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("data_offsets"))
            throw InputError("tensor " + name + ": malformed header entry");
        const std::string dtype = entry["dtype"].get<std::string>();
        const std::size_t es = dtype_size(dtype);
        if (es == 0) {
            throw InputError("tensor " + name + ": unsupported dtype " + dtype +
                             " (expected F32, F16 or BF16)");
        }
        Tensor t;
        t.shape = parse_shape(entry, name);
        if (t.shape.empty() || t.shape.size() > 2)
            throw InputError("tensor " + name + ": expected rank 1 or 2");
        std::size_t count = 1;
        for (auto s : t.shape) count *= s;
        const auto& off = entry["data_offsets"];
        const auto begin = off.at(0).get<std::size_t>();
        const auto end = off.at(1).get<std::size_t>();
        if (end < begin || end > payload || end - begin != count * es) {
            throw InputError("tensor " + name + ": data offsets [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") do not match shape and dtype");
        }
        const char* src = bytes.data() + raw.data_start + begin;
        t.data.resize(count);
        if (dtype == "F32") {
            t.source_dtype = DType::f32;
            std::memcpy(t.data.data(), src, count * 4);
        } else {
            t.source_dtype = dtype == "F16" ? DType::f16 : DType::bf16;
            for (std::size_t i = 0; i < count; ++i) {
                std::uint16_t h;
                std::memcpy(&h, src + 2 * i, 2);
                t.data[i] = t.source_dtype == DType::f16 ? half_to_float(h) : bfloat16_to_float(h);
            }
        }
        out.emplace(name, std::move(t));
    }
    return out;
}

void write_safetensors(const fs::path& path, const std::map<std::string, Tensor>& tensors,
                       const std::map<std::string, std::string>& metadata) {
    json header = json::object();
    if (!metadata.empty()) header["__metadata__"] = metadata;
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        std::size_t count = 1;
        for (auto s : t.shape) count *= s;
        if (count != t.data.size())
            throw InputError("tensor " + name + ": shape does not match data length");
        header[name] = {{"dtype", "F32"},
                        {"shape", t.shape},
                        {"data_offsets", {offset, offset + 4 * count}}};
        offset += 4 * count;
    }
    std::string h = header.dump();
    while (h.size() % 8 != 0) h.push_back(' ');
    std::string bytes(8, '\0');
    const std::uint64_t n = h.size();
    std::memcpy(bytes.data(), &n, 8);
    bytes += h;
    bytes.reserve(bytes.size() + offset);
    for (const auto& [name, t] : tensors)
        bytes.append(reinterpret_cast<const char*>(t.data.data()), 4 * t.data.size());
    write_file(path, bytes);
}

// ---- bundles -------------------------------------------------------------

const char* to_string(Role r) {
    switch (r) {
        case Role::gate: return "gate";
        case Role::in: return "in";
        case Role::out: return "out";
    }
    return "?";
}

Role role_from_string(const std::string& s) {
    if (s == "gate") return Role::gate;
    if (s == "in") return Role::in;
    if (s == "out") return Role::out;
    throw InputError("unknown role '" + s + "' (expected gate | in | out)");
}

std::string tensor_name(std::int64_t layer, Role role) {
    const char* proj = role == Role::gate ? "gate_proj" : role == Role::in ? "up_proj" : "down_proj";
    return "model.layers." + std::to_string(layer) + ".mlp." + proj + ".weight";
}

bool ModelBundle::has(std::int64_t layer, Role role) const {
    auto it = weights.find(layer);
    return it != weights.end() && it->second.count(role) > 0;
}

const Matrix& ModelBundle::matrix(std::int64_t layer, Role role) const {
    if (!has(layer, role)) {
        std::string valid;
        for (const auto& [l, roles] : weights)
            if (roles.count(role)) valid += (valid.empty() ? "" : ", ") + std::to_string(l);
        throw InputError("layer " + std::to_string(layer) + " has no " + to_string(role) +
                         " matrix; valid layers: " + (valid.empty() ? "none" : valid));
    }
    return weights.at(layer).at(role);
}

WeightVector ModelBundle::neuron(std::int64_t layer, Role role, std::int64_t index) const {
    const Matrix& m = matrix(layer, role);
    if (index < 0 || static_cast<std::size_t>(index) >= m.rows()) {
        throw InputError("neuron index " + std::to_string(index) + " outside [0, " +
                         std::to_string(m.rows()) + ")");
    }
    return {{layer, to_string(role), index}, m.row_vec(static_cast<std::size_t>(index))};
}

std::vector<std::string> read_vocab(const fs::path& path, std::size_t expected_V) {
    const json j = parse_json(read_file(path), path.string());
    if (!j.is_object()) throw InputError(path.string() + ": expected an object of token -> id");
    if (j.size() != expected_V) {
        throw InputError(path.string() + ": vocab has " + std::to_string(j.size()) +
                         " entries but the unembedding has V = " + std::to_string(expected_V));
    }
    std::vector<std::string> table(expected_V);
    std::vector<bool> seen(expected_V, false);
    for (const auto& [token, id] : j.items()) {
        if (!id.is_number_integer())
            throw InputError(path.string() + ": id of token '" + token + "' is not an integer");
        const auto i = id.get<std::int64_t>();
        if (i < 0 || static_cast<std::size_t>(i) >= expected_V) {
            throw InputError(path.string() + ": id " + std::to_string(i) + " outside [0, " +
                             std::to_string(expected_V) + ")");
        }
        if (seen[static_cast<std::size_t>(i)])
            throw InputError(path.string() + ": id " + std::to_string(i) + " assigned twice");
        seen[static_cast<std::size_t>(i)] = true;
        table[static_cast<std::size_t>(i)] = token;
    }
    return table;
}

std::vector<TokenId> load_glitch_list(const fs::path& path) {
    const std::string text = read_file(path);
    const auto first = text.find_first_not_of(" \t\r\n");
    std::set<TokenId> ids;
    if (first == std::string::npos) return {};
    if (text[first] == '[') {
        const json j = parse_json(text, path.string());
        if (!j.is_array()) throw InputError(path.string() + ": expected a JSON array");
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (!j[i].is_number_integer()) {
                throw InputError(path.string() + ": element " + std::to_string(i) +
                                 " is not an integer");
            }
            ids.insert(j[i].get<TokenId>());
        }
        return {ids.begin(), ids.end()};
    }
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        const std::string tok = line.substr(b, e - b + 1);
        TokenId id = 0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), id);
        if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
            throw InputError(path.string() + ":" + std::to_string(lineno) +
                             ": not an integer: '" + tok + "'");
        }
        ids.insert(id);
    }
    return {ids.begin(), ids.end()};
}

ModelBundle load_bundle(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InputError("bundle directory not found: " + dir.string());
    ModelBundle b;

    const json meta = parse_json(read_file(dir / "meta.json"), (dir / "meta.json").string());
    if (!meta.is_object()) throw InputError("meta.json: expected an object");
    for (const char* key : {"d", "V"})
        if (!meta.contains(key) || !meta[key].is_number_integer())
            throw InputError(std::string("meta.json: missing integer '") + key + "'");
    b.meta.d = meta["d"].get<std::size_t>();
    b.meta.V = meta["V"].get<std::size_t>();
    b.meta.model_id = meta.value("model_id", dir.filename().string());
    b.meta.tied_embeddings = meta.value("tied_embeddings", false);
    for (const auto& [k, v] : meta.items())
        if (k != "d" && k != "V" && k != "model_id" && k != "tied_embeddings" && k != "layers")
            b.meta.extra[k] = v;

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".safetensors")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no .safetensors file in " + dir.string());

    std::map<std::string, Tensor> tensors;
    for (const auto& f : files) {
        for (auto& [name, t] : read_safetensors(f)) {
            if (tensors.count(name))
                throw InputError("tensor " + name + " appears in more than one file");
            tensors.emplace(name, std::move(t));
        }
    }

    const char* u_name = kUnembeddingTensor;
    if (!tensors.count(u_name)) {
        if (b.meta.tied_embeddings && tensors.count(kEmbeddingTensor)) {
            u_name = kEmbeddingTensor;
        } else {
            throw InputError(std::string("missing tensor ") + kUnembeddingTensor);
        }
    }
    Tensor& ut = tensors.at(u_name);
    if (ut.shape.size() != 2 || ut.shape[0] != b.meta.V || ut.shape[1] != b.meta.d) {
        std::string got;
        for (auto s : ut.shape) got += (got.empty() ? "" : "x") + std::to_string(s);
        throw InputError(std::string("tensor ") + u_name + ": shape " + got + " but meta.json says V x d = " +
                         std::to_string(b.meta.V) + "x" + std::to_string(b.meta.d));
    }
    std::vector<std::string> vocab = read_vocab(dir / "vocab.json", b.meta.V);
    b.unembedding = Unembedding(Matrix(b.meta.V, b.meta.d, std::move(ut.data)), std::move(vocab));

    static const std::regex pat(R"(model\.layers\.(\d+)\.mlp\.(gate|up|down)_proj\.weight)");
    std::set<std::int64_t> layers;
    for (auto& [name, t] : tensors) {
        std::smatch m;
        if (!std::regex_match(name, m, pat)) continue;
        const std::int64_t layer = std::stoll(m[1].str());
        const std::string kind = m[2].str();
        if (t.shape.size() != 2) throw InputError("tensor " + name + ": expected rank 2");
        Matrix mat(t.shape[0], t.shape[1], std::move(t.data));
        Role role = Role::gate;
        if (kind == "up") role = Role::in;
        if (kind == "down") {
            role = Role::out;
            if (mat.rows() != b.meta.d) {
                throw InputError("tensor " + name + ": expected " + std::to_string(b.meta.d) +
                                 " rows (d), got " + std::to_string(mat.rows()));
            }
            mat = mat.transposed();
        } else if (mat.cols() != b.meta.d) {
            throw InputError("tensor " + name + ": expected " + std::to_string(b.meta.d) +
                             " columns (d), got " + std::to_string(mat.cols()));
        }
        b.weights[layer][role] = std::move(mat);
        layers.insert(layer);
    }
    for (const auto& [layer, roles] : b.weights) {
        std::size_t da = 0;
        for (const auto& [role, mat] : roles) {
            if (da != 0 && mat.rows() != da) {
                throw InputError("layer " + std::to_string(layer) +
                                 ": gate/up/down projections disagree on the neuron count");
            }
            da = mat.rows();
        }
    }
    b.meta.layers.assign(layers.begin(), layers.end());

    if (fs::exists(dir / "glitch.txt")) b.glitch_ids = load_glitch_list(dir / "glitch.txt");
    return b;
}

void write_bundle(const fs::path& dir, const ModelBundle& bundle) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    const Unembedding& u = bundle.unembedding;
    std::map<std::string, Tensor> tensors;
    tensors[kUnembeddingTensor] = {{u.vocab_size(), u.dim()}, u.weights().data(), DType::f32};
    std::vector<std::int64_t> layers;
    for (const auto& [layer, roles] : bundle.weights) {
        layers.push_back(layer);
        for (const auto& [role, mat] : roles) {
            if (role == Role::out) {
                const Matrix t = mat.transposed();
                tensors[tensor_name(layer, role)] = {{t.rows(), t.cols()}, t.data(), DType::f32};
            } else {
                tensors[tensor_name(layer, role)] = {{mat.rows(), mat.cols()}, mat.data(), DType::f32};
            }
        }
    }
    write_safetensors(dir / "model.safetensors", tensors, {{"format", "pt"}});

    json meta = bundle.meta.extra.is_object() ? bundle.meta.extra : json::object();
    meta["model_id"] = bundle.meta.model_id;
    meta["d"] = u.dim();
    meta["V"] = u.vocab_size();
    meta["tied_embeddings"] = bundle.meta.tied_embeddings;
    meta["layers"] = layers;
    write_file(dir / "meta.json", meta.dump(2) + "\n");

    json vocab = json::object();
    for (std::size_t i = 0; i < u.vocab_size(); ++i)
        vocab[u.has_tokens() ? u.tokens()[i] : "<" + std::to_string(i) + ">"] = i;
    write_file(dir / "vocab.json", vocab.dump(-1, ' ', false, json::error_handler_t::replace) + "\n");

    if (!bundle.glitch_ids.empty()) {
        std::string g;
        for (auto id : bundle.glitch_ids) g += std::to_string(id) + "\n";
        write_file(dir / "glitch.txt", g);
    }
}

// ---- run configuration ---------------------------------------------------

namespace {

double as_number(const json& v, const std::string& key) {
    if (!v.is_number()) throw InputError("config key '" + key + "' must be a number");
    return v.get<double>();
}

std::int64_t as_integer(const json& v, const std::string& key) {
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (d == std::floor(d)) return static_cast<std::int64_t>(d);
    }
    throw InputError("config key '" + key + "' must be an integer");
}

std::string as_string(const json& v, const std::string& key) {
    if (!v.is_string()) throw InputError("config key '" + key + "' must be a string");
    return v.get<std::string>();
}

// Flat TOML: `key = value` lines, # comments, no tables or arrays.
json parse_flat_toml(const std::string& text, const std::string& where) {
    json out = json::object();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& m) {
        throw InputError(where + ":" + std::to_string(lineno) + ": " + m);
    };
    while (std::getline(in, line)) {
        ++lineno;
        bool quoted = false;
        char q = 0;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (quoted) {
                if (line[i] == q) quoted = false;
            } else if (line[i] == '"' || line[i] == '\'') {
                quoted = true;
                q = line[i];
            } else if (line[i] == '#') {
                line.resize(i);
                break;
            }
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string{};
            return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') fail("tables are not supported; use flat keys");
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) fail("expected key = value");
        if (out.contains(key)) fail("duplicate key '" + key + "'");
        if (val.front() == '"' || val.front() == '\'') {
            if (val.size() < 2 || val.back() != val.front()) fail("unterminated string");
            out[key] = val.substr(1, val.size() - 2);
        } else if (val == "true" || val == "false") {
            out[key] = val == "true";
        } else {
            std::string num;
            for (char c : val)
                if (c != '_') num.push_back(c);
            std::int64_t i = 0;
            auto [p1, e1] = std::from_chars(num.data(), num.data() + num.size(), i);
            if (e1 == std::errc{} && p1 == num.data() + num.size()) {
                out[key] = i;
                continue;
            }
            double d = 0.0;
            auto [p2, e2] = std::from_chars(num.data(), num.data() + num.size(), d);
            if (e2 == std::errc{} && p2 == num.data() + num.size()) {
                out[key] = d;
                continue;
            }
            fail("cannot parse value '" + val + "'");
        }
    }
    return out;
}

}  // namespace

void apply_config(RotateConfig& c, const json& flat) {
    if (!flat.is_object()) throw InputError("config must be a flat object");
    for (const auto& [key, v] : flat.items()) {
        if (key == "lambda") c.lambda = as_number(v, key);
        else if (key == "eta") c.eta = as_number(v, key);
        else if (key == "k_sigma") c.k_sigma = as_number(v, key);
        else if (key == "n_iter") c.n_iter = as_integer(v, key);
        else if (key == "n_step") c.n_step = as_integer(v, key);
        else if (key == "tau") c.tau = v.is_null() ? std::nullopt : std::optional(as_number(v, key));
        else if (key == "eps_conv") c.eps_conv = as_number(v, key);
        else if (key == "seed") {
            if (v.is_number_unsigned()) c.seed = v.get<std::uint64_t>();
            else c.seed = static_cast<std::uint64_t>(as_integer(v, key));
        }
        else if (key == "moment_mode") c.moment_mode = moment_mode_from_string(as_string(v, key));
        else if (key == "depletion") c.depletion = depletion_from_string(as_string(v, key));
        else if (key == "reflections") c.reflections = static_cast<int>(as_integer(v, key));
        else if (key == "top_k") {
            const auto k = as_integer(v, key);
            if (k < 1) throw InputError("config key 'top_k' must be >= 1");
            c.top_k = static_cast<std::size_t>(k);
        }
        else if (key == "residual_mode") c.residual_mode = residual_mode_from_string(as_string(v, key));
        else throw InputError("unknown config key '" + key + "'");
    }
}

json read_config_file(const fs::path& path) {
    const std::string text = read_file(path);
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        const json j = parse_json(text, path.string());
        for (const auto& [k, v] : j.items())
            if (v.is_object() || v.is_array())
                throw InputError(path.string() + ": key '" + k + "' is nested; config keys are flat");
        return j;
    }
    return parse_flat_toml(text, path.string());
}

json config_to_json(const RotateConfig& c) {
    json j;
    j["lambda"] = c.lambda;
    j["eta"] = c.eta;
    j["k_sigma"] = c.k_sigma;
    j["n_iter"] = c.n_iter;
    j["n_step"] = c.n_step;
    j["tau"] = c.tau ? json(*c.tau) : json(nullptr);
    j["eps_conv"] = c.eps_conv;
    j["seed"] = c.seed;
    j["moment_mode"] = to_string(c.moment_mode);
    j["depletion"] = to_string(c.depletion);
    j["reflections"] = c.reflections;
    j["top_k"] = c.top_k;
    j["residual_mode"] = to_string(c.residual_mode);
    return j;
}

RotateConfig config_from_json(const json& j) {
    RotateConfig c;
    apply_config(c, j);
    return c;
}

std::string config_hash(const RotateConfig& config) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : dump_line(config_to_json(config))) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- archives ------------------------------------------------------------

std::string dump_line(const json& j) {
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

namespace {

json tokens_to_json(const std::vector<TokenScore>& list) {
    json a = json::array();
    for (const auto& t : list) a.push_back(json::array({t.id, t.token, t.logit}));
    return a;
}

std::vector<TokenScore> tokens_from_json(const json& a) {
    std::vector<TokenScore> out;
    for (const auto& t : a)
        out.push_back({t.at(0).get<TokenId>(), t.at(1).get<std::string>(), t.at(2).get<double>()});
    return out;
}

}  // namespace

json decomposition_to_json(const Decomposition& d) {
    json j;
    j["neuron"] = {{"layer", d.neuron.layer}, {"role", d.neuron.role}, {"index", d.neuron.index}};
    j["config_hash"] = config_hash(d.config);
    json channels = json::array();
    for (const auto& c : d.channels) {
        json cj;
        cj["iteration"] = c.iteration;
        cj["v"] = c.v;
        cj["normals"] = c.normals;
        cj["masked_excess_kurtosis"] = c.masked_excess_kurtosis;
        cj["skewness"] = c.skewness;
        cj["cosine_with_w"] = c.cosine_with_w;
        cj["steps"] = c.steps;
        cj["termination"] = to_string(c.termination);
        cj["final_loss"] = c.final_loss;
        cj["top_tokens"] = tokens_to_json(c.top_tokens);
        cj["bottom_tokens"] = tokens_to_json(c.bottom_tokens);
        channels.push_back(std::move(cj));
    }
    j["channels"] = std::move(channels);
    json trace = json::array();
    for (const auto& t : d.trace)
        trace.push_back({{"explained_norm", t.explained_norm}, {"cosine", t.cosine}});
    j["trace"] = std::move(trace);
    json glitch = json::array(), claimed = json::array();
    for (auto id : d.final_mask.masked_ids()) {
        const auto r = d.final_mask.reason(static_cast<std::size_t>(id));
        if (r == TokenMask::kGlitch) glitch.push_back(id);
        else claimed.push_back(json::array({id, r}));
    }
    j["final_mask"] = {{"V", d.final_mask.size()}, {"glitch", glitch}, {"claimed", claimed}};
    json skipped = json::array();
    for (const auto& s : d.skipped) skipped.push_back({{"iteration", s.iteration}, {"reason", s.reason}});
    j["skipped"] = std::move(skipped);
    return j;
}

Decomposition decomposition_from_json(const json& j, const RotateConfig& config) {
    Decomposition d;
    d.config = config;
    try {
        const auto& n = j.at("neuron");
        d.neuron = {n.at("layer").get<std::int64_t>(), n.at("role").get<std::string>(),
                    n.at("index").get<std::int64_t>()};
        for (const auto& cj : j.at("channels")) {
            Channel c;
            c.iteration = cj.at("iteration").get<std::int64_t>();
            c.v = cj.at("v").get<Vec>();
            c.normals = cj.at("normals").get<std::vector<Vec>>();
            c.masked_excess_kurtosis = cj.at("masked_excess_kurtosis").get<double>();
            c.skewness = cj.at("skewness").get<double>();
            c.cosine_with_w = cj.at("cosine_with_w").get<double>();
            c.steps = cj.at("steps").get<std::int64_t>();
            c.termination = termination_from_string(cj.at("termination").get<std::string>());
            c.final_loss = cj.at("final_loss").get<double>();
            c.top_tokens = tokens_from_json(cj.at("top_tokens"));
            c.bottom_tokens = tokens_from_json(cj.at("bottom_tokens"));
            d.channels.push_back(std::move(c));
        }
        for (const auto& t : j.at("trace"))
            d.trace.push_back({t.at("explained_norm").get<double>(), t.at("cosine").get<double>()});
        const auto& m = j.at("final_mask");
        d.final_mask = TokenMask(m.at("V").get<std::size_t>());
        for (const auto& id : m.at("glitch"))
            d.final_mask.mask(id.get<std::size_t>(), TokenMask::kGlitch);
        for (const auto& p : m.at("claimed"))
            d.final_mask.mask(p.at(0).get<std::size_t>(), p.at(1).get<std::int32_t>());
        for (const auto& s : j.at("skipped"))
            d.skipped.push_back({s.at("iteration").get<std::int64_t>(), s.at("reason").get<std::string>()});
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed decomposition record: ") + e.what());
    }
    return d;
}

void write_decompositions(const fs::path& path, const ArchiveHeader& header,
                          const std::vector<Decomposition>& records) {
    nlohmann::ordered_json h;
    h["kind"] = "rotate-archive";
    h["version"] = 1;
    h["config"] = config_to_json(header.config);
    h["config_hash"] = config_hash(header.config);
    h["layer"] = header.layer;
    h["model_id"] = header.model_id;
    h["role"] = header.role;
    h["tool_version"] = header.tool_version;

    std::string out = h.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    const std::string hash = config_hash(header.config);
    for (std::size_t i = 0; i < records.size(); ++i) {
        json r = decomposition_to_json(records[i]);
        if (r["config_hash"] != hash) {
            throw InputError("record " + std::to_string(i) + " (" + records[i].neuron.str() +
                             ") was produced with a different config than the archive header");
        }
        out += dump_line(r) + "\n";
    }
    write_file(path, out);
}

ChannelArchive read_decompositions(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    ChannelArchive archive;
    bool have_header = false;
    std::string hash;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = parse_json(line, path.string() + ":" + std::to_string(lineno));
        if (!have_header) {
            if (j.value("kind", "") != "rotate-archive")
                throw InputError(path.string() + ": not a rotate archive (missing header line)");
            if (j.value("version", 0) != 1) {
                throw InputError(path.string() + ": unsupported archive version " +
                                 j.value("version", json()).dump());
            }
            auto& h = archive.header;
            h.config = config_from_json(j.at("config"));
            hash = config_hash(h.config);
            if (j.value("config_hash", "") != hash)
                throw InputError(path.string() + ": header config hash does not match its config");
            h.layer = j.value("layer", std::int64_t{-1});
            h.model_id = j.value("model_id", "");
            h.role = j.value("role", "");
            h.tool_version = j.value("tool_version", "");
            have_header = true;
            continue;
        }
        if (j.value("config_hash", "") != hash) {
            throw InputError(path.string() + ":" + std::to_string(lineno) +
                             ": record config hash does not match the header");
        }
        try {
            archive.records.push_back(decomposition_from_json(j, archive.header.config));
        } catch (const InputError& e) {
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_header) throw InputError(path.string() + ": empty archive (no header line)");
    return archive;
}

}  // namespace rotatelab
