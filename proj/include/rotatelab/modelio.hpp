#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotatelab/rotate.hpp"
#include "rotatelab/tensor.hpp"

namespace rotatelab {

inline constexpr const char* kToolVersion = "0.1.0";

// ---- safetensors -------------------------------------------------------

enum class DType { f32, f16, bf16 };

const char* to_string(DType t);

/// A tensor widened to float. shape.size() is 1 or 2.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;
    DType source_dtype = DType::f32;
};

/// Reads every tensor of a safetensors file. Throws IoError on unreadable
/// files and InputError on malformed headers or unsupported dtypes (naming
/// the tensor).
std::map<std::string, Tensor> read_safetensors(const std::filesystem::path& path);

/// Header only: tensor name -> (dtype string, shape).
std::map<std::string, std::pair<std::string, std::vector<std::size_t>>> read_safetensors_header(
    const std::filesystem::path& path);

/// Writes f32 tensors with names in sorted order. Byte-identical for equal input.
void write_safetensors(const std::filesystem::path& path,
                       const std::map<std::string, Tensor>& tensors,
                       const std::map<std::string, std::string>& metadata = {});

float half_to_float(std::uint16_t h);
float bfloat16_to_float(std::uint16_t h);

// ---- bundles -------------------------------------------------------------

/// Which weight vector of an MLP neuron. gate and in are rows of the gate/up
/// projections, out is a column of the down projection.
enum class Role { gate, in, out };

const char* to_string(Role r);
Role role_from_string(const std::string& s);

std::string tensor_name(std::int64_t layer, Role role);
inline constexpr const char* kUnembeddingTensor = "lm_head.weight";
inline constexpr const char* kEmbeddingTensor = "model.embed_tokens.weight";

struct ModelMeta {
    std::string model_id;
    std::size_t d = 0;
    std::size_t V = 0;
    bool tied_embeddings = false;
    std::vector<std::int64_t> layers;  // exported layers, ascending
    nlohmann::json extra = nlohmann::json::object();  // unrecognised keys, kept verbatim
};

struct ModelBundle {
    ModelMeta meta;
    Unembedding unembedding;                   // V x d, vocab bound
    std::map<std::int64_t, std::map<Role, Matrix>> weights;  // neuron vectors as rows (d_a x d)
    std::vector<TokenId> glitch_ids;

    bool has(std::int64_t layer, Role role) const;
    /// Throws InputError naming the valid layers when absent.
    const Matrix& matrix(std::int64_t layer, Role role) const;
    WeightVector neuron(std::int64_t layer, Role role, std::int64_t index) const;
};

/// Loads `dir` (all *.safetensors files, vocab.json, meta.json, optional glitch.txt).
ModelBundle load_bundle(const std::filesystem::path& dir);

/// Writes model.safetensors, vocab.json, meta.json and glitch.txt (when the
/// glitch list is nonempty). The down projection is written in its native
/// d x d_a layout.
void write_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);

/// token string -> id map as written by tokenizers; returns the id-indexed table.
std::vector<std::string> read_vocab(const std::filesystem::path& path, std::size_t expected_V);

/// Newline-delimited integers or a JSON array. Deduplicated, ascending.
std::vector<TokenId> load_glitch_list(const std::filesystem::path& path);

// ---- run configuration ---------------------------------------------------

/// Overlays keys of a flat JSON object onto `config`. Unknown keys and
/// wrong types are InputErrors.
void apply_config(RotateConfig& config, const nlohmann::json& flat);

/// JSON (by content) or flat TOML `key = value` file.
nlohmann::json read_config_file(const std::filesystem::path& path);

nlohmann::json config_to_json(const RotateConfig& config);
RotateConfig config_from_json(const nlohmann::json& j);
/// 16 hex digits of FNV-1a over the canonical config JSON.
std::string config_hash(const RotateConfig& config);

// ---- archives ------------------------------------------------------------

struct ArchiveHeader {
    std::string model_id;
    std::int64_t layer = -1;
    std::string role;
    RotateConfig config;
    std::string tool_version = kToolVersion;
};

struct ChannelArchive {
    ArchiveHeader header;
    std::vector<Decomposition> records;
};

nlohmann::json decomposition_to_json(const Decomposition& d);
Decomposition decomposition_from_json(const nlohmann::json& j, const RotateConfig& config);

/// JSON Lines: one header line then one line per decomposition.
void write_decompositions(const std::filesystem::path& path, const ArchiveHeader& header,
                          const std::vector<Decomposition>& records);
ChannelArchive read_decompositions(const std::filesystem::path& path);

/// Canonical single-line serialization used by every writer.
std::string dump_line(const nlohmann::json& j);

}  // namespace rotatelab
