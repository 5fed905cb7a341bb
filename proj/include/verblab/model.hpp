#pragma once

#include "verblab/tensor.hpp"
#include "verblab/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace verblab {

struct ModelConfig {
    int n_layers = 8;
    int d_model = 128;
    int n_heads = 4;
    int ff_mult = 4;
    int context_len = 256;
    int vocab_size = 0;
    std::uint64_t seed = 0;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    int ff_dim() const { return d_model * ff_mult; }
    bool operator==(const ModelConfig &) const = default;
};

enum class ModelRole { target, verbalizer, inverter, interpreter };
std::string_view to_string(ModelRole r);
ModelRole parse_role(std::string_view s);

// How a decoder was finetuned to consume activations.
enum class DecoderMode { lit, inverter_multi, inverter_single };
std::string_view to_string(DecoderMode m);
DecoderMode parse_decoder_mode(std::string_view s);

struct DecoderTag {
    DecoderMode mode = DecoderMode::lit;
    int source_layer = 1;
    bool operator==(const DecoderTag &) const = default;
};

// Flat parameter storage. Every tensor is addressed by (block index, name); block -1 holds the
// embeddings, final norm and unembedding.
class ParamStore {
public:
    struct Entry {
        int block;
        std::string name;
        int rows;
        int cols;
        std::size_t offset;
    };

    static ParamStore for_config(const ModelConfig & cfg);

    std::span<float> get(int block, std::string_view name);
    std::span<const float> get(int block, std::string_view name) const;
    const Entry & entry(int block, std::string_view name) const;

    std::span<float> flat() { return data_; }
    std::span<const float> flat() const { return data_; }
    const std::vector<Entry> & entries() const { return entries_; }
    std::size_t size() const { return data_.size(); }

    static std::string key_name(int block, std::string_view name);

private:
    std::vector<Entry> entries_;
    std::vector<float> data_;
};

struct ModelHandle {
    std::string id;
    ModelConfig config;
    ModelRole role = ModelRole::target;
    std::string provenance;
    std::optional<DecoderTag> decoder;
    ParamStore params;

    // Fresh weights drawn from config.seed.
    static ModelHandle init(const ModelConfig & cfg, ModelRole role, std::string id);

    void check_finite() const;
    std::uint64_t weights_checksum() const;
};

struct ActivationVector {
    int layer = 1;
    int token_index = 0;
    std::vector<float> values;
    std::string source_model_id;
};

struct ActivationMatrix {
    int layer = 1;
    Mat rows;
    std::string source_model_id;

    int n_rows() const { return rows.rows; }
    ActivationVector row(int i) const;
};

// Replaces the residual stream entering block `target_layer` at `target_positions`.
struct PatchSpec {
    std::variant<ActivationVector, ActivationMatrix> payload;
    int target_layer = 1;
    std::vector<int> target_positions;

    int n_rows() const;
    std::span<const float> row(int i) const;
};

PatchSpec make_patch(ActivationVector v, int target_layer, int position);
PatchSpec make_patch(ActivationMatrix m, int target_layer, int first_position);

struct CaptureRequest {
    int layer;
    int position;
};

struct ForwardResult {
    Mat logits;  // one row per position
    std::vector<ActivationVector> captured;
};

// Hidden state at layer l is the residual stream after block l (1-based). Patches act on the
// stream entering their target block. Pure in (weights, tokens, patches).
ForwardResult forward(const ModelHandle & model, std::span<const TokenId> tokens,
                      std::span<const PatchSpec> patches = {}, std::span<const CaptureRequest> captures = {});

ActivationMatrix capture_layer(const ModelHandle & model, std::span<const TokenId> tokens, int layer,
                               std::span<const PatchSpec> patches = {});

// All requested layers from a single pass.
std::vector<ActivationMatrix> capture_layers(const ModelHandle & model, std::span<const TokenId> tokens,
                                             std::span<const int> layers);

struct Generation {
    Tokens tokens;     // newly generated tokens, end-of-text excluded
    std::string text;  // decoded `tokens`
    bool hit_eot = false;
};

// Greedy decoding with a key/value cache. Patches act on the prefill pass; their effect on the
// cached keys and values is reused by every later step.
Generation generate(const ModelHandle & model, const Tokenizer & tok, std::span<const TokenId> prefix,
                    int max_new = 20, std::span<const PatchSpec> patches = {});

// Checkpoint container: text header with config and metadata, then named float32 blobs.
void save_checkpoint(const ModelHandle & model, const std::filesystem::path & path);
ModelHandle load_checkpoint(const std::filesystem::path & path, const ModelConfig * expected = nullptr);

} // namespace verblab
