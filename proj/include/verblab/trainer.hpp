#pragma once

#include "verblab/model.hpp"
#include "verblab/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace verblab {

enum class LossMaskMode { full_sequence, answer_only };
enum class LrSchedule { constant, linear_decay };

struct TrainConfig {
    double learning_rate = 3e-4;
    int batch_size = 32;
    int epochs = 1;
    int warmup_steps = 0;
    std::uint64_t seed = 0;
    LossMaskMode loss_mask_mode = LossMaskMode::full_sequence;
    LrSchedule schedule = LrSchedule::constant;
    double grad_clip = 1.0;  // global norm; <= 0 disables
    int max_steps = 0;       // 0: run all epochs
    std::optional<std::filesystem::path> log_csv;
    int checkpoint_every = 0;
    std::optional<std::filesystem::path> checkpoint_path;

    void validate() const;
};

struct LossPoint {
    int step;
    double loss;
    double lr;
};

struct LossCurve {
    std::vector<LossPoint> points;
    double final_loss() const { return points.empty() ? 0.0 : points.back().loss; }
};

// One training sequence. loss_mask[i] set means position i is trained to predict tokens[i + 1].
struct TrainExample {
    Tokens tokens;
    std::vector<char> loss_mask;
    std::vector<PatchSpec> patches;
};

// Mean cross-entropy (nats/token) of `model` over the masked positions of `examples`.
double evaluate_loss(const ModelHandle & model, std::span<const TrainExample> examples);

// Generic optimisation loop used by every training entry point. Adam(0.9, 0.999, 1e-8) with linear
// warmup; batches are reduced in a fixed order so runs are bit-reproducible from the seed.
LossCurve train_examples(ModelHandle & model, std::span<const TrainExample> examples, const TrainConfig & cfg);

// Next-token training over documents. Documents longer than the context are split. In answer_only
// mode only the tokens after a document's last separator are trained.
std::pair<ModelHandle, LossCurve> train_lm(ModelHandle model, const Tokenizer & tok,
                                           std::span<const std::string> corpus, const TrainConfig & cfg);

std::vector<TrainExample> make_lm_examples(const Tokenizer & tok, std::span<const std::string> corpus, int context_len,
                                           LossMaskMode mode);

// ----------------------------------------------------------------------------------------------
// Activation decoders (LIT-style verbalizers and inverters)

struct DecoderRecord {
    std::string context_text;
    std::string question_text;
    std::string answer_text;
};

using DecoderDataset = std::vector<DecoderRecord>;

inline constexpr int kPlaceholderBudget = 64;

// Left-truncates `tokens` to the placeholder budget. Returns true if anything was dropped.
bool truncate_to_budget(Tokens & tokens, int budget = kPlaceholderBudget);

// Multi-activation inverters always see this many placeholders, rows first, so output token k sits
// at a fixed distance from row k. Leaves room for a label as long as the slots plus two markers.
int inverter_slots(int context_len);

// The verbalizer-side token layout for a decoder input: placeholder rows (padded to `slots` when
// given), a separator, then the question (lit only). Rows are patched from position 0.
Tokens decoder_prompt(const Tokenizer & tok, DecoderMode mode, int n_rows, std::string_view question, int slots = 0);

// Builds decoder training examples (activations are captured from the frozen target once).
std::vector<TrainExample> make_decoder_examples(const ModelHandle & target, const Tokenizer & tok,
                                                const DecoderDataset & data, int source_layer, DecoderMode mode);

ModelHandle finetune_decoder(ModelHandle verbalizer, const ModelHandle & target, const Tokenizer & tok,
                             const DecoderDataset & data, int source_layer, DecoderMode mode, const TrainConfig & cfg,
                             LossCurve * curve = nullptr);

// ----------------------------------------------------------------------------------------------
// Affine translation between activation spaces

struct AffineMap {
    Mat matrix;  // d_dst x d_src
    std::vector<float> bias;
    double residual_mse = 0.0;

    int src_dim() const { return matrix.cols; }
    int dst_dim() const { return matrix.rows; }
    std::vector<float> apply(std::span<const float> x) const;
    static AffineMap identity(int d);
};

inline constexpr double kAffineRidge = 1e-6;

// Least-squares fit of dst ~= matrix * src + bias with ridge damping kAffineRidge.
AffineMap fit_affine(std::span<const std::pair<ActivationVector, ActivationVector>> pairs);

} // namespace verblab
