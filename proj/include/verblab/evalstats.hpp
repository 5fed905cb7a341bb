#pragma once

#include "verblab/model.hpp"
#include "verblab/tokenizer.hpp"
#include "verblab/worldgen.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace verblab {

// Case-insensitive raw substring test. Matches inside longer words on purpose.
bool contains_answer(std::string_view output, std::string_view answer);
// Secondary scorer: the answer must start and end at word boundaries.
bool contains_answer_word(std::string_view output, std::string_view answer);

inline constexpr int kSingleOutput = 0;  // target_layer of methods that produce one output

struct TrialResult {
    std::string method;
    std::string task;
    std::string item_id;
    int source_layer = 0;
    int target_layer = kSingleOutput;
    std::string output;
    std::string answer;
    bool correct = false;
};

enum class EnsembleMode { any_target_layer, single_output };

struct LayerAccuracy {
    int source_layer = 0;
    int n_items = 0;
    int n_correct = 0;
    double accuracy() const { return n_items ? static_cast<double>(n_correct) / n_items : 0.0; }
};

struct RunScore {
    std::vector<LayerAccuracy> per_layer;  // ascending source layer
    double layer_average = 0.0;
    // item id -> correct, per source layer, in the same order as per_layer
    std::vector<std::map<std::string, bool>> item_correct;
};

// Throws ValidationError when some (source layer, item, target layer) cell is missing or doubled.
RunScore score_run(std::span<const TrialResult> trials, EnsembleMode mode);

// Per-item outcome for paired tests: correct at more than half of the scored source layers.
std::vector<bool> paired_outcomes(const RunScore & score, std::span<const std::string> item_order);

struct SignificanceResult {
    std::string method_a, method_b, task;
    int b01 = 0;  // a wrong, b right
    int b10 = 0;  // a right, b wrong
    bool exact = true;
    double statistic = 0.0;  // discordant count (exact) or chi-square value
    double p_raw = 1.0;
    double p_adjusted = 1.0;
    int n_comparisons = 1;
    bool significant = false;
    bool no_discordant = false;
    int direction() const { return (b10 > b01) - (b10 < b01); }  // +1 when a is better
};

inline constexpr int kMcnemarExactLimit = 25;

double bonferroni(double p, int n_comparisons);
// P(X >= k) for X ~ Binomial(n, p).
double binomial_upper_tail(int k, int n, double p);
SignificanceResult mcnemar(const std::vector<bool> & a, const std::vector<bool> & b, int n_comparisons);
SignificanceResult mcnemar_counts(int b01, int b10, int n_comparisons);

// Corpus BLEU over whitespace tokens, 1-4-grams, uniform weights, brevity penalty. A zero n-gram
// match count (or an empty n-gram total) is smoothed to 1/(total+1).
double bleu(std::span<const std::string> candidates, std::span<const std::string> references);

// Greedy one-token cloze completion; correct when it equals the label's first token (ignoring case).
double knowledge_check(const ModelHandle & model, const Tokenizer & tok, std::span<const Persona> personas,
                       std::string_view attribute);

using MethodRunner = std::function<std::string(const EvalItem &)>;

struct VariantScore {
    std::string variant;
    bool adversarial = false;
    int n = 0;
    int correct = 0;
    double accuracy = 0.0;
    double delta = 0.0;  // accuracy minus the original-prompt accuracy
};

struct SensitivityResult {
    std::string task;
    double original_accuracy = 0.0;
    std::vector<VariantScore> variants;  // S0..S4, A1, A2
    std::vector<EvalItem> variant_items;  // every item actually run, for auditing
};

// Items of one task rewritten with the registered variant template. `{D}` becomes a label from
// `distractor_pool` that differs from the item's answer, drawn with `rng`.
std::vector<EvalItem> variant_items(std::span<const EvalItem> items, const PromptVariant & variant,
                                    std::span<const std::string> distractor_pool, Rng & rng);

SensitivityResult sensitivity_suite(std::span<const EvalItem> items, const MethodRunner & run,
                                    std::span<const std::string> distractor_pool, std::uint64_t seed);

struct SwapLabelScore {
    std::string task;
    int n = 0;
    double original_accuracy = 0.0;
    double shuffled_accuracy = 0.0;
};

// Scores the same outputs against two label sets (item id -> label). An item with several outputs
// counts as correct if any output contains the label.
std::vector<SwapLabelScore> swap_label_eval(std::span<const TrialResult> trials,
                                            const std::map<std::string, std::string> & original,
                                            const std::map<std::string, std::string> & shuffled);

// ----------------------------------------------------------------------------------------------
// Report tables. Every file starts with a "# schema_version=1 ..." comment line followed by a
// CSV header.

struct AccuracyRow {
    std::string regime;
    std::string method;
    std::string task;
    std::string source_layer;  // number or "avg"
    int n_items = 0;
    double accuracy = 0.0;
};

void write_accuracy_csv(const std::filesystem::path & path, std::span<const AccuracyRow> rows,
                        std::string_view header_note);
void write_significance_csv(const std::filesystem::path & path, std::span<const SignificanceResult> rows,
                            std::string_view header_note);
void write_sensitivity_csv(const std::filesystem::path & path, std::span<const SensitivityResult> rows,
                           std::string_view method, std::string_view header_note);
void write_swap_label_csv(const std::filesystem::path & path, std::span<const SwapLabelScore> rows,
                          std::string_view method, std::string_view header_note);
void write_trials_jsonl(const std::filesystem::path & path, std::span<const TrialResult> trials);
std::vector<TrialResult> read_trials_jsonl(const std::filesystem::path & path);

// Fixed-precision formatting used by every table.
std::string fmt6(double v);

} // namespace verblab
