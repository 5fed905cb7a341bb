#pragma once

#include "verblab/evalstats.hpp"
#include "verblab/model.hpp"
#include "verblab/tokenizer.hpp"
#include "verblab/trainer.hpp"
#include "verblab/worldgen.hpp"

#include <optional>
#include <string>
#include <vector>

namespace verblab {

enum class VerbMethod { patchscope_single, lit_multi, zero_shot, cross_model, invert_interpret };
std::string_view to_string(VerbMethod m);

inline constexpr int kMaxNewTokens = 20;

struct VerbalizationOutput {
    VerbMethod method = VerbMethod::zero_shot;
    int source_layer = 0;
    int target_layer = kSingleOutput;  // patched verbalizer layer; kSingleOutput for one-output methods
    std::string text;
    std::string item_id;
};

// Verbalizer prompt for single-activation patching: the item's prompt template with the subject
// replaced by one placeholder token. Returns the tokens and the placeholder position.
std::pair<Tokens, int> placeholder_prompt(const Tokenizer & tok, const EvalItem & item);

// Final-token state of x_input at `source_layer`, optionally mapped into another model's space.
ActivationVector capture_input_state(const ModelHandle & target, const Tokenizer & tok, const EvalItem & item,
                                     int source_layer, const AffineMap * map = nullptr);

// One output per verbalizer layer: the captured vector replaces the stream entering block l* at
// the placeholder position, for every l* in [1, L'].
std::vector<VerbalizationOutput> patchscope_single(const ModelHandle & target, const ModelHandle & verbalizer,
                                                   const Tokenizer & tok, const EvalItem & item, int source_layer,
                                                   int max_new = kMaxNewTokens);

// Whole activation matrix of x_input injected entering block 1 of a lit-finetuned verbalizer.
VerbalizationOutput lit_verbalize(const ModelHandle & target, const ModelHandle & verbalizer, const Tokenizer & tok,
                                  const EvalItem & item, int source_layer, int max_new = kMaxNewTokens);

// Input-only control: generate from x_input <sep> x_prompt.
VerbalizationOutput zero_shot(const ModelHandle & model, const Tokenizer & tok, const EvalItem & item,
                              int max_new = kMaxNewTokens);

// Same as patchscope_single (verbalizer not lit-finetuned) or lit_verbalize (lit-finetuned), with
// every payload row passed through `map` first.
std::vector<VerbalizationOutput> cross_model_verbalize(const ModelHandle & target, const ModelHandle & verbalizer,
                                                       const Tokenizer & tok, const EvalItem & item, int source_layer,
                                                       const AffineMap & map, int max_new = kMaxNewTokens);

// Default source layers 1 .. floor(L/2).
std::vector<int> default_source_layers(int n_layers);

TrialResult to_trial(const VerbalizationOutput & out, const EvalItem & item);

} // namespace verblab
