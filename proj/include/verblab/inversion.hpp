#pragma once

#include "verblab/verbalize.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace verblab {

struct Reconstruction {
    std::string x_rec;
    int layer = 0;
    bool multi = true;
    std::optional<double> bleu_vs_input;
};

Reconstruction invert_multi(const ModelHandle & inverter, const Tokenizer & tok, const ActivationMatrix & acts);
Reconstruction invert_single(const ModelHandle & inverter, const Tokenizer & tok, const ActivationVector & act);

using InverterInput = std::variant<ActivationMatrix, ActivationVector>;

// Reconstructs x_input from the activations, then answers x_prompt from the reconstruction alone.
VerbalizationOutput invert_then_interpret(const ModelHandle & inverter, const ModelHandle & interpreter,
                                          const Tokenizer & tok, const InverterInput & acts, const EvalItem & item,
                                          Reconstruction * rec_out = nullptr);

// Captures the inverter's expected input (full matrix or final-token vector) of `text` from `target`.
InverterInput capture_for_inverter(const ModelHandle & target, const ModelHandle & inverter, const Tokenizer & tok,
                                   std::string_view text);

struct ReconstructionRecord {
    std::string item_id;
    std::string x_input;
    std::string x_rec;
    double bleu = 0.0;
};
void write_reconstructions_jsonl(const std::filesystem::path & path, std::span<const ReconstructionRecord> recs);

} // namespace verblab
