#include "verblab/verbalize.hpp"

#include <iostream>

namespace verblab {

std::string_view to_string(VerbMethod m) {
    switch (m) {
    case VerbMethod::patchscope_single: return "patchscope_single";
    case VerbMethod::lit_multi: return "lit_multi";
    case VerbMethod::zero_shot: return "zero_shot";
    case VerbMethod::cross_model: return "cross_model";
    case VerbMethod::invert_interpret: return "invert_interpret";
    }
    return "zero_shot";
}

std::vector<int> default_source_layers(int n_layers) {
    std::vector<int> out;
    for (int l = 1; l <= std::max(1, n_layers / 2); ++l) out.push_back(l);
    return out;
}

std::pair<Tokens, int> placeholder_prompt(const Tokenizer & tok, const EvalItem & item) {
    if (item.prompt_template.find("{}") == std::string::npos) {
        throw ValidationError("prompt template of " + item.id + " has no subject slot");
    }
    const Tokens t = tok.encode(fill_template(item.prompt_template, Tokenizer::kPlaceholderText));
    int pos = -1;
    for (int i = 0; i < static_cast<int>(t.size()); ++i) {
        if (t[i] != Tokenizer::kPlaceholder) continue;
        if (pos >= 0) throw ValidationError("prompt template of " + item.id + " has more than one placeholder");
        pos = i;
    }
    if (pos < 0) throw ValidationError("prompt template of " + item.id + " has no placeholder");
    return {t, pos};
}

namespace {

void check_source_layer(const ModelHandle & m, int layer) {
    if (layer < 1 || layer > m.config.n_layers) {
        throw ValidationError("source_layer " + std::to_string(layer) + " outside [1, " +
                              std::to_string(m.config.n_layers) + "]");
    }
}

Tokens encode_input(const Tokenizer & tok, const EvalItem & item) {
    if (item.x_input.empty()) throw ValidationError("empty x_input in item " + item.id);
    return tok.encode(item.x_input);
}

ActivationMatrix mapped(ActivationMatrix m, const AffineMap * map) {
    if (!map) return m;
    if (map->src_dim() != m.rows.cols) throw ValidationError("affine map input width does not match the activations");
    Mat out(m.rows.rows, map->dst_dim());
    for (int r = 0; r < m.rows.rows; ++r) {
        const auto y = map->apply(m.rows.row_span(r));
        std::copy(y.begin(), y.end(), out.row(r));
    }
    m.rows = std::move(out);
    return m;
}

void check_width(const ModelHandle & verbalizer, int width) {
    if (width != verbalizer.config.d_model) {
        throw ValidationError("payload width " + std::to_string(width) + " does not match verbalizer d_model " +
                              std::to_string(verbalizer.config.d_model));
    }
}

std::vector<VerbalizationOutput> patch_each_layer(const ModelHandle & verbalizer, const Tokenizer & tok,
                                                  const EvalItem & item, const ActivationVector & v, int source_layer,
                                                  VerbMethod method, int max_new) {
    check_width(verbalizer, static_cast<int>(v.values.size()));
    const auto [prompt, pos] = placeholder_prompt(tok, item);
    std::vector<VerbalizationOutput> out;
    for (int l = 1; l <= verbalizer.config.n_layers; ++l) {
        const PatchSpec p = make_patch(v, l, pos);
        const Generation g = generate(verbalizer, tok, prompt, max_new, std::span(&p, 1));
        out.push_back({method, source_layer, l, g.text, item.id});
    }
    return out;
}

VerbalizationOutput lit_from_matrix(const ModelHandle & verbalizer, const Tokenizer & tok, const EvalItem & item,
                                    ActivationMatrix acts, int source_layer, VerbMethod method, int max_new) {
    check_width(verbalizer, acts.rows.cols);
    const Tokens prompt = decoder_prompt(tok, DecoderMode::lit, acts.n_rows(), item.x_prompt);
    const PatchSpec p = make_patch(std::move(acts), 1, 0);
    const Generation g = generate(verbalizer, tok, prompt, max_new, std::span(&p, 1));
    return {method, source_layer, kSingleOutput, g.text, item.id};
}

ActivationMatrix capture_budgeted(const ModelHandle & target, const Tokenizer & tok, const EvalItem & item,
                                  int source_layer) {
    Tokens t = encode_input(tok, item);
    if (truncate_to_budget(t)) {
        std::cerr << "warning: x_input of " << item.id << " left-truncated to " << kPlaceholderBudget << " tokens\n";
    }
    return capture_layer(target, t, source_layer);
}

bool is_lit(const ModelHandle & m) { return m.decoder && m.decoder->mode == DecoderMode::lit; }

} // namespace

ActivationVector capture_input_state(const ModelHandle & target, const Tokenizer & tok, const EvalItem & item,
                                     int source_layer, const AffineMap * map) {
    check_source_layer(target, source_layer);
    const Tokens t = encode_input(tok, item);
    const CaptureRequest req{source_layer, static_cast<int>(t.size()) - 1};
    ActivationVector v = forward(target, t, {}, std::span(&req, 1)).captured.at(0);
    if (map) v.values = map->apply(v.values);
    return v;
}

std::vector<VerbalizationOutput> patchscope_single(const ModelHandle & target, const ModelHandle & verbalizer,
                                                   const Tokenizer & tok, const EvalItem & item, int source_layer,
                                                   int max_new) {
    const ActivationVector v = capture_input_state(target, tok, item, source_layer);
    return patch_each_layer(verbalizer, tok, item, v, source_layer, VerbMethod::patchscope_single, max_new);
}

VerbalizationOutput lit_verbalize(const ModelHandle & target, const ModelHandle & verbalizer, const Tokenizer & tok,
                                  const EvalItem & item, int source_layer, int max_new) {
    check_source_layer(target, source_layer);
    if (!is_lit(verbalizer)) throw ValidationError("verbalizer " + verbalizer.id + " was not finetuned in lit mode");
    return lit_from_matrix(verbalizer, tok, item, capture_budgeted(target, tok, item, source_layer), source_layer,
                           VerbMethod::lit_multi, max_new);
}

VerbalizationOutput zero_shot(const ModelHandle & model, const Tokenizer & tok, const EvalItem & item, int max_new) {
    Tokens prefix = tok.encode(item.x_input);
    prefix.push_back(Tokenizer::kSep);
    const Tokens q = tok.encode(item.x_prompt);
    prefix.insert(prefix.end(), q.begin(), q.end());
    const Generation g = generate(model, tok, prefix, max_new);
    return {VerbMethod::zero_shot, 0, kSingleOutput, g.text, item.id};
}

std::vector<VerbalizationOutput> cross_model_verbalize(const ModelHandle & target, const ModelHandle & verbalizer,
                                                       const Tokenizer & tok, const EvalItem & item, int source_layer,
                                                       const AffineMap & map, int max_new) {
    check_source_layer(target, source_layer);
    if (is_lit(verbalizer)) {
        ActivationMatrix m = mapped(capture_budgeted(target, tok, item, source_layer), &map);
        return {lit_from_matrix(verbalizer, tok, item, std::move(m), source_layer, VerbMethod::cross_model, max_new)};
    }
    const ActivationVector v = capture_input_state(target, tok, item, source_layer, &map);
    return patch_each_layer(verbalizer, tok, item, v, source_layer, VerbMethod::cross_model, max_new);
}

TrialResult to_trial(const VerbalizationOutput & out, const EvalItem & item) {
    TrialResult t;
    t.method = std::string(to_string(out.method));
    t.task = item.task;
    t.item_id = item.id;
    t.source_layer = out.source_layer;
    t.target_layer = out.target_layer;
    t.output = out.text;
    t.answer = item.answer;
    t.correct = contains_answer(out.text, item.answer);
    return t;
}

} // namespace verblab
