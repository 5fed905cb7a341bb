#include "verblab/inversion.hpp"

#include <json.hpp>

#include <fstream>
#include <iostream>

namespace verblab {

namespace {

const DecoderTag & inverter_tag(const ModelHandle & inverter, DecoderMode expected) {
    if (!inverter.decoder || inverter.decoder->mode != expected) {
        throw ValidationError("model " + inverter.id + " is not a " + std::string(to_string(expected)) + " inverter");
    }
    return *inverter.decoder;
}

void check_payload(const ModelHandle & inverter, const DecoderTag & tag, int layer, int width) {
    if (layer != tag.source_layer) {
        throw ValidationError("activations from layer " + std::to_string(layer) + " but inverter " + inverter.id +
                              " was trained on layer " + std::to_string(tag.source_layer));
    }
    if (width != inverter.config.d_model) {
        throw ValidationError("activation width " + std::to_string(width) + " does not match inverter d_model " +
                              std::to_string(inverter.config.d_model));
    }
}

std::string decode_from(const ModelHandle & inverter, const Tokenizer & tok, DecoderMode mode, PatchSpec patch,
                        int n_rows) {
    const int slots = mode == DecoderMode::inverter_multi ? inverter_slots(inverter.config.context_len) : 0;
    const Tokens prompt = decoder_prompt(tok, mode, n_rows, "", slots);
    const int room = inverter.config.context_len - static_cast<int>(prompt.size());
    const int max_new = std::min(kPlaceholderBudget, room);
    if (max_new < 1) throw ValidationError("inverter context too short for decoding");
    return generate(inverter, tok, prompt, max_new, std::span(&patch, 1)).text;
}

} // namespace

Reconstruction invert_multi(const ModelHandle & inverter, const Tokenizer & tok, const ActivationMatrix & acts) {
    const auto & tag = inverter_tag(inverter, DecoderMode::inverter_multi);
    check_payload(inverter, tag, acts.layer, acts.rows.cols);
    if (acts.n_rows() < 1) throw ValidationError("empty activation matrix");
    ActivationMatrix m = acts;
    const int slots = inverter_slots(inverter.config.context_len);
    if (m.n_rows() > slots) {
        std::cerr << "warning: " << m.n_rows() << " activation rows left-truncated to " << slots << '\n';
        Mat keep(slots, m.rows.cols);
        const int skip = m.n_rows() - slots;
        std::copy(m.rows.row(skip), m.rows.row(skip) + keep.data.size(), keep.data.begin());
        m.rows = std::move(keep);
    }
    const int n = m.n_rows();
    Reconstruction r;
    r.layer = acts.layer;
    r.multi = true;
    r.x_rec = decode_from(inverter, tok, DecoderMode::inverter_multi, make_patch(std::move(m), 1, 0), n);
    return r;
}

Reconstruction invert_single(const ModelHandle & inverter, const Tokenizer & tok, const ActivationVector & act) {
    const auto & tag = inverter_tag(inverter, DecoderMode::inverter_single);
    check_payload(inverter, tag, act.layer, static_cast<int>(act.values.size()));
    Reconstruction r;
    r.layer = act.layer;
    r.multi = false;
    r.x_rec = decode_from(inverter, tok, DecoderMode::inverter_single, make_patch(act, 1, 0), 1);
    return r;
}

VerbalizationOutput invert_then_interpret(const ModelHandle & inverter, const ModelHandle & interpreter,
                                          const Tokenizer & tok, const InverterInput & acts, const EvalItem & item,
                                          Reconstruction * rec_out) {
    const Reconstruction rec = std::holds_alternative<ActivationMatrix>(acts)
                                   ? invert_multi(inverter, tok, std::get<ActivationMatrix>(acts))
                                   : invert_single(inverter, tok, std::get<ActivationVector>(acts));
    EvalItem proxy = item;
    proxy.x_input = rec.x_rec;
    VerbalizationOutput out = zero_shot(interpreter, tok, proxy);
    out.method = VerbMethod::invert_interpret;
    out.source_layer = rec.layer;
    if (rec_out) *rec_out = rec;
    return out;
}

InverterInput capture_for_inverter(const ModelHandle & target, const ModelHandle & inverter, const Tokenizer & tok,
                                   std::string_view text) {
    if (!inverter.decoder || inverter.decoder->mode == DecoderMode::lit) {
        throw ValidationError("model " + inverter.id + " is not an inverter");
    }
    Tokens t = tok.encode(text);
    if (t.empty()) throw ValidationError("cannot invert empty text");
    truncate_to_budget(t, inverter.decoder->mode == DecoderMode::inverter_multi ? inverter_slots(inverter.config.context_len)
                                                                                : kPlaceholderBudget);
    ActivationMatrix m = capture_layer(target, t, inverter.decoder->source_layer);
    if (inverter.decoder->mode == DecoderMode::inverter_multi) return m;
    return m.row(m.n_rows() - 1);
}

void write_reconstructions_jsonl(const std::filesystem::path & path, std::span<const ReconstructionRecord> recs) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    for (const auto & r : recs) {
        nlohmann::json o = {{"item_id", r.item_id}, {"x_input", r.x_input}, {"x_rec", r.x_rec}, {"bleu", r.bleu}};
        f << o.dump() << '\n';
    }
}

} // namespace verblab
