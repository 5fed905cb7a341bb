#include "verblab/model.hpp"
#include "verblab/common.hpp"
#include "verblab/detail/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace verblab {

void ModelConfig::validate() const {
    if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || ff_mult <= 0 || context_len <= 0 || vocab_size <= 0) {
        throw ValidationError("model config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw ValidationError("model config: d_model must be divisible by n_heads");
    if (context_len < 32) throw ValidationError("model config: context_len must be at least 32");
}

std::string_view to_string(ModelRole r) {
    switch (r) {
    case ModelRole::target: return "target";
    case ModelRole::verbalizer: return "verbalizer";
    case ModelRole::inverter: return "inverter";
    case ModelRole::interpreter: return "interpreter";
    }
    return "target";
}

ModelRole parse_role(std::string_view s) {
    if (s == "target") return ModelRole::target;
    if (s == "verbalizer") return ModelRole::verbalizer;
    if (s == "inverter") return ModelRole::inverter;
    if (s == "interpreter") return ModelRole::interpreter;
    throw ValidationError("unknown model role: " + std::string(s));
}

std::string_view to_string(DecoderMode m) {
    switch (m) {
    case DecoderMode::lit: return "lit";
    case DecoderMode::inverter_multi: return "inverter_multi";
    case DecoderMode::inverter_single: return "inverter_single";
    }
    return "lit";
}

DecoderMode parse_decoder_mode(std::string_view s) {
    if (s == "lit") return DecoderMode::lit;
    if (s == "inverter_multi") return DecoderMode::inverter_multi;
    if (s == "inverter_single") return DecoderMode::inverter_single;
    throw ValidationError("unknown decoder mode: " + std::string(s));
}

// ---------------------------------------------------------------------------------------------
// ParamStore

std::string ParamStore::key_name(int block, std::string_view name) {
    if (block < 0) return std::string(name);
    return "blocks." + std::to_string(block) + "." + std::string(name);
}

ParamStore ParamStore::for_config(const ModelConfig & cfg) {
    cfg.validate();
    ParamStore ps;
    std::size_t offset = 0;
    auto add = [&](int block, std::string name, int rows, int cols) {
        ps.entries_.push_back({block, std::move(name), rows, cols, offset});
        offset += static_cast<std::size_t>(rows) * cols;
    };
    const int d = cfg.d_model;
    const int F = cfg.ff_dim();
    add(-1, "tok_emb", cfg.vocab_size, d);
    add(-1, "pos_emb", cfg.context_len, d);
    for (int b = 0; b < cfg.n_layers; ++b) {
        add(b, "ln1.g", 1, d);
        add(b, "ln1.b", 1, d);
        add(b, "attn.wqkv", d, 3 * d);
        add(b, "attn.bqkv", 1, 3 * d);
        add(b, "attn.wo", d, d);
        add(b, "attn.bo", 1, d);
        add(b, "ln2.g", 1, d);
        add(b, "ln2.b", 1, d);
        add(b, "mlp.w1", d, F);
        add(b, "mlp.b1", 1, F);
        add(b, "mlp.w2", F, d);
        add(b, "mlp.b2", 1, d);
    }
    add(-1, "lnf.g", 1, d);
    add(-1, "lnf.b", 1, d);
    add(-1, "unembed", d, cfg.vocab_size);
    ps.data_.assign(offset, 0.0f);
    return ps;
}

const ParamStore::Entry & ParamStore::entry(int block, std::string_view name) const {
    for (const auto & e : entries_) {
        if (e.block == block && e.name == name) return e;
    }
    throw ValidationError("no parameter " + key_name(block, name));
}

std::span<float> ParamStore::get(int block, std::string_view name) {
    const auto & e = entry(block, name);
    return {data_.data() + e.offset, static_cast<std::size_t>(e.rows) * e.cols};
}

std::span<const float> ParamStore::get(int block, std::string_view name) const {
    const auto & e = entry(block, name);
    return {data_.data() + e.offset, static_cast<std::size_t>(e.rows) * e.cols};
}

// ---------------------------------------------------------------------------------------------
// ModelHandle

ModelHandle ModelHandle::init(const ModelConfig & cfg, ModelRole role, std::string id) {
    ModelHandle m;
    m.id = std::move(id);
    m.config = cfg;
    m.role = role;
    m.params = ParamStore::for_config(cfg);
    m.provenance = "init seed=" + std::to_string(cfg.seed);
    Rng rng(cfg.seed);
    const float std_base = 0.02f;
    const float std_resid = std_base / std::sqrt(2.0f * static_cast<float>(cfg.n_layers));
    for (const auto & e : m.params.entries()) {
        auto span = m.params.get(e.block, e.name);
        const bool gain = e.name == "ln1.g" || e.name == "ln2.g" || e.name == "lnf.g";
        const bool bias = e.rows == 1 && !gain;
        if (gain) {
            std::fill(span.begin(), span.end(), 1.0f);
        } else if (bias) {
            std::fill(span.begin(), span.end(), 0.0f);
        } else {
            const float s = (e.name == "attn.wo" || e.name == "mlp.w2") ? std_resid : std_base;
            for (float & v : span) v = static_cast<float>(standard_normal(rng)) * s;
        }
    }
    return m;
}

void ModelHandle::check_finite() const {
    for (const auto & e : params.entries()) {
        for (float v : params.get(e.block, e.name)) {
            if (!std::isfinite(v)) throw RuntimeFailure("non-finite weight in " + ParamStore::key_name(e.block, e.name));
        }
    }
}

std::uint64_t ModelHandle::weights_checksum() const {
    const auto flat = params.flat();
    return fnv1a64(std::string_view(reinterpret_cast<const char *>(flat.data()), flat.size() * sizeof(float)));
}

// ---------------------------------------------------------------------------------------------
// Activations and patches

ActivationVector ActivationMatrix::row(int i) const {
    if (i < 0 || i >= rows.rows) throw ValidationError("activation row " + std::to_string(i) + " out of range");
    ActivationVector v;
    v.layer = layer;
    v.token_index = i;
    v.source_model_id = source_model_id;
    v.values.assign(rows.row(i), rows.row(i) + rows.cols);
    return v;
}

int PatchSpec::n_rows() const {
    if (const auto * v = std::get_if<ActivationVector>(&payload)) {
        (void) v;
        return 1;
    }
    return std::get<ActivationMatrix>(payload).rows.rows;
}

std::span<const float> PatchSpec::row(int i) const {
    if (const auto * v = std::get_if<ActivationVector>(&payload)) {
        if (i != 0) throw ValidationError("vector patch has a single row");
        return v->values;
    }
    const auto & m = std::get<ActivationMatrix>(payload);
    return m.rows.row_span(i);
}

PatchSpec make_patch(ActivationVector v, int target_layer, int position) {
    PatchSpec p;
    p.payload = std::move(v);
    p.target_layer = target_layer;
    p.target_positions = {position};
    return p;
}

PatchSpec make_patch(ActivationMatrix m, int target_layer, int first_position) {
    PatchSpec p;
    const int n = m.rows.rows;
    p.payload = std::move(m);
    p.target_layer = target_layer;
    for (int i = 0; i < n; ++i) p.target_positions.push_back(first_position + i);
    return p;
}

// ---------------------------------------------------------------------------------------------
// Inference

namespace {

void check_tokens(const ModelConfig & cfg, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw ValidationError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.context_len) {
        throw ValidationError("forward: " + std::to_string(tokens.size()) + " tokens exceed context length " +
                              std::to_string(cfg.context_len));
    }
}

void check_captures(const ModelConfig & cfg, std::span<const CaptureRequest> captures, int seq_len) {
    for (const auto & c : captures) {
        if (c.layer < 1 || c.layer > cfg.n_layers) {
            throw ValidationError("capture layer " + std::to_string(c.layer) + " outside [1, " +
                                  std::to_string(cfg.n_layers) + "]");
        }
        if (c.position < 0 || c.position >= seq_len) {
            throw ValidationError("capture position " + std::to_string(c.position) + " outside [0, " +
                                  std::to_string(seq_len) + ")");
        }
    }
}

} // namespace

ForwardResult forward(const ModelHandle & model, std::span<const TokenId> tokens, std::span<const PatchSpec> patches,
                      std::span<const CaptureRequest> captures) {
    const auto & cfg = model.config;
    check_tokens(cfg, tokens);
    const int T = static_cast<int>(tokens.size());
    detail::check_patches(cfg, patches, T);
    check_captures(cfg, captures, T);

    const auto w = detail::Weights::view(model);
    detail::KvCache cache(cfg);
    ForwardResult res;
    std::vector<ActivationVector> captured;
    const Mat hidden = detail::run_rows(w, tokens, cache, patches, captures, &captured, nullptr, model.id);
    res.logits = detail::project_logits(w, hidden);
    // run_rows appends per layer; reorder to request order
    for (const auto & c : captures) {
        for (const auto & v : captured) {
            if (v.layer == c.layer && v.token_index == c.position) {
                res.captured.push_back(v);
                break;
            }
        }
    }
    return res;
}

std::vector<ActivationMatrix> capture_layers(const ModelHandle & model, std::span<const TokenId> tokens,
                                             std::span<const int> layers) {
    const auto & cfg = model.config;
    check_tokens(cfg, tokens);
    const int T = static_cast<int>(tokens.size());
    std::vector<CaptureRequest> req;
    for (int l : layers) {
        for (int i = 0; i < T; ++i) req.push_back({l, i});
    }
    check_captures(cfg, req, T);
    const auto w = detail::Weights::view(model);
    detail::KvCache cache(cfg);
    std::vector<ActivationVector> captured;
    detail::run_rows(w, tokens, cache, {}, req, &captured, nullptr, model.id);

    std::vector<ActivationMatrix> out;
    for (int l : layers) {
        ActivationMatrix m;
        m.layer = l;
        m.source_model_id = model.id;
        m.rows = Mat(T, cfg.d_model);
        for (const auto & v : captured) {
            if (v.layer == l) std::copy(v.values.begin(), v.values.end(), m.rows.row(v.token_index));
        }
        out.push_back(std::move(m));
    }
    return out;
}

ActivationMatrix capture_layer(const ModelHandle & model, std::span<const TokenId> tokens, int layer,
                               std::span<const PatchSpec> patches) {
    if (patches.empty()) {
        const int layers[] = {layer};
        return std::move(capture_layers(model, tokens, layers).front());
    }
    const int T = static_cast<int>(tokens.size());
    std::vector<CaptureRequest> req;
    for (int i = 0; i < T; ++i) req.push_back({layer, i});
    auto res = forward(model, tokens, patches, req);
    ActivationMatrix m;
    m.layer = layer;
    m.source_model_id = model.id;
    m.rows = Mat(T, model.config.d_model);
    for (int i = 0; i < T; ++i) std::copy(res.captured[i].values.begin(), res.captured[i].values.end(), m.rows.row(i));
    return m;
}

namespace {

TokenId argmax_row(const float * logits, int n) {
    TokenId best = 0;
    for (int j = 1; j < n; ++j) {
        if (logits[j] > logits[best]) best = j;
    }
    return best;
}

} // namespace

Generation generate(const ModelHandle & model, const Tokenizer & tok, std::span<const TokenId> prefix, int max_new,
                    std::span<const PatchSpec> patches) {
    const auto & cfg = model.config;
    if (prefix.empty()) throw ValidationError("generate: empty prefix");
    if (max_new < 1) throw ValidationError("generate: max_new must be at least 1");
    if (static_cast<int>(prefix.size()) > cfg.context_len) {
        throw ValidationError("generate: prefix of " + std::to_string(prefix.size()) + " tokens exceeds context length " +
                              std::to_string(cfg.context_len));
    }
    // Patches may only address the prompt; check_patches bounds them by the prefix length.
    detail::check_patches(cfg, patches, static_cast<int>(prefix.size()));

    const auto w = detail::Weights::view(model);
    detail::KvCache cache(cfg);
    Mat hidden = detail::run_rows(w, prefix, cache, patches, {}, nullptr, nullptr, model.id);

    Generation g;
    Mat last(1, cfg.d_model);
    std::copy(hidden.row(hidden.rows - 1), hidden.row(hidden.rows - 1) + cfg.d_model, last.row(0));
    for (int step = 0; step < max_new; ++step) {
        const Mat logits = detail::project_logits(w, last);
        const TokenId next = argmax_row(logits.row(0), cfg.vocab_size);
        if (next == Tokenizer::kEot) {
            g.hit_eot = true;
            break;
        }
        g.tokens.push_back(next);
        if (step + 1 == max_new || cache.length >= cfg.context_len) break;
        const TokenId one[] = {next};
        last = detail::run_rows(w, one, cache, {}, {}, nullptr, nullptr, model.id);
    }
    g.text = tok.decode(g.tokens);
    return g;
}

} // namespace verblab
