#include "verblab/detail/transformer.hpp"
#include "verblab/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace verblab::detail {

namespace {

constexpr float kLnEps = 1e-5f;

// Fixed eight-lane accumulation so the compiler can vectorise without reassociating.
inline float dot(const float * a, const float * b, int n) {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    }
    float s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

} // namespace

Weights Weights::view(const ModelHandle & m) {
    Weights w;
    w.cfg = &m.config;
    const auto & p = m.params;
    w.tok_emb = p.get(-1, "tok_emb").data();
    w.pos_emb = p.get(-1, "pos_emb").data();
    w.lnf_g = p.get(-1, "lnf.g").data();
    w.lnf_b = p.get(-1, "lnf.b").data();
    w.unembed = p.get(-1, "unembed").data();
    for (int b = 0; b < m.config.n_layers; ++b) {
        BlockWeights bw{};
        bw.ln1_g = p.get(b, "ln1.g").data();
        bw.ln1_b = p.get(b, "ln1.b").data();
        bw.wqkv = p.get(b, "attn.wqkv").data();
        bw.bqkv = p.get(b, "attn.bqkv").data();
        bw.wo = p.get(b, "attn.wo").data();
        bw.bo = p.get(b, "attn.bo").data();
        bw.ln2_g = p.get(b, "ln2.g").data();
        bw.ln2_b = p.get(b, "ln2.b").data();
        bw.w1 = p.get(b, "mlp.w1").data();
        bw.b1 = p.get(b, "mlp.b1").data();
        bw.w2 = p.get(b, "mlp.w2").data();
        bw.b2 = p.get(b, "mlp.b2").data();
        w.blocks.push_back(bw);
    }
    return w;
}

KvCache::KvCache(const ModelConfig & cfg) {
    for (int b = 0; b < cfg.n_layers; ++b) {
        k.emplace_back(cfg.context_len, cfg.d_model);
        v.emplace_back(cfg.context_len, cfg.d_model);
    }
}

void layer_norm_rows(const float * x, int n, int d, const float * g, const float * b, float * y, float * mean,
                     float * rstd) {
    for (int i = 0; i < n; ++i) {
        const float * xr = x + static_cast<std::size_t>(i) * d;
        float * yr = y + static_cast<std::size_t>(i) * d;
        float mu = 0.0f;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<float>(d);
        float var = 0.0f;
        for (int j = 0; j < d; ++j) {
            const float c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<float>(d);
        const float rs = 1.0f / std::sqrt(var + kLnEps);
        for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rs * g[j] + b[j];
        if (mean) mean[i] = mu;
        if (rstd) rstd[i] = rs;
    }
}

void check_patches(const ModelConfig & cfg, std::span<const PatchSpec> patches, int seq_len) {
    for (const auto & p : patches) {
        if (p.target_layer < 1 || p.target_layer > cfg.n_layers) {
            throw ValidationError("patch target layer " + std::to_string(p.target_layer) + " outside [1, " +
                                  std::to_string(cfg.n_layers) + "]");
        }
        if (static_cast<int>(p.target_positions.size()) != p.n_rows()) {
            throw ValidationError("patch has " + std::to_string(p.n_rows()) + " payload rows but " +
                                  std::to_string(p.target_positions.size()) + " target positions");
        }
        for (std::size_t i = 0; i < p.target_positions.size(); ++i) {
            const int pos = p.target_positions[i];
            if (pos < 0 || pos >= seq_len) {
                throw ValidationError("patch position " + std::to_string(pos) + " outside [0, " +
                                      std::to_string(seq_len) + ")");
            }
            if (i > 0 && pos <= p.target_positions[i - 1]) {
                throw ValidationError("patch positions must be strictly increasing");
            }
            const auto row = p.row(static_cast<int>(i));
            if (static_cast<int>(row.size()) != cfg.d_model) {
                throw ValidationError("patch payload width " + std::to_string(row.size()) + " != d_model " +
                                      std::to_string(cfg.d_model));
            }
            for (float v : row) {
                if (!std::isfinite(v)) throw ValidationError("patch payload contains a non-finite value");
            }
        }
    }
}

Mat project_logits(const Weights & w, const Mat & hidden) {
    const int d = w.cfg->d_model;
    const int V = w.cfg->vocab_size;
    Mat logits(hidden.rows, V);
    kernels::matmul(hidden.data.data(), hidden.rows, d, w.unembed, V, nullptr, logits.data.data());
    return logits;
}

Mat run_rows(const Weights & w, std::span<const TokenId> tokens, KvCache & cache, std::span<const PatchSpec> patches,
             std::span<const CaptureRequest> captures, std::vector<ActivationVector> * captured, Tape * tape,
             const std::string & model_id) {
    const ModelConfig & cfg = *w.cfg;
    const int n = static_cast<int>(tokens.size());
    const int start = cache.length;
    const int total = start + n;
    const int d = cfg.d_model;
    const int H = cfg.n_heads;
    const int hd = cfg.head_dim();
    const int F = cfg.ff_dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    if (n == 0) throw ValidationError("run_rows: no tokens");
    if (total > cfg.context_len) {
        throw ValidationError("sequence of " + std::to_string(total) + " tokens exceeds context length " +
                              std::to_string(cfg.context_len));
    }

    Mat x(n, d);
    for (int i = 0; i < n; ++i) {
        const TokenId t = tokens[static_cast<std::size_t>(i)];
        if (t < 0 || t >= cfg.vocab_size) throw ValidationError("token id " + std::to_string(t) + " out of vocabulary");
        const float * e = w.tok_emb + static_cast<std::size_t>(t) * d;
        const float * pe = w.pos_emb + static_cast<std::size_t>(start + i) * d;
        float * xr = x.row(i);
        for (int j = 0; j < d; ++j) xr[j] = e[j] + pe[j];
    }

    if (tape) {
        tape->blocks.assign(static_cast<std::size_t>(cfg.n_layers), BlockTape{});
    }

    Mat a(n, d), qkv(n, 3 * d), att(n, d), m(n, d), ff(n, F), ffa(n, F);
    std::vector<float> scores(static_cast<std::size_t>(total));

    auto apply_captures = [&](int layer) {
        if (!captured) return;
        for (const auto & c : captures) {
            if (c.layer != layer || c.position < start || c.position >= total) continue;
            ActivationVector v;
            v.layer = layer;
            v.token_index = c.position;
            v.source_model_id = model_id;
            const float * r = x.row(c.position - start);
            v.values.assign(r, r + d);
            captured->push_back(std::move(v));
        }
    };

    for (int b = 0; b < cfg.n_layers; ++b) {
        const BlockWeights & bw = w.blocks[static_cast<std::size_t>(b)];
        const int layer = b + 1;
        BlockTape * bt = tape ? &tape->blocks[static_cast<std::size_t>(b)] : nullptr;
        if (bt) bt->patched.assign(static_cast<std::size_t>(n), 0);

        for (const auto & p : patches) {
            if (p.target_layer != layer) continue;
            for (std::size_t r = 0; r < p.target_positions.size(); ++r) {
                const int pos = p.target_positions[r];
                if (pos < start || pos >= total) continue;
                const auto src = p.row(static_cast<int>(r));
                std::copy(src.begin(), src.end(), x.row(pos - start));
                if (bt) bt->patched[static_cast<std::size_t>(pos - start)] = 1;
            }
        }
        if (bt) {
            bt->x_in = x;
            bt->ln1_mean.resize(static_cast<std::size_t>(n));
            bt->ln1_rstd.resize(static_cast<std::size_t>(n));
        }

        layer_norm_rows(x.data.data(), n, d, bw.ln1_g, bw.ln1_b, a.data.data(), bt ? bt->ln1_mean.data() : nullptr,
                        bt ? bt->ln1_rstd.data() : nullptr);
        kernels::matmul(a.data.data(), n, d, bw.wqkv, 3 * d, bw.bqkv, qkv.data.data());

        Mat & kc = cache.k[static_cast<std::size_t>(b)];
        Mat & vc = cache.v[static_cast<std::size_t>(b)];
        for (int i = 0; i < n; ++i) {
            const float * r = qkv.row(i);
            std::copy(r + d, r + 2 * d, kc.row(start + i));
            std::copy(r + 2 * d, r + 3 * d, vc.row(start + i));
        }

        if (bt) bt->probs.assign(static_cast<std::size_t>(H) * n * total, 0.0f);
        for (int i = 0; i < n; ++i) {
            const int pos = start + i;
            const float * q = qkv.row(i);
            float * out = att.row(i);
            std::fill(out, out + d, 0.0f);
            for (int h = 0; h < H; ++h) {
                const int off = h * hd;
                float mx = -std::numeric_limits<float>::infinity();
                for (int j = 0; j <= pos; ++j) {
                    const float s = dot(q + off, kc.row(j) + off, hd) * scale;
                    scores[static_cast<std::size_t>(j)] = s;
                    mx = std::max(mx, s);
                }
                float sum = 0.0f;
                for (int j = 0; j <= pos; ++j) {
                    const float e = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                    scores[static_cast<std::size_t>(j)] = e;
                    sum += e;
                }
                const float inv = 1.0f / sum;
                float * o = out + off;
                for (int j = 0; j <= pos; ++j) {
                    const float pj = scores[static_cast<std::size_t>(j)] * inv;
                    scores[static_cast<std::size_t>(j)] = pj;
                    const float * vr = vc.row(j) + off;
                    for (int t = 0; t < hd; ++t) o[t] += pj * vr[t];
                }
                if (bt) {
                    float * pr = bt->probs.data() + (static_cast<std::size_t>(h) * n + i) * total;
                    std::copy(scores.begin(), scores.begin() + pos + 1, pr);
                }
            }
        }

        // x += att * wo + bo
        kernels::matmul(att.data.data(), n, d, bw.wo, d, bw.bo, m.data.data());
        for (std::size_t t = 0; t < x.data.size(); ++t) x.data[t] += m.data[t];

        if (bt) {
            bt->ln1 = a;
            bt->qkv = qkv;
            bt->att = att;
            bt->x_mid = x;
            bt->ln2_mean.resize(static_cast<std::size_t>(n));
            bt->ln2_rstd.resize(static_cast<std::size_t>(n));
        }

        layer_norm_rows(x.data.data(), n, d, bw.ln2_g, bw.ln2_b, m.data.data(), bt ? bt->ln2_mean.data() : nullptr,
                        bt ? bt->ln2_rstd.data() : nullptr);
        kernels::matmul(m.data.data(), n, d, bw.w1, F, bw.b1, ff.data.data());
        for (std::size_t t = 0; t < ff.data.size(); ++t) ffa.data[t] = kernels::gelu(ff.data[t]);
        if (bt) {
            bt->ln2 = m;
            bt->ff_pre = ff;
            bt->ff_act = ffa;
        }
        // x += ffa * w2 + b2, accumulated in a scratch so the residual add order matches attention
        kernels::matmul(ffa.data.data(), n, F, bw.w2, d, bw.b2, a.data.data());
        for (std::size_t t = 0; t < x.data.size(); ++t) x.data[t] += a.data[t];

        apply_captures(layer);
    }

    cache.length = total;

    Mat hidden(n, d);
    std::vector<float> mean(static_cast<std::size_t>(n)), rstd(static_cast<std::size_t>(n));
    layer_norm_rows(x.data.data(), n, d, w.lnf_g, w.lnf_b, hidden.data.data(), mean.data(), rstd.data());
    if (tape) {
        tape->x_final = x;
        tape->lnf = hidden;
        tape->lnf_mean = std::move(mean);
        tape->lnf_rstd = std::move(rstd);
    }
    return hidden;
}

} // namespace verblab::detail
