#include "backprop.hpp"
#include "verblab/common.hpp"

#include <algorithm>
#include <cmath>

namespace verblab::detail {

namespace {

struct BlockGrads {
    float *ln1_g, *ln1_b, *wqkv, *bqkv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
};

struct GradViews {
    float *tok_emb, *pos_emb, *lnf_g, *lnf_b, *unembed;
    std::vector<BlockGrads> blocks;

    static GradViews over(const ModelHandle & m, std::span<float> grads) {
        auto at = [&](int b, std::string_view n) { return grads.data() + m.params.entry(b, n).offset; };
        GradViews g{};
        g.tok_emb = at(-1, "tok_emb");
        g.pos_emb = at(-1, "pos_emb");
        g.lnf_g = at(-1, "lnf.g");
        g.lnf_b = at(-1, "lnf.b");
        g.unembed = at(-1, "unembed");
        for (int b = 0; b < m.config.n_layers; ++b) {
            g.blocks.push_back({at(b, "ln1.g"), at(b, "ln1.b"), at(b, "attn.wqkv"), at(b, "attn.bqkv"),
                                at(b, "attn.wo"), at(b, "attn.bo"), at(b, "ln2.g"), at(b, "ln2.b"), at(b, "mlp.w1"),
                                at(b, "mlp.b1"), at(b, "mlp.w2"), at(b, "mlp.b2")});
        }
        return g;
    }
};

// dx += d LayerNorm(x)/dx applied to dy; dg, db accumulate the affine parameter gradients.
void ln_backward(const Mat & x, const Mat & dy, const float * g, const std::vector<float> & mean,
                 const std::vector<float> & rstd, Mat & dx, float * dg, float * db) {
    const int n = x.rows;
    const int d = x.cols;
    std::vector<float> xhat(static_cast<std::size_t>(d)), dxhat(static_cast<std::size_t>(d));
    for (int i = 0; i < n; ++i) {
        const float * xr = x.row(i);
        const float * dyr = dy.row(i);
        const float mu = mean[static_cast<std::size_t>(i)];
        const float rs = rstd[static_cast<std::size_t>(i)];
        float m1 = 0.0f, m2 = 0.0f;
        for (int j = 0; j < d; ++j) {
            xhat[j] = (xr[j] - mu) * rs;
            dxhat[j] = dyr[j] * g[j];
            dg[j] += dyr[j] * xhat[j];
            db[j] += dyr[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[j];
        }
        m1 /= static_cast<float>(d);
        m2 /= static_cast<float>(d);
        float * dxr = dx.row(i);
        for (int j = 0; j < d; ++j) dxr[j] += rs * (dxhat[j] - m1 - xhat[j] * m2);
    }
}

struct LossRows {
    std::vector<int> rows;
    std::vector<TokenId> targets;
};

LossRows loss_rows(const TrainExample & ex) {
    LossRows lr;
    const int T = static_cast<int>(ex.tokens.size());
    if (static_cast<int>(ex.loss_mask.size()) != T) throw ValidationError("loss mask length must equal token count");
    for (int i = 0; i + 1 < T; ++i) {
        if (ex.loss_mask[static_cast<std::size_t>(i)]) {
            lr.rows.push_back(i);
            lr.targets.push_back(ex.tokens[static_cast<std::size_t>(i) + 1]);
        }
    }
    return lr;
}

Mat gather_rows(const Mat & m, const std::vector<int> & rows) {
    Mat out(static_cast<int>(rows.size()), m.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(m.row(rows[r]), m.row(rows[r]) + m.cols, out.row(static_cast<int>(r)));
    return out;
}

// Softmax cross-entropy on logits rows; optionally converts logits in place into dlogits * scale.
double cross_entropy(Mat & logits, const std::vector<TokenId> & targets, bool to_grad, float scale) {
    double total = 0.0;
    const int V = logits.cols;
    for (int r = 0; r < logits.rows; ++r) {
        float * z = logits.row(r);
        float mx = z[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, z[j]);
        double sum = 0.0;
        for (int j = 0; j < V; ++j) sum += std::exp(static_cast<double>(z[j] - mx));
        const double lse = std::log(sum) + mx;
        const TokenId t = targets[static_cast<std::size_t>(r)];
        total += lse - z[t];
        if (to_grad) {
            for (int j = 0; j < V; ++j) z[j] = static_cast<float>(std::exp(static_cast<double>(z[j]) - lse)) * scale;
            z[t] -= scale;
        }
    }
    return total;
}

} // namespace

TransposedWeights TransposedWeights::build(const ModelHandle & m) {
    const auto & c = m.config;
    const int d = c.d_model, F = c.ff_dim(), V = c.vocab_size;
    TransposedWeights t;
    for (int b = 0; b < c.n_layers; ++b) {
        Mat a(3 * d, d), o(d, d), w1(F, d), w2(d, F);
        kernels::transpose(m.params.get(b, "attn.wqkv").data(), d, 3 * d, a.data.data());
        kernels::transpose(m.params.get(b, "attn.wo").data(), d, d, o.data.data());
        kernels::transpose(m.params.get(b, "mlp.w1").data(), d, F, w1.data.data());
        kernels::transpose(m.params.get(b, "mlp.w2").data(), F, d, w2.data.data());
        t.wqkv_t.push_back(std::move(a));
        t.wo_t.push_back(std::move(o));
        t.w1_t.push_back(std::move(w1));
        t.w2_t.push_back(std::move(w2));
    }
    t.unembed_t = Mat(V, d);
    kernels::transpose(m.params.get(-1, "unembed").data(), d, V, t.unembed_t.data.data());
    return t;
}

SequenceLoss sequence_loss(const ModelHandle & model, const TrainExample & ex) {
    const auto lr = loss_rows(ex);
    SequenceLoss out;
    if (lr.rows.empty()) return out;
    detail::check_patches(model.config, ex.patches, static_cast<int>(ex.tokens.size()));
    const auto w = Weights::view(model);
    KvCache cache(model.config);
    const Mat hidden = run_rows(w, ex.tokens, cache, ex.patches, {}, nullptr, nullptr, model.id);
    Mat logits = project_logits(w, gather_rows(hidden, lr.rows));
    out.sum = cross_entropy(logits, lr.targets, false, 0.0f);
    out.count = static_cast<int>(lr.rows.size());
    return out;
}

SequenceLoss accumulate_gradients(const ModelHandle & model, const TransposedWeights & wt, const TrainExample & ex,
                                  float loss_scale, std::span<float> grads) {
    const auto lr = loss_rows(ex);
    SequenceLoss out;
    if (lr.rows.empty()) return out;

    const auto & cfg = model.config;
    const int T = static_cast<int>(ex.tokens.size());
    const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim(), F = cfg.ff_dim(), V = cfg.vocab_size;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    detail::check_patches(cfg, ex.patches, T);

    const auto w = Weights::view(model);
    auto g = GradViews::over(model, grads);
    KvCache cache(cfg);
    Tape tape;
    run_rows(w, ex.tokens, cache, ex.patches, {}, nullptr, &tape, model.id);

    // Output head
    Mat hsel = gather_rows(tape.lnf, lr.rows);
    Mat dlogits(hsel.rows, V);
    kernels::matmul(hsel.data.data(), hsel.rows, d, w.unembed, V, nullptr, dlogits.data.data());
    out.sum = cross_entropy(dlogits, lr.targets, true, loss_scale);
    out.count = static_cast<int>(lr.rows.size());
    if (!std::isfinite(out.sum)) return out;

    kernels::matmul_tn_acc(hsel.data.data(), hsel.rows, d, dlogits.data.data(), V, g.unembed);
    Mat dh_sel(hsel.rows, d);
    kernels::matmul(dlogits.data.data(), dlogits.rows, V, wt.unembed_t.data.data(), d, nullptr, dh_sel.data.data());
    Mat dlnf(T, d);
    for (std::size_t r = 0; r < lr.rows.size(); ++r) {
        std::copy(dh_sel.row(static_cast<int>(r)), dh_sel.row(static_cast<int>(r)) + d, dlnf.row(lr.rows[r]));
    }

    Mat dx(T, d);
    ln_backward(tape.x_final, dlnf, w.lnf_g, tape.lnf_mean, tape.lnf_rstd, dx, g.lnf_g, g.lnf_b);

    Mat dffa(T, F), dln2(T, d), datt(T, d), dqkv(T, 3 * d), dln1(T, d);
    for (int b = cfg.n_layers - 1; b >= 0; --b) {
        const auto & bt = tape.blocks[static_cast<std::size_t>(b)];
        const auto & bw = w.blocks[static_cast<std::size_t>(b)];
        auto & bg = g.blocks[static_cast<std::size_t>(b)];

        // MLP: out = x_mid + gelu(ln2 * w1 + b1) * w2 + b2
        kernels::matmul_tn_acc(bt.ff_act.data.data(), T, F, dx.data.data(), d, bg.w2);
        kernels::colsum_acc(dx.data.data(), T, d, bg.b2);
        kernels::matmul(dx.data.data(), T, d, wt.w2_t[static_cast<std::size_t>(b)].data.data(), F, nullptr,
                        dffa.data.data());
        for (std::size_t t = 0; t < dffa.data.size(); ++t) dffa.data[t] *= kernels::gelu_grad(bt.ff_pre.data[t]);
        kernels::matmul_tn_acc(bt.ln2.data.data(), T, d, dffa.data.data(), F, bg.w1);
        kernels::colsum_acc(dffa.data.data(), T, F, bg.b1);
        kernels::matmul(dffa.data.data(), T, F, wt.w1_t[static_cast<std::size_t>(b)].data.data(), d, nullptr,
                        dln2.data.data());
        Mat dx_mid = dx;
        ln_backward(bt.x_mid, dln2, bw.ln2_g, bt.ln2_mean, bt.ln2_rstd, dx_mid, bg.ln2_g, bg.ln2_b);

        // Attention output projection
        kernels::matmul_tn_acc(bt.att.data.data(), T, d, dx_mid.data.data(), d, bg.wo);
        kernels::colsum_acc(dx_mid.data.data(), T, d, bg.bo);
        kernels::matmul(dx_mid.data.data(), T, d, wt.wo_t[static_cast<std::size_t>(b)].data.data(), d, nullptr,
                        datt.data.data());

        // Scaled dot-product attention
        dqkv.zero();
        std::vector<float> dp(static_cast<std::size_t>(T));
        for (int h = 0; h < H; ++h) {
            const int off = h * hd;
            for (int i = 0; i < T; ++i) {
                const float * p = bt.probs.data() + (static_cast<std::size_t>(h) * T + i) * T;
                const float * da = datt.row(i) + off;
                float s = 0.0f;
                for (int j = 0; j <= i; ++j) {
                    const float * v = bt.qkv.row(j) + 2 * d + off;
                    float acc = 0.0f;
                    for (int t = 0; t < hd; ++t) acc += da[t] * v[t];
                    dp[static_cast<std::size_t>(j)] = acc;
                    s += p[j] * acc;
                    float * dv = dqkv.row(j) + 2 * d + off;
                    for (int t = 0; t < hd; ++t) dv[t] += p[j] * da[t];
                }
                const float * q = bt.qkv.row(i) + off;
                float * dq = dqkv.row(i) + off;
                for (int j = 0; j <= i; ++j) {
                    const float ds = p[j] * (dp[static_cast<std::size_t>(j)] - s) * scale;
                    if (ds == 0.0f) continue;
                    const float * k = bt.qkv.row(j) + d + off;
                    float * dk = dqkv.row(j) + d + off;
                    for (int t = 0; t < hd; ++t) {
                        dq[t] += ds * k[t];
                        dk[t] += ds * q[t];
                    }
                }
            }
        }
        kernels::matmul_tn_acc(bt.ln1.data.data(), T, d, dqkv.data.data(), 3 * d, bg.wqkv);
        kernels::colsum_acc(dqkv.data.data(), T, 3 * d, bg.bqkv);
        kernels::matmul(dqkv.data.data(), T, 3 * d, wt.wqkv_t[static_cast<std::size_t>(b)].data.data(), d, nullptr,
                        dln1.data.data());
        dx = dx_mid;
        ln_backward(bt.x_in, dln1, bw.ln1_g, bt.ln1_mean, bt.ln1_rstd, dx, bg.ln1_g, bg.ln1_b);

        // Rows overwritten on entry to this block do not depend on anything upstream.
        for (int i = 0; i < T; ++i) {
            if (bt.patched[static_cast<std::size_t>(i)]) std::fill(dx.row(i), dx.row(i) + d, 0.0f);
        }
    }

    for (int i = 0; i < T; ++i) {
        const float * dr = dx.row(i);
        float * te = g.tok_emb + static_cast<std::size_t>(ex.tokens[static_cast<std::size_t>(i)]) * d;
        float * pe = g.pos_emb + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            te[j] += dr[j];
            pe[j] += dr[j];
        }
    }
    return out;
}

} // namespace verblab::detail
