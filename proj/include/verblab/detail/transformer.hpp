#pragma once

// Internal compute shared by inference and training. Not part of the public surface.

#include "verblab/model.hpp"

#include <vector>

namespace verblab::detail {

struct BlockWeights {
    const float * ln1_g;
    const float * ln1_b;
    const float * wqkv;  // d x 3d
    const float * bqkv;
    const float * wo;    // d x d
    const float * bo;
    const float * ln2_g;
    const float * ln2_b;
    const float * w1;    // d x f
    const float * b1;
    const float * w2;    // f x d
    const float * b2;
};

struct Weights {
    const ModelConfig * cfg = nullptr;
    const float * tok_emb = nullptr;  // V x d
    const float * pos_emb = nullptr;  // C x d
    std::vector<BlockWeights> blocks;
    const float * lnf_g = nullptr;
    const float * lnf_b = nullptr;
    const float * unembed = nullptr;  // d x V

    static Weights view(const ModelHandle & m);
};

// Saved intermediates of one block for backpropagation. Row r is absolute position start + r.
struct BlockTape {
    Mat x_in;   // stream entering the block (after patching)
    Mat ln1;
    Mat qkv;
    Mat att;    // concatenated head outputs, before output projection
    Mat x_mid;  // stream after attention residual
    Mat ln2;
    Mat ff_pre;
    Mat ff_act;
    std::vector<float> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
    std::vector<float> probs;  // heads x n x total_len, row-major
    std::vector<char> patched;  // rows overwritten on entry to this block
};

struct Tape {
    std::vector<BlockTape> blocks;
    Mat x_final;
    Mat lnf;
    std::vector<float> lnf_mean, lnf_rstd;
};

struct KvCache {
    std::vector<Mat> k;  // per block, context_len x d
    std::vector<Mat> v;
    int length = 0;

    explicit KvCache(const ModelConfig & cfg);
};

// Validates patches against a sequence of `seq_len` tokens (all patch rows must land inside it).
void check_patches(const ModelConfig & cfg, std::span<const PatchSpec> patches, int seq_len);

// Processes `tokens` as positions [cache.length, cache.length + n). Keys/values are appended to the
// cache. Returns final-norm outputs for the new rows (n x d). Captures whose position falls in the
// new rows are appended to `captured` in request order.
Mat run_rows(const Weights & w, std::span<const TokenId> tokens, KvCache & cache, std::span<const PatchSpec> patches,
             std::span<const CaptureRequest> captures, std::vector<ActivationVector> * captured, Tape * tape,
             const std::string & model_id);

// logits[n x V] = hidden[n x d] * unembed
Mat project_logits(const Weights & w, const Mat & hidden);

void layer_norm_rows(const float * x, int n, int d, const float * g, const float * b, float * y, float * mean,
                     float * rstd);

} // namespace verblab::detail
