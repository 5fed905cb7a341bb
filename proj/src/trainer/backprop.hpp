#pragma once

#include "verblab/detail/transformer.hpp"
#include "verblab/trainer.hpp"

namespace verblab::detail {

// Transposed copies of the matrices whose transposes appear in the backward pass.
struct TransposedWeights {
    std::vector<Mat> wqkv_t, wo_t, w1_t, w2_t;
    Mat unembed_t;

    static TransposedWeights build(const ModelHandle & m);
};

struct SequenceLoss {
    double sum = 0.0;  // summed cross-entropy over masked positions (nats)
    int count = 0;
};

// Cross-entropy over the masked positions of one example; no gradients.
SequenceLoss sequence_loss(const ModelHandle & model, const TrainExample & ex);

// Forward + backward for one example. Gradients of (loss_scale * summed CE) are added to `grads`,
// which uses the ParamStore flat layout.
SequenceLoss accumulate_gradients(const ModelHandle & model, const TransposedWeights & wt, const TrainExample & ex,
                                  float loss_scale, std::span<float> grads);

} // namespace verblab::detail
