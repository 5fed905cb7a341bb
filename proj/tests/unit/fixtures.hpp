#pragma once

#include "verblab/model.hpp"
#include "verblab/tokenizer.hpp"
#include "verblab/trainer.hpp"

#include <string>
#include <vector>

namespace fx {

inline verblab::ModelConfig tiny_config(int vocab, std::uint64_t seed = 11) {
    verblab::ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.ff_mult = 2;
    c.context_len = 32;
    c.vocab_size = vocab;
    c.seed = seed;
    return c;
}

inline std::vector<std::string> small_corpus() {
    return {"alpha beta gamma delta .", "the red fox jumps over the lazy dog .", "one two three four five six ."};
}

struct Toy {
    verblab::Tokenizer tok;
    verblab::ModelHandle model;
};

// A tiny target trained for a few epochs on the small corpus; built once per test binary.
inline const Toy & trained_toy() {
    static const Toy t = [] {
        auto corpus = small_corpus();
        corpus.push_back("The country of origin for [X] <sep> My name is Yara");
        Toy r{verblab::Tokenizer::build(corpus), {}};
        verblab::TrainConfig tc;
        tc.learning_rate = 3e-3;
        tc.batch_size = 2;
        tc.epochs = 20;
        tc.seed = 5;
        auto init = verblab::ModelHandle::init(tiny_config(r.tok.vocab_size()), verblab::ModelRole::target, "toy");
        r.model = verblab::train_lm(init, r.tok, small_corpus(), tc).first;
        return r;
    }();
    return t;
}

} // namespace fx
