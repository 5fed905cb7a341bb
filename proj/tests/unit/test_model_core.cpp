#include "doctest.h"
#include "fixtures.hpp"
#include "verblab/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace verblab;

namespace {

struct Trained {
    Tokenizer tok;
    ModelHandle model;
};

const Trained & toy() {
    static const Trained t = [] {
        const auto corpus = fx::small_corpus();
        Trained r{Tokenizer::build(corpus), {}};
        TrainConfig tc;
        tc.learning_rate = 3e-3;
        tc.batch_size = 2;
        tc.epochs = 20;
        tc.seed = 5;
        r.model = train_lm(ModelHandle::init(fx::tiny_config(r.tok.vocab_size()), ModelRole::target, "toy"), r.tok, corpus,
                           tc)
                      .first;
        return r;
    }();
    return t;
}

bool same_bits(const Mat & a, const Mat & b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool same_rows(const Mat & a, const Mat & b, int n) {
    return std::memcmp(a.data.data(), b.data.data(), static_cast<std::size_t>(n) * a.cols * sizeof(float)) == 0;
}

} // namespace

TEST_CASE("config validation") {
    auto c = fx::tiny_config(300);
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = fx::tiny_config(300);
    c.context_len = 16;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = fx::tiny_config(0);
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("tokenizer round trip, specials and byte fallback") {
    const auto tok = Tokenizer::build(fx::small_corpus());
    const auto ids = tok.encode("the red fox .");
    CHECK(ids.size() == 4);
    CHECK(tok.decode(ids) == "the red fox.");
    const auto sp = tok.encode("[X] <sep> fox");
    REQUIRE(sp.size() == 3);
    CHECK(sp[0] == Tokenizer::kPlaceholder);
    CHECK(sp[1] == Tokenizer::kSep);
    const auto unk = tok.encode("zebra");
    CHECK(unk.size() >= 5);
    for (auto id : unk) CHECK(tok.is_byte(id));
    CHECK(tok.decode(tok.encode("fox zebra")) == "fox zebra");
    // Vocabulary order depends only on the set of pieces.
    auto rev = fx::small_corpus();
    std::reverse(rev.begin(), rev.end());
    CHECK(Tokenizer::build(rev).fingerprint() == tok.fingerprint());
}

TEST_CASE("forward is deterministic and shaped") {
    const auto & t = toy();
    const auto ids = t.tok.encode("the red fox jumps over");
    const auto a = forward(t.model, ids);
    const auto b = forward(t.model, ids);
    CHECK(a.logits.rows == static_cast<int>(ids.size()));
    CHECK(a.logits.cols == t.model.config.vocab_size);
    CHECK(same_bits(a.logits, b.logits));
}

TEST_CASE("identity patch leaves logits bitwise unchanged") {
    const auto & t = toy();
    const auto ids = t.tok.encode("one two three four five six .");
    const auto ref = forward(t.model, ids).logits;
    const int L = t.model.config.n_layers;
    for (int l = 1; l < L; ++l) {
        for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
            const auto h = capture_layer(t.model, ids, l).row(i);
            const PatchSpec p = make_patch(h, l + 1, i);
            CHECK(same_bits(forward(t.model, ids, std::span(&p, 1)).logits, ref));
        }
    }
}

TEST_CASE("patch at position k leaves earlier positions untouched") {
    const auto & t = toy();
    const auto ids = t.tok.encode("the red fox jumps over the lazy dog");
    const auto ref = forward(t.model, ids).logits;
    const int L = t.model.config.n_layers;
    const int k = 4;
    ActivationVector z{L, k, std::vector<float>(static_cast<std::size_t>(t.model.config.d_model), 0.0f), "zero"};
    const PatchSpec p = make_patch(z, L, k);
    const auto out = forward(t.model, ids, std::span(&p, 1)).logits;
    CHECK(same_rows(out, ref, k));
    bool changed = false;
    for (int c = 0; c < ref.cols; ++c) changed |= out.at(k, c) != ref.at(k, c);
    CHECK(changed);
}

TEST_CASE("captures: shape, consistency and shared prefixes") {
    const auto & t = toy();
    const auto a = t.tok.encode("one two three four five six .");
    auto b = a;
    b[5] = t.tok.encode("fox")[0];
    b[6] = t.tok.encode("dog")[0];
    REQUIRE(a.size() == 7);
    const int L = t.model.config.n_layers;
    for (int l = 1; l <= L; ++l) {
        const auto ma = capture_layer(t.model, a, l);
        const auto mb = capture_layer(t.model, b, l);
        CHECK(ma.n_rows() == 7);
        CHECK(ma.rows.cols == t.model.config.d_model);
        CHECK(same_rows(ma.rows, mb.rows, 5));
        const CaptureRequest req{l, 3};
        const auto fr = forward(t.model, a, {}, std::span(&req, 1));
        REQUIRE(fr.captured.size() == 1);
        CHECK(fr.captured[0].values == ma.row(3).values);
    }
    const std::vector<int> layers{1, 2};
    const auto both = capture_layers(t.model, a, layers);
    CHECK(same_bits(both[1].rows, capture_layer(t.model, a, 2).rows));
}

TEST_CASE("capture after a patch sees the patched computation") {
    const auto & t = toy();
    const auto ids = t.tok.encode("alpha beta gamma delta");
    ActivationVector z{1, 1, std::vector<float>(static_cast<std::size_t>(t.model.config.d_model), 0.5f), "c"};
    const PatchSpec p = make_patch(z, 2, 1);
    const auto patched = capture_layer(t.model, ids, 2, std::span(&p, 1));
    const auto plain = capture_layer(t.model, ids, 2);
    CHECK(same_rows(patched.rows, plain.rows, 1));
    CHECK_FALSE(same_bits(patched.rows, plain.rows));
}

TEST_CASE("bad patches and captures are rejected") {
    const auto & t = toy();
    const auto ids = t.tok.encode("alpha beta gamma");
    const int d = t.model.config.d_model;
    ActivationVector v{1, 0, std::vector<float>(static_cast<std::size_t>(d), 0.0f), "v"};
    PatchSpec far = make_patch(v, 1, 3);
    CHECK_THROWS_AS(forward(t.model, ids, std::span(&far, 1)), ValidationError);
    PatchSpec deep = make_patch(v, 3, 0);
    CHECK_THROWS_AS(forward(t.model, ids, std::span(&deep, 1)), ValidationError);
    ActivationVector narrow{1, 0, std::vector<float>(static_cast<std::size_t>(d - 1), 0.0f), "n"};
    PatchSpec thin = make_patch(narrow, 1, 0);
    CHECK_THROWS_AS(forward(t.model, ids, std::span(&thin, 1)), ValidationError);
    v.values[2] = std::nanf("");
    PatchSpec nan = make_patch(v, 1, 0);
    CHECK_THROWS_AS(forward(t.model, ids, std::span(&nan, 1)), ValidationError);
    const CaptureRequest bad{0, 0};
    CHECK_THROWS_AS(forward(t.model, ids, {}, std::span(&bad, 1)), ValidationError);
    CHECK_THROWS_AS(forward(t.model, Tokens{}), ValidationError);
    CHECK_THROWS_AS(forward(t.model, Tokens(33, 3)), ValidationError);
}

TEST_CASE("generation: greedy, bounded and prompt-only patches") {
    const auto & t = toy();
    const auto prefix = t.tok.encode("the red fox");
    const auto a = generate(t.model, t.tok, prefix, 5);
    const auto b = generate(t.model, t.tok, prefix, 5);
    CHECK(a.text == b.text);
    CHECK(a.tokens.size() <= 5);
    CHECK(generate(t.model, t.tok, prefix, 1).tokens.size() <= 1);
    CHECK_THROWS_AS(generate(t.model, t.tok, prefix, 0), ValidationError);
    CHECK_THROWS_AS(generate(t.model, t.tok, Tokens{}, 3), ValidationError);
    // The cached decode matches full recomputation of the same sequence.
    if (!a.tokens.empty()) {
        Tokens all = prefix;
        all.insert(all.end(), a.tokens.begin(), a.tokens.end() - 1);
        const auto lg = forward(t.model, all).logits;
        const float * last = lg.row(lg.rows - 1);
        const auto best = std::max_element(last, last + lg.cols) - last;
        CHECK(best == a.tokens.back());
    }
}

TEST_CASE("items evaluated on threads match one at a time") {
    const auto & t = toy();
    const std::vector<std::string> texts{"the red fox", "one two three four", "alpha beta", "the lazy dog ."};
    std::vector<Mat> seq, par(texts.size());
    for (const auto & s : texts) seq.push_back(forward(t.model, t.tok.encode(s)).logits);
    std::vector<std::thread> th;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        th.emplace_back([&, i] { par[i] = forward(t.model, t.tok.encode(texts[i])).logits; });
    }
    for (auto & x : th) x.join();
    for (std::size_t i = 0; i < texts.size(); ++i) CHECK(same_bits(seq[i], par[i]));
}

TEST_CASE("matmul rows do not depend on the rest of the batch") {
    Rng rng(4);
    const int m = 13, k = 24, n = 19;
    std::vector<float> x(m * k), w(k * n), bias(n);
    for (auto & v : x) v = static_cast<float>(standard_normal(rng));
    for (auto & v : w) v = static_cast<float>(standard_normal(rng));
    for (auto & v : bias) v = static_cast<float>(standard_normal(rng));
    std::vector<float> all(m * n), one(n);
    kernels::matmul(x.data(), m, k, w.data(), n, bias.data(), all.data());
    for (int r = 0; r < m; ++r) {
        kernels::matmul(x.data() + r * k, 1, k, w.data(), n, bias.data(), one.data());
        CHECK(std::memcmp(one.data(), all.data() + r * n, n * sizeof(float)) == 0);
        double ref = bias[0];
        for (int j = 0; j < k; ++j) ref += double(x[r * k + j]) * w[j * n];
        CHECK(one[0] == doctest::Approx(ref).epsilon(1e-4));
    }
}

TEST_CASE("inference never mutates weights") {
    const auto & t = toy();
    const auto before = t.model.weights_checksum();
    const auto ids = t.tok.encode("the red fox jumps");
    ActivationVector z{1, 0, std::vector<float>(static_cast<std::size_t>(t.model.config.d_model), 0.1f), "z"};
    const PatchSpec p = make_patch(z, 1, 0);
    for (int i = 0; i < 1000; ++i) {
        switch (i % 3) {
        case 0: forward(t.model, ids, std::span(&p, 1)); break;
        case 1: capture_layer(t.model, ids, 1 + i % 2); break;
        default: generate(t.model, t.tok, ids, 2); break;
        }
    }
    CHECK(t.model.weights_checksum() == before);
}

TEST_CASE("checkpoint round trip and config mismatch") {
    const auto & t = toy();
    const auto path = std::filesystem::temp_directory_path() / "verblab_test_ckpt.bin";
    ModelHandle m = t.model;
    m.provenance = "toy corpus, 20 epochs";
    m.decoder = DecoderTag{DecoderMode::inverter_multi, 1};
    save_checkpoint(m, path);
    const auto back = load_checkpoint(path, &m.config);
    CHECK(back.weights_checksum() == m.weights_checksum());
    CHECK(back.config == m.config);
    CHECK(back.provenance == m.provenance);
    CHECK(back.decoder == m.decoder);
    CHECK(back.id == m.id);
    auto other = m.config;
    other.d_model = 32;
    CHECK_THROWS_AS(load_checkpoint(path, &other), ValidationError);
    {
        std::ofstream f(path, std::ios::binary);
        f << "not a checkpoint\n";
    }
    CHECK_THROWS(load_checkpoint(path));
    std::filesystem::remove(path);
}

TEST_CASE("non-finite weights are detected") {
    auto m = toy().model;
    CHECK_NOTHROW(m.check_finite());
    m.params.flat()[7] = INFINITY;
    CHECK_THROWS(m.check_finite());
}
