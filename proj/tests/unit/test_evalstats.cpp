#include "doctest.h"
#include "verblab/evalstats.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace verblab;

namespace {

// Two-sided exact McNemar p from the binomial pmf, summed directly.
double exact_two_sided(int b01, int b10) {
    const int n = b01 + b10, k = std::min(b01, b10);
    double s = 0.0;
    for (int i = 0; i <= k; ++i) s += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0));
    return std::min(1.0, 2.0 * s / std::pow(2.0, n));
}

TrialResult trial(const std::string & item, int src, int tgt, bool ok) {
    TrialResult t;
    t.method = "m";
    t.task = "country";
    t.item_id = item;
    t.source_layer = src;
    t.target_layer = tgt;
    t.correct = ok;
    return t;
}

std::vector<std::string> lines(const std::filesystem::path & p) {
    std::ifstream f(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(f, l);) out.push_back(l);
    return out;
}

} // namespace

TEST_CASE("contains_answer truth table") {
    struct Row {
        const char * output;
        const char * answer;
        bool raw;
        bool word;
    };
    const Row rows[] = {
        {"The answer is Egypt.", "Egypt", true, true},
        {"egypt", "Egypt", true, true},
        {"EGYPT is the country", "egypt", true, true},
        {"she is from Romania", "Oman", true, false},  // substring inside a longer word
        {"I like tea", "tea", true, true},
        {"steam rises", "tea", true, false},
        {"", "Egypt", false, false},
        {"Egyptian food", "Egypt", true, false},
        {"from New Zealand", "New Zealand", true, true},
        {"from NewZealand", "New Zealand", false, false},
        {"Jazz, mostly", "jazz", true, true},
        {"no idea", "chess", false, false},
    };
    for (const auto & r : rows) {
        CAPTURE(r.output);
        CAPTURE(r.answer);
        CHECK(contains_answer(r.output, r.answer) == r.raw);
        CHECK(contains_answer_word(r.output, r.answer) == r.word);
    }
    CHECK_THROWS_AS(contains_answer("x", ""), ValidationError);
}

TEST_CASE("McNemar exact and asymptotic branches") {
    const auto r = mcnemar_counts(15, 5, 1);
    CHECK(r.exact);
    CHECK(std::abs(r.p_raw - 0.0414) <= 1e-4);
    CHECK(std::abs(r.p_raw - 0.041389465) < 1e-6);
    CHECK(r.p_raw == doctest::Approx(exact_two_sided(15, 5)).epsilon(1e-12));
    CHECK(r.direction() == -1);
    CHECK(r.significant);

    const auto big = mcnemar_counts(30, 12, 1);
    CHECK_FALSE(big.exact);
    const double chi = (std::abs(30 - 12) - 1.0) * (std::abs(30 - 12) - 1.0) / 42.0;
    CHECK(big.statistic == doctest::Approx(chi));
    CHECK(big.p_raw == doctest::Approx(std::erfc(std::sqrt(chi / 2.0))));

    const auto none = mcnemar_counts(0, 0, 3);
    CHECK(none.no_discordant);
    CHECK(none.p_raw == 1.0);
    CHECK_FALSE(none.significant);

    const auto sym = mcnemar_counts(4, 4, 1);
    CHECK(sym.p_raw == 1.0);

    const std::vector<bool> a{true, true, false, false, true}, b{false, true, true, false, true};
    const auto v = mcnemar(a, b, 2);
    CHECK(v.b01 == 1);
    CHECK(v.b10 == 1);
    CHECK(v.n_comparisons == 2);
    CHECK_THROWS_AS(mcnemar(a, std::vector<bool>{true}, 1), ValidationError);
}

TEST_CASE("Bonferroni caps at one and is monotone") {
    CHECK(bonferroni(0.01, 6) == doctest::Approx(0.06));
    CHECK(bonferroni(0.3, 6) == 1.0);
    double prev = 0.0;
    for (double p = 0.0; p <= 1.0; p += 0.01) {
        const double q = bonferroni(p, 6);
        CHECK(q >= prev);
        CHECK(q >= p);
        CHECK(q <= 1.0);
        prev = q;
    }
    CHECK_THROWS_AS(bonferroni(0.1, 0), ValidationError);
    const auto r = mcnemar_counts(15, 5, 6);
    CHECK(r.p_adjusted == doctest::Approx(6 * r.p_raw));
    CHECK_FALSE(r.significant);
}

TEST_CASE("binomial upper tail") {
    CHECK(binomial_upper_tail(0, 10, 0.3) == doctest::Approx(1.0));
    CHECK(binomial_upper_tail(11, 10, 0.3) == 0.0);
    CHECK(binomial_upper_tail(10, 10, 0.5) == doctest::Approx(1.0 / 1024));
    CHECK(binomial_upper_tail(3, 5, 0.5) == doctest::Approx(0.5));
    CHECK(binomial_upper_tail(1, 5, 0.0) == 0.0);
    CHECK(binomial_upper_tail(5, 5, 1.0) == 1.0);
    // 33 of 240 at chance 0.1.
    const double p = binomial_upper_tail(33, 240, 0.1);
    CHECK(p < 0.05);
    CHECK(p > 0.02);
}

TEST_CASE("BLEU: identity, empty and reference fixtures") {
    const std::vector<std::string> ref{"the cat sat on the mat", "a quick brown fox"};
    CHECK(bleu(ref, ref) == doctest::Approx(100.0));
    const std::vector<std::string> empty{"", ""};
    CHECK(bleu(empty, ref) == 0.0);

    // Values from tests/oracles/bleu_oracle.py (sacrebleu, whitespace tokens, no smoothing).
    const std::vector<std::string> c1{"the cat sat on the mat"}, r1{"the cat sat on a mat"};
    CHECK(std::abs(bleu(c1, r1) - 53.728496591177) < 1e-6);
    CHECK(std::abs(bleu(c1, r1) - 100.0 * std::pow(1.0 / 12.0, 0.25)) < 1e-6);
    const std::vector<std::string> c2{"Yara is from Egypt and likes tea", "the red fox jumps over the dog",
                                      "one two three four"},
        r2{"Yara is from Egypt and she likes tea", "the quick red fox jumps over the lazy dog",
           "one two three four five"};
    CHECK(std::abs(bleu(c2, r2) - 59.077440415722) < 1e-6);

    // Unmatched orders are smoothed to 1/(total+1): p = 1, 1/3, 1/3, 1/2 with brevity penalty e^(1-6/4).
    const std::vector<std::string> c3{"cat the mat on"}, r3{"the cat sat on the mat"};
    CHECK(std::abs(bleu(c3, r3) - 100.0 * std::exp(-0.5) * std::pow(1.0 / 18.0, 0.25)) < 1e-9);
    CHECK_THROWS_AS(bleu(c1, r2), ValidationError);
}

TEST_CASE("scoring: layers, ensembles and completeness") {
    std::vector<TrialResult> t;
    // Two items, source layers 1 and 2, two target layers each.
    t.push_back(trial("a", 1, 1, false));
    t.push_back(trial("a", 1, 2, true));
    t.push_back(trial("b", 1, 1, false));
    t.push_back(trial("b", 1, 2, false));
    t.push_back(trial("a", 2, 1, false));
    t.push_back(trial("a", 2, 2, false));
    t.push_back(trial("b", 2, 1, true));
    t.push_back(trial("b", 2, 2, true));
    const auto s = score_run(t, EnsembleMode::any_target_layer);
    REQUIRE(s.per_layer.size() == 2);
    CHECK(s.per_layer[0].source_layer == 1);
    CHECK(s.per_layer[0].n_correct == 1);
    CHECK(s.per_layer[1].n_correct == 1);
    CHECK(s.layer_average == doctest::Approx(0.5));
    const std::vector<std::string> order{"a", "b"};
    const auto po = paired_outcomes(s, order);
    CHECK(po == std::vector<bool>{false, false});

    auto missing = t;
    missing.pop_back();
    CHECK_THROWS_AS(score_run(missing, EnsembleMode::any_target_layer), ValidationError);
    auto dup = t;
    dup.push_back(t.front());
    CHECK_THROWS_AS(score_run(dup, EnsembleMode::any_target_layer), ValidationError);
    CHECK_THROWS_AS(score_run(t, EnsembleMode::single_output), ValidationError);

    std::vector<TrialResult> single{trial("a", 0, kSingleOutput, true), trial("b", 0, kSingleOutput, false)};
    const auto z = score_run(single, EnsembleMode::single_output);
    CHECK(z.layer_average == doctest::Approx(0.5));
}

TEST_CASE("sensitivity suite: identity delta is exactly zero") {
    std::vector<EvalItem> items;
    for (int i = 0; i < 6; ++i) {
        EvalItem it;
        it.id = "i" + std::to_string(i);
        it.task = "country";
        it.subject = "Person" + std::to_string(i);
        it.prompt_template = eval_template(0);
        it.x_prompt = fill_template(it.prompt_template, it.subject);
        it.x_input = "My name is " + it.subject;
        it.answer = i % 2 ? "Egypt" : "Peru";
        items.push_back(it);
    }
    const std::vector<std::string> pool{"Egypt", "Peru", "Chile"};
    // Answers right unless the prompt mentions a distractor, which it then repeats.
    const MethodRunner run = [&](const EvalItem & it) {
        for (const auto & d : pool) {
            if (it.x_prompt.find(d) != std::string::npos) return d;
        }
        return it.answer;
    };
    const auto r = sensitivity_suite(items, run, pool, 3);
    CHECK(r.original_accuracy == 1.0);
    REQUIRE(r.variants.size() == 7);
    CHECK(r.variants[0].variant == "S0");
    CHECK(r.variants[0].delta == 0.0);
    for (const auto & v : r.variants) {
        if (v.adversarial) CHECK(v.accuracy < r.original_accuracy);
    }
    Rng rng(1);
    for (const auto & v : prompt_variants(0)) {
        if (!v.adversarial) continue;
        for (const auto & it : variant_items(items, v, pool, rng)) {
            CHECK(it.x_prompt.find("{D}") == std::string::npos);
            CHECK(it.x_prompt.find(it.answer) == std::string::npos);
        }
    }
}

TEST_CASE("swap-label scoring counts any output") {
    std::vector<TrialResult> t;
    auto add = [&](const std::string & id, const std::string & task, const std::string & out) {
        TrialResult r;
        r.method = "lit_multi";
        r.task = task;
        r.item_id = id;
        r.output = out;
        t.push_back(r);
    };
    add("country-0", "country", "Peru");
    add("country-0", "country", "Chile");
    add("country-1", "country", "Egypt");
    add("fav_food-0", "fav_food", "sushi");
    const std::map<std::string, std::string> orig{{"country-0", "Chile"}, {"country-1", "Egypt"}, {"fav_food-0", "tacos"}},
        shuf{{"country-0", "Egypt"}, {"country-1", "Peru"}, {"fav_food-0", "sushi"}};
    const auto s = swap_label_eval(t, orig, shuf);
    REQUIRE(s.size() == 2);
    CHECK(s[0].task == "country");
    CHECK(s[0].n == 2);
    CHECK(s[0].original_accuracy == 1.0);
    CHECK(s[0].shuffled_accuracy == 0.0);
    CHECK(s[1].original_accuracy == 0.0);
    CHECK(s[1].shuffled_accuracy == 1.0);
}

TEST_CASE("tables carry a schema line and fixed precision") {
    const auto dir = std::filesystem::temp_directory_path() / "verblab_tables";
    std::filesystem::create_directories(dir);
    const std::vector<AccuracyRow> rows{{"plain", "zero_shot", "country", "1", 10, 1.0 / 3.0}};
    write_accuracy_csv(dir / "a.csv", rows, "note");
    const auto a = lines(dir / "a.csv");
    REQUIRE(a.size() == 3);
    CHECK(a[0] == "# schema_version=1 note");
    CHECK(a[1] == "regime,method,task,source_layer,n_items,accuracy");
    CHECK(a[2] == "plain,zero_shot,country,1,10,0.333333");
    const std::vector<SignificanceResult> sig{mcnemar_counts(15, 5, 1)};
    write_significance_csv(dir / "s.csv", sig, "note");
    CHECK(lines(dir / "s.csv").size() == 3);
    CHECK(fmt6(0.5) == "0.500000");

    std::vector<TrialResult> tr{trial("a", 1, 2, true), trial("b", 0, 0, false)};
    tr[0].output = "she said \"hi\"\nthen left";
    write_trials_jsonl(dir / "t.jsonl", tr);
    const auto back = read_trials_jsonl(dir / "t.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].output == tr[0].output);
    CHECK(back[0].target_layer == 2);
    CHECK(back[1].correct == false);
    std::filesystem::remove_all(dir);
}
