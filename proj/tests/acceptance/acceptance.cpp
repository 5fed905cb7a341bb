// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   acceptance [run_dir] [config.ini]
// Trained models are cached in run_dir, so a second invocation only re-evaluates.

#include "verblab/labctl.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace verblab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string & name, bool ok, const std::string & detail) {
    std::printf("%s criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

std::string f3(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3f", v);
    return b;
}

bool same_bits(const Mat & a, const Mat & b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::equal(a.data.begin(), a.data.end(), b.data.begin(),
                      [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
}

double accuracy(const MethodScore & s) { return s.score.layer_average; }

// ----------------------------------------------------------------------------------------------

void identity_patches(Lab & lab) {
    const ModelHandle & m = lab.target(Regime::fantasy);
    const Tokenizer & tok = lab.tokenizer();
    const auto & docs = lab.documents(Regime::fantasy);
    const int L = m.config.n_layers;
    Rng rng(derive_seed(lab.config().seed(), "identity-patch"));
    int same = 0;
    for (int k = 0; k < 100; ++k) {
        const auto & d = docs[uniform_index(rng, docs.size())][0];
        Tokens ids = tok.encode(d.text);
        ids.resize(std::min<std::size_t>(ids.size(), 48));
        const int layer = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(L - 1)));
        const int pos = static_cast<int>(uniform_index(rng, ids.size()));
        const PatchSpec p = make_patch(capture_layer(m, ids, layer).row(pos), layer + 1, pos);
        same += same_bits(forward(m, ids, std::span(&p, 1)).logits, forward(m, ids).logits);
    }
    report(1, "identity patches leave logits bitwise unchanged", same == 100, std::to_string(same) + "/100 identical");
}

double exact_mcnemar(int b01, int b10) {
    const int n = b01 + b10, k = std::min(b01, b10);
    double tail = 0.0;
    for (int i = 0; i <= k; ++i) tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0)) * std::pow(0.5, n);
    return std::min(1.0, 2.0 * tail);
}

void unit_oracles() {
    struct Row {
        const char * out;
        const char * ans;
        bool hit;
    };
    const Row rows[] = {
        {"The answer is Egypt.", "Egypt", true}, {"egypt", "Egypt", true},
        {"EGYPT is the country", "egypt", true},  {"I like tea", "tea", true},
        {"", "Egypt", false},                     {"from New Zealand", "New Zealand", true},
        {"from NewZealand", "New Zealand", false}, {"Jazz, mostly", "jazz", true},
        {"no idea", "chess", false},              {"It is chess .", "Chess", true},
    };
    int ok = 0, n = 0;
    for (const auto & r : rows) ok += contains_answer(r.out, r.ans) == r.hit, ++n;
    // Substring scoring accepts Oman inside Romania; the whole-word variant does not.
    ok += contains_answer("she is from Romania", "Oman") && !contains_answer_word("she is from Romania", "Oman");
    ++n;
    bool good = ok == n;
    std::string detail = "contains_answer " + std::to_string(ok) + "/" + std::to_string(n);

    const double p = mcnemar_counts(15, 5, 1).p_raw;
    const bool mc = std::abs(p - 0.0414) < 1e-4 && std::abs(p - exact_mcnemar(15, 5)) < 1e-12;
    good &= mc;
    char b[64];
    std::snprintf(b, sizeof b, ", McNemar(15,5) p=%.6f", p);
    detail += b;

    bool bonf = bonferroni(0.3, 6) == 1.0 && bonferroni(0.01, 6) == 0.06;
    double prev = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double q = bonferroni(i / 100.0, 6);
        bonf &= q >= prev && q <= 1.0;
        prev = q;
    }
    good &= bonf;
    detail += bonf ? ", Bonferroni ok" : ", Bonferroni broken";

    const std::vector<std::string> ref = {"the cat sat on the mat"}, cand = {"the cat sat on a mat"}, none = {""};
    const double bi = bleu(ref, ref), be = bleu(none, ref), bp = bleu(cand, ref);
    // sacrebleu, whitespace tokens, no smoothing
    const bool bl = std::abs(bi - 100.0) < 1e-9 && be == 0.0 && std::abs(bp - 53.728496591177) < 1e-6;
    good &= bl;
    std::snprintf(b, sizeof b, ", BLEU identity=%.1f empty=%.1f pair=%.6f", bi, be, bp);
    detail += b;
    report(2, "unit oracles", good, detail);
}

void kf1(Lab & lab) {
    const Kf1Result r = lab.evaluate_kf1();
    double zs = 0.0, lit = 0.0;
    int deficits = 0;
    for (const auto & t : r.tasks) {
        zs += accuracy(r.get("zero_shot", t));
        lit += accuracy(r.get("lit_multi", t));
    }
    zs /= r.tasks.size();
    lit /= r.tasks.size();
    for (const auto & s : r.significance) {
        // b01: zero-shot wrong where the other method is right
        if (s.method_b == "lit_multi" && s.significant && s.b01 > s.b10) ++deficits;
    }
    report(3, "zero-shot matches LIT-style on input-answerable tasks", zs >= lit - 0.05 && deficits == 0,
           "zero_shot " + f3(zs) + " vs lit_multi " + f3(lit) + " over " + std::to_string(r.tasks.size()) +
               " tasks, significant deficits " + std::to_string(deficits));
}

void kf2(Lab & lab) {
    const Kf2Result r = lab.evaluate_kf2();
    int kept = 0;
    for (const auto & t : r.tasks) {
        kept += accuracy(r.get("invert_multi", t)) >= 0.5 * accuracy(r.get("lit_multi", t));
    }
    const bool ok = r.bleu_multi >= 70.0 && r.bleu_multi > r.bleu_single && 2 * kept >= static_cast<int>(r.tasks.size());
    report(4, "inversion recovers the input and what LIT-style reads from it", ok,
           "BLEU multi " + f3(r.bleu_multi) + " single " + f3(r.bleu_single) + " on " + std::to_string(r.n_documents) +
               " documents, invert-then-interpret >= half of LIT on " + std::to_string(kept) + "/" +
               std::to_string(r.tasks.size()) + " tasks");
}

void kf3(Lab & lab) {
    const PersonaQaResult r = lab.evaluate_personaqa(Regime::fantasy);
    const double chance = 1.0 / r.n_labels;
    bool ok = true;
    std::string detail = "chance " + f3(chance);
    for (const char * method : {"patchscope_single", "lit_multi"}) {
        double acc = 0.0;
        int n = 0;
        for (int a = 0; a < kNumAttributes; ++a) {
            const auto & s = r.get(method, std::string(kAttributeKeys[a]));
            acc += accuracy(s);
            n += static_cast<int>(s.outcomes.size());
        }
        acc /= kNumAttributes;
        const double bound = chance + 1.96 * std::sqrt(chance * (1.0 - chance) / n);
        ok &= acc <= bound;
        detail += std::string(", ") + method + " " + f3(acc) + " (bound " + f3(bound) + ")";
    }
    int correct = 0, n = 0;
    for (const auto & p : r.probe) correct += p.correct, n += p.n;
    const double p = binomial_upper_tail(correct, n, chance);
    ok &= p < 0.05;
    char b[96];
    std::snprintf(b, sizeof b, ", probe %d/%d=%.3f p=%.2g", correct, n, n ? double(correct) / n : 0.0, p);
    detail += b;
    report(5, "fantasy personas: verbalizers at chance, probe above", ok, detail);
}

void knowledge(Lab & lab) {
    const KnowledgeResult r = lab.evaluate_knowledge({Regime::fantasy});
    bool base_zero = false, target_ok = false;
    std::string detail;
    for (std::size_t i = 0; i < r.models.size(); ++i) {
        if (r.regimes[i] != "fantasy") continue;
        const auto & acc = r.accuracy[i];
        std::string row;
        for (int a = 0; a < kNumAttributes; ++a) row += (a ? "/" : "") + f3(acc[a]);
        if (r.models[i] == "base") {
            base_zero = std::all_of(acc.begin(), acc.end(), [](double v) { return v == 0.0; });
        } else {
            target_ok = std::all_of(acc.begin(), acc.end(), [](double v) { return v >= 0.5; });
        }
        detail += (detail.empty() ? "" : ", ") + r.models[i] + " " + row;
    }
    report(6, "fantasy facts absent from base, learned by target", base_zero && target_ok, detail);
}

void swap_label(Lab & lab) {
    const SwapLabelResult r = lab.evaluate_swap_label();
    int higher = 0;
    std::string detail;
    for (const auto & s : r.lit) {
        higher += s.original_accuracy > s.shuffled_accuracy;
        detail += (detail.empty() ? "" : " ") + s.task + "=" + f3(s.original_accuracy) + ">" + f3(s.shuffled_accuracy);
    }
    report(7, "shuffled target: LIT-style follows original labels", higher >= 4,
           std::to_string(higher) + "/6 attributes; " + detail);
}

void derangements(const ExperimentConfig & cfg) {
    int fixed = 0, worlds = 0;
    const int n = static_cast<int>(cfg.get_int("world.n_personas"));
    const int labels = static_cast<int>(cfg.get_int("world.labels_per_attribute"));
    for (std::uint64_t s = 1; s <= 50; ++s) {
        const WorldBuild w = build_world(s, Regime::shuffled, n, labels);
        for (const auto & p : w.personas) {
            for (int a = 0; a < kNumAttributes; ++a) fixed += p.attributes[a] == p.plain_attributes.value()[a];
        }
        ++worlds;
    }
    report(8, "shuffled worlds are derangements", fixed == 0,
           std::to_string(worlds) + " seeds, " + std::to_string(fixed) + " fixed points");
}

void sensitivity(Lab & lab) {
    const SensitivityRun r = lab.evaluate_sensitivity();
    double orig = 0.0, adv = 0.0;
    int n_adv = 0;
    bool identity = true;
    for (const auto & t : r.lit) {
        orig += t.original_accuracy;
        for (const auto & v : t.variants) {
            if (v.variant == "S0") identity &= v.delta == 0.0;
            if (v.adversarial) adv += v.accuracy, ++n_adv;
        }
    }
    orig /= r.lit.size();
    adv /= std::max(1, n_adv);
    report(9, "adversarial prompts lower LIT-style accuracy", adv < orig && identity,
           "original " + f3(orig) + " adversarial " + f3(adv) + (identity ? ", S0 delta 0" : ", S0 delta nonzero"));
}

std::string slurp(const fs::path & p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void reproducibility(const fs::path & root) {
    const ExperimentConfig cfg = ExperimentConfig::tiny();
    const fs::path a = root / "repro_a", b = root / "repro_b";
    fs::remove_all(a);
    fs::remove_all(b);
    for (const auto & dir : {a, b}) {
        Lab lab(cfg, dir);
        for (const auto & r : recipe_names()) lab.run_recipe(r);
    }
    int files = 0, differ = 0;
    for (const auto & e : fs::recursive_directory_iterator(a / "tables")) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension();
        if (ext != ".csv" && ext != ".jsonl") continue;
        ++files;
        differ += slurp(e.path()) != slurp(b / fs::relative(e.path(), a));
    }
    report(10, "recipes reproduce byte for byte", files > 0 && differ == 0,
           std::to_string(recipe_names().size()) + " recipes, " + std::to_string(files) + " tables, " +
               std::to_string(differ) + " differ");
    fs::remove_all(a);
    fs::remove_all(b);
}

} // namespace

int main(int argc, char ** argv) {
    const fs::path run = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_run");
    const fs::path ini = argc > 2 ? fs::path(argv[2]) : fs::path(VERBLAB_ACCEPTANCE_INI);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const ExperimentConfig cfg = ExperimentConfig::from_file(ini);
        Lab lab(cfg, run / "main", false, &std::cerr);
        identity_patches(lab);
        unit_oracles();
        kf1(lab);
        kf2(lab);
        kf3(lab);
        knowledge(lab);
        swap_label(lab);
        derangements(cfg);
        sensitivity(lab);
        reproducibility(run);
    } catch (const std::exception & e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 1;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d criteria failed, %.0f s\n", failures, secs);
    return failures ? 1 : 0;
}
