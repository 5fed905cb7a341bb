#include "verblab/evalstats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

namespace verblab {

namespace {

char fold(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool word_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u >= 0x80;
}

std::size_t ifind(std::string_view hay, std::string_view needle, std::size_t from) {
    if (needle.size() > hay.size()) return std::string_view::npos;
    for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
        std::size_t j = 0;
        while (j < needle.size() && fold(hay[i + j]) == fold(needle[j])) ++j;
        if (j == needle.size()) return i;
    }
    return std::string_view::npos;
}

} // namespace

bool contains_answer(std::string_view output, std::string_view answer) {
    if (answer.empty()) throw ValidationError("empty answer would match every output");
    return ifind(output, answer, 0) != std::string_view::npos;
}

bool contains_answer_word(std::string_view output, std::string_view answer) {
    if (answer.empty()) throw ValidationError("empty answer would match every output");
    for (std::size_t at = ifind(output, answer, 0); at != std::string_view::npos; at = ifind(output, answer, at + 1)) {
        const bool left = at == 0 || !word_char(output[at - 1]) || !word_char(answer.front());
        const std::size_t end = at + answer.size();
        const bool right = end == output.size() || !word_char(output[end]) || !word_char(answer.back());
        if (left && right) return true;
    }
    return false;
}

RunScore score_run(std::span<const TrialResult> trials, EnsembleMode mode) {
    if (trials.empty()) throw ValidationError("no trials to score");
    // layer -> item -> target layer -> correct
    std::map<int, std::map<std::string, std::map<int, bool>>> cells;
    std::set<std::string> items;
    for (const auto & t : trials) {
        auto & slot = cells[t.source_layer][t.item_id];
        if (slot.count(t.target_layer)) {
            throw ValidationError("duplicate trial: item " + t.item_id + " source layer " +
                                  std::to_string(t.source_layer) + " target layer " + std::to_string(t.target_layer));
        }
        slot[t.target_layer] = t.correct;
        items.insert(t.item_id);
    }
    std::set<int> targets;
    for (const auto & [layer, by_item] : cells) {
        for (const auto & [item, by_target] : by_item) {
            for (const auto & [tl, c] : by_target) targets.insert(tl);
        }
    }
    if (mode == EnsembleMode::single_output && targets.size() != 1) {
        throw ValidationError("single_output scoring needs exactly one output per item and source layer");
    }

    RunScore out;
    double sum = 0.0;
    for (const auto & [layer, by_item] : cells) {
        LayerAccuracy acc{layer, 0, 0};
        std::map<std::string, bool> flags;
        for (const auto & item : items) {
            const auto it = by_item.find(item);
            if (it == by_item.end() || it->second.size() != targets.size()) {
                throw ValidationError("incomplete trials: item " + item + " at source layer " + std::to_string(layer));
            }
            bool any = false;
            for (const auto & [tl, c] : it->second) any = any || c;
            flags[item] = any;
            ++acc.n_items;
            acc.n_correct += any;
        }
        sum += acc.accuracy();
        out.per_layer.push_back(acc);
        out.item_correct.push_back(std::move(flags));
    }
    out.layer_average = sum / static_cast<double>(out.per_layer.size());
    return out;
}

std::vector<bool> paired_outcomes(const RunScore & score, std::span<const std::string> item_order) {
    std::vector<bool> out;
    for (const auto & id : item_order) {
        int hits = 0;
        for (const auto & flags : score.item_correct) {
            const auto it = flags.find(id);
            if (it == flags.end()) throw ValidationError("item missing from score: " + id);
            hits += it->second;
        }
        out.push_back(2 * hits > static_cast<int>(score.item_correct.size()));
    }
    return out;
}

// ----------------------------------------------------------------------------------------------

double bonferroni(double p, int n_comparisons) {
    if (n_comparisons < 1) throw ValidationError("n_comparisons must be at least 1");
    return std::min(1.0, p * n_comparisons);
}

double binomial_upper_tail(int k, int n, double p) {
    if (n < 0 || p < 0.0 || p > 1.0) throw ValidationError("binomial_upper_tail: bad arguments");
    if (k <= 0) return 1.0;
    if (k > n || p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    double tail = 0.0;
    for (int i = k; i <= n; ++i) {
        const double log_term = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                                i * std::log(p) + (n - i) * std::log1p(-p);
        tail += std::exp(log_term);
    }
    return std::min(1.0, tail);
}

SignificanceResult mcnemar_counts(int b01, int b10, int n_comparisons) {
    if (b01 < 0 || b10 < 0) throw ValidationError("discordant counts must be non-negative");
    SignificanceResult r;
    r.b01 = b01;
    r.b10 = b10;
    r.n_comparisons = n_comparisons;
    const int n = b01 + b10;
    if (n == 0) {
        r.no_discordant = true;
        r.p_raw = 1.0;
    } else if (n <= kMcnemarExactLimit) {
        r.exact = true;
        r.statistic = std::min(b01, b10);
        double tail = 0.0, c = 1.0;  // C(n, k)
        for (int k = 0; k <= std::min(b01, b10); ++k) {
            tail += c;
            c = c * (n - k) / (k + 1);
        }
        r.p_raw = std::min(1.0, 2.0 * tail * std::pow(0.5, n));
    } else {
        r.exact = false;
        const double d = std::abs(b01 - b10) - 1.0;
        r.statistic = d * d / n;
        r.p_raw = std::erfc(std::sqrt(r.statistic / 2.0));
    }
    r.p_adjusted = bonferroni(r.p_raw, n_comparisons);
    r.significant = r.p_adjusted < 0.05;
    return r;
}

SignificanceResult mcnemar(const std::vector<bool> & a, const std::vector<bool> & b, int n_comparisons) {
    if (a.size() != b.size()) throw ValidationError("McNemar needs aligned correctness vectors");
    int b01 = 0, b10 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        b01 += !a[i] && b[i];
        b10 += a[i] && !b[i];
    }
    return mcnemar_counts(b01, b10, n_comparisons);
}

// ----------------------------------------------------------------------------------------------

namespace {

std::vector<std::string> split_ws(const std::string & s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string> & toks, std::size_t n) {
    std::map<std::vector<std::string>, int> out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
    return out;
}

} // namespace

double bleu(std::span<const std::string> candidates, std::span<const std::string> references) {
    if (candidates.empty()) throw ValidationError("BLEU needs at least one candidate");
    if (candidates.size() != references.size()) throw ValidationError("BLEU candidate/reference count mismatch");
    std::array<long, 4> matches{}, totals{};
    long cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = split_ws(candidates[i]);
        const auto r = split_ws(references[i]);
        if (r.empty()) throw ValidationError("BLEU reference is empty");
        cand_len += static_cast<long>(c.size());
        ref_len += static_cast<long>(r.size());
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto cc = ngram_counts(c, n);
            const auto rc = ngram_counts(r, n);
            for (const auto & [g, k] : cc) {
                const auto it = rc.find(g);
                if (it != rc.end()) matches[n - 1] += std::min(k, it->second);
                totals[n - 1] += k;
            }
        }
    }
    if (cand_len == 0) return 0.0;
    double log_p = 0.0;
    for (int n = 0; n < 4; ++n) {
        const double p = matches[n] > 0 ? static_cast<double>(matches[n]) / totals[n] : 1.0 / (totals[n] + 1.0);
        log_p += std::log(p) / 4.0;
    }
    const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
    return 100.0 * bp * std::exp(log_p);
}

// ----------------------------------------------------------------------------------------------

double knowledge_check(const ModelHandle & model, const Tokenizer & tok, std::span<const Persona> personas,
                       std::string_view attribute) {
    const int a = attribute_index(attribute);
    if (personas.empty()) throw ValidationError("knowledge check needs personas");
    int ok = 0;
    for (const auto & p : personas) {
        const Tokens prefix = tok.encode(fill_template(cloze_template(a), p.name));
        const Tokens gold = tok.encode(p.attributes[a]);
        const Generation g = generate(model, tok, prefix, 1);
        if (g.tokens.empty() || gold.empty()) continue;
        std::string x = tok.token_text(g.tokens[0]), y = tok.token_text(gold[0]);
        std::transform(x.begin(), x.end(), x.begin(), fold);
        std::transform(y.begin(), y.end(), y.begin(), fold);
        ok += x == y;
    }
    return static_cast<double>(ok) / static_cast<double>(personas.size());
}

// ----------------------------------------------------------------------------------------------

std::vector<EvalItem> variant_items(std::span<const EvalItem> items, const PromptVariant & variant,
                                    std::span<const std::string> distractor_pool, Rng & rng) {
    std::vector<EvalItem> out;
    for (const auto & it : items) {
        EvalItem v = it;
        std::string tmpl = variant.tmpl;
        if (const auto at = tmpl.find("{D}"); at != std::string::npos) {
            std::vector<std::string> pool;
            for (const auto & l : distractor_pool) {
                if (l != it.answer) pool.push_back(l);
            }
            if (pool.empty()) throw ValidationError("no distractor label differs from the answer of " + it.id);
            tmpl.replace(at, 3, pool[uniform_index(rng, pool.size())]);
        }
        v.prompt_template = tmpl;
        v.x_prompt = fill_template(tmpl, it.subject);
        v.id = it.id + "/" + variant.id;
        out.push_back(std::move(v));
    }
    return out;
}

SensitivityResult sensitivity_suite(std::span<const EvalItem> items, const MethodRunner & run,
                                    std::span<const std::string> distractor_pool, std::uint64_t seed) {
    if (items.empty()) throw ValidationError("sensitivity suite needs items");
    const std::string task = items.front().task;
    for (const auto & it : items) {
        if (it.task != task) throw ValidationError("sensitivity items must share one task");
    }
    const int a = attribute_index(task);
    const auto & variants = prompt_variants(a);
    if (variants.size() < 7) throw ValidationError("variant missing for task " + task);

    auto accuracy = [&](std::span<const EvalItem> xs, int & correct) {
        correct = 0;
        for (const auto & x : xs) correct += contains_answer(run(x), x.answer);
        return static_cast<double>(correct) / static_cast<double>(xs.size());
    };
    SensitivityResult r;
    r.task = task;
    int c0 = 0;
    r.original_accuracy = accuracy(items, c0);
    Rng rng(derive_seed(seed, "sensitivity:" + task));
    for (const auto & v : variants) {
        const auto vi = variant_items(items, v, distractor_pool, rng);
        VariantScore s;
        s.variant = v.id;
        s.adversarial = v.adversarial;
        s.n = static_cast<int>(vi.size());
        s.accuracy = accuracy(vi, s.correct);
        s.delta = s.accuracy - r.original_accuracy;
        r.variants.push_back(s);
        r.variant_items.insert(r.variant_items.end(), vi.begin(), vi.end());
    }
    return r;
}

std::vector<SwapLabelScore> swap_label_eval(std::span<const TrialResult> trials,
                                            const std::map<std::string, std::string> & original,
                                            const std::map<std::string, std::string> & shuffled) {
    if (original.size() != shuffled.size()) throw ValidationError("label sets cover different items");
    for (const auto & [id, l] : original) {
        if (!shuffled.count(id)) throw ValidationError("label sets cover different items: " + id);
    }
    // task -> item -> (hit original, hit shuffled)
    std::map<std::string, std::map<std::string, std::pair<bool, bool>>> hits;
    for (const auto & t : trials) {
        const auto o = original.find(t.item_id);
        if (o == original.end()) throw ValidationError("no label for item " + t.item_id);
        auto & h = hits[t.task][t.item_id];
        h.first = h.first || contains_answer(t.output, o->second);
        h.second = h.second || contains_answer(t.output, shuffled.at(t.item_id));
    }
    std::vector<SwapLabelScore> out;
    for (const auto & [task, items] : hits) {
        SwapLabelScore s;
        s.task = task;
        s.n = static_cast<int>(items.size());
        int a = 0, b = 0;
        for (const auto & [id, h] : items) {
            a += h.first;
            b += h.second;
        }
        s.original_accuracy = static_cast<double>(a) / s.n;
        s.shuffled_accuracy = static_cast<double>(b) / s.n;
        out.push_back(s);
    }
    return out;
}

} // namespace verblab
