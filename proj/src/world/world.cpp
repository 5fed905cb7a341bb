#include "verblab/worldgen.hpp"
#include "verblab/tokenizer.hpp"
#include "tables.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <set>

namespace verblab {

int attribute_index(std::string_view key) {
    for (int a = 0; a < kNumAttributes; ++a) {
        if (kAttributeKeys[static_cast<std::size_t>(a)] == key) return a;
    }
    throw ValidationError("unknown attribute: " + std::string(key));
}

std::string_view to_string(Regime r) {
    switch (r) {
    case Regime::plain: return "plain";
    case Regime::shuffled: return "shuffled";
    case Regime::fantasy: return "fantasy";
    }
    return "plain";
}

Regime parse_regime(std::string_view s) {
    if (s == "plain") return Regime::plain;
    if (s == "shuffled") return Regime::shuffled;
    if (s == "fantasy") return Regime::fantasy;
    throw ValidationError("unknown mode: " + std::string(s) + " (expected plain, shuffled or fantasy)");
}

std::string_view to_string(DocStyle s) { return s == DocStyle::biography ? "biography" : "interview"; }

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto & c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string replace_all(std::string s, std::string_view key, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = s.find(key, pos)) != std::string::npos) {
        s.replace(pos, key.size(), value);
        pos += value.size();
    }
    return s;
}

std::string fill_nv(std::string_view tmpl, std::string_view name, std::string_view value) {
    return replace_all(replace_all(std::string(tmpl), "{n}", name), "{v}", value);
}

// Lower-cased words of all fixed scaffolding text (templates, prompts, realistic vocabulary).
std::set<std::string> scaffold_words() {
    std::set<std::string> words;
    auto add = [&](std::string_view text) {
        for (auto & p : Tokenizer::pieces(text)) words.insert(lower(p));
    };
    const auto & lib = TemplateLibrary::standard();
    for (const auto * frames : {&lib.biographies, &lib.interviews}) {
        for (const auto & f : *frames) {
            add(f.opening);
            add(f.closing);
            for (const auto & s : f.fillers) add(s);
        }
    }
    for (int a = 0; a < kNumAttributes; ++a) {
        for (const auto & s : lib.bio_sentences[a]) add(s);
        for (const auto & s : lib.interview_sentences[a]) add(s);
        add(document_question(a));
        add(eval_template(a));
        add(cloze_template(a));
        add(hint_template(a));
        for (const auto & q : decoder_question_templates(a)) add(q);
        for (const auto & v : prompt_variants(a)) add(v.tmpl);
        for (auto l : tables::kRealisticLabels[static_cast<std::size_t>(a)]) add(l);
    }
    add(kInputTemplate);
    for (const auto & g : tables::kNamePools) {
        for (auto n : g.first) add(n);
        for (auto n : g.last) add(n);
    }
    return words;
}

bool substring_either(const std::string & a, const std::string & b) {
    return a.find(b) != std::string::npos || b.find(a) != std::string::npos;
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

// Syllable words that share no substring relation with any scaffold word or each other.
std::vector<std::string> fantasy_words(Rng & rng, int count, int min_syl, int max_syl,
                                       const std::set<std::string> & scaffold, std::vector<std::string> & taken) {
    std::vector<std::string> out;
    int attempts = 0;
    while (static_cast<int>(out.size()) < count) {
        if (++attempts > 200000) throw RuntimeFailure("fantasy vocabulary generation did not converge");
        const int n = min_syl + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_syl - min_syl + 1)));
        std::string w;
        for (int i = 0; i < n; ++i) w += tables::kSyllables[uniform_index(rng, tables::kSyllables.size())];
        if (w.size() < 5 || w.size() > 11) continue;
        bool ok = true;
        for (const auto & s : scaffold) {
            if (s.size() >= 3 && substring_either(w, s)) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        for (const auto & t : taken) {
            if (substring_either(w, t)) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        taken.push_back(w);
        out.push_back(capitalize(w));
    }
    return out;
}

World base_world(std::uint64_t seed, Regime mode, int n_personas, int k) {
    if (k < 2) throw ValidationError("labels_per_attribute must be at least 2");
    if (mode != Regime::fantasy && k > tables::kGroups) {
        throw ValidationError("realistic vocabulary has only " + std::to_string(tables::kGroups) + " labels per attribute");
    }
    if (n_personas < 2) throw ValidationError("n_personas must be at least 2");
    World w;
    w.seed = seed;
    w.mode = mode;
    w.n_personas = n_personas;
    w.labels_per_attribute = k;
    const int kr = std::min(k, tables::kGroups);
    for (int a = 0; a < kNumAttributes; ++a) {
        w.realistic[a].key = std::string(kAttributeKeys[a]);
        w.fantasy[a].key = std::string(kAttributeKeys[a]);
        for (int i = 0; i < kr; ++i) w.realistic[a].labels.emplace_back(tables::kRealisticLabels[a][i]);
    }
    for (int g = 0; g < kr; ++g) {
        const auto & p = tables::kNamePools[static_cast<std::size_t>(g)];
        NameGroup ng{std::string(p.culture), {}, {}};
        for (auto n : p.first) ng.first.emplace_back(n);
        for (auto n : p.last) ng.last.emplace_back(n);
        w.name_pools.push_back(std::move(ng));
        std::array<int, kNumAttributes> pref{};
        pref.fill(g);
        w.correlation.push_back(pref);
    }

    // Fantasy vocabularies are a pure function of the seed, whatever the mode.
    Rng frng(derive_seed(seed, "fantasy-vocabulary"));
    const auto scaffold = scaffold_words();
    std::vector<std::string> taken;
    for (int a = 0; a < kNumAttributes; ++a) w.fantasy[a].labels = fantasy_words(frng, k, 2, 3, scaffold, taken);
    // Names may contain each other but never a label.
    std::vector<std::string> label_taken = taken;
    std::vector<std::string> scratch;
    auto name_words = [&](int count) {
        std::vector<std::string> out;
        while (static_cast<int>(out.size()) < count) {
            scratch = label_taken;
            auto ws = fantasy_words(frng, 1, 2, 3, scaffold, scratch);
            const std::string lw = lower(ws[0]);
            if (std::find(taken.begin(), taken.end(), lw) != taken.end()) continue;
            taken.push_back(lw);
            out.push_back(ws[0]);
        }
        return out;
    };
    // One first and one last name per persona, so every fantasy name is a unique token pair.
    w.fantasy_first = name_words(n_personas);
    w.fantasy_last = name_words(n_personas);
    return w;
}

std::vector<Persona> plain_personas(const World & w, Rng & rng) {
    std::vector<Persona> out;
    std::set<std::string> used;
    const int groups = static_cast<int>(w.name_pools.size());
    // Groups are dealt round robin, then shuffled.
    std::vector<int> group_of(static_cast<std::size_t>(w.n_personas));
    for (int i = 0; i < w.n_personas; ++i) group_of[static_cast<std::size_t>(i)] = i % groups;
    shuffle_in_place(group_of, rng);
    for (int i = 0; i < w.n_personas; ++i) {
        Persona p;
        p.regime = Regime::plain;
        p.group = group_of[static_cast<std::size_t>(i)];
        int tries = 0;
        do {
            if (++tries > 1000) throw ValidationError("not enough distinct realistic names for the persona count");
            p.name = sample_realistic_name(w, p.group, rng);
        } while (used.count(p.name));
        used.insert(p.name);
        for (int a = 0; a < kNumAttributes; ++a) {
            const auto & labels = w.realistic[a].labels;
            int idx = w.correlation[static_cast<std::size_t>(p.group)][a];
            if (uniform01(rng) >= w.correlation_strength) idx = static_cast<int>(uniform_index(rng, labels.size()));
            p.attributes[a] = labels[static_cast<std::size_t>(idx)];
        }
        out.push_back(std::move(p));
    }
    return out;
}

// Column of `n` labels with every label used floor(n/k) or ceil(n/k) times, in random order.
std::vector<std::string> balanced_column(const std::vector<std::string> & labels, int n, Rng & rng) {
    std::vector<std::string> col;
    for (int i = 0; i < n; ++i) col.push_back(labels[static_cast<std::size_t>(i) % labels.size()]);
    shuffle_in_place(col, rng);
    return col;
}

} // namespace

std::string sample_realistic_name(const World & world, int group, Rng & rng) {
    const auto & g = world.name_pools.at(static_cast<std::size_t>(group));
    return g.first[uniform_index(rng, g.first.size())] + " " + g.last[uniform_index(rng, g.last.size())];
}

std::vector<std::string> derange_column(const std::vector<std::string> & column, Rng & rng) {
    const std::size_t n = column.size();
    if (n < 2) throw ValidationError("a derangement needs at least two entries");
    std::map<std::string, std::size_t> freq;
    for (const auto & v : column) ++freq[v];
    for (const auto & [label, c] : freq) {
        if (2 * c > n) throw ValidationError("no derangement exists: label '" + label + "' fills more than half the column");
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<std::string> out = column;
        shuffle_in_place(out, rng);
        bool stuck = false;
        for (std::size_t i = 0; i < n && !stuck; ++i) {
            if (out[i] != column[i]) continue;
            const std::size_t start = uniform_index(rng, n);
            bool fixed = false;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t j = (start + s) % n;
                if (j == i || out[j] == column[i] || out[i] == column[j]) continue;
                std::swap(out[i], out[j]);
                fixed = true;
                break;
            }
            stuck = !fixed;
        }
        if (!stuck) return out;
    }
    throw RuntimeFailure("derangement repair failed");
}

WorldBuild build_world(std::uint64_t seed, Regime mode, int n_personas, int labels_per_attribute) {
    WorldBuild wb;
    wb.world = base_world(seed, mode, n_personas, labels_per_attribute);
    const World & w = wb.world;
    if (mode == Regime::fantasy) {
        Rng rng(derive_seed(seed, "personas-fantasy"));
        for (int i = 0; i < n_personas; ++i) {
            Persona p;
            p.regime = Regime::fantasy;
            p.name = w.fantasy_first[i] + " " + w.fantasy_last[i];
            wb.personas.push_back(std::move(p));
        }
        for (int a = 0; a < kNumAttributes; ++a) {
            const auto col = balanced_column(w.fantasy[a].labels, n_personas, rng);
            for (int i = 0; i < n_personas; ++i) wb.personas[static_cast<std::size_t>(i)].attributes[a] = col[i];
        }
        return wb;
    }

    Rng rng(derive_seed(seed, "personas-plain"));
    wb.personas = plain_personas(w, rng);
    if (mode == Regime::shuffled) {
        Rng srng(derive_seed(seed, "derangement"));
        for (auto & p : wb.personas) {
            p.plain_attributes = p.attributes;
            p.regime = Regime::shuffled;
        }
        for (int a = 0; a < kNumAttributes; ++a) {
            std::vector<std::string> col;
            for (const auto & p : wb.personas) col.push_back(p.attributes[a]);
            const auto der = derange_column(col, srng);
            for (std::size_t i = 0; i < der.size(); ++i) wb.personas[i].attributes[a] = der[i];
        }
    }
    return wb;
}

// ----------------------------------------------------------------------------------------------

std::vector<Document> render_documents(const Persona & persona, const TemplateLibrary & templates, int n_bios,
                                       int n_interviews, std::uint64_t seed) {
    templates.validate();
    if (n_bios < 0 || n_interviews < 0) throw ValidationError("document counts must be non-negative");
    Rng rng(derive_seed(seed, "documents:" + persona.name));
    std::vector<Document> docs;
    for (int d = 0; d < n_bios + n_interviews; ++d) {
        const DocStyle style = d < n_bios ? DocStyle::biography : DocStyle::interview;
        const auto & frames = style == DocStyle::biography ? templates.biographies : templates.interviews;
        const auto & banks = style == DocStyle::biography ? templates.bio_sentences : templates.interview_sentences;
        bool done = false;
        for (int attempt = 0; attempt < 8 && !done; ++attempt) {
            const Frame & f = frames[uniform_index(rng, frames.size())];
            std::vector<std::string> body;
            std::string scaffold;
            for (int a = 0; a < kNumAttributes; ++a) {
                // The first biography always states each fact in its plainest form.
                const std::size_t pick = uniform_index(rng, banks[a].size());
                const auto & tmpl = banks[a][d == 0 ? 0 : pick];
                body.push_back(fill_nv(tmpl, persona.name, persona.attributes[a]));
                scaffold += fill_nv(tmpl, persona.name, "") + " ";
            }
            std::vector<std::string> fill = f.fillers;
            shuffle_in_place(fill, rng);
            const std::size_t n_fill = 2 + uniform_index(rng, 3);
            for (std::size_t i = 0; i < std::min(n_fill, fill.size()); ++i) {
                body.push_back(fill_nv(fill[i], persona.name, ""));
                scaffold += body.back() + " ";
            }
            shuffle_in_place(body, rng);

            Document doc;
            doc.entity = persona.name;
            doc.style = style;
            doc.segments.push_back(fill_nv(f.opening, persona.name, ""));
            for (auto & s : body) doc.segments.push_back(std::move(s));
            if (!f.closing.empty()) doc.segments.push_back(fill_nv(f.closing, persona.name, ""));
            scaffold += doc.segments.front() + " " + doc.segments.back();

            // A label that also occurs in the scaffolding would make extraction ambiguous.
            const std::string ls = lower(replace_all(scaffold, persona.name, ""));
            bool collide = false;
            for (const auto & label : persona.attributes) {
                if (ls.find(lower(label)) != std::string::npos) collide = true;
            }
            if (collide) continue;

            for (std::size_t i = 0; i < doc.segments.size(); ++i) {
                if (i) doc.text += ' ';
                doc.text += doc.segments[i];
            }
            for (int a = 0; a < kNumAttributes; ++a) doc.qa.push_back({document_question(a), persona.attributes[a]});
            docs.push_back(std::move(doc));
            done = true;
        }
        if (!done) throw ValidationError("persona labels collide with template text for " + persona.name);
    }
    return docs;
}

// ----------------------------------------------------------------------------------------------

std::string fill_template(std::string_view tmpl, std::string_view value) {
    return replace_all(std::string(tmpl), "{}", value);
}

std::vector<EvalItem> make_eval_items(const std::vector<Persona> & personas, std::string_view attribute) {
    const int a = attribute_index(attribute);
    std::vector<EvalItem> out;
    for (std::size_t i = 0; i < personas.size(); ++i) {
        const auto & p = personas[i];
        EvalItem it;
        it.id = std::string(attribute) + "-" + std::to_string(i);
        it.task = std::string(attribute);
        it.subject = p.name;
        it.x_input = fill_template(kInputTemplate, p.name);
        it.prompt_template = eval_template(a);
        it.x_prompt = fill_template(it.prompt_template, p.name);
        it.answer = p.attributes[a];
        out.push_back(std::move(it));
    }
    return out;
}

DecoderDataset make_decoder_dataset(const World & world, const std::vector<Persona> & personas,
                                    const std::vector<std::vector<Document>> & documents, std::uint64_t seed,
                                    int questions_per_document) {
    (void)world;
    if (personas.empty() || documents.empty()) throw ValidationError("decoder dataset needs personas and documents");
    if (personas.size() != documents.size()) throw ValidationError("one document list per persona expected");
    if (questions_per_document < 1 || questions_per_document > kNumAttributes) {
        throw ValidationError("questions_per_document must be in [1, 6]");
    }
    Rng rng(derive_seed(seed, "decoder-dataset"));
    DecoderDataset out;
    for (std::size_t p = 0; p < personas.size(); ++p) {
        for (const auto & doc : documents[p]) {
            std::vector<int> attrs(kNumAttributes);
            std::iota(attrs.begin(), attrs.end(), 0);
            shuffle_in_place(attrs, rng);
            for (int q = 0; q < questions_per_document; ++q) {
                const int a = attrs[static_cast<std::size_t>(q)];
                const std::string & label = personas[p].attributes[a];
                // The excerpt is the line stating the fact, sometimes with its successor.
                std::size_t at = doc.segments.size();
                for (std::size_t s = 0; s < doc.segments.size(); ++s) {
                    if (doc.segments[s].find(label) != std::string::npos) {
                        at = s;
                        break;
                    }
                }
                if (at == doc.segments.size()) throw RuntimeFailure("document does not state " + label);
                std::string ctx = doc.segments[at];
                if (at + 1 < doc.segments.size() && uniform01(rng) < 0.5) ctx += " " + doc.segments[at + 1];
                const auto & qs = decoder_question_templates(a);
                out.push_back({ctx, qs[uniform_index(rng, qs.size())], label});
            }
        }
    }
    return out;
}

// ----------------------------------------------------------------------------------------------

std::vector<FeatureTriple> make_triples(const World & world, std::uint64_t seed, int per_relation) {
    if (per_relation < 1) throw ValidationError("per_relation must be positive");
    Rng rng(derive_seed(seed, "triples"));
    std::vector<FeatureTriple> out;
    for (int a = 0; a < kNumAttributes; ++a) {
        const auto & labels = world.realistic[a].labels;
        for (int i = 0; i < per_relation; ++i) {
            FeatureTriple t;
            const int g = static_cast<int>(uniform_index(rng, world.name_pools.size()));
            t.subject = sample_realistic_name(world, g, rng);
            t.relation = std::string(kAttributeKeys[a]);
            t.object = labels[uniform_index(rng, labels.size())];
            t.x_input = replace_all(replace_all(hint_template(a), "{s}", t.subject), "{o}", t.object);
            t.prompt_template = eval_template(a);
            t.x_prompt = fill_template(t.prompt_template, t.subject);
            out.push_back(std::move(t));
        }
    }
    return out;
}

EvalItem to_eval_item(const FeatureTriple & t, std::string id) {
    EvalItem it;
    it.id = std::move(id);
    it.task = t.relation;
    it.subject = t.subject;
    it.x_input = t.x_input;
    it.x_prompt = t.x_prompt;
    it.prompt_template = t.prompt_template;
    it.answer = t.object;
    return it;
}

// ----------------------------------------------------------------------------------------------

std::vector<std::string> background_corpus(const World & world, const BackgroundConfig & cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "background"));
    std::vector<std::string> corpus;
    const auto & lib = TemplateLibrary::standard();
    World pw = world;
    pw.mode = Regime::plain;
    pw.n_personas = cfg.population;
    std::vector<Persona> population;
    if (cfg.population > 0) population = plain_personas(pw, rng);
    for (std::size_t i = 0; i < population.size(); ++i) {
        const auto & p = population[i];
        const int n_bio = (cfg.docs_per_person + 1) / 2;
        for (const auto & d : render_documents(p, lib, n_bio, cfg.docs_per_person - n_bio, derive_seed(seed, "pop")))
            corpus.push_back(d.text);
        for (int s = 0; s < cfg.fact_sheets_per_person; ++s) {
            std::vector<int> order(kNumAttributes);
            std::iota(order.begin(), order.end(), 0);
            shuffle_in_place(order, rng);
            std::string sheet;
            for (int a : order) {
                if (!sheet.empty()) sheet += ' ';
                sheet += fill_template(eval_template(a), p.name) + " is " + p.attributes[a] + " .";
            }
            corpus.push_back(sheet);
        }
    }
    for (int h = 0; h < cfg.hint_exercises; ++h) {
        const int g = static_cast<int>(uniform_index(rng, world.name_pools.size()));
        const std::string subject = sample_realistic_name(world, g, rng);
        const int a = static_cast<int>(uniform_index(rng, kNumAttributes));
        const auto & labels = world.realistic[a].labels;
        const std::string obj = labels[uniform_index(rng, labels.size())];
        std::string hint = replace_all(replace_all(hint_template(a), "{s}", subject), "{o}", obj);
        if (uniform01(rng) < 0.5) {
            // A second hint about another relation, so the answer has to be selected.
            int b = static_cast<int>(uniform_index(rng, kNumAttributes - 1));
            if (b >= a) ++b;
            const auto & lb = world.realistic[b].labels;
            const std::string other =
                replace_all(replace_all(hint_template(b), "{s}", subject), "{o}", lb[uniform_index(rng, lb.size())]);
            hint = uniform01(rng) < 0.5 ? other + " " + hint : hint + " " + other;
        }
        corpus.push_back(hint + " <sep> " + fill_template(eval_template(a), subject) + " is " + obj + " .");
    }
    shuffle_in_place(corpus, rng);
    return corpus;
}

std::vector<std::string> vocabulary_text(const World & world) {
    std::vector<std::string> out;
    const auto & lib = TemplateLibrary::standard();
    for (const auto * frames : {&lib.biographies, &lib.interviews}) {
        for (const auto & f : *frames) {
            out.push_back(f.opening);
            out.push_back(f.closing);
            for (const auto & s : f.fillers) out.push_back(s);
        }
    }
    for (int a = 0; a < kNumAttributes; ++a) {
        for (const auto & s : lib.bio_sentences[a]) out.push_back(s);
        for (const auto & s : lib.interview_sentences[a]) out.push_back(s);
        out.push_back(document_question(a));
        out.push_back(eval_template(a));
        out.push_back(cloze_template(a));
        out.push_back(hint_template(a));
        for (const auto & q : decoder_question_templates(a)) out.push_back(q);
        for (const auto & v : prompt_variants(a)) out.push_back(v.tmpl);
        for (const auto & l : world.realistic[a].labels) out.push_back(l);
        for (const auto & l : world.fantasy[a].labels) out.push_back(l);
    }
    out.emplace_back(kInputTemplate);
    out.emplace_back("is");
    for (const auto & g : world.name_pools) {
        for (const auto & n : g.first) out.push_back(n);
        for (const auto & n : g.last) out.push_back(n);
    }
    for (const auto & n : world.fantasy_first) out.push_back(n);
    for (const auto & n : world.fantasy_last) out.push_back(n);
    return out;
}

} // namespace verblab
