#include "verblab/labctl.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

namespace verblab {

// ----------------------------------------------------------------------------------------------
// Lock file

RunLock::RunLock(const std::filesystem::path & run_dir) : path_(run_dir / ".lock") {
    std::filesystem::create_directories(run_dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw RuntimeFailure("run directory " + run_dir.string() + " is locked by another process (remove " +
                             path_.string() + " if it is stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.data(), pid.size()) < 0) {
        ::close(fd);
        throw RuntimeFailure("cannot write lock file " + path_.string());
    }
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

// ----------------------------------------------------------------------------------------------

const std::vector<std::string> & recipe_names() {
    static const std::vector<std::string> names = {"kf1_zero_shot_parity", "kf2_inversion", "kf3_personaqa",
                                                   "probe_vs_verbalizer",  "sensitivity",   "swap_label",
                                                   "knowledge_check"};
    return names;
}

namespace {

const MethodScore & find_score(const std::vector<MethodScore> & v, const std::string & method,
                               const std::string & task) {
    for (const auto & s : v) {
        if (s.method == method && s.task == task) return s;
    }
    throw ValidationError("no score for " + method + " on " + task);
}

constexpr std::array<Regime, 3> kRegimes = {Regime::plain, Regime::shuffled, Regime::fantasy};

std::string regime_name(Regime r) { return std::string(to_string(r)); }

} // namespace

const MethodScore & Kf1Result::get(const std::string & m, const std::string & t) const { return find_score(scores, m, t); }
const MethodScore & Kf2Result::get(const std::string & m, const std::string & t) const { return find_score(scores, m, t); }
const MethodScore & PersonaQaResult::get(const std::string & m, const std::string & t) const {
    return find_score(scores, m, t);
}

// ----------------------------------------------------------------------------------------------

struct Lab::Impl {
    std::optional<Tokenizer> tok;
    std::map<Regime, WorldBuild> worlds;
    std::map<Regime, std::vector<std::vector<Document>>> docs;
    std::optional<std::vector<std::string>> background;
    std::map<std::string, ModelHandle> models;
    std::optional<DecoderDataset> lit_data;
    std::optional<std::vector<std::string>> inverter_train, inverter_eval;
};

Lab::Lab(ExperimentConfig cfg, std::filesystem::path run_dir, bool force, std::ostream * log)
    : cfg_(std::move(cfg)), dir_(std::move(run_dir)), force_(force), log_(log), impl_(std::make_unique<Impl>()) {
    cfg_.validate();
    lock_ = std::make_unique<RunLock>(dir_);
    cfg_.write(dir_ / "config.ini");
}

Lab::~Lab() = default;

void Lab::note(const std::string & msg) {
    if (log_) *log_ << "[labctl] " << msg << std::endl;
}

std::string Lab::stage_fingerprint(const std::string & stage) const {
    std::string text = "stage=" + stage + "\n";
    if (stage == "world") {
        text += cfg_.canonical({"run.seed", "world.", "background."});
    } else if (stage == "base") {
        text += stage_fingerprint("world") + cfg_.canonical({"model.", "train.base."});
    } else if (stage.rfind("target_", 0) == 0) {
        text += stage_fingerprint("base") + cfg_.canonical({"train.target."});
    } else if (stage == "lit") {
        text += stage_fingerprint("base") + cfg_.canonical({"train.lit.", "decoder."});
    } else if (stage == "inverter_multi" || stage == "inverter_single") {
        text += stage_fingerprint("base") + cfg_.canonical({"train.inverter.", "decoder."});
    } else {
        text += cfg_.canonical();
    }
    return hex64(fnv1a64(text));
}

bool Lab::fresh(const std::filesystem::path & artifact, const std::string & stage) {
    const auto meta = std::filesystem::path(artifact.string() + ".meta");
    if (!std::filesystem::exists(artifact)) return false;
    std::ifstream f(meta);
    std::string key, value, fp;
    while (f >> key >> value) {
        if (key == "fingerprint") fp = value;
    }
    if (fp == stage_fingerprint(stage)) return true;
    if (force_) return false;
    throw ValidationError("stale artifact " + artifact.string() + " (stage " + stage +
                          " fingerprint differs from the current config); rerun with --force to rebuild it");
}

void Lab::stamp(const std::filesystem::path & artifact, const std::string & stage) {
    std::ofstream f(artifact.string() + ".meta", std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write sidecar for " + artifact.string());
    f << "schema_version " << kReportSchemaVersion << "\nstage " << stage << "\nfingerprint "
      << stage_fingerprint(stage) << "\nseed " << cfg_.seed() << "\nstage_seed "
      << derive_seed(cfg_.seed(), stage) << '\n';
}

// ----------------------------------------------------------------------------------------------
// World

const WorldBuild & Lab::world(Regime r) {
    auto it = impl_->worlds.find(r);
    if (it != impl_->worlds.end()) return it->second;
    const int n = static_cast<int>(r == Regime::fantasy ? cfg_.get_int("world.n_personas_fantasy")
                                                          : cfg_.get_int("world.n_personas"));
    WorldBuild wb = build_world(derive_seed(cfg_.seed(), "world"), r, n,
                                static_cast<int>(cfg_.get_int("world.labels_per_attribute")));
    return impl_->worlds.emplace(r, std::move(wb)).first->second;
}

const std::vector<std::vector<Document>> & Lab::documents(Regime r) {
    auto it = impl_->docs.find(r);
    if (it != impl_->docs.end()) return it->second;
    const auto & wb = world(r);
    std::vector<std::vector<Document>> docs;
    const int nb = static_cast<int>(cfg_.get_int("world.bios_per_persona"));
    const int ni = static_cast<int>(cfg_.get_int("world.interviews_per_persona"));
    const std::uint64_t s = derive_seed(cfg_.seed(), "documents:" + regime_name(r));
    for (const auto & p : wb.personas) docs.push_back(render_documents(p, TemplateLibrary::standard(), nb, ni, s));
    return impl_->docs.emplace(r, std::move(docs)).first->second;
}

namespace {

std::vector<std::string> flatten(const std::vector<std::vector<Document>> & docs) {
    std::vector<std::string> out;
    for (const auto & per : docs) {
        for (const auto & d : per) out.push_back(d.text);
    }
    return out;
}

// Records for decoder training drawn from a separate population, so no evaluation persona's
// facts are ever shown to a decoder.
DecoderDataset side_population_records(const ExperimentConfig & cfg, const std::string & tag, int n_personas,
                                       int docs_per_persona) {
    const std::uint64_t s = derive_seed(cfg.seed(), tag);
    const WorldBuild wb =
        build_world(s, Regime::plain, n_personas, static_cast<int>(cfg.get_int("world.labels_per_attribute")));
    std::vector<std::vector<Document>> docs;
    const int nb = (docs_per_persona + 1) / 2;
    for (const auto & p : wb.personas) {
        docs.push_back(render_documents(p, TemplateLibrary::standard(), nb, docs_per_persona - nb, s));
    }
    return make_decoder_dataset(wb.world, wb.personas, docs, s,
                                static_cast<int>(cfg.get_int("decoder.questions_per_document")));
}

DecoderDataset triple_records(const World & world, std::uint64_t seed, int per_relation) {
    Rng rng(derive_seed(seed, "triple-questions"));
    DecoderDataset out;
    for (const auto & t : make_triples(world, seed, per_relation)) {
        const auto & qs = decoder_question_templates(attribute_index(t.relation));
        out.push_back({t.x_input, qs[uniform_index(rng, qs.size())], t.object});
    }
    return out;
}

} // namespace

const Tokenizer & Lab::tokenizer() {
    if (impl_->tok) return *impl_->tok;
    std::vector<std::string> text;
    for (Regime r : kRegimes) {
        for (auto & s : vocabulary_text(world(r).world)) text.push_back(std::move(s));
        for (auto & s : flatten(documents(r))) text.push_back(std::move(s));
    }
    if (!impl_->background) {
        impl_->background =
            background_corpus(world(Regime::plain).world, cfg_.background_config(), derive_seed(cfg_.seed(), "background"));
    }
    text.insert(text.end(), impl_->background->begin(), impl_->background->end());
    impl_->tok = Tokenizer::build(text);

    const auto wdir = dir_ / "world";
    if (!fresh(wdir / "tokenizer.txt", "world")) {
        executed_.push_back("world");
        note("writing world files");
        std::filesystem::create_directories(wdir);
        impl_->tok->save(wdir / "tokenizer.txt");
        for (Regime r : kRegimes) {
            const auto rdir = wdir / regime_name(r);
            std::filesystem::create_directories(rdir);
            write_world_manifest(rdir / "manifest.json", world(r).world);
            write_personas_jsonl(rdir / "personas.jsonl", world(r).personas);
            std::vector<Document> all;
            for (const auto & per : documents(r)) all.insert(all.end(), per.begin(), per.end());
            write_documents_jsonl(rdir / "documents.jsonl", all);
            std::vector<EvalItem> items;
            for (int a = 0; a < kNumAttributes; ++a) {
                auto xs = make_eval_items(world(r).personas, kAttributeKeys[a]);
                items.insert(items.end(), xs.begin(), xs.end());
            }
            write_eval_items_jsonl(rdir / "eval_items.jsonl", items);
        }
        stamp(wdir / "tokenizer.txt", "world");
    }
    return *impl_->tok;
}

std::vector<int> Lab::test_split(Regime r) {
    const auto & ps = world(r).personas;
    std::map<std::string, std::vector<int>> by_country;
    for (int i = 0; i < static_cast<int>(ps.size()); ++i) by_country[ps[i].attributes[0]].push_back(i);
    Rng rng(derive_seed(cfg_.seed(), "split:" + regime_name(r)));
    const double frac = cfg_.get_real("world.test_fraction");
    std::vector<int> test;
    for (auto & [label, idx] : by_country) {
        shuffle_in_place(idx, rng);
        const auto k = static_cast<std::size_t>(std::lround(frac * static_cast<double>(idx.size())));
        test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(k, idx.size())));
    }
    std::sort(test.begin(), test.end());
    if (test.empty()) throw ValidationError("test split is empty; raise world.test_fraction or the persona count");
    return test;
}

std::vector<int> Lab::train_split(Regime r) {
    const auto test = test_split(r);
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(world(r).personas.size()); ++i) {
        if (!std::binary_search(test.begin(), test.end(), i)) out.push_back(i);
    }
    return out;
}

// ----------------------------------------------------------------------------------------------
// Models

const ModelHandle & Lab::model_stage(const std::string & stage, const std::function<ModelHandle()> & build) {
    auto it = impl_->models.find(stage);
    if (it != impl_->models.end()) return it->second;
    const auto path = dir_ / "models" / (stage + ".ckpt");
    const ModelConfig expected = cfg_.model_config(tokenizer().vocab_size());
    ModelHandle m;
    if (fresh(path, stage)) {
        note("loading " + stage + " from cache");
        m = load_checkpoint(path, &expected);
    } else {
        note("training " + stage);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            m = build();
        } catch (const RuntimeFailure & e) {
            throw RuntimeFailure("stage " + stage + " (seed " + std::to_string(derive_seed(cfg_.seed(), stage)) +
                                 ") failed: " + e.what());
        }
        m.id = stage;
        save_checkpoint(m, path);
        stamp(path, stage);
        executed_.push_back(stage);
        note(stage + " done in " +
             std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
    }
    return impl_->models.emplace(stage, std::move(m)).first->second;
}

const ModelHandle & Lab::base() {
    return model_stage("base", [&] {
        const auto & tok = tokenizer();
        ModelHandle init = ModelHandle::init(cfg_.model_config(tok.vocab_size()), ModelRole::target, "base");
        TrainConfig tc = cfg_.train_config("base");
        tc.log_csv = dir_ / "logs" / "base.csv";
        return train_lm(std::move(init), tok, *impl_->background, tc).first;
    });
}

const ModelHandle & Lab::target(Regime r) {
    const std::string stage = "target_" + regime_name(r);
    return model_stage(stage, [&] {
        const auto & tok = tokenizer();
        const auto corpus = flatten(documents(r));
        TrainConfig tc = cfg_.train_config("target");
        tc.seed = derive_seed(cfg_.seed(), "train:" + stage);
        tc.log_csv = dir_ / "logs" / (stage + ".csv");
        ModelHandle m = train_lm(base(), tok, corpus, tc).first;
        m.role = ModelRole::target;
        return m;
    });
}

const ModelHandle & Lab::lit() {
    return model_stage("lit", [&] {
        if (!impl_->lit_data) {
            const int per = static_cast<int>(cfg_.get_int("decoder.documents_per_persona"));
            DecoderDataset d = side_population_records(cfg_, "decoder-population", 100, per);
            auto t = triple_records(world(Regime::plain).world, derive_seed(cfg_.seed(), "decoder-triples"),
                                    5 * static_cast<int>(cfg_.get_int("world.triples_per_relation")));
            d.insert(d.end(), t.begin(), t.end());
            impl_->lit_data = std::move(d);
        }
        TrainConfig tc = cfg_.train_config("lit");
        tc.loss_mask_mode = LossMaskMode::answer_only;
        tc.log_csv = dir_ / "logs" / "lit.csv";
        return finetune_decoder(base(), base(), tokenizer(), *impl_->lit_data, cfg_.decoder_layer(), DecoderMode::lit, tc);
    });
}

namespace {

std::vector<std::string> unique_contexts(const DecoderDataset & d) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto & r : d) {
        if (seen.insert(r.context_text).second) out.push_back(r.context_text);
    }
    return out;
}

} // namespace

const ModelHandle & Lab::inverter(DecoderMode mode) {
    if (mode == DecoderMode::lit) throw ValidationError("lit is not an inverter mode");
    const std::string stage = std::string(to_string(mode)) == "inverter_multi" ? "inverter_multi" : "inverter_single";
    if (!impl_->inverter_train) {
        const int per = static_cast<int>(cfg_.get_int("decoder.documents_per_persona"));
        auto d = side_population_records(cfg_, "inverter-population",
                                         static_cast<int>(cfg_.get_int("decoder.inverter_population")), per);
        auto t = triple_records(world(Regime::plain).world, derive_seed(cfg_.seed(), "decoder-triples"),
                                5 * static_cast<int>(cfg_.get_int("world.triples_per_relation")));
        d.insert(d.end(), t.begin(), t.end());
        impl_->inverter_train = unique_contexts(d);
    }
    return model_stage(stage, [&] {
        DecoderDataset data;
        for (const auto & c : *impl_->inverter_train) data.push_back({c, "", ""});
        TrainConfig tc = cfg_.train_config("inverter");
        tc.seed = derive_seed(cfg_.seed(), "train:" + stage);
        tc.loss_mask_mode = LossMaskMode::answer_only;
        tc.log_csv = dir_ / "logs" / (stage + ".csv");
        return finetune_decoder(base(), base(), tokenizer(), data, cfg_.decoder_layer(), mode, tc);
    });
}

// ----------------------------------------------------------------------------------------------
// Evaluation

std::vector<EvalItem> Lab::triple_items() {
    const auto triples = make_triples(world(Regime::plain).world, derive_seed(cfg_.seed(), "eval-triples"),
                                      static_cast<int>(cfg_.get_int("world.triples_per_relation")));
    std::vector<EvalItem> out;
    std::map<std::string, int> count;
    for (const auto & t : triples) out.push_back(to_eval_item(t, t.relation + "-" + std::to_string(count[t.relation]++)));
    return out;
}

std::vector<EvalItem> Lab::persona_items(Regime r, const std::vector<int> & personas, int attribute) {
    const auto & ps = world(r).personas;
    std::vector<Persona> sel;
    for (int i : personas) sel.push_back(ps.at(static_cast<std::size_t>(i)));
    auto items = make_eval_items(sel, kAttributeKeys[attribute]);
    for (std::size_t k = 0; k < items.size(); ++k) {
        items[k].id = regime_name(r) + "-" + std::string(kAttributeKeys[attribute]) + "-" + std::to_string(personas[k]);
    }
    return items;
}

namespace {

using Runner = std::function<std::vector<VerbalizationOutput>(const EvalItem &)>;

MethodScore run_method(const std::string & method, const std::string & task, const std::vector<EvalItem> & items,
                       const Runner & run, EnsembleMode mode, std::vector<TrialResult> * dump) {
    std::vector<TrialResult> trials;
    for (const auto & it : items) {
        for (const auto & o : run(it)) {
            TrialResult t = to_trial(o, it);
            t.method = method;
            trials.push_back(std::move(t));
        }
    }
    MethodScore s;
    s.method = method;
    s.task = task;
    s.score = score_run(trials, mode);
    std::vector<std::string> ids;
    for (const auto & it : items) ids.push_back(it.id);
    s.outcomes = paired_outcomes(s.score, ids);
    if (dump) dump->insert(dump->end(), trials.begin(), trials.end());
    return s;
}

std::map<std::string, std::vector<EvalItem>> by_task(const std::vector<EvalItem> & items) {
    std::map<std::string, std::vector<EvalItem>> out;
    for (const auto & it : items) out[it.task].push_back(it);
    return out;
}

std::vector<std::string> task_order(const std::map<std::string, std::vector<EvalItem>> & m) {
    std::vector<std::string> out;
    for (auto k : kAttributeKeys) {
        if (m.count(std::string(k))) out.emplace_back(k);
    }
    return out;
}

} // namespace

Kf1Result Lab::evaluate_kf1() {
    const auto & tok = tokenizer();
    const auto & b = base();
    const auto & v = lit();
    const int max_new = static_cast<int>(cfg_.get_int("eval.max_new"));
    const auto layers = cfg_.source_layers();
    const auto tasks = by_task(triple_items());
    Kf1Result r;
    r.tasks = task_order(tasks);
    for (const auto & task : r.tasks) {
        const auto & items = tasks.at(task);
        r.scores.push_back(run_method("zero_shot", task, items,
                                      [&](const EvalItem & it) { return std::vector{zero_shot(b, tok, it, max_new)}; },
                                      EnsembleMode::single_output, nullptr));
        r.scores.push_back(run_method(
            "lit_multi", task, items,
            [&](const EvalItem & it) {
                std::vector<VerbalizationOutput> out;
                for (int l : layers) out.push_back(lit_verbalize(b, v, tok, it, l, max_new));
                return out;
            },
            EnsembleMode::single_output, nullptr));
        r.scores.push_back(run_method(
            "patchscope_single", task, items,
            [&](const EvalItem & it) {
                std::vector<VerbalizationOutput> out;
                for (int l : layers) {
                    auto o = patchscope_single(b, b, tok, it, l, max_new);
                    out.insert(out.end(), o.begin(), o.end());
                }
                return out;
            },
            EnsembleMode::any_target_layer, nullptr));
    }
    const int n = static_cast<int>(r.tasks.size());
    for (const char * other : {"lit_multi", "patchscope_single"}) {
        for (const auto & task : r.tasks) {
            SignificanceResult s = mcnemar(r.get("zero_shot", task).outcomes, r.get(other, task).outcomes, n);
            s.method_a = "zero_shot";
            s.method_b = other;
            s.task = task;
            r.significance.push_back(s);
        }
    }
    return r;
}

Kf2Result Lab::evaluate_kf2() {
    const auto & tok = tokenizer();
    const auto & b = base();
    const auto & v = lit();
    const auto & inv_m = inverter(DecoderMode::inverter_multi);
    const auto & inv_s = inverter(DecoderMode::inverter_single);
    const int max_new = static_cast<int>(cfg_.get_int("eval.max_new"));
    const int layer = cfg_.decoder_layer();
    Kf2Result r;

    // Held-out excerpts from a population no decoder was trained on.
    const auto held = unique_contexts(side_population_records(cfg_, "inversion-heldout", 40, 2));
    const auto n_docs = std::min<std::size_t>(held.size(), static_cast<std::size_t>(cfg_.get_int("eval.inversion_documents")));
    std::vector<std::string> refs, multi, single;
    for (std::size_t i = 0; i < n_docs; ++i) {
        Tokens t = tok.encode(held[i]);
        truncate_to_budget(t, inverter_slots(inv_m.config.context_len));
        const std::string ref = tok.decode(t);
        const ActivationMatrix m = capture_layer(b, t, layer);
        refs.push_back(ref);
        multi.push_back(invert_multi(inv_m, tok, m).x_rec);
        single.push_back(invert_single(inv_s, tok, m.row(m.n_rows() - 1)).x_rec);
        const std::string one = ref;
        r.reconstructions.push_back({"heldout-" + std::to_string(i) + "/multi", ref, multi.back(),
                                     bleu(std::span(&multi.back(), 1), std::span(&one, 1))});
        r.reconstructions.push_back({"heldout-" + std::to_string(i) + "/single", ref, single.back(),
                                     bleu(std::span(&single.back(), 1), std::span(&one, 1))});
    }
    r.n_documents = static_cast<int>(n_docs);
    r.bleu_multi = bleu(multi, refs);
    r.bleu_single = bleu(single, refs);

    const auto tasks = by_task(triple_items());
    r.tasks = task_order(tasks);
    for (const auto & task : r.tasks) {
        const auto & items = tasks.at(task);
        r.scores.push_back(run_method("lit_multi", task, items,
                                      [&](const EvalItem & it) { return std::vector{lit_verbalize(b, v, tok, it, layer, max_new)}; },
                                      EnsembleMode::single_output, nullptr));
        for (const ModelHandle * inv : {&inv_m, &inv_s}) {
            const std::string name = inv == &inv_m ? "invert_multi" : "invert_single";
            r.scores.push_back(run_method(
                name, task, items,
                [&](const EvalItem & it) {
                    Reconstruction rec;
                    auto out = invert_then_interpret(*inv, b, tok, capture_for_inverter(b, *inv, tok, it.x_input), it, &rec);
                    return std::vector{out};
                },
                EnsembleMode::single_output, nullptr));
        }
    }
    return r;
}

PersonaQaResult Lab::evaluate_personaqa(Regime regime, bool verbalizers) {
    const auto & tok = tokenizer();
    const auto & b = base();
    const auto & t = target(regime);
    const int max_new = static_cast<int>(cfg_.get_int("eval.max_new"));
    const auto layers = cfg_.source_layers();
    const auto test = test_split(regime);
    const auto train = train_split(regime);
    const auto & ps = world(regime).personas;

    PersonaQaResult r;
    r.regime = regime;
    r.n_labels = static_cast<int>(cfg_.get_int("world.labels_per_attribute"));
    r.n_test = static_cast<int>(test.size());
    if (verbalizers) {
        const auto & v = lit();
        for (int a = 0; a < kNumAttributes; ++a) {
            const std::string task(kAttributeKeys[a]);
            const auto items = persona_items(regime, test, a);
            r.scores.push_back(run_method("zero_shot", task, items,
                                          [&](const EvalItem & it) { return std::vector{zero_shot(b, tok, it, max_new)}; },
                                          EnsembleMode::single_output, nullptr));
            r.scores.push_back(run_method(
                "patchscope_single", task, items,
                [&](const EvalItem & it) {
                    std::vector<VerbalizationOutput> out;
                    for (int l : layers) {
                        auto o = patchscope_single(t, b, tok, it, l, max_new);
                        out.insert(out.end(), o.begin(), o.end());
                    }
                    return out;
                },
                EnsembleMode::any_target_layer, nullptr));
            r.scores.push_back(run_method(
                "lit_multi", task, items,
                [&](const EvalItem & it) {
                    std::vector<VerbalizationOutput> out;
                    for (int l : layers) out.push_back(lit_verbalize(t, v, tok, it, l, max_new));
                    return out;
                },
                EnsembleMode::single_output, nullptr));
        }
    }

    // Probe features: last token of the fixed input prompt, every layer from one pass.
    const int L = t.config.n_layers;
    std::vector<int> all_layers(static_cast<std::size_t>(L));
    std::iota(all_layers.begin(), all_layers.end(), 1);
    std::vector<std::vector<ActivationVector>> feats(static_cast<std::size_t>(L));
    for (const auto & p : ps) {
        const auto mats = capture_layers(t, tok.encode(fill_template(kInputTemplate, p.name)), all_layers);
        for (int l = 0; l < L; ++l) feats[l].push_back(mats[l].row(mats[l].n_rows() - 1));
    }
    const ProbeConfig pc = cfg_.probe_config();
    for (int l = 1; l <= L; ++l) {
        for (int a = 0; a < kNumAttributes; ++a) {
            std::vector<ActivationVector> xs;
            std::vector<std::string> ys;
            for (int i : train) {
                xs.push_back(feats[l - 1][i]);
                ys.push_back(ps[i].attributes[a]);
            }
            const Probe probe = train_probe(xs, ys, pc);
            ProbeTaskScore s{std::string(kAttributeKeys[a]), l, 0, 0};
            for (int i : test) {
                ++s.n;
                s.correct += probe_predict(probe, feats[l - 1][i]) == ps[i].attributes[a];
            }
            r.probe_by_layer.push_back(s);
            if (l == cfg_.probe_layer()) r.probe.push_back(s);
        }
    }
    return r;
}

KnowledgeResult Lab::evaluate_knowledge(const std::vector<Regime> & regimes) {
    const auto & tok = tokenizer();
    KnowledgeResult r;
    for (Regime reg : regimes.empty() ? std::vector<Regime>(kRegimes.begin(), kRegimes.end()) : regimes) {
        const auto & ps = world(reg).personas;
        for (const ModelHandle * m : {&base(), &target(reg)}) {
            std::array<double, kNumAttributes> acc{};
            for (int a = 0; a < kNumAttributes; ++a) acc[a] = knowledge_check(*m, tok, ps, kAttributeKeys[a]);
            r.models.push_back(m->id);
            r.regimes.push_back(regime_name(reg));
            r.accuracy.push_back(acc);
        }
    }
    return r;
}

SwapLabelResult Lab::evaluate_swap_label() {
    const auto & tok = tokenizer();
    const auto & b = base();
    const auto & t = target(Regime::shuffled);
    const auto & v = lit();
    const int max_new = static_cast<int>(cfg_.get_int("eval.max_new"));
    const auto layers = cfg_.source_layers();
    const auto & ps = world(Regime::shuffled).personas;
    std::vector<int> all(ps.size());
    std::iota(all.begin(), all.end(), 0);

    std::vector<TrialResult> lit_trials, ps_trials;
    std::map<std::string, std::string> original, shuffled;
    for (int a = 0; a < kNumAttributes; ++a) {
        for (const auto & it : persona_items(Regime::shuffled, all, a)) {
            const auto idx = static_cast<std::size_t>(std::stoi(it.id.substr(it.id.rfind('-') + 1)));
            original[it.id] = ps[idx].plain_attributes.value()[a];
            shuffled[it.id] = it.answer;
            for (int l : layers) {
                lit_trials.push_back(to_trial(lit_verbalize(t, v, tok, it, l, max_new), it));
                for (const auto & o : patchscope_single(t, b, tok, it, l, max_new)) ps_trials.push_back(to_trial(o, it));
            }
        }
    }
    SwapLabelResult r;
    r.lit = swap_label_eval(lit_trials, original, shuffled);
    r.patchscope = swap_label_eval(ps_trials, original, shuffled);
    return r;
}

SensitivityRun Lab::evaluate_sensitivity() {
    const auto & tok = tokenizer();
    const auto & b = base();
    const auto & v = lit();
    const int max_new = static_cast<int>(cfg_.get_int("eval.max_new"));
    const int layer = cfg_.decoder_layer();
    SensitivityRun r;
    const auto tasks = by_task(triple_items());
    for (const auto & task : task_order(tasks)) {
        const auto & pool = world(Regime::plain).world.realistic[attribute_index(task)].labels;
        r.lit.push_back(sensitivity_suite(
            tasks.at(task), [&](const EvalItem & it) { return lit_verbalize(b, v, tok, it, layer, max_new).text; }, pool,
            derive_seed(cfg_.seed(), "sensitivity")));
    }
    return r;
}

// ----------------------------------------------------------------------------------------------
// Recipes

namespace {

void append_scores(std::vector<AccuracyRow> & rows, const std::string & regime, const std::vector<MethodScore> & scores) {
    for (const auto & s : scores) {
        for (const auto & l : s.score.per_layer) {
            rows.push_back({regime, s.method, s.task, std::to_string(l.source_layer), l.n_items, l.accuracy()});
        }
        rows.push_back({regime, s.method, s.task, "avg", s.score.per_layer.front().n_items, s.score.layer_average});
    }
}

double mean_of(const std::vector<MethodScore> & scores, const std::string & method) {
    double sum = 0.0;
    int n = 0;
    for (const auto & s : scores) {
        if (s.method != method) continue;
        sum += s.score.layer_average;
        ++n;
    }
    return n ? sum / n : 0.0;
}

std::ofstream open_csv(const std::filesystem::path & path, const std::string & note) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    f << "# schema_version=1 " << note << '\n';
    return f;
}

} // namespace

RunReport Lab::run_recipe(const std::string & name) {
    if (std::find(recipe_names().begin(), recipe_names().end(), name) == recipe_names().end()) {
        std::string known;
        for (const auto & n : recipe_names()) known += (known.empty() ? "" : ", ") + n;
        throw ValidationError("unknown recipe '" + name + "' (known: " + known + ")");
    }
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.recipe = name;
    rep.fingerprint = cfg_.fingerprint();
    rep.seed = cfg_.seed();
    const std::string stage = "eval:" + name;
    const std::string header = "recipe=" + name + " fingerprint=" + stage_fingerprint(stage) +
                               " seed=" + std::to_string(cfg_.seed());
    const auto tdir = dir_ / "tables";
    std::vector<std::filesystem::path> outputs;
    if (name == "kf1_zero_shot_parity") outputs = {tdir / "kf1_accuracy.csv", tdir / "kf1_significance.csv"};
    if (name == "kf2_inversion") outputs = {tdir / "kf2_bleu.csv", tdir / "kf2_accuracy.csv", tdir / "kf2_reconstructions.jsonl"};
    if (name == "kf3_personaqa") {
        for (Regime r : kRegimes) outputs.push_back(tdir / ("personaqa_" + regime_name(r) + ".csv"));
    }
    if (name == "probe_vs_verbalizer") outputs = {tdir / "probe_vs_verbalizer.csv"};
    if (name == "sensitivity") outputs = {tdir / "sensitivity.csv"};
    if (name == "swap_label") outputs = {tdir / "swap_label.csv"};
    if (name == "knowledge_check") outputs = {tdir / "knowledge.csv"};

    bool all_fresh = true;
    for (const auto & o : outputs) all_fresh = fresh(o, stage) && all_fresh;

    if (!all_fresh) {
        note("evaluating " + name);
        if (name == "kf1_zero_shot_parity") {
            const auto r = evaluate_kf1();
            std::vector<AccuracyRow> rows;
            append_scores(rows, "plain", r.scores);
            write_accuracy_csv(outputs[0], rows, header);
            write_significance_csv(outputs[1], r.significance, header);
            for (const char * m : {"zero_shot", "lit_multi", "patchscope_single"}) rep.summary[std::string(m) + "_avg"] = mean_of(r.scores, m);
        } else if (name == "kf2_inversion") {
            const auto r = evaluate_kf2();
            auto f = open_csv(outputs[0], header);
            f << "inverter,source_layer,n_documents,bleu\n";
            f << "inverter_multi," << cfg_.decoder_layer() << ',' << r.n_documents << ',' << fmt6(r.bleu_multi) << '\n';
            f << "inverter_single," << cfg_.decoder_layer() << ',' << r.n_documents << ',' << fmt6(r.bleu_single) << '\n';
            f.close();
            std::vector<AccuracyRow> rows;
            append_scores(rows, "plain", r.scores);
            write_accuracy_csv(outputs[1], rows, header);
            write_reconstructions_jsonl(outputs[2], r.reconstructions);
            rep.summary["bleu_multi"] = r.bleu_multi;
            rep.summary["bleu_single"] = r.bleu_single;
        } else if (name == "kf3_personaqa") {
            for (std::size_t i = 0; i < kRegimes.size(); ++i) {
                const auto r = evaluate_personaqa(kRegimes[i]);
                std::vector<AccuracyRow> rows;
                append_scores(rows, regime_name(kRegimes[i]), r.scores);
                for (const auto & p : r.probe) {
                    rows.push_back({regime_name(kRegimes[i]), "probe", p.task, std::to_string(p.layer), p.n, p.accuracy()});
                }
                write_accuracy_csv(outputs[i], rows, header);
                for (const char * m : {"zero_shot", "patchscope_single", "lit_multi"}) {
                    rep.summary[regime_name(kRegimes[i]) + "_" + m + "_avg"] = mean_of(r.scores, m);
                }
            }
        } else if (name == "probe_vs_verbalizer") {
            const auto r = evaluate_personaqa(Regime::fantasy);
            const double chance = 1.0 / r.n_labels;
            auto f = open_csv(outputs[0], header);
            f << "method,task,source_layer,n_items,correct,accuracy,chance,p_above_chance\n";
            for (const auto & s : r.scores) {
                for (const auto & l : s.score.per_layer) {
                    f << s.method << ',' << s.task << ',' << l.source_layer << ',' << l.n_items << ',' << l.n_correct << ','
                      << fmt6(l.accuracy()) << ',' << fmt6(chance) << ','
                      << fmt6(binomial_upper_tail(l.n_correct, l.n_items, chance)) << '\n';
                }
            }
            int n = 0, c = 0;
            for (const auto & p : r.probe_by_layer) {
                f << "probe," << p.task << ',' << p.layer << ',' << p.n << ',' << p.correct << ',' << fmt6(p.accuracy())
                  << ',' << fmt6(chance) << ',' << fmt6(binomial_upper_tail(p.correct, p.n, chance)) << '\n';
            }
            for (const auto & p : r.probe) {
                n += p.n;
                c += p.correct;
            }
            f << "probe,pooled," << cfg_.probe_layer() << ',' << n << ',' << c << ',' << fmt6(n ? double(c) / n : 0.0)
              << ',' << fmt6(chance) << ',' << fmt6(binomial_upper_tail(c, n, chance)) << '\n';
            rep.summary["probe_pooled_accuracy"] = n ? double(c) / n : 0.0;
        } else if (name == "sensitivity") {
            const auto r = evaluate_sensitivity();
            write_sensitivity_csv(outputs[0], r.lit, "lit_multi", header);
        } else if (name == "swap_label") {
            const auto r = evaluate_swap_label();
            auto f = open_csv(outputs[0], header);
            f << "method,task,n_items,original_accuracy,shuffled_accuracy\n";
            for (const auto * set : {&r.lit, &r.patchscope}) {
                const char * m = set == &r.lit ? "lit_multi" : "patchscope_single";
                for (const auto & s : *set) {
                    f << m << ',' << s.task << ',' << s.n << ',' << fmt6(s.original_accuracy) << ','
                      << fmt6(s.shuffled_accuracy) << '\n';
                }
            }
        } else if (name == "knowledge_check") {
            const auto r = evaluate_knowledge();
            auto f = open_csv(outputs[0], header);
            f << "model,regime,task,token_accuracy\n";
            for (std::size_t i = 0; i < r.models.size(); ++i) {
                for (int a = 0; a < kNumAttributes; ++a) {
                    f << r.models[i] << ',' << r.regimes[i] << ',' << kAttributeKeys[a] << ',' << fmt6(r.accuracy[i][a]) << '\n';
                }
            }
        }
        for (const auto & o : outputs) stamp(o, stage);
        executed_.push_back(stage);
    } else {
        note(name + " tables are up to date");
    }

    for (const auto & o : outputs) rep.artifacts.push_back(std::filesystem::relative(o, dir_).string());
    rep.executed_stages = executed_;
    rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json j = {{"schema_version", kReportSchemaVersion},
                        {"recipe", rep.recipe},
                        {"config_fingerprint", rep.fingerprint},
                        {"seed", rep.seed},
                        {"wall_clock_seconds", rep.wall_clock_seconds},
                        {"artifacts", rep.artifacts},
                        {"executed_stages", rep.executed_stages},
                        {"summary", rep.summary}};
    std::ofstream f(dir_ / ("report_" + name + ".json"), std::ios::binary);
    f << j.dump(2) << '\n';
    return rep;
}

} // namespace verblab
