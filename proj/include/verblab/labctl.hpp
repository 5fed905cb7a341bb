#pragma once

#include "verblab/evalstats.hpp"
#include "verblab/inversion.hpp"
#include "verblab/probe.hpp"
#include "verblab/trainer.hpp"
#include "verblab/verbalize.hpp"
#include "verblab/worldgen.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace verblab {

// ----------------------------------------------------------------------------------------------
// Configuration: flat typed keys "section.key" with registered defaults. Files are INI with one
// section per stage ([model], [train.base], ...).

enum class KeyType { integer, unsigned_integer, real, text, layer_list };

struct ConfigKey {
    std::string name;
    KeyType type;
    std::string default_value;
    std::string help;
};

const std::vector<ConfigKey> & config_keys();

class ExperimentConfig {
public:
    ExperimentConfig();  // every key at its default
    static ExperimentConfig from_file(const std::filesystem::path & path);
    // Small models and worlds for smoke runs and the test suite.
    static ExperimentConfig tiny();

    void set(const std::string & key, const std::string & value);
    const std::string & raw(const std::string & key) const;
    long long get_int(const std::string & key) const;
    std::uint64_t get_u64(const std::string & key) const;
    double get_real(const std::string & key) const;
    std::vector<int> get_layers(const std::string & key) const;

    std::uint64_t seed() const { return get_u64("run.seed"); }
    ModelConfig model_config(int vocab_size) const;
    TrainConfig train_config(const std::string & stage) const;  // stage: base, target, lit, inverter
    ProbeConfig probe_config() const;
    BackgroundConfig background_config() const;
    int decoder_layer() const;            // decoder.source_layer, 0 meaning floor(L/2)
    int probe_layer() const;              // probe.layer, 0 meaning floor(L/2)
    std::vector<int> source_layers() const;  // eval.source_layers, empty meaning 1..floor(L/2)

    void validate() const;
    // Canonical "key=value" lines in key order, excluding run.out and run.recipe.
    std::string canonical(const std::vector<std::string> & prefixes = {}) const;
    std::string fingerprint() const;
    void write(const std::filesystem::path & path) const;

private:
    std::map<std::string, std::string> values_;
};

// ----------------------------------------------------------------------------------------------
// Run directory ownership

class RunLock {
public:
    explicit RunLock(const std::filesystem::path & run_dir);
    ~RunLock();
    RunLock(const RunLock &) = delete;
    RunLock & operator=(const RunLock &) = delete;

private:
    std::filesystem::path path_;
};

// ----------------------------------------------------------------------------------------------
// Results kept in memory by the evaluation stages

struct MethodScore {
    std::string method;
    std::string task;
    RunScore score;
    std::vector<bool> outcomes;  // per item, aligned with the task's item order
};

struct Kf1Result {
    std::vector<std::string> tasks;
    std::vector<MethodScore> scores;  // zero_shot, lit_multi, patchscope_single per task
    std::vector<SignificanceResult> significance;
    const MethodScore & get(const std::string & method, const std::string & task) const;
};

struct Kf2Result {
    double bleu_multi = 0.0;
    double bleu_single = 0.0;
    int n_documents = 0;
    std::vector<std::string> tasks;
    std::vector<MethodScore> scores;  // lit_multi, invert_multi, invert_single per task
    std::vector<ReconstructionRecord> reconstructions;
    const MethodScore & get(const std::string & method, const std::string & task) const;
};

struct ProbeTaskScore {
    std::string task;
    int layer = 0;
    int n = 0;
    int correct = 0;
    double accuracy() const { return n ? static_cast<double>(correct) / n : 0.0; }
};

struct PersonaQaResult {
    Regime regime = Regime::plain;
    int n_labels = 0;
    int n_test = 0;
    std::vector<MethodScore> scores;      // zero_shot, patchscope_single, lit_multi per task (held-out)
    std::vector<ProbeTaskScore> probe;    // per task at the probe layer
    std::vector<ProbeTaskScore> probe_by_layer;  // every layer, every task
    const MethodScore & get(const std::string & method, const std::string & task) const;
};

struct KnowledgeResult {
    std::vector<std::string> models;  // base, target_<regime>
    std::vector<std::string> regimes;
    std::vector<std::array<double, kNumAttributes>> accuracy;
};

struct SwapLabelResult {
    std::vector<SwapLabelScore> lit;
    std::vector<SwapLabelScore> patchscope;
};

struct SensitivityRun {
    std::vector<SensitivityResult> lit;
};

struct RunReport {
    std::string recipe;
    std::string fingerprint;
    std::uint64_t seed = 0;
    double wall_clock_seconds = 0.0;
    std::vector<std::string> artifacts;         // relative to the run directory
    std::vector<std::string> executed_stages;   // stages computed (not loaded from cache) in this run
    std::map<std::string, double> summary;      // headline numbers
};

inline constexpr int kReportSchemaVersion = 1;

const std::vector<std::string> & recipe_names();

// ----------------------------------------------------------------------------------------------
// Staged pipeline with content-addressed caching inside one run directory.

class Lab {
public:
    Lab(ExperimentConfig cfg, std::filesystem::path run_dir, bool force = false, std::ostream * log = nullptr);
    ~Lab();

    const ExperimentConfig & config() const { return cfg_; }
    const std::filesystem::path & run_dir() const { return dir_; }

    const Tokenizer & tokenizer();
    const WorldBuild & world(Regime r);
    const std::vector<std::vector<Document>> & documents(Regime r);
    std::vector<int> test_split(Regime r);   // persona indices held out, stratified by country
    std::vector<int> train_split(Regime r);

    const ModelHandle & base();
    const ModelHandle & target(Regime r);
    const ModelHandle & lit();
    const ModelHandle & inverter(DecoderMode mode);

    // Evaluations (computed in memory, never cached).
    Kf1Result evaluate_kf1();
    Kf2Result evaluate_kf2();
    PersonaQaResult evaluate_personaqa(Regime r, bool verbalizers = true);
    KnowledgeResult evaluate_knowledge(const std::vector<Regime> & regimes = {});  // empty: every regime
    SwapLabelResult evaluate_swap_label();
    SensitivityRun evaluate_sensitivity();
    std::vector<EvalItem> triple_items();
    std::vector<EvalItem> persona_items(Regime r, const std::vector<int> & personas, int attribute);

    // Runs the recipe's stages, writing tables that are missing or stale, then report.json.
    RunReport run_recipe(const std::string & name);

    const std::vector<std::string> & executed_stages() const { return executed_; }

private:
    struct Impl;
    ExperimentConfig cfg_;
    std::filesystem::path dir_;
    bool force_;
    std::ostream * log_;
    std::unique_ptr<RunLock> lock_;
    std::unique_ptr<Impl> impl_;
    std::vector<std::string> executed_;

    std::string stage_fingerprint(const std::string & stage) const;
    // True when `artifact` exists with a matching sidecar; throws when it exists but is stale.
    bool fresh(const std::filesystem::path & artifact, const std::string & stage);
    void stamp(const std::filesystem::path & artifact, const std::string & stage);
    void note(const std::string & msg);
    const ModelHandle & model_stage(const std::string & stage, const std::function<ModelHandle()> & build);
};

} // namespace verblab
