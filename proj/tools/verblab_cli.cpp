#include "verblab/labctl.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>

using namespace verblab;

namespace {

struct Common {
    std::string config;
    std::string preset = "default";
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out;
    std::string layers;
    std::string mode = "plain";
    bool force = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App * cmd, Common & c) {
    cmd->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
    cmd->add_option("--preset", c.preset, "Built-in defaults to start from")->check(CLI::IsMember({"default", "tiny"}));
    cmd->add_option_function<std::uint64_t>("--seed", [&c](std::uint64_t s) { c.seed = s; c.seed_given = true; },
                                            "Master seed");
    cmd->add_option("--out", c.out, "Run directory");
    cmd->add_option("--layers", c.layers, "Comma separated source layers");
    cmd->add_option("--mode", c.mode, "World regime")->check(CLI::IsMember({"plain", "shuffled", "fantasy"}));
    cmd->add_flag("--force", c.force, "Overwrite stale artifacts");
    cmd->add_option("--set", c.overrides, "Override a config key, key=value");
}

ExperimentConfig load_config(const Common & c) {
    ExperimentConfig cfg = c.preset == "tiny" ? ExperimentConfig::tiny() : ExperimentConfig();
    if (!c.config.empty()) {
        const ExperimentConfig file = ExperimentConfig::from_file(c.config);
        for (const auto & k : config_keys()) {
            if (file.raw(k.name) != ExperimentConfig().raw(k.name)) cfg.set(k.name, file.raw(k.name));
        }
    }
    for (const auto & kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed_given) cfg.set("run.seed", std::to_string(c.seed));
    if (!c.layers.empty()) cfg.set("eval.source_layers", c.layers);
    cfg.validate();
    return cfg;
}

void print_report(const RunReport & r) {
    std::cout << "recipe " << r.recipe << " fingerprint " << r.fingerprint << " seed " << r.seed << '\n';
    for (const auto & [k, v] : r.summary) std::cout << "  " << k << " = " << v << '\n';
    for (const auto & a : r.artifacts) std::cout << "  wrote " << a << '\n';
    std::cout << "  " << r.wall_clock_seconds << " s\n";
}

std::ofstream table(const Lab & lab, const std::string & name) {
    std::filesystem::create_directories(lab.run_dir() / "tables");
    std::ofstream f(lab.run_dir() / "tables" / name, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write tables/" + name);
    f << "# schema_version=1 fingerprint=" << lab.config().fingerprint() << " seed=" << lab.config().seed() << '\n';
    return f;
}

int cmd_gen_world(Lab & lab, Regime r) {
    lab.tokenizer();
    const auto & w = lab.world(r);
    std::cout << "world " << to_string(r) << ": " << w.personas.size() << " personas, "
              << lab.tokenizer().vocab_size() << " tokens in vocabulary, written to "
              << (lab.run_dir() / "world" / std::string(to_string(r))).string() << '\n';
    return 0;
}

int cmd_train(Lab & lab, Regime r, const std::string & stage) {
    const ModelHandle * m = nullptr;
    if (stage == "base") m = &lab.base();
    else if (stage == "target") m = &lab.target(r);
    else if (stage == "lit") m = &lab.lit();
    else if (stage == "inverter_multi") m = &lab.inverter(DecoderMode::inverter_multi);
    else if (stage == "inverter_single") m = &lab.inverter(DecoderMode::inverter_single);
    else throw ValidationError("unknown stage '" + stage + "'");
    std::cout << "model " << m->id << " checksum " << hex64(m->weights_checksum()) << '\n';
    return 0;
}

int cmd_eval(Lab & lab, Regime r) {
    const auto res = lab.evaluate_personaqa(r);
    auto f = table(lab, "eval_" + std::string(to_string(r)) + ".csv");
    f << "method,task,source_layer,n_items,correct,accuracy\n";
    for (const auto & s : res.scores) {
        for (const auto & l : s.score.per_layer) {
            f << s.method << ',' << s.task << ',' << l.source_layer << ',' << l.n_items << ',' << l.n_correct << ','
              << fmt6(l.accuracy()) << '\n';
            std::cout << s.method << ' ' << s.task << " layer " << l.source_layer << ": " << l.n_correct << '/'
                      << l.n_items << '\n';
        }
    }
    return 0;
}

int cmd_probe(Lab & lab, Regime r, const std::vector<int> & layers) {
    const auto res = lab.evaluate_personaqa(r, false);
    const double chance = 1.0 / res.n_labels;
    auto f = table(lab, "probe_" + std::string(to_string(r)) + ".csv");
    f << "task,layer,n_items,correct,accuracy,p_above_chance\n";
    for (const auto & p : res.probe_by_layer) {
        if (!layers.empty() && std::find(layers.begin(), layers.end(), p.layer) == layers.end()) continue;
        const double pv = binomial_upper_tail(p.correct, p.n, chance);
        f << p.task << ',' << p.layer << ',' << p.n << ',' << p.correct << ',' << fmt6(p.accuracy()) << ',' << fmt6(pv)
          << '\n';
        std::cout << "probe " << p.task << " layer " << p.layer << ": " << p.correct << '/' << p.n << " p=" << pv << '\n';
    }
    return 0;
}

int cmd_report(const std::filesystem::path & dir) {
    if (!std::filesystem::is_directory(dir)) throw ValidationError("no run directory at " + dir.string());
    std::vector<std::filesystem::path> reports;
    for (const auto & e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.starts_with("report_") && name.ends_with(".json")) reports.push_back(e.path());
    }
    std::sort(reports.begin(), reports.end());
    if (reports.empty()) throw ValidationError("no reports in " + dir.string() + "; run a recipe first");
    for (const auto & p : reports) {
        std::ifstream f(p);
        const auto j = nlohmann::json::parse(f);
        std::cout << j.at("recipe").get<std::string>() << " (" << j.at("config_fingerprint").get<std::string>()
                  << ", seed " << j.at("seed") << ")\n";
        for (const auto & [k, v] : j.at("summary").items()) std::cout << "  " << k << " = " << v << '\n';
        for (const auto & a : j.at("artifacts")) std::cout << "  " << a.get<std::string>() << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"verblab: verbalization experiments on small transformers"};
    app.require_subcommand(1);
    Common c;
    std::string stage = "target", recipe;

    auto * gen = app.add_subcommand("gen-world", "Generate the worlds, documents and tokenizer");
    auto * train = app.add_subcommand("train", "Train one model stage");
    train->add_option("--stage", stage, "base, target, lit, inverter_multi or inverter_single");
    auto * inv = app.add_subcommand("invert", "Train both inverters and score reconstructions");
    auto * probe = app.add_subcommand("probe", "Train linear probes on the target and score held-out personas");
    auto * eval = app.add_subcommand("eval", "Score verbalizers on held-out persona questions");
    auto * report = app.add_subcommand("report", "Summarize the reports of a run directory");
    auto * rec = app.add_subcommand("recipe", "Run a canned experiment end to end");
    rec->add_option("name", recipe, "Recipe name (default: run.recipe from the config)");
    for (auto * s : {gen, train, inv, probe, eval, report, rec}) add_common(s, c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 2;
    }

    std::string stage_name = app.get_subcommands().front()->get_name();
    try {
        if (report->parsed()) return cmd_report(c.out.empty() ? "runs/default" : c.out);
        const ExperimentConfig cfg = load_config(c);
        const Regime r = parse_regime(c.mode);
        std::string out = c.out.empty() ? cfg.raw("run.out") : c.out;
        if (out.empty()) out = "runs/default";
        Lab lab(cfg, out, c.force, &std::cerr);
        if (gen->parsed()) return cmd_gen_world(lab, r);
        if (train->parsed()) {
            stage_name += " " + stage;
            return cmd_train(lab, r, stage);
        }
        if (inv->parsed()) {
            print_report(lab.run_recipe("kf2_inversion"));
            return 0;
        }
        if (probe->parsed()) return cmd_probe(lab, r, c.layers.empty() ? std::vector<int>{} : cfg.source_layers());
        if (eval->parsed()) return cmd_eval(lab, r);
        if (recipe.empty()) recipe = cfg.raw("run.recipe");
        if (recipe.empty()) throw ValidationError("no recipe named and run.recipe is empty");
        stage_name += " " + recipe;
        print_report(lab.run_recipe(recipe));
        return 0;
    } catch (const ValidationError & e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception & e) {
        std::cerr << "error in " << stage_name << " (seed " << (c.seed_given ? std::to_string(c.seed) : "from config")
                  << "): " << e.what() << '\n';
        return 1;
    }
}
