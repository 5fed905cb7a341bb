#include "doctest.h"
#include "verblab/labctl.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace verblab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string & name) {
    const auto p = fs::temp_directory_path() / ("verblab_lab_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path & p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const fs::path & p, const std::string & s) {
    std::ofstream f(p, std::ios::binary);
    f << s;
}

std::vector<std::string> csv_lines(const fs::path & p) {
    std::vector<std::string> out;
    std::istringstream in(slurp(p));
    for (std::string l; std::getline(in, l);) {
        if (!l.starts_with("#")) out.push_back(l);
    }
    return out;
}

int run_cli(const std::string & args) {
    const std::string cmd = std::string(VERBLAB_CLI) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST_CASE("config keys, typing and derived settings") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.seed() == 7);
    CHECK_THROWS_AS(c.set("model.depth", "3"), ValidationError);
    CHECK_THROWS_AS(c.set("model.n_layers", "eight"), ValidationError);
    CHECK_THROWS_AS(c.set("eval.source_layers", "1,,2"), ValidationError);
    c.set("eval.source_layers", " 1, 3 ");
    CHECK(c.raw("eval.source_layers") == "1,3");
    CHECK(c.source_layers() == std::vector<int>{1, 3});
    c.set("eval.source_layers", "");
    CHECK(c.source_layers() == std::vector<int>{1, 2, 3, 4});
    CHECK(c.decoder_layer() == 4);
    c.set("eval.source_layers", "9");
    CHECK_THROWS_AS(c.validate(), ValidationError);

    const ExperimentConfig d;
    CHECK(d.train_config("base").seed == derive_seed(7, "train:base"));
    CHECK(d.train_config("lit").seed != d.train_config("inverter").seed);
    CHECK(d.model_config(300).seed == derive_seed(7, "model-init"));
    CHECK_NOTHROW(ExperimentConfig::tiny().validate());
}

TEST_CASE("fingerprint depends on content, not spelling or order") {
    const auto dir = scratch("cfg");
    fs::create_directories(dir);
    write_text(dir / "a.ini", "[train.base]\nlr = 0.003\nepochs = 4\n\n[run]\nseed = 11\n");
    write_text(dir / "b.ini", "[run]\nseed = 11\n[train.base]\nepochs = 04\nlr = 3e-3\n");
    const auto a = ExperimentConfig::from_file(dir / "a.ini");
    const auto b = ExperimentConfig::from_file(dir / "b.ini");
    CHECK(a.fingerprint() == b.fingerprint());
    auto c = a;
    c.set("train.base.lr", "0.004");
    CHECK(c.fingerprint() != a.fingerprint());
    // run.out names a location, not an experiment.
    auto e = a;
    e.set("run.out", "/elsewhere");
    CHECK(e.fingerprint() == a.fingerprint());

    a.write(dir / "round.ini");
    CHECK(ExperimentConfig::from_file(dir / "round.ini").fingerprint() == a.fingerprint());

    write_text(dir / "bad.ini", "seed = 3\n");
    CHECK_THROWS_AS(ExperimentConfig::from_file(dir / "bad.ini"), ValidationError);
    write_text(dir / "unknown.ini", "[model]\nwidth = 3\n");
    CHECK_THROWS_AS(ExperimentConfig::from_file(dir / "unknown.ini"), ValidationError);
    write_text(dir / "range.ini", "[world]\ntest_fraction = 1.5\n");
    CHECK_THROWS_AS(ExperimentConfig::from_file(dir / "range.ini"), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("a run directory has one owner") {
    const auto dir = scratch("lock");
    {
        RunLock a(dir);
        CHECK(fs::exists(dir / ".lock"));
        CHECK_THROWS_AS(RunLock{dir}, RuntimeFailure);
    }
    CHECK_FALSE(fs::exists(dir / ".lock"));
    CHECK_NOTHROW(RunLock{dir});
    fs::remove_all(dir);
}

TEST_CASE("recipes cache by fingerprint and reproduce byte for byte") {
    const auto dir = scratch("cache");
    const auto cfg = ExperimentConfig::tiny();
    std::string first;
    {
        Lab lab(cfg, dir);
        const auto rep = lab.run_recipe("kf1_zero_shot_parity");
        CHECK(rep.fingerprint == cfg.fingerprint());
        CHECK(std::find(rep.executed_stages.begin(), rep.executed_stages.end(), "base") != rep.executed_stages.end());
        first = slurp(dir / "tables" / "kf1_accuracy.csv");
        CHECK(first.starts_with("# schema_version=1 "));
        CHECK(first.find("seed=7") != std::string::npos);
        CHECK(fs::exists(dir / "report_kf1_zero_shot_parity.json"));
        CHECK_THROWS_AS(lab.run_recipe("kf9"), ValidationError);
    }
    {
        Lab lab(cfg, dir);
        const auto rep = lab.run_recipe("kf1_zero_shot_parity");
        CHECK(rep.executed_stages.empty());
    }
    // Only the evaluation stage runs again after its table is removed.
    fs::remove(dir / "tables" / "kf1_accuracy.csv");
    {
        Lab lab(cfg, dir);
        const auto rep = lab.run_recipe("kf1_zero_shot_parity");
        CHECK(rep.executed_stages == std::vector<std::string>{"eval:kf1_zero_shot_parity"});
        CHECK(slurp(dir / "tables" / "kf1_accuracy.csv") == first);
    }
    // A fresh directory with the same config gives identical bytes.
    const auto dir2 = scratch("cache2");
    {
        Lab lab(cfg, dir2);
        lab.run_recipe("kf1_zero_shot_parity");
    }
    CHECK(slurp(dir2 / "tables" / "kf1_accuracy.csv") == first);
    CHECK(slurp(dir2 / "tables" / "kf1_significance.csv") == slurp(dir / "tables" / "kf1_significance.csv"));
    CHECK(slurp(dir2 / "models" / "base.ckpt") == slurp(dir / "models" / "base.ckpt"));
    fs::remove_all(dir2);

    // Stale artifacts demand --force.
    auto changed = cfg;
    changed.set("train.base.lr", "0.002");
    {
        Lab lab(changed, dir);
        CHECK_THROWS_AS(lab.run_recipe("kf1_zero_shot_parity"), ValidationError);
    }
    {
        Lab lab(changed, dir, true);
        const auto rep = lab.run_recipe("kf1_zero_shot_parity");
        CHECK(std::find(rep.executed_stages.begin(), rep.executed_stages.end(), "base") != rep.executed_stages.end());
    }
    fs::remove_all(dir);
}

TEST_CASE("PersonaQA recipe emits three tables with four methods") {
    const auto dir = scratch("kf3");
    {
        Lab lab(ExperimentConfig::tiny(), dir);
        lab.run_recipe("kf3_personaqa");
    }
    for (const char * r : {"plain", "shuffled", "fantasy"}) {
        const auto rows = csv_lines(dir / "tables" / (std::string("personaqa_") + r + ".csv"));
        REQUIRE(rows.size() > 1);
        std::set<std::string> methods;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto a = rows[i].find(',');
            const auto b = rows[i].find(',', a + 1);
            methods.insert(rows[i].substr(a + 1, b - a - 1));
        }
        CHECK(methods == std::set<std::string>{"zero_shot", "patchscope_single", "lit_multi", "probe"});
    }
    fs::remove_all(dir);
}

TEST_CASE("command line: subcommands and exit codes") {
    const auto dir = scratch("cli");
    const std::string base = "--preset tiny --out " + dir.string();
    CHECK(run_cli("gen-world --mode fantasy --seed 7 " + base) == 0);
    CHECK(fs::exists(dir / "world" / "fantasy" / "manifest.json"));
    CHECK(fs::exists(dir / "world" / "fantasy" / "personas.jsonl"));

    CHECK(run_cli("eval --layers 2 --mode plain --seed 7 " + base) == 0);
    const auto rows = csv_lines(dir / "tables" / "eval_plain.csv");
    REQUIRE(rows.size() > 1);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const bool zero_shot = rows[i].starts_with("zero_shot,");
        CHECK((zero_shot || rows[i].find(",2,") != std::string::npos));
        CHECK(rows[i].find(",1,") == std::string::npos);
    }

    CHECK(run_cli("probe --mode fantasy --seed 7 " + base) == 0);
    CHECK(fs::exists(dir / "tables" / "probe_fantasy.csv"));
    CHECK(run_cli("train --stage lit --seed 7 " + base) == 0);
    CHECK(run_cli("recipe knowledge_check --seed 7 " + base) == 0);
    CHECK(run_cli("report --out " + dir.string()) == 0);

    CHECK(run_cli("recipe kf1_zero_shot_parity --bogus") == 2);
    CHECK(run_cli("recipe no_such_recipe " + base) == 2);
    CHECK(run_cli("eval --mode martian " + base) == 2);
    CHECK(run_cli("train --stage lit --set model.n_heads=3 " + base) == 2);
    // Different config in the same directory without --force.
    CHECK(run_cli("train --stage base --seed 8 " + base) == 2);
    CHECK(run_cli("") == 2);
    fs::remove_all(dir);
}
