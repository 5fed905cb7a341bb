#include "verblab/evalstats.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>

namespace verblab {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

namespace {

std::ofstream open_table(const std::filesystem::path & path, std::string_view header_note) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    f << "# schema_version=1";
    if (!header_note.empty()) f << ' ' << header_note;
    f << '\n';
    return f;
}

// Quote a CSV field when it contains a separator or quote.
std::string field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

void write_accuracy_csv(const std::filesystem::path & path, std::span<const AccuracyRow> rows,
                        std::string_view header_note) {
    auto f = open_table(path, header_note);
    f << "regime,method,task,source_layer,n_items,accuracy\n";
    for (const auto & r : rows) {
        f << field(r.regime) << ',' << field(r.method) << ',' << field(r.task) << ',' << r.source_layer << ','
          << r.n_items << ',' << fmt6(r.accuracy) << '\n';
    }
}

void write_significance_csv(const std::filesystem::path & path, std::span<const SignificanceResult> rows,
                            std::string_view header_note) {
    auto f = open_table(path, header_note);
    f << "method_a,method_b,task,b01,b10,test,statistic,p_raw,p_adjusted,n_comparisons,significant,direction\n";
    for (const auto & r : rows) {
        f << field(r.method_a) << ',' << field(r.method_b) << ',' << field(r.task) << ',' << r.b01 << ',' << r.b10
          << ',' << (r.no_discordant ? "none" : r.exact ? "exact" : "chi2") << ',' << fmt6(r.statistic) << ','
          << fmt6(r.p_raw) << ',' << fmt6(r.p_adjusted) << ',' << r.n_comparisons << ',' << (r.significant ? 1 : 0)
          << ',' << r.direction() << '\n';
    }
}

void write_sensitivity_csv(const std::filesystem::path & path, std::span<const SensitivityResult> rows,
                           std::string_view method, std::string_view header_note) {
    auto f = open_table(path, header_note);
    f << "method,task,variant,adversarial,n_items,correct,accuracy,delta\n";
    for (const auto & r : rows) {
        for (const auto & v : r.variants) {
            f << field(method) << ',' << field(r.task) << ',' << v.variant << ',' << (v.adversarial ? 1 : 0) << ','
              << v.n << ',' << v.correct << ',' << fmt6(v.accuracy) << ',' << fmt6(v.delta) << '\n';
        }
    }
}

void write_swap_label_csv(const std::filesystem::path & path, std::span<const SwapLabelScore> rows,
                          std::string_view method, std::string_view header_note) {
    auto f = open_table(path, header_note);
    f << "method,task,n_items,original_accuracy,shuffled_accuracy\n";
    for (const auto & r : rows) {
        f << field(method) << ',' << field(r.task) << ',' << r.n << ',' << fmt6(r.original_accuracy) << ','
          << fmt6(r.shuffled_accuracy) << '\n';
    }
}

void write_trials_jsonl(const std::filesystem::path & path, std::span<const TrialResult> trials) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    for (const auto & t : trials) {
        nlohmann::json o = {{"method", t.method},
                            {"task", t.task},
                            {"item_id", t.item_id},
                            {"source_layer", t.source_layer},
                            {"target_layer", t.target_layer},
                            {"output", t.output},
                            {"answer", t.answer},
                            {"correct", t.correct}};
        f << o.dump() << '\n';
    }
}

std::vector<TrialResult> read_trials_jsonl(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read " + path.string());
    std::vector<TrialResult> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        try {
            const auto o = nlohmann::json::parse(line);
            TrialResult t;
            t.method = o.at("method").get<std::string>();
            t.task = o.at("task").get<std::string>();
            t.item_id = o.at("item_id").get<std::string>();
            t.source_layer = o.at("source_layer").get<int>();
            t.target_layer = o.at("target_layer").get<int>();
            t.output = o.at("output").get<std::string>();
            t.answer = o.at("answer").get<std::string>();
            t.correct = o.at("correct").get<bool>();
            out.push_back(std::move(t));
        } catch (const nlohmann::json::exception & e) {
            throw ValidationError(path.string() + ": bad trial record: " + e.what());
        }
    }
    return out;
}

} // namespace verblab
