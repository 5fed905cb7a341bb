#include "verblab/worldgen.hpp"

#include <json.hpp>

#include <fstream>

namespace verblab {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::filesystem::path & path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    return f;
}

std::vector<json> read_lines(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read " + path.string());
    std::vector<json> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception & e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

json attributes_json(const std::array<std::string, kNumAttributes> & attrs) {
    json o = json::object();
    for (int a = 0; a < kNumAttributes; ++a) o[std::string(kAttributeKeys[a])] = attrs[a];
    return o;
}

std::array<std::string, kNumAttributes> attributes_from(const json & o) {
    std::array<std::string, kNumAttributes> out;
    for (int a = 0; a < kNumAttributes; ++a) out[a] = o.at(std::string(kAttributeKeys[a])).get<std::string>();
    return out;
}

} // namespace

void write_documents_jsonl(const std::filesystem::path & path, const std::vector<Document> & docs) {
    auto f = open_out(path);
    for (const auto & d : docs) {
        json qa = json::array();
        for (const auto & q : d.qa) qa.push_back({{"question", q.question}, {"answer", q.answer}});
        json o = {{"entity", d.entity}, {"style", std::string(to_string(d.style))}, {"text", d.text}, {"qa", qa}};
        f << o.dump() << '\n';
    }
}

void write_eval_items_jsonl(const std::filesystem::path & path, const std::vector<EvalItem> & items) {
    auto f = open_out(path);
    for (const auto & it : items) {
        json o = {{"id", it.id},           {"task", it.task},       {"subject", it.subject},
                  {"x_input", it.x_input}, {"x_prompt", it.x_prompt}, {"prompt_template", it.prompt_template},
                  {"answer", it.answer}};
        f << o.dump() << '\n';
    }
}

std::vector<EvalItem> read_eval_items_jsonl(const std::filesystem::path & path) {
    std::vector<EvalItem> out;
    for (const auto & o : read_lines(path)) {
        try {
            EvalItem it;
            it.id = o.at("id").get<std::string>();
            it.task = o.value("task", "");
            it.subject = o.value("subject", "");
            it.x_input = o.at("x_input").get<std::string>();
            it.x_prompt = o.at("x_prompt").get<std::string>();
            it.prompt_template = o.value("prompt_template", "");
            it.answer = o.at("answer").get<std::string>();
            out.push_back(std::move(it));
        } catch (const json::exception & e) {
            throw ValidationError(path.string() + ": bad eval item: " + e.what());
        }
    }
    return out;
}

void write_personas_jsonl(const std::filesystem::path & path, const std::vector<Persona> & personas) {
    auto f = open_out(path);
    for (const auto & p : personas) {
        json o = {{"name", p.name},
                  {"regime", std::string(to_string(p.regime))},
                  {"group", p.group},
                  {"attributes", attributes_json(p.attributes)}};
        if (p.plain_attributes) o["plain_attributes"] = attributes_json(*p.plain_attributes);
        f << o.dump() << '\n';
    }
}

std::vector<Persona> read_personas_jsonl(const std::filesystem::path & path) {
    std::vector<Persona> out;
    for (const auto & o : read_lines(path)) {
        try {
            Persona p;
            p.name = o.at("name").get<std::string>();
            p.regime = parse_regime(o.at("regime").get<std::string>());
            p.group = o.value("group", -1);
            p.attributes = attributes_from(o.at("attributes"));
            if (o.contains("plain_attributes")) p.plain_attributes = attributes_from(o.at("plain_attributes"));
            out.push_back(std::move(p));
        } catch (const json::exception & e) {
            throw ValidationError(path.string() + ": bad persona: " + e.what());
        }
    }
    return out;
}

void write_world_manifest(const std::filesystem::path & path, const World & world) {
    json labels = json::object();
    for (const auto & s : world.schemas()) labels[s.key] = s.labels;
    json o = {{"seed", world.seed},
              {"mode", std::string(to_string(world.mode))},
              {"n_personas", world.n_personas},
              {"labels_per_attribute", world.labels_per_attribute},
              {"correlation_strength", world.correlation_strength},
              {"labels", labels}};
    auto f = open_out(path);
    f << o.dump(2) << '\n';
}

WorldBuild regenerate_from_manifest(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read " + path.string());
    json o;
    try {
        o = json::parse(f);
        return build_world(o.at("seed").get<std::uint64_t>(), parse_regime(o.at("mode").get<std::string>()),
                           o.at("n_personas").get<int>(), o.at("labels_per_attribute").get<int>());
    } catch (const json::exception & e) {
        throw ValidationError(path.string() + ": bad manifest: " + e.what());
    }
}

} // namespace verblab
