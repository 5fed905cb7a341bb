#include "doctest.h"
#include "verblab/worldgen.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <set>

using namespace verblab;

namespace {

std::string lower(std::string s) {
    for (auto & c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

int count_tokens(const std::string & text) {
    int n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ';
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

} // namespace

TEST_CASE("attribute keys and regimes") {
    CHECK(attribute_index("country") == 0);
    CHECK(attribute_index("fav_game") == 5);
    CHECK_THROWS_AS(attribute_index("fav_colour"), ValidationError);
    CHECK(parse_regime("shuffled") == Regime::shuffled);
    CHECK_THROWS_AS(parse_regime("mixed"), ValidationError);
}

TEST_CASE("plain world: schema, names and correlation") {
    const auto wb = build_world(3, Regime::plain, 72, 10);
    CHECK(wb.personas.size() == 72);
    std::set<std::string> names;
    for (const auto & p : wb.personas) names.insert(p.name);
    CHECK(names.size() == 72);
    for (int a = 0; a < kNumAttributes; ++a) {
        const auto & labels = wb.world.realistic[a].labels;
        CHECK(labels.size() == 10);
        CHECK(std::set(labels.begin(), labels.end()).size() == labels.size());
        for (const auto & p : wb.personas) CHECK(std::find(labels.begin(), labels.end(), p.attributes[a]) != labels.end());
    }
    // Names predict attributes: the favoured label is the most common one per group.
    int agree = 0, total = 0;
    for (const auto & p : wb.personas) {
        for (int a = 0; a < kNumAttributes; ++a) {
            agree += p.attributes[a] == wb.world.realistic[a].labels[wb.world.correlation[p.group][a]];
            ++total;
        }
    }
    const double rate = double(agree) / total;
    CHECK(rate > 0.7);
    CHECK(rate < 0.95);
}

TEST_CASE("world generation is a pure function of the seed") {
    for (Regime r : {Regime::plain, Regime::shuffled, Regime::fantasy}) {
        const auto a = build_world(9, r, 40, 6);
        const auto b = build_world(9, r, 40, 6);
        const auto c = build_world(10, r, 40, 6);
        bool same = true, differ = false;
        for (std::size_t i = 0; i < a.personas.size(); ++i) {
            same &= a.personas[i].name == b.personas[i].name && a.personas[i].attributes == b.personas[i].attributes;
            differ |= a.personas[i].name != c.personas[i].name || a.personas[i].attributes != c.personas[i].attributes;
        }
        CHECK(same);
        CHECK(differ);
    }
}

TEST_CASE("shuffled world deranges every column") {
    const auto plain = build_world(5, Regime::plain, 72, 10);
    const auto sh = build_world(5, Regime::shuffled, 72, 10);
    REQUIRE(sh.personas.size() == plain.personas.size());
    for (std::size_t i = 0; i < sh.personas.size(); ++i) {
        const auto & p = sh.personas[i];
        CHECK(p.name == plain.personas[i].name);
        REQUIRE(p.plain_attributes.has_value());
        CHECK(*p.plain_attributes == plain.personas[i].attributes);
        for (int a = 0; a < kNumAttributes; ++a) CHECK(p.attributes[a] != (*p.plain_attributes)[a]);
    }
    // Column multisets are preserved.
    for (int a = 0; a < kNumAttributes; ++a) {
        std::multiset<std::string> x, y;
        for (std::size_t i = 0; i < sh.personas.size(); ++i) {
            x.insert(sh.personas[i].attributes[a]);
            y.insert(plain.personas[i].attributes[a]);
        }
        CHECK(x == y);
    }
    CHECK_THROWS_AS(build_world(5, Regime::shuffled, 1, 10), ValidationError);
}

TEST_CASE("derange_column edge cases") {
    Rng rng(1);
    const std::vector<std::string> col{"a", "b", "a", "c", "b", "a"};
    for (int t = 0; t < 20; ++t) {
        const auto d = derange_column(col, rng);
        for (std::size_t i = 0; i < col.size(); ++i) CHECK(d[i] != col[i]);
        CHECK(std::multiset(d.begin(), d.end()) == std::multiset(col.begin(), col.end()));
    }
    CHECK_THROWS_AS(derange_column({"a", "a", "a", "b"}, rng), ValidationError);
    CHECK_THROWS_AS(derange_column({"a"}, rng), ValidationError);
    const auto two = derange_column({"x", "y"}, rng);
    CHECK(two == std::vector<std::string>{"y", "x"});
}

TEST_CASE("fantasy vocabulary is novel and balanced") {
    const auto wb = build_world(7, Regime::fantasy, 200, 10);
    std::set<std::string> realistic;
    for (const auto & s : wb.world.realistic) {
        for (const auto & l : s.labels) realistic.insert(lower(l));
    }
    for (const auto & g : wb.world.name_pools) {
        for (const auto & n : g.first) realistic.insert(lower(n));
        for (const auto & n : g.last) realistic.insert(lower(n));
    }
    std::set<std::string> labels;
    for (const auto & s : wb.world.fantasy) {
        CHECK(s.labels.size() == 10);
        for (const auto & l : s.labels) {
            CHECK(realistic.count(lower(l)) == 0);
            labels.insert(lower(l));
        }
    }
    CHECK(labels.size() == 60);
    std::set<std::string> names;
    for (const auto & p : wb.personas) {
        names.insert(p.name);
        CHECK(p.group == -1);
        const auto sp = p.name.find(' ');
        REQUIRE(sp != std::string::npos);
        CHECK(labels.count(lower(p.name.substr(0, sp))) == 0);
        CHECK(labels.count(lower(p.name.substr(sp + 1))) == 0);
    }
    CHECK(names.size() == 200);
    for (int a = 0; a < kNumAttributes; ++a) {
        std::map<std::string, int> counts;
        for (const auto & p : wb.personas) ++counts[p.attributes[a]];
        CHECK(counts.size() == 10);
        for (const auto & [l, c] : counts) CHECK(c == 20);
    }
    CHECK_THROWS_AS(build_world(7, Regime::fantasy, 10, 1), ValidationError);
}

TEST_CASE("documents embed every label and are reproducible") {
    const auto wb = build_world(4, Regime::plain, 30, 10);
    const auto & lib = TemplateLibrary::standard();
    long tokens = 0;
    int docs = 0, bios = 0, interviews = 0;
    for (const auto & p : wb.personas) {
        const auto d1 = render_documents(p, lib, 2, 2, 11);
        const auto d2 = render_documents(p, lib, 2, 2, 11);
        REQUIRE(d1.size() == 4);
        for (std::size_t i = 0; i < d1.size(); ++i) {
            CHECK(d1[i].text == d2[i].text);
            for (const auto & l : p.attributes) CHECK(d1[i].text.find(l) != std::string::npos);
            for (const auto & qa : d1[i].qa) CHECK(d1[i].text.find(qa.answer) != std::string::npos);
            CHECK(d1[i].entity == p.name);
            tokens += count_tokens(d1[i].text);
            ++docs;
            (d1[i].style == DocStyle::biography ? bios : interviews)++;
        }
    }
    const double avg = double(tokens) / docs;
    CHECK(avg >= 80);
    CHECK(avg <= 400);
    CHECK(bios == interviews);
}

TEST_CASE("style counts over 500 documents") {
    const auto wb = build_world(2, Regime::fantasy, 20, 4);
    int bios = 0, interviews = 0;
    for (int i = 0; i < 2; ++i) {
        for (const auto & d : render_documents(wb.personas[i], TemplateLibrary::standard(), 125, 125, 3)) {
            (d.style == DocStyle::biography ? bios : interviews)++;
        }
    }
    CHECK(bios == 250);
    CHECK(interviews == 250);
}

TEST_CASE("template library needs ten frames of each style") {
    TemplateLibrary lib = TemplateLibrary::standard();
    CHECK_NOTHROW(lib.validate());
    lib.interviews.resize(9);
    CHECK_THROWS_AS(lib.validate(), ValidationError);
    const auto wb = build_world(2, Regime::plain, 4, 4);
    CHECK_THROWS_AS(render_documents(wb.personas[0], lib, 1, 1, 1), ValidationError);
}

TEST_CASE("labels colliding with scaffolding are rejected") {
    auto wb = build_world(2, Regime::plain, 4, 4);
    Persona p = wb.personas[0];
    p.attributes[1] = "the";  // appears in every frame
    CHECK_THROWS_AS(render_documents(p, TemplateLibrary::standard(), 1, 1, 1), ValidationError);
}

TEST_CASE("evaluation items") {
    Persona p;
    p.name = "Gravos Brixuna";
    p.regime = Regime::fantasy;
    p.attributes = {"Veloria", "a", "b", "c", "d", "e"};
    const auto items = make_eval_items({p}, "country");
    REQUIRE(items.size() == 1);
    CHECK(items[0].x_prompt == "The country of origin for Gravos Brixuna");
    CHECK(items[0].x_input == "My name is Gravos Brixuna");
    CHECK(items[0].answer == "Veloria");
    CHECK(items[0].task == "country");
    CHECK(items[0].prompt_template == "The country of origin for {}");
    CHECK_THROWS_AS(make_eval_items({p}, "height"), ValidationError);

    const auto wb = build_world(1, Regime::plain, 72, 10);
    for (int a = 0; a < kNumAttributes; ++a) {
        const auto xs = make_eval_items(wb.personas, kAttributeKeys[a]);
        CHECK(xs.size() == 72);
        const auto & labels = wb.world.realistic[a].labels;
        for (const auto & x : xs) CHECK(std::find(labels.begin(), labels.end(), x.answer) != labels.end());
    }
}

TEST_CASE("decoder dataset is extractive and uses its own questions") {
    const auto wb = build_world(6, Regime::plain, 20, 10);
    std::vector<std::vector<Document>> docs;
    for (const auto & p : wb.personas) docs.push_back(render_documents(p, TemplateLibrary::standard(), 1, 1, 6));
    const auto data = make_decoder_dataset(wb.world, wb.personas, docs, 6, 3);
    CHECK(data.size() == 20 * 2 * 3);
    std::set<std::string> eval_prompts;
    for (int a = 0; a < kNumAttributes; ++a) {
        eval_prompts.insert(eval_template(a));
        eval_prompts.insert(cloze_template(a));
        for (const auto & v : prompt_variants(a)) eval_prompts.insert(v.tmpl);
    }
    for (const auto & r : data) {
        CHECK_FALSE(r.answer_text.empty());
        CHECK(r.context_text.find(r.answer_text) != std::string::npos);
        CHECK(eval_prompts.count(r.question_text) == 0);
    }
    for (int a = 0; a < kNumAttributes; ++a) {
        for (const auto & q : decoder_question_templates(a)) CHECK(eval_prompts.count(q) == 0);
    }
}

TEST_CASE("feature triples carry their object in the input") {
    const auto wb = build_world(8, Regime::plain, 10, 10);
    const auto triples = make_triples(wb.world, 8, 7);
    CHECK(triples.size() == 7 * kNumAttributes);
    std::map<std::string, int> per;
    for (const auto & t : triples) {
        ++per[t.relation];
        CHECK(t.x_input.find(t.object) != std::string::npos);
        CHECK(t.x_input.find(t.subject) != std::string::npos);
        const auto & labels = wb.world.realistic[attribute_index(t.relation)].labels;
        CHECK(std::find(labels.begin(), labels.end(), t.object) != labels.end());
    }
    for (const auto & [r, n] : per) CHECK(n == 7);
    const auto country = std::find_if(triples.begin(), triples.end(), [](const auto & t) { return t.relation == "country"; });
    REQUIRE(country != triples.end());
    CHECK(country->x_input.find(country->subject + " from " + country->object + " walked in") == 0);
    const auto item = to_eval_item(*country, "t0");
    CHECK(item.answer == country->object);
    CHECK(item.x_input == country->x_input);
}

TEST_CASE("prompt variants") {
    for (int a = 0; a < kNumAttributes; ++a) {
        const auto & v = prompt_variants(a);
        REQUIRE(v.size() == 7);
        CHECK(v[0].id == "S0");
        CHECK(v[0].tmpl == eval_template(a));
        int adv = 0;
        for (const auto & x : v) {
            adv += x.adversarial;
            CHECK(x.tmpl.find("{}") != std::string::npos);
            if (x.adversarial) CHECK(x.tmpl.find("{D}") != std::string::npos);
        }
        CHECK(adv == 2);
    }
}

TEST_CASE("files round trip and the manifest regenerates the world") {
    const auto dir = std::filesystem::temp_directory_path() / "verblab_test_world";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    for (Regime r : {Regime::plain, Regime::shuffled, Regime::fantasy}) {
        const auto wb = build_world(12, r, 24, 6);
        write_world_manifest(dir / "manifest.json", wb.world);
        const auto again = regenerate_from_manifest(dir / "manifest.json");
        REQUIRE(again.personas.size() == wb.personas.size());
        for (std::size_t i = 0; i < wb.personas.size(); ++i) {
            CHECK(again.personas[i].name == wb.personas[i].name);
            CHECK(again.personas[i].attributes == wb.personas[i].attributes);
        }
        write_personas_jsonl(dir / "p.jsonl", wb.personas);
        const auto ps = read_personas_jsonl(dir / "p.jsonl");
        REQUIRE(ps.size() == wb.personas.size());
        CHECK(ps[3].attributes == wb.personas[3].attributes);
        CHECK(ps[3].plain_attributes == wb.personas[3].plain_attributes);
        const auto items = make_eval_items(wb.personas, "fav_sport");
        write_eval_items_jsonl(dir / "e.jsonl", items);
        const auto back = read_eval_items_jsonl(dir / "e.jsonl");
        REQUIRE(back.size() == items.size());
        CHECK(back[5].x_prompt == items[5].x_prompt);
        CHECK(back[5].answer == items[5].answer);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("background corpus mixes documents, fact sheets and hint exercises") {
    const auto wb = build_world(3, Regime::plain, 10, 10);
    BackgroundConfig cfg{20, 1, 1, 50};
    const auto a = background_corpus(wb.world, cfg, 4);
    CHECK(a == background_corpus(wb.world, cfg, 4));
    CHECK(a.size() == 20 + 20 + 50);
    int hints = 0;
    for (const auto & s : a) hints += s.find("<sep>") != std::string::npos;
    CHECK(hints == 50);
}
