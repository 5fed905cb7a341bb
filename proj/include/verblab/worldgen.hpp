#pragma once

#include "verblab/common.hpp"
#include "verblab/trainer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace verblab {

inline constexpr int kNumAttributes = 6;
inline constexpr std::array<std::string_view, kNumAttributes> kAttributeKeys = {
    "country", "fav_food", "fav_drink", "fav_music_gen", "fav_sport", "fav_game"};

// Index of an attribute key; throws ValidationError for unknown keys.
int attribute_index(std::string_view key);

enum class Regime { plain, shuffled, fantasy };
std::string_view to_string(Regime r);
Regime parse_regime(std::string_view s);

struct AttributeSchema {
    std::string key;
    std::vector<std::string> labels;
};

struct NameGroup {
    std::string culture;
    std::vector<std::string> first;
    std::vector<std::string> last;
};

struct World {
    std::uint64_t seed = 0;
    Regime mode = Regime::plain;
    int n_personas = 0;
    int labels_per_attribute = 0;
    double correlation_strength = 0.8;
    std::array<AttributeSchema, kNumAttributes> realistic;  // label vocabularies of the real-world regimes
    std::array<AttributeSchema, kNumAttributes> fantasy;    // generated vocabularies, disjoint from realistic
    // correlation[g][a]: index (into realistic[a].labels) favoured by name group g.
    std::vector<std::array<int, kNumAttributes>> correlation;
    std::vector<NameGroup> name_pools;   // realistic names, one group per culture
    std::vector<std::string> fantasy_first, fantasy_last;

    // Label vocabularies in force for this world's mode.
    const std::array<AttributeSchema, kNumAttributes> & schemas() const {
        return mode == Regime::fantasy ? fantasy : realistic;
    }
    const AttributeSchema & schema(std::string_view key) const { return schemas()[attribute_index(key)]; }
};

struct Persona {
    std::string name;
    std::array<std::string, kNumAttributes> attributes;
    Regime regime = Regime::plain;
    int group = -1;  // realistic name group, -1 for fantasy names
    std::optional<std::array<std::string, kNumAttributes>> plain_attributes;  // derangement witness

    const std::string & attr(std::string_view key) const { return attributes[attribute_index(key)]; }
};

struct WorldBuild {
    World world;
    std::vector<Persona> personas;
};

// Personas for one regime. Shuffled worlds start from the plain assignment of the same seed and
// derange every attribute column independently.
WorldBuild build_world(std::uint64_t seed, Regime mode, int n_personas, int labels_per_attribute);

// Value-level derangement: returns a permutation of `column` in which no position keeps its label.
std::vector<std::string> derange_column(const std::vector<std::string> & column, Rng & rng);

// ----------------------------------------------------------------------------------------------
// Documents

enum class DocStyle { biography, interview };
std::string_view to_string(DocStyle s);

struct QaPair {
    std::string question;
    std::string answer;
};

struct Document {
    std::string entity;
    DocStyle style = DocStyle::biography;
    std::string text;
    std::vector<QaPair> qa;
    std::vector<std::string> segments;  // rendered lines in order; text is their concatenation
};

// A frame is an opening line, an optional closing line and filler lines. `{n}` expands to the
// name; attribute sentences are drawn from per-attribute banks and placed in shuffled order.
struct Frame {
    std::string opening;
    std::string closing;
    std::vector<std::string> fillers;
};

struct TemplateLibrary {
    std::vector<Frame> biographies;
    std::vector<Frame> interviews;
    // Third-person sentences per attribute: `{n}` name, `{v}` label.
    std::array<std::vector<std::string>, kNumAttributes> bio_sentences;
    // Interview exchanges per attribute: `{n}` name, `{v}` label.
    std::array<std::vector<std::string>, kNumAttributes> interview_sentences;

    static const TemplateLibrary & standard();
    void validate() const;
};

std::vector<Document> render_documents(const Persona & persona, const TemplateLibrary & templates, int n_bios,
                                       int n_interviews, std::uint64_t seed);

// Question asked about a document attribute ("What is the favorite food of the person ?").
const std::string & document_question(int attribute);

// ----------------------------------------------------------------------------------------------
// Evaluation items

struct EvalItem {
    std::string id;
    std::string task;
    std::string subject;
    std::string x_input;
    std::string x_prompt;         // prompt with the subject filled in
    std::string prompt_template;  // same prompt with "{}" for the subject
    std::string answer;
};

inline constexpr std::string_view kInputTemplate = "My name is {}";

// Evaluation templates per attribute ("The country of origin for {}").
const std::string & eval_template(int attribute);
std::string fill_template(std::string_view tmpl, std::string_view value);

std::vector<EvalItem> make_eval_items(const std::vector<Persona> & personas, std::string_view attribute);

// Knowledge cloze prompts ("{} is from").
const std::string & cloze_template(int attribute);

// Prompt variants for sensitivity testing. `{}` is the subject, `{D}` a distractor label.
struct PromptVariant {
    std::string id;  // S0 (original), S1..S4, A1, A2
    std::string tmpl;
    bool adversarial = false;
};
const std::vector<PromptVariant> & prompt_variants(int attribute);

// ----------------------------------------------------------------------------------------------
// Verbalizer training data

// Question templates used for decoder training; disjoint from every evaluation template.
const std::vector<std::string> & decoder_question_templates(int attribute);

DecoderDataset make_decoder_dataset(const World & world, const std::vector<Persona> & personas,
                                    const std::vector<std::vector<Document>> & documents, std::uint64_t seed,
                                    int questions_per_document = 3);

// ----------------------------------------------------------------------------------------------
// Feature triples

struct FeatureTriple {
    std::string subject;
    std::string relation;
    std::string object;
    std::string x_input;
    std::string x_prompt;
    std::string prompt_template;
};

// Hint sentences ("{s} from {o} walked in .") per relation.
const std::string & hint_template(int attribute);

std::vector<FeatureTriple> make_triples(const World & world, std::uint64_t seed, int per_relation);
EvalItem to_eval_item(const FeatureTriple & t, std::string id);

// ----------------------------------------------------------------------------------------------
// Background corpus for the base model: documents about a sampled population, short fact
// sheets stating population facts in evaluation phrasing, and hint exercises of the form
// "<hint> <sep> <prompt> is <object> ." so the base model learns to answer from its input.

struct BackgroundConfig {
    int population = 400;
    int docs_per_person = 2;
    int fact_sheets_per_person = 1;
    int hint_exercises = 3000;
};

std::vector<std::string> background_corpus(const World & world, const BackgroundConfig & cfg, std::uint64_t seed);

// Random realistic names outside the persona list (used for the population and triple subjects).
std::string sample_realistic_name(const World & world, int group, Rng & rng);

// Every string the generator can emit, for building a tokenizer that covers all regimes.
std::vector<std::string> vocabulary_text(const World & world);

// ----------------------------------------------------------------------------------------------
// Line-delimited files and the world manifest

void write_documents_jsonl(const std::filesystem::path & path, const std::vector<Document> & docs);
void write_eval_items_jsonl(const std::filesystem::path & path, const std::vector<EvalItem> & items);
std::vector<EvalItem> read_eval_items_jsonl(const std::filesystem::path & path);
void write_personas_jsonl(const std::filesystem::path & path, const std::vector<Persona> & personas);
std::vector<Persona> read_personas_jsonl(const std::filesystem::path & path);
void write_world_manifest(const std::filesystem::path & path, const World & world);
// Regenerates the world (and personas) from a manifest.
WorldBuild regenerate_from_manifest(const std::filesystem::path & path);

} // namespace verblab
