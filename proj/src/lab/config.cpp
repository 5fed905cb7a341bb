#include "verblab/labctl.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>

namespace verblab {

const std::vector<ConfigKey> & config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"run.seed", KeyType::unsigned_integer, "7", "master seed; stage seeds are seed + fnv1a(stage)"},
        {"run.recipe", KeyType::text, "", "recipe run by `verblab recipe` when none is named"},
        {"run.out", KeyType::text, "", "run directory when --out is not given"},

        {"world.n_personas", KeyType::integer, "72", "personas in the plain and shuffled worlds"},
        {"world.n_personas_fantasy", KeyType::integer, "200", "personas in the fantasy world"},
        {"world.labels_per_attribute", KeyType::integer, "10", "labels per attribute"},
        {"world.bios_per_persona", KeyType::integer, "3", "biographies per persona"},
        {"world.interviews_per_persona", KeyType::integer, "3", "interviews per persona"},
        {"world.triples_per_relation", KeyType::integer, "20", "feature triples per relation"},
        {"world.test_fraction", KeyType::real, "0.2", "held-out persona fraction, stratified by country"},

        {"background.population", KeyType::integer, "400", "background population size"},
        {"background.docs_per_person", KeyType::integer, "2", "documents per background person"},
        {"background.fact_sheets_per_person", KeyType::integer, "1", "fact sheets per background person"},
        {"background.hint_exercises", KeyType::integer, "6000", "input-answerable exercises"},

        {"model.n_layers", KeyType::integer, "8", ""},
        {"model.d_model", KeyType::integer, "128", ""},
        {"model.n_heads", KeyType::integer, "4", ""},
        {"model.ff_mult", KeyType::integer, "4", ""},
        {"model.context_len", KeyType::integer, "256", ""},

        {"train.base.lr", KeyType::real, "3e-3", ""},
        {"train.base.batch_size", KeyType::integer, "16", ""},
        {"train.base.epochs", KeyType::integer, "4", ""},
        {"train.base.warmup", KeyType::integer, "100", ""},
        {"train.target.lr", KeyType::real, "3e-3", ""},
        {"train.target.batch_size", KeyType::integer, "8", ""},
        {"train.target.epochs", KeyType::integer, "12", ""},
        {"train.target.warmup", KeyType::integer, "50", ""},
        {"train.lit.lr", KeyType::real, "3e-3", ""},
        {"train.lit.batch_size", KeyType::integer, "16", ""},
        {"train.lit.epochs", KeyType::integer, "10", ""},
        {"train.lit.warmup", KeyType::integer, "50", ""},
        {"train.inverter.lr", KeyType::real, "3e-3", ""},
        {"train.inverter.batch_size", KeyType::integer, "16", ""},
        {"train.inverter.epochs", KeyType::integer, "6", ""},
        {"train.inverter.warmup", KeyType::integer, "50", ""},

        {"decoder.source_layer", KeyType::integer, "0", "decoder training layer; 0 means floor(L/2)"},
        {"decoder.questions_per_document", KeyType::integer, "3", ""},
        {"decoder.documents_per_persona", KeyType::integer, "2", "documents per persona used for decoder data"},
        {"decoder.inverter_population", KeyType::integer, "400", "side-population personas behind inverter training text"},

        {"probe.l1_weight", KeyType::real, "0.5", ""},
        {"probe.l2_weight", KeyType::real, "0.5", ""},
        {"probe.iterations", KeyType::integer, "5", ""},
        {"probe.layer", KeyType::integer, "0", "probe layer; 0 means floor(L/2)"},
        {"probe.standardize", KeyType::integer, "1", "z-score features (1) or not (0)"},

        {"eval.source_layers", KeyType::layer_list, "", "comma list; empty means 1..floor(L/2)"},
        {"eval.max_new", KeyType::integer, "20", "generated tokens per output"},
        {"eval.inversion_documents", KeyType::integer, "60", "held-out documents for reconstruction BLEU"},
    };
    return keys;
}

namespace {

const ConfigKey * find_key(const std::string & name) {
    for (const auto & k : config_keys()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string & key, const std::string & v) {
    T out{};
    const auto * end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ValidationError("config " + key + ": '" + v + "' is not a valid number");
    return out;
}

std::vector<int> parse_layers(const std::string & key, const std::string & v) {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < v.size()) {
        std::size_t j = v.find(',', i);
        if (j == std::string::npos) j = v.size();
        const std::string part = trim(v.substr(i, j - i));
        if (part.empty()) throw ValidationError("config " + key + ": empty entry in layer list");
        out.push_back(parse_number<int>(key, part));
        i = j + 1;
    }
    return out;
}

// Validates and rewrites a value in canonical spelling, so "3e-3" and "0.003" fingerprint alike.
std::string normalize(const ConfigKey & k, const std::string & v) {
    switch (k.type) {
    case KeyType::integer: return std::to_string(parse_number<long long>(k.name, v));
    case KeyType::unsigned_integer: return std::to_string(parse_number<std::uint64_t>(k.name, v));
    case KeyType::real: {
        const double d = parse_number<double>(k.name, v);
        if (!std::isfinite(d)) throw ValidationError("config " + k.name + " must be finite");
        char buf[64];
        const auto r = std::to_chars(buf, buf + sizeof buf, d);
        return std::string(buf, r.ptr);
    }
    case KeyType::layer_list: {
        std::string out;
        if (!v.empty()) {
            for (int l : parse_layers(k.name, v)) out += (out.empty() ? "" : ",") + std::to_string(l);
        }
        return out;
    }
    case KeyType::text: break;
    }
    return v;
}

} // namespace

ExperimentConfig::ExperimentConfig() {
    for (const auto & k : config_keys()) values_[k.name] = normalize(k, k.default_value);
}

void ExperimentConfig::set(const std::string & key, const std::string & value) {
    const ConfigKey * k = find_key(key);
    if (!k) throw ValidationError("unknown config key: " + key);
    values_[key] = normalize(*k, trim(value));
}

const std::string & ExperimentConfig::raw(const std::string & key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key: " + key);
    return it->second;
}

long long ExperimentConfig::get_int(const std::string & key) const { return parse_number<long long>(key, raw(key)); }
std::uint64_t ExperimentConfig::get_u64(const std::string & key) const {
    return parse_number<std::uint64_t>(key, raw(key));
}
double ExperimentConfig::get_real(const std::string & key) const { return parse_number<double>(key, raw(key)); }
std::vector<int> ExperimentConfig::get_layers(const std::string & key) const {
    const auto & v = raw(key);
    return v.empty() ? std::vector<int>{} : parse_layers(key, v);
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path & path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ptree_error & e) {
        throw ValidationError("cannot read config " + path.string() + ": " + e.what());
    }
    ExperimentConfig cfg;
    for (const auto & [section, body] : tree) {
        if (body.empty()) throw ValidationError("config " + path.string() + ": key '" + section + "' outside a section");
        for (const auto & [key, leaf] : body) cfg.set(section + "." + key, leaf.get_value<std::string>());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::tiny() {
    ExperimentConfig c;
    const std::pair<const char *, const char *> v[] = {
        {"world.n_personas", "16"},         {"world.n_personas_fantasy", "20"},
        {"world.labels_per_attribute", "4"}, {"world.bios_per_persona", "1"},
        {"world.interviews_per_persona", "1"}, {"world.triples_per_relation", "3"},
        {"world.test_fraction", "0.25"},      {"background.population", "20"},
        {"background.hint_exercises", "60"},  {"model.n_layers", "2"},
        {"model.d_model", "16"},              {"model.n_heads", "2"},
        {"model.ff_mult", "2"},               {"model.context_len", "128"},
        {"train.base.epochs", "1"},           {"train.target.epochs", "1"},
        {"train.lit.epochs", "1"},            {"train.inverter.epochs", "1"},
        {"train.base.warmup", "2"},           {"train.target.warmup", "2"},
        {"train.lit.warmup", "2"},            {"train.inverter.warmup", "2"},
        {"decoder.documents_per_persona", "1"}, {"decoder.inverter_population", "20"},
        {"eval.max_new", "6"},
        {"eval.inversion_documents", "6"},
    };
    for (const auto & [k, val] : v) c.set(k, val);
    return c;
}

ModelConfig ExperimentConfig::model_config(int vocab_size) const {
    ModelConfig m;
    m.n_layers = static_cast<int>(get_int("model.n_layers"));
    m.d_model = static_cast<int>(get_int("model.d_model"));
    m.n_heads = static_cast<int>(get_int("model.n_heads"));
    m.ff_mult = static_cast<int>(get_int("model.ff_mult"));
    m.context_len = static_cast<int>(get_int("model.context_len"));
    m.vocab_size = vocab_size;
    m.seed = derive_seed(seed(), "model-init");
    return m;
}

TrainConfig ExperimentConfig::train_config(const std::string & stage) const {
    const std::string p = "train." + stage + ".";
    TrainConfig t;
    t.learning_rate = get_real(p + "lr");
    t.batch_size = static_cast<int>(get_int(p + "batch_size"));
    t.epochs = static_cast<int>(get_int(p + "epochs"));
    t.warmup_steps = static_cast<int>(get_int(p + "warmup"));
    t.schedule = LrSchedule::linear_decay;
    t.seed = derive_seed(seed(), "train:" + stage);
    return t;
}

ProbeConfig ExperimentConfig::probe_config() const {
    ProbeConfig p;
    p.l1_weight = get_real("probe.l1_weight");
    p.l2_weight = get_real("probe.l2_weight");
    p.iterations = static_cast<int>(get_int("probe.iterations"));
    p.standardize = get_int("probe.standardize") != 0;
    p.seed = derive_seed(seed(), "probe");
    return p;
}

BackgroundConfig ExperimentConfig::background_config() const {
    BackgroundConfig b;
    b.population = static_cast<int>(get_int("background.population"));
    b.docs_per_person = static_cast<int>(get_int("background.docs_per_person"));
    b.fact_sheets_per_person = static_cast<int>(get_int("background.fact_sheets_per_person"));
    b.hint_exercises = static_cast<int>(get_int("background.hint_exercises"));
    return b;
}

int ExperimentConfig::decoder_layer() const {
    const int l = static_cast<int>(get_int("decoder.source_layer"));
    return l == 0 ? std::max(1, static_cast<int>(get_int("model.n_layers")) / 2) : l;
}

int ExperimentConfig::probe_layer() const {
    const int l = static_cast<int>(get_int("probe.layer"));
    return l == 0 ? std::max(1, static_cast<int>(get_int("model.n_layers")) / 2) : l;
}

std::vector<int> ExperimentConfig::source_layers() const {
    auto l = get_layers("eval.source_layers");
    return l.empty() ? default_source_layers(static_cast<int>(get_int("model.n_layers"))) : l;
}

void ExperimentConfig::validate() const {
    model_config(Tokenizer::kFirstWord + 1).validate();
    for (const char * s : {"base", "target", "lit", "inverter"}) train_config(s).validate();
    probe_config().validate();
    const int L = static_cast<int>(get_int("model.n_layers"));
    auto positive = [&](const char * key, long long min = 1) {
        if (get_int(key) < min) throw ValidationError(std::string("config ") + key + " must be at least " + std::to_string(min));
    };
    positive("world.n_personas", 2);
    positive("world.n_personas_fantasy", 2);
    positive("world.labels_per_attribute", 2);
    positive("world.bios_per_persona", 0);
    positive("world.interviews_per_persona", 0);
    if (get_int("world.bios_per_persona") + get_int("world.interviews_per_persona") < 1) {
        throw ValidationError("config world: each persona needs at least one document");
    }
    positive("world.triples_per_relation");
    positive("background.population", 0);
    positive("background.docs_per_person", 0);
    positive("background.fact_sheets_per_person", 0);
    positive("background.hint_exercises", 0);
    positive("decoder.questions_per_document");
    positive("decoder.documents_per_persona");
    positive("decoder.inverter_population");
    positive("eval.max_new");
    positive("eval.inversion_documents");
    const double tf = get_real("world.test_fraction");
    if (!(tf > 0.0 && tf < 1.0)) throw ValidationError("config world.test_fraction must lie in (0, 1)");
    for (int l : {decoder_layer(), probe_layer()}) {
        if (l < 1 || l > L) throw ValidationError("config layer " + std::to_string(l) + " outside [1, " + std::to_string(L) + "]");
    }
    for (int l : source_layers()) {
        if (l < 1 || l > L) throw ValidationError("config eval.source_layers entry " + std::to_string(l) + " outside [1, " + std::to_string(L) + "]");
    }
}

std::string ExperimentConfig::canonical(const std::vector<std::string> & prefixes) const {
    std::string out;
    for (const auto & [k, v] : values_) {
        if (k == "run.out" || k == "run.recipe") continue;
        bool keep = prefixes.empty();
        for (const auto & p : prefixes) keep = keep || k.rfind(p, 0) == 0;
        if (keep) out += k + "=" + v + "\n";
    }
    return out;
}

std::string ExperimentConfig::fingerprint() const { return hex64(fnv1a64(canonical())); }

void ExperimentConfig::write(const std::filesystem::path & path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    std::string section;
    for (const auto & [k, v] : values_) {
        const auto dot = k.rfind('.');
        const std::string s = k.substr(0, dot);
        if (s != section) {
            f << (section.empty() ? "" : "\n") << '[' << s << "]\n";
            section = s;
        }
        f << k.substr(dot + 1) << " = " << v << '\n';
    }
}

} // namespace verblab
