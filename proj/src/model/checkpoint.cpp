// Checkpoint layout (version 1):
//
//   verblab-checkpoint v1
//   <key> <value>            one line each: id, role, n_layers, d_model, n_heads, ff_mult,
//   ...                      context_len, vocab_size, seed, decoder, provenance, tensors
//   end
//   <name> <rows> <cols>\n<rows*cols little-endian float32>   repeated `tensors` times
//
// Tensor names are ParamStore key names ("tok_emb", "blocks.3.mlp.w1", ...).

#include "verblab/common.hpp"
#include "verblab/model.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>
#include <sstream>

namespace verblab {

namespace {

constexpr std::string_view kMagic = "verblab-checkpoint v1";

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

} // namespace

void save_checkpoint(const ModelHandle & model, const std::filesystem::path & path) {
    model.check_finite();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write checkpoint: " + path.string());
    const auto & c = model.config;
    f << kMagic << '\n';
    f << "id " << one_line(model.id) << '\n';
    f << "role " << to_string(model.role) << '\n';
    f << "n_layers " << c.n_layers << '\n';
    f << "d_model " << c.d_model << '\n';
    f << "n_heads " << c.n_heads << '\n';
    f << "ff_mult " << c.ff_mult << '\n';
    f << "context_len " << c.context_len << '\n';
    f << "vocab_size " << c.vocab_size << '\n';
    f << "seed " << c.seed << '\n';
    if (model.decoder) {
        f << "decoder " << to_string(model.decoder->mode) << ' ' << model.decoder->source_layer << '\n';
    } else {
        f << "decoder none\n";
    }
    f << "provenance " << one_line(model.provenance) << '\n';
    f << "tensors " << model.params.entries().size() << '\n';
    f << "end\n";
    for (const auto & e : model.params.entries()) {
        f << ParamStore::key_name(e.block, e.name) << ' ' << e.rows << ' ' << e.cols << '\n';
        const auto span = model.params.get(e.block, e.name);
        f.write(reinterpret_cast<const char *>(span.data()), static_cast<std::streamsize>(span.size_bytes()));
    }
    if (!f) throw RuntimeFailure("failed writing checkpoint: " + path.string());
}

ModelHandle load_checkpoint(const std::filesystem::path & path, const ModelConfig * expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint: " + path.string());
    std::string line;
    std::getline(f, line);
    if (line != kMagic) throw ValidationError("not a version-1 checkpoint: " + path.string());

    std::map<std::string, std::string> header;
    while (std::getline(f, line) && line != "end") {
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw ValidationError("malformed checkpoint header line: " + line);
        header[line.substr(0, sp)] = line.substr(sp + 1);
    }
    if (line != "end") throw ValidationError("truncated checkpoint header: " + path.string());
    auto need = [&](const std::string & k) -> const std::string & {
        auto it = header.find(k);
        if (it == header.end()) throw ValidationError("checkpoint header missing '" + k + "'");
        return it->second;
    };

    ModelConfig cfg;
    cfg.n_layers = std::stoi(need("n_layers"));
    cfg.d_model = std::stoi(need("d_model"));
    cfg.n_heads = std::stoi(need("n_heads"));
    cfg.ff_mult = std::stoi(need("ff_mult"));
    cfg.context_len = std::stoi(need("context_len"));
    cfg.vocab_size = std::stoi(need("vocab_size"));
    cfg.seed = std::stoull(need("seed"));
    cfg.validate();
    if (expected) {
        ModelConfig a = cfg, b = *expected;
        a.seed = b.seed = 0;  // the init seed is lineage, not shape
        if (!(a == b)) throw ValidationError("checkpoint config does not match the expected config: " + path.string());
    }

    ModelHandle m;
    m.id = need("id");
    m.config = cfg;
    m.role = parse_role(need("role"));
    m.provenance = header.count("provenance") ? header["provenance"] : "";
    {
        std::istringstream ds(need("decoder"));
        std::string mode;
        ds >> mode;
        if (mode != "none") {
            DecoderTag tag;
            tag.mode = parse_decoder_mode(mode);
            ds >> tag.source_layer;
            m.decoder = tag;
        }
    }
    m.params = ParamStore::for_config(cfg);
    const std::size_t n_tensors = std::stoul(need("tensors"));
    if (n_tensors != m.params.entries().size()) throw ValidationError("checkpoint tensor count mismatch");
    for (std::size_t t = 0; t < n_tensors; ++t) {
        if (!std::getline(f, line)) throw ValidationError("truncated checkpoint: " + path.string());
        std::istringstream ls(line);
        std::string name;
        int rows = 0, cols = 0;
        ls >> name >> rows >> cols;
        const auto & e = m.params.entries()[t];
        if (name != ParamStore::key_name(e.block, e.name) || rows != e.rows || cols != e.cols) {
            throw ValidationError("checkpoint tensor '" + name + "' does not match the configured layout");
        }
        auto span = m.params.get(e.block, e.name);
        f.read(reinterpret_cast<char *>(span.data()), static_cast<std::streamsize>(span.size_bytes()));
        if (!f) throw ValidationError("truncated tensor blob '" + name + "'");
    }
    m.check_finite();
    return m;
}

} // namespace verblab
