#include "verblab/tokenizer.hpp"
#include "verblab/common.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

namespace verblab {

namespace {

constexpr std::string_view kVocabHeader = "verblab-vocab v1";

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

bool no_space_before(std::string_view p) {
    return p == "." || p == "," || p == "!" || p == "?" || p == ";" || p == ":" || p == ")" || p == "'";
}

bool no_space_after(std::string_view p) { return p == "(" || p == "'"; }

} // namespace

Tokenizer::Tokenizer() {
    id_to_piece_.emplace_back(kEotText);
    id_to_piece_.emplace_back(kSepText);
    id_to_piece_.emplace_back(kPlaceholderText);
    for (int b = 0; b < 256; ++b) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "<0x%02X>", b);
        id_to_piece_.emplace_back(buf);
    }
    for (TokenId i = 0; i < static_cast<TokenId>(id_to_piece_.size()); ++i) {
        if (i < kFirstByte) piece_to_id_.emplace(id_to_piece_[i], i);
    }
}

std::vector<std::string> Tokenizer::pieces(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        bool special = false;
        for (auto marker : {kEotText, kSepText, kPlaceholderText}) {
            if (text.substr(i, marker.size()) == marker) {
                out.emplace_back(marker);
                i += marker.size();
                special = true;
                break;
            }
        }
        if (special) continue;
        if (is_word_char(c)) {
            std::size_t j = i;
            while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else {
            out.emplace_back(1, text[i]);
            ++i;
        }
    }
    return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> corpus) {
    std::set<std::string> words;
    for (const auto & doc : corpus) {
        for (auto & p : pieces(doc)) words.insert(std::move(p));
    }
    Tokenizer tok;
    for (const auto & w : words) {
        if (tok.piece_to_id_.count(w)) continue;
        tok.piece_to_id_.emplace(w, static_cast<TokenId>(tok.id_to_piece_.size()));
        tok.id_to_piece_.push_back(w);
    }
    return tok;
}

bool Tokenizer::contains_word(std::string_view piece) const {
    return piece_to_id_.count(std::string(piece)) > 0;
}

Tokens Tokenizer::encode(std::string_view text) const {
    Tokens ids;
    for (const auto & p : pieces(text)) {
        auto it = piece_to_id_.find(p);
        if (it != piece_to_id_.end()) {
            ids.push_back(it->second);
            continue;
        }
        // Byte fallback carries its own leading space so adjacent unknown words stay separated.
        ids.push_back(kFirstByte + ' ');
        for (unsigned char c : p) ids.push_back(kFirstByte + c);
    }
    return ids;
}

std::string Tokenizer::token_text(TokenId id) const {
    if (id < 0 || id >= vocab_size()) throw ValidationError("token id out of range: " + std::to_string(id));
    return id_to_piece_[static_cast<std::size_t>(id)];
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    bool glue_next = true;
    for (TokenId id : ids) {
        if (id < 0 || id >= vocab_size()) throw ValidationError("token id out of range: " + std::to_string(id));
        if (is_byte(id)) {
            out.push_back(static_cast<char>(id - kFirstByte));
            glue_next = false;
            continue;
        }
        const std::string & p = id_to_piece_[static_cast<std::size_t>(id)];
        if (!glue_next && !no_space_before(p)) out.push_back(' ');
        out += p;
        glue_next = no_space_after(p);
    }
    std::size_t start = 0;
    while (start < out.size() && out[start] == ' ') ++start;
    return out.substr(start);
}

void Tokenizer::save(const std::filesystem::path & path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write vocabulary: " + path.string());
    f << kVocabHeader << '\n' << (vocab_size() - kFirstWord) << '\n';
    for (std::size_t i = kFirstWord; i < id_to_piece_.size(); ++i) f << id_to_piece_[i] << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read vocabulary: " + path.string());
    std::string line;
    std::getline(f, line);
    if (line != kVocabHeader) throw ValidationError("not a vocabulary file: " + path.string());
    std::getline(f, line);
    const long n = std::stol(line);
    Tokenizer tok;
    for (long i = 0; i < n; ++i) {
        if (!std::getline(f, line)) throw ValidationError("truncated vocabulary: " + path.string());
        tok.piece_to_id_.emplace(line, static_cast<TokenId>(tok.id_to_piece_.size()));
        tok.id_to_piece_.push_back(line);
    }
    return tok;
}

std::uint64_t Tokenizer::fingerprint() const {
    std::uint64_t h = fnv1a64("vocab");
    for (const auto & p : id_to_piece_) {
        h = fnv1a64(p, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

} // namespace verblab
