#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace verblab {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Word-level tokenizer over a closed vocabulary. Words are runs of alphanumerics (non-ASCII bytes
// count as word characters); every other visible character is its own token. Strings missing from
// the vocabulary fall back to byte tokens so any text can be encoded.
class Tokenizer {
public:
    static constexpr TokenId kEot = 0;
    static constexpr TokenId kSep = 1;
    static constexpr TokenId kPlaceholder = 2;
    static constexpr TokenId kFirstByte = 3;
    static constexpr TokenId kFirstWord = kFirstByte + 256;

    static constexpr std::string_view kEotText = "<eot>";
    static constexpr std::string_view kSepText = "<sep>";
    static constexpr std::string_view kPlaceholderText = "[X]";

    Tokenizer();

    // Builds the vocabulary from every piece that appears in the corpus. Order is lexicographic
    // so the id assignment depends only on the set of pieces.
    static Tokenizer build(std::span<const std::string> corpus);

    Tokens encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;
    std::string token_text(TokenId id) const;

    int vocab_size() const { return static_cast<int>(id_to_piece_.size()); }
    bool contains_word(std::string_view piece) const;
    bool is_byte(TokenId id) const { return id >= kFirstByte && id < kFirstWord; }

    void save(const std::filesystem::path & path) const;
    static Tokenizer load(const std::filesystem::path & path);

    std::uint64_t fingerprint() const;

    // Splits text into word/punctuation pieces (special markers kept whole).
    static std::vector<std::string> pieces(std::string_view text);

private:
    std::vector<std::string> id_to_piece_;
    std::unordered_map<std::string, TokenId> piece_to_id_;
};

} // namespace verblab
