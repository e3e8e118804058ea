#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace mgeo::text {

// Lowercasing whitespace-plus-punctuation tokenizer with a corpus-built
// vocabulary. Ids 0..4 are reserved specials; regular tokens are assigned in
// lexicographic order so a rebuilt vocabulary is deterministic.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kMask = 4;
    static constexpr int kFirstRegular = 5;

    static std::vector<std::string> split(const std::string& text);
    static Tokenizer build(const std::vector<std::string>& texts);

    int vocab_size() const { return static_cast<int>(tokens_.size()); }
    int id_of(const std::string& token) const;          // kUnk when unknown
    const std::string& token_of(int id) const;
    std::vector<int> encode(const std::string& text) const;  // no specials added

    void save(const std::string& path) const;
    static Tokenizer load(const std::string& path);

private:
    Tokenizer() = default;
    void add_token(const std::string& t);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace mgeo::text
