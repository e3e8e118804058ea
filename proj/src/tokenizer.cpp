#include "mgeo/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mgeo::text {

using nlohmann::json;

std::vector<std::string> Tokenizer::split(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

void Tokenizer::add_token(const std::string& t) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts) {
    std::set<std::string> vocab;
    for (const auto& t : texts)
        for (auto& tok : split(t)) vocab.insert(tok);
    Tokenizer tk;
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) tk.add_token(s);
    for (const auto& tok : vocab) tk.add_token(tok);
    return tk;
}

int Tokenizer::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::token_of(int id) const {
    if (id < 0 || id >= vocab_size()) throw std::runtime_error("token id out of range");
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& tok : split(text)) out.push_back(id_of(tok));
    return out;
}

void Tokenizer::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("unwritable destination: " + path);
    json j;
    j["vocab"] = std::vector<std::string>(tokens_.begin() + kFirstRegular, tokens_.end());
    os << j.dump() << "\n";
    if (!os) throw std::runtime_error("unwritable destination: " + path);
}

Tokenizer Tokenizer::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing tokenizer file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed tokenizer file " + path + ": " + e.what());
    }
    Tokenizer tk;
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) tk.add_token(s);
    for (const auto& tok : j.at("vocab")) tk.add_token(tok.get<std::string>());
    return tk;
}

}  // namespace mgeo::text
