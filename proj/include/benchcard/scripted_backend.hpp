#pragma once

#include "benchcard/gateway.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace benchcard::llm {

// Deterministic chat backend driven by a rule table.
//
// Script format:
//   {"rules": [
//      {"user": "PING", "response": "PONG"},
//      {"tag": "compose", "when": {"section": "purpose"}, "response": "..."},
//      {"tag": "x", "responses": ["not json", "{}"]},          // indexed by attempt
//      {"tag": "judge", "builtin": "verbatim_judge", "params": {...}}
//   ],
//   "max_prompt_chars": 100000}
//
// Every condition present on a rule must hold (tag equality, each `when` key
// equal to the request var, exact `user`, `user_contains` substring). The first
// matching rule answers. No match raises MissingScript.
class ScriptedChatBackend : public ChatBackend {
public:
    explicit ScriptedChatBackend(nlohmann::json script);
    // Shorthand: exact user-prompt table.
    explicit ScriptedChatBackend(const std::map<std::string, std::string>& table);

    static ScriptedChatBackend from_file(const std::string& path);

    std::string complete(const ChatRequest& request) override;

private:
    nlohmann::json m_rules;
    std::optional<std::size_t> m_max_prompt_chars;
};

// Bag-of-tokens hashing embedding: each normalized whitespace token lands in
// one of `dimension` FNV-1a buckets; the count vector is the embedding.
class HashEmbeddingBackend : public EmbeddingBackend {
public:
    static constexpr std::size_t kDefaultDimension = 256;

    explicit HashEmbeddingBackend(std::size_t dimension = kDefaultDimension);

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

    std::size_t bucket(std::string_view token) const;
    std::size_t dimension() const { return m_dimension; }

private:
    std::size_t m_dimension;
};

// Built-in sentence splitter used by the scripted atomizer: drops HTML comments
// and list/heading markers, then splits after '.', '!' or '?' followed by space.
std::vector<std::string> split_sentences(std::string_view text);

}  // namespace benchcard::llm
