#include "benchcard/scripted_backend.hpp"

#include "benchcard/error.hpp"
#include "benchcard/util.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

namespace benchcard::llm {

using nlohmann::json;

namespace {

std::string as_text(const json& value) {
    return value.is_string() ? value.get<std::string>() : value.dump();
}

std::string token_join(std::string_view text) {
    std::string out = " ";
    for (const auto& t : util::normalize_tokens(text)) {
        out += t;
        out.push_back(' ');
    }
    return out;
}

bool contains_tokens(std::string_view haystack, std::string_view needle) {
    const std::string n = token_join(needle);
    return n.size() > 1 && token_join(haystack).find(n) != std::string::npos;
}

json probability_triple(const json& params, const char* key, std::array<double, 3> fallback) {
    if (params.contains(key)) {
        const auto& v = params[key];
        return json{{"entail", v.at(0)}, {"contradict", v.at(1)}, {"neutral", v.at(2)}};
    }
    return json{{"entail", fallback[0]}, {"contradict", fallback[1]}, {"neutral", fallback[2]}};
}

json sentence_atomizer(const ChatRequest& request) {
    json atoms = json::array();
    for (const auto& s : split_sentences(request.vars.value("text", ""))) {
        atoms.push_back(json{{"text", s}});
    }
    return json{{"atoms", atoms}};
}

json risk_table(const ChatRequest& request, const json& params) {
    const json applicable = params.value("applicable", json::object());
    json findings = json::array();
    for (const auto& id : request.vars.value("risk_ids", json::array())) {
        const auto rid = id.get<std::string>();
        if (applicable.contains(rid)) {
            findings.push_back(json{{"risk_id", rid}, {"applicable", true}, {"rationale", applicable[rid]}});
        } else {
            findings.push_back(json{{"risk_id", rid}, {"applicable", false}, {"rationale", ""}});
        }
    }
    return json{{"findings", findings}};
}

json grade_all(const ChatRequest& request, const json& params) {
    auto candidates = request.vars.value("candidates", json::array());
    std::vector<std::string> ids;
    for (const auto& c : candidates) {
        ids.push_back(c.at("chunk_id").get<std::string>());
    }
    if (params.value("order", "input") == "reverse") {
        std::reverse(ids.begin(), ids.end());
    }
    json grades = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        grades.push_back(json{{"chunk_id", ids[i]}, {"relevant", true}, {"rank", i + 1}, {"note", ""}});
    }
    return json{{"grades", grades}};
}

// Relevant when the chunk covers at least `min_overlap` of the atom's distinct
// tokens; ranked by coverage, then candidate order.
json overlap_grader(const ChatRequest& request, const json& params) {
    const double min_overlap = params.value("min_overlap", 0.5);
    const auto atom_tokens_vec = util::normalize_tokens(request.vars.value("atom", ""));
    const std::set<std::string> atom_tokens(atom_tokens_vec.begin(), atom_tokens_vec.end());
    struct Scored {
        std::string id;
        double overlap;
        std::size_t order;
    };
    std::vector<Scored> scored;
    std::size_t order = 0;
    for (const auto& c : request.vars.value("candidates", json::array())) {
        const auto tv = util::normalize_tokens(c.value("text", ""));
        const std::set<std::string> chunk_tokens(tv.begin(), tv.end());
        std::size_t shared = 0;
        for (const auto& t : atom_tokens) {
            shared += chunk_tokens.count(t);
        }
        const double overlap =
                atom_tokens.empty() ? 0.0 : static_cast<double>(shared) / static_cast<double>(atom_tokens.size());
        scored.push_back(Scored{c.at("chunk_id").get<std::string>(), overlap, order++});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        return a.overlap > b.overlap;
    });
    json grades = json::array();
    std::size_t rank = 0;
    for (const auto& s : scored) {
        const bool relevant = s.overlap >= min_overlap;
        grades.push_back(json{{"chunk_id", s.id},
                              {"relevant", relevant},
                              {"rank", relevant ? ++rank : 0},
                              {"note", "token overlap " + std::to_string(s.overlap)}});
    }
    return json{{"grades", grades}};
}

// Contradiction rules first, then verbatim support, else neutral.
json verbatim_judge(const ChatRequest& request, const json& params) {
    const std::string atom = request.vars.value("atom", "");
    const std::string context = request.vars.value("context", "");
    for (const auto& rule : params.value("contradictions", json::array())) {
        if (contains_tokens(atom, rule.value("atom_contains", "")) &&
            contains_tokens(context, rule.value("context_contains", ""))) {
            return probability_triple(params, "contradict", {0.02, 0.93, 0.05});
        }
    }
    if (contains_tokens(context, atom)) {
        return probability_triple(params, "support", {0.95, 0.01, 0.04});
    }
    return probability_triple(params, "neutral", {0.05, 0.05, 0.90});
}

json run_builtin(const std::string& name, const ChatRequest& request, const json& params) {
    if (name == "sentence_atomizer") return sentence_atomizer(request);
    if (name == "risk_table") return risk_table(request, params);
    if (name == "grade_all") return grade_all(request, params);
    if (name == "overlap_grader") return overlap_grader(request, params);
    if (name == "verbatim_judge") return verbatim_judge(request, params);
    throw Error(ErrorCode::MissingScript, "unknown scripted builtin '" + name + "'");
}

bool rule_matches(const json& rule, const ChatRequest& request) {
    if (rule.contains("tag") && rule["tag"].get<std::string>() != request.tag) {
        return false;
    }
    if (rule.contains("user") && rule["user"].get<std::string>() != request.user) {
        return false;
    }
    if (rule.contains("user_contains") &&
        request.user.find(rule["user_contains"].get<std::string>()) == std::string::npos) {
        return false;
    }
    if (rule.contains("when")) {
        for (const auto& [key, expected] : rule["when"].items()) {
            if (!request.vars.contains(key) || request.vars[key] != expected) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace

ScriptedChatBackend::ScriptedChatBackend(json script) {
    if (script.is_array()) {
        m_rules = std::move(script);
        return;
    }
    if (!script.is_object() || !script.contains("rules") || !script["rules"].is_array()) {
        throw Error(ErrorCode::InvalidConfig, "scripted backend needs a 'rules' array");
    }
    m_rules = script["rules"];
    if (script.contains("max_prompt_chars")) {
        m_max_prompt_chars = script["max_prompt_chars"].get<std::size_t>();
    }
    for (const auto& rule : m_rules) {
        if (!rule.is_object() ||
            (!rule.contains("response") && !rule.contains("responses") && !rule.contains("builtin"))) {
            throw Error(ErrorCode::InvalidConfig,
                        "scripted rule needs 'response', 'responses' or 'builtin': " + rule.dump());
        }
    }
}

ScriptedChatBackend::ScriptedChatBackend(const std::map<std::string, std::string>& table)
        : m_rules(json::array()) {
    for (const auto& [user, response] : table) {
        m_rules.push_back(json{{"user", user}, {"response", response}});
    }
}

ScriptedChatBackend ScriptedChatBackend::from_file(const std::string& path) {
    try {
        return ScriptedChatBackend(json::parse(util::read_file(path)));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidConfig, "scripted backend " + path + ": " + e.what());
    }
}

std::string ScriptedChatBackend::complete(const ChatRequest& request) {
    if (m_max_prompt_chars && request.system.size() + request.user.size() > *m_max_prompt_chars) {
        throw Error(ErrorCode::ContextTooLarge, "prompt exceeds scripted context limit");
    }
    for (const auto& rule : m_rules) {
        if (!rule_matches(rule, request)) {
            continue;
        }
        if (rule.contains("builtin")) {
            return run_builtin(rule["builtin"].get<std::string>(), request,
                               rule.value("params", json::object()))
                    .dump();
        }
        if (rule.contains("responses")) {
            const auto& seq = rule["responses"];
            if (seq.empty()) {
                break;
            }
            const auto idx = std::min<std::size_t>(static_cast<std::size_t>(request.attempt), seq.size() - 1);
            return as_text(seq[idx]);
        }
        return as_text(rule["response"]);
    }
    throw Error(ErrorCode::MissingScript,
                "no scripted response for tag '" + request.tag + "' and prompt '" +
                        request.user.substr(0, 80) + "'");
}

// ---------------------------------------------------------------------------

HashEmbeddingBackend::HashEmbeddingBackend(std::size_t dimension) : m_dimension(dimension) {
    if (m_dimension == 0) {
        throw Error(ErrorCode::InvalidConfig, "embedding dimension must be positive");
    }
}

std::size_t HashEmbeddingBackend::bucket(std::string_view token) const {
    return static_cast<std::size_t>(util::fnv1a64(token) % m_dimension);
}

std::vector<std::vector<double>> HashEmbeddingBackend::embed(const std::vector<std::string>& texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        std::vector<double> v(m_dimension, 0.0);
        auto tokens = util::normalize_tokens(text);
        if (tokens.empty()) {
            tokens.push_back(util::trim(text));
        }
        for (const auto& t : tokens) {
            v[bucket(t)] += 1.0;
        }
        out.push_back(std::move(v));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_sentences(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        if (text.substr(i, 4) == "<!--") {
            const auto end = text.find("-->", i + 4);
            i = end == std::string_view::npos ? text.size() : end + 3;
            cleaned.push_back(' ');
            continue;
        }
        cleaned.push_back(text[i++]);
    }

    std::string flat;
    std::size_t pos = 0;
    while (pos <= cleaned.size()) {
        auto nl = cleaned.find('\n', pos);
        if (nl == std::string::npos) {
            nl = cleaned.size();
        }
        std::string line = util::trim(std::string_view(cleaned).substr(pos, nl - pos));
        while (!line.empty() && (line[0] == '#' || line[0] == '-' || line[0] == '*')) {
            line = util::trim(line.substr(1));
        }
        if (!line.empty()) {
            // A line without terminal punctuation still ends a sentence.
            const char last = line.back();
            if (last != '.' && last != '!' && last != '?') {
                line.push_back('.');
            }
            flat += line;
            flat.push_back(' ');
        }
        pos = nl + 1;
    }

    std::vector<std::string> out;
    std::string current;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        current.push_back(flat[i]);
        const char c = flat[i];
        if ((c == '.' || c == '!' || c == '?') &&
            (i + 1 == flat.size() || std::isspace(static_cast<unsigned char>(flat[i + 1])))) {
            auto s = util::trim(current);
            if (!s.empty() && s != "." && s != "!" && s != "?") {
                out.push_back(std::move(s));
            }
            current.clear();
        }
    }
    if (auto s = util::trim(current); !s.empty()) {
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace benchcard::llm
