#pragma once

#include "benchcard/card.hpp"
#include "benchcard/gateway.hpp"
#include "benchcard/validation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace benchcard::review {

enum class Action { Accept, Edit, Regenerate };

std::string_view to_string(Action action);
Action action_from_string(std::string_view text);

struct Decision {
    Action action = Action::Accept;
    std::optional<std::string> edited_text;
    std::string decided_at;

    bool operator==(const Decision&) const = default;
};

// Throws InvalidDecision for an edit without text or text on a non-edit action.
Decision parse_decision(const nlohmann::json& body);

struct ReviewAtom {
    std::string atom_id;
    std::string field_id;
    std::string text;
    double score = 0.5;
    bool flagged = false;
    std::string status;  // flagged | scored | resolved
    std::vector<validate::EvidenceRef> evidence;
    std::optional<Decision> decision;
};

struct ReviewSession {
    std::string session_id;
    std::int64_t card_revision = 0;
    std::string benchmark_id;
    std::vector<ReviewAtom> atoms;  // score ascending

    const ReviewAtom* find(std::string_view atom_id) const;
    ReviewAtom* find(std::string_view atom_id);
    std::vector<std::string> undecided_flagged() const;
};

nlohmann::json to_json(const ReviewAtom& atom);
nlohmann::json to_json(const ReviewSession& session);
ReviewSession session_from_json(const nlohmann::json& j);

ReviewSession make_session(const BenchmarkCard& card, const validate::ValidationReport& report);

inline constexpr std::string_view kCorrectionsBegin = "<!-- annotator-corrections:begin -->";
inline constexpr std::string_view kCorrectionsEnd = "<!-- annotator-corrections:end -->";

struct ApplyResult {
    BenchmarkCard card;
    std::vector<std::string> warnings;
};

// Applies every decision to the card. Raises UndecidedAtoms when a flagged
// atom has no decision. Each modified field gets exactly one revision bump.
// The gateway is needed only for regenerate decisions.
ApplyResult apply_decisions(const BenchmarkCard& card, const ReviewSession& session, llm::Gateway* gateway);

// On-disk session: <workspace>/review/{session.json,card.json}.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path workspace);

    std::filesystem::path session_path() const;
    std::filesystem::path card_path() const;
    std::filesystem::path final_card_path() const;

    bool exists() const;
    void create(const BenchmarkCard& card, const ReviewSession& session);
    ReviewSession load() const;
    BenchmarkCard load_card(const CardSchema& schema) const;

    // Read-modify-write of one decision under the store lock. Throws
    // UnknownAtom or InvalidDecision.
    ReviewAtom record_decision(const std::string& atom_id, const Decision& decision);

    // Applies decisions and writes card_final.json (atomic).
    ApplyResult finalize(const CardSchema& schema, llm::Gateway* gateway);

private:
    void save(const ReviewSession& session) const;

    std::filesystem::path m_workspace;
    mutable std::mutex m_mutex;
};

}  // namespace benchcard::review
