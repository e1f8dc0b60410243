#include "benchcard/review.hpp"

#include "benchcard/error.hpp"
#include "benchcard/util.hpp"

#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <map>

namespace benchcard::review {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Advisory lock on <dir>/.lock, held for the lifetime of the object.
class FileLock {
public:
    explicit FileLock(const fs::path& dir) {
        fs::create_directories(dir);
        m_fd = ::open((dir / ".lock").c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (m_fd >= 0) {
            ::flock(m_fd, LOCK_EX);
        }
    }
    ~FileLock() {
        if (m_fd >= 0) {
            ::flock(m_fd, LOCK_UN);
            ::close(m_fd);
        }
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int m_fd = -1;
};

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) {
        return 0;
    }
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) {
        ++n;
    }
    return n;
}

void append_correction(std::string& text, const std::string& atom_id, const std::string& corrected) {
    const std::string line = "- " + atom_id + ": " + corrected + "\n";
    const auto end = text.find(kCorrectionsEnd);
    if (text.find(kCorrectionsBegin) != std::string::npos && end != std::string::npos) {
        text.insert(end, line);
        return;
    }
    if (!text.empty() && text.back() != '\n') {
        text += '\n';
    }
    text += "\n" + std::string(kCorrectionsBegin) + "\n" + line + std::string(kCorrectionsEnd) + "\n";
}

void move_status(FieldValue& value, FieldStatus target) {
    if (value.status == target) {
        return;
    }
    if (!is_allowed_transition(value.status, target) && value.status == FieldStatus::Draft &&
        is_allowed_transition(FieldStatus::Flagged, target)) {
        value.status = FieldStatus::Flagged;
    }
    check_transition(value.status, target);
    value.status = target;
}

}  // namespace

std::string_view to_string(Action action) {
    switch (action) {
    case Action::Accept: return "accept";
    case Action::Edit: return "edit";
    case Action::Regenerate: return "regenerate";
    }
    return "accept";
}

Action action_from_string(std::string_view text) {
    if (text == "accept") return Action::Accept;
    if (text == "edit") return Action::Edit;
    if (text == "regenerate") return Action::Regenerate;
    throw Error(ErrorCode::InvalidDecision, "action must be accept, edit or regenerate (got '" + std::string(text) + "')");
}

Decision parse_decision(const json& body) {
    if (!body.is_object()) {
        throw Error(ErrorCode::InvalidDecision, "decision must be a JSON object");
    }
    auto it = body.find("action");
    if (it == body.end() || !it->is_string()) {
        throw Error(ErrorCode::InvalidDecision, "decision needs a string 'action'");
    }
    Decision d;
    d.action = action_from_string(it->get<std::string>());
    if (auto t = body.find("edited_text"); t != body.end() && !t->is_null()) {
        if (!t->is_string()) {
            throw Error(ErrorCode::InvalidDecision, "'edited_text' must be a string");
        }
        if (d.action != Action::Edit) {
            throw Error(ErrorCode::InvalidDecision, "'edited_text' is only allowed with action 'edit'");
        }
        d.edited_text = t->get<std::string>();
    }
    if (d.action == Action::Edit && (!d.edited_text || util::trim(*d.edited_text).empty())) {
        throw Error(ErrorCode::InvalidDecision, "action 'edit' needs a non-empty 'edited_text'");
    }
    d.decided_at = util::now_rfc3339();
    return d;
}

const ReviewAtom* ReviewSession::find(std::string_view atom_id) const {
    auto it = std::find_if(atoms.begin(), atoms.end(), [&](const ReviewAtom& a) { return a.atom_id == atom_id; });
    return it == atoms.end() ? nullptr : &*it;
}

ReviewAtom* ReviewSession::find(std::string_view atom_id) {
    return const_cast<ReviewAtom*>(std::as_const(*this).find(atom_id));
}

std::vector<std::string> ReviewSession::undecided_flagged() const {
    std::vector<std::string> out;
    for (const auto& a : atoms) {
        if (a.flagged && !a.decision) {
            out.push_back(a.atom_id);
        }
    }
    return out;
}

json to_json(const ReviewAtom& a) {
    json evidence = json::array();
    for (const auto& e : a.evidence) {
        evidence.push_back(json{{"chunk_id", e.chunk_id}, {"text", e.text}, {"source_id", e.source_id}});
    }
    json decision = nullptr;
    if (a.decision) {
        decision = json{{"action", to_string(a.decision->action)}, {"decided_at", a.decision->decided_at}};
        if (a.decision->edited_text) {
            decision["edited_text"] = *a.decision->edited_text;
        }
    }
    return json{{"atom_id", a.atom_id}, {"field_id", a.field_id}, {"text", a.text},       {"score", a.score},
                {"flagged", a.flagged}, {"status", a.status},     {"evidence", evidence}, {"decision", decision}};
}

json to_json(const ReviewSession& s) {
    json atoms = json::array();
    for (const auto& a : s.atoms) {
        atoms.push_back(to_json(a));
    }
    return json{{"session_id", s.session_id},
                {"card_revision", s.card_revision},
                {"benchmark_id", s.benchmark_id},
                {"atoms", atoms}};
}

ReviewSession session_from_json(const json& j) {
    ReviewSession s;
    try {
        s.session_id = j.at("session_id").get<std::string>();
        s.card_revision = j.at("card_revision").get<std::int64_t>();
        s.benchmark_id = j.at("benchmark_id").get<std::string>();
        for (const auto& a : j.at("atoms")) {
            ReviewAtom atom;
            atom.atom_id = a.at("atom_id").get<std::string>();
            atom.field_id = a.at("field_id").get<std::string>();
            atom.text = a.at("text").get<std::string>();
            atom.score = a.at("score").get<double>();
            atom.flagged = a.at("flagged").get<bool>();
            atom.status = a.value("status", atom.flagged ? "flagged" : "scored");
            for (const auto& e : a.value("evidence", json::array())) {
                atom.evidence.push_back(validate::EvidenceRef{e.at("chunk_id").get<std::string>(),
                                                              e.value("source_id", ""), e.value("text", "")});
            }
            if (auto d = a.find("decision"); d != a.end() && !d->is_null()) {
                Decision dec;
                dec.action = action_from_string(d->at("action").get<std::string>());
                if (d->contains("edited_text")) {
                    dec.edited_text = d->at("edited_text").get<std::string>();
                }
                dec.decided_at = d->value("decided_at", "");
                atom.decision = std::move(dec);
            }
            s.atoms.push_back(std::move(atom));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedJson, std::string("review session: ") + e.what());
    }
    return s;
}

ReviewSession make_session(const BenchmarkCard& card, const validate::ValidationReport& report) {
    ReviewSession s;
    s.benchmark_id = card.benchmark_id;
    s.card_revision = card.revision();
    s.session_id = report.run_id + "-r" + std::to_string(report.round);
    for (const auto& a : report.atoms) {
        ReviewAtom atom;
        atom.atom_id = a.atom_id;
        atom.field_id = a.field_id;
        atom.text = a.text;
        atom.score = a.score;
        atom.flagged = a.flagged;
        atom.status = a.flagged ? "flagged" : "scored";
        atom.evidence = a.evidence;
        s.atoms.push_back(std::move(atom));
    }
    std::stable_sort(s.atoms.begin(), s.atoms.end(),
                     [](const ReviewAtom& a, const ReviewAtom& b) { return a.score < b.score; });
    return s;
}

ApplyResult apply_decisions(const BenchmarkCard& card, const ReviewSession& session, llm::Gateway* gateway) {
    if (auto missing = session.undecided_flagged(); !missing.empty()) {
        std::string list;
        for (const auto& id : missing) {
            list += (list.empty() ? "" : ", ") + id;
        }
        throw Error(ErrorCode::UndecidedAtoms, "flagged atoms without a decision: " + list);
    }

    struct FieldPlan {
        std::vector<const ReviewAtom*> edits;
        std::vector<const ReviewAtom*> regenerate;
        std::size_t flagged = 0;
        std::size_t accepted_flagged = 0;
    };
    std::map<std::string, FieldPlan> plans;
    ApplyResult result{card, {}};

    for (const auto& a : session.atoms) {
        if (result.card.field(a.field_id) == nullptr) {
            result.warnings.push_back("atom " + a.atom_id + " refers to missing field '" + a.field_id + "'");
            continue;
        }
        auto& plan = plans[a.field_id];
        if (a.flagged) {
            ++plan.flagged;
        }
        if (!a.decision) {
            continue;
        }
        switch (a.decision->action) {
        case Action::Accept:
            if (a.flagged) {
                ++plan.accepted_flagged;
            }
            break;
        case Action::Edit: plan.edits.push_back(&a); break;
        case Action::Regenerate: plan.regenerate.push_back(&a); break;
        }
    }

    for (auto& [field_id, plan] : plans) {
        FieldValue* value = result.card.field(field_id);
        if (!plan.edits.empty() || !plan.regenerate.empty()) {
            std::string text = value->text;
            for (const auto* a : plan.edits) {
                const std::string& corrected = *a->decision->edited_text;
                if (count_occurrences(text, a->text) == 1) {
                    text.replace(text.find(a->text), a->text.size(), corrected);
                } else {
                    append_correction(text, a->atom_id, corrected);
                }
            }
            if (!plan.regenerate.empty()) {
                if (gateway == nullptr) {
                    throw Error(ErrorCode::PreconditionFailed,
                                "regenerate decisions on field '" + field_id + "' need an LLM gateway");
                }
                std::vector<validate::AtomScore> flagged;
                std::vector<validate::EvidenceRef> evidence;
                std::set<std::string> seen;
                for (const auto* a : plan.regenerate) {
                    validate::AtomScore s;
                    s.atom_id = a->atom_id;
                    s.field_id = a->field_id;
                    s.text = a->text;
                    s.score = a->score;
                    s.flagged = true;
                    flagged.push_back(std::move(s));
                    for (const auto& e : a->evidence) {
                        if (seen.insert(e.chunk_id).second) {
                            evidence.push_back(e);
                        }
                    }
                }
                BenchmarkCard staged = result.card;
                staged.field(field_id)->text = text;
                staged = validate::revise_field(staged, field_id, flagged, evidence, *gateway);
                *value = *staged.field(field_id);
                value->revision = card.field(field_id)->revision + 1;
            } else {
                value->text = std::move(text);
                value->revision += 1;
                move_status(*value, FieldStatus::HumanEdited);
            }
        } else if (plan.flagged > 0 && plan.accepted_flagged == plan.flagged) {
            move_status(*value, FieldStatus::Validated);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

SessionStore::SessionStore(fs::path workspace) : m_workspace(std::move(workspace)) {}

fs::path SessionStore::session_path() const { return m_workspace / "review" / "session.json"; }
fs::path SessionStore::card_path() const { return m_workspace / "review" / "card.json"; }
fs::path SessionStore::final_card_path() const { return m_workspace / "card_final.json"; }

bool SessionStore::exists() const { return fs::exists(session_path()) && fs::exists(card_path()); }

void SessionStore::create(const BenchmarkCard& card, const ReviewSession& session) {
    std::scoped_lock lock(m_mutex);
    FileLock file_lock(m_workspace / "review");
    util::write_file_atomic(card_path(), serialize_card(card));
    save(session);
}

ReviewSession SessionStore::load() const {
    if (!fs::exists(session_path())) {
        throw Error(ErrorCode::NoSession, "no review session at " + session_path().string());
    }
    std::scoped_lock lock(m_mutex);
    json j = json::parse(util::read_file(session_path()), nullptr, false);
    if (j.is_discarded()) {
        throw Error(ErrorCode::MalformedJson, "review session file is not valid JSON");
    }
    return session_from_json(j);
}

BenchmarkCard SessionStore::load_card(const CardSchema& schema) const {
    if (!fs::exists(card_path())) {
        throw Error(ErrorCode::NoSession, "no card under review at " + card_path().string());
    }
    return parse_card(util::read_file(card_path()), schema);
}

void SessionStore::save(const ReviewSession& session) const {
    util::write_file_atomic(session_path(), to_json(session).dump(2) + "\n");
}

ReviewAtom SessionStore::record_decision(const std::string& atom_id, const Decision& decision) {
    if (decision.action == Action::Edit && (!decision.edited_text || util::trim(*decision.edited_text).empty())) {
        throw Error(ErrorCode::InvalidDecision, "action 'edit' needs a non-empty 'edited_text'");
    }
    if (decision.action != Action::Edit && decision.edited_text) {
        throw Error(ErrorCode::InvalidDecision, "'edited_text' is only allowed with action 'edit'");
    }
    if (!fs::exists(session_path())) {
        throw Error(ErrorCode::NoSession, "no review session at " + session_path().string());
    }
    std::scoped_lock lock(m_mutex);
    FileLock file_lock(m_workspace / "review");
    json j = json::parse(util::read_file(session_path()), nullptr, false);
    if (j.is_discarded()) {
        throw Error(ErrorCode::MalformedJson, "review session file is not valid JSON");
    }
    ReviewSession session = session_from_json(j);
    ReviewAtom* atom = session.find(atom_id);
    if (atom == nullptr) {
        throw Error(ErrorCode::UnknownAtom, "no atom '" + atom_id + "' in the review session");
    }
    atom->decision = decision;
    atom->status = "resolved";
    save(session);
    return *atom;
}

ApplyResult SessionStore::finalize(const CardSchema& schema, llm::Gateway* gateway) {
    ReviewSession session = load();
    BenchmarkCard card = load_card(schema);
    ApplyResult result = apply_decisions(card, session, gateway);
    std::scoped_lock lock(m_mutex);
    FileLock file_lock(m_workspace / "review");
    util::write_file_atomic(final_card_path(), serialize_card(result.card));
    spdlog::info("review applied: {} -> {}", session.session_id, final_card_path().string());
    return result;
}

}  // namespace benchcard::review
