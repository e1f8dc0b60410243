#include "benchcard/validation.hpp"

#include "benchcard/composition.hpp"
#include "benchcard/error.hpp"
#include "benchcard/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace benchcard::validate {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxAtomWords = 60;

constexpr std::string_view kAtomizeSystem =
        "You split one section of a BenchmarkCard into atomic statements for fact-checking. Each statement "
        "must be a single declarative sentence that makes exactly one checkable claim, names the benchmark "
        "instead of using pronouns, and can be understood without the rest of the card. Do not add facts that "
        "are not in the section. Reply with JSON only: {\"atoms\": [{\"text\": string}]}.";

constexpr std::string_view kJudgeSystem =
        "You are a natural language inference judge. Given a context passage and a statement, estimate the "
        "probability that the context entails the statement, contradicts it, or is neutral toward it. Reply "
        "with JSON only: {\"entail\": number, \"contradict\": number, \"neutral\": number}, summing to 1.";

constexpr std::string_view kReviseSystem =
        "You correct one section of a BenchmarkCard. Some statements in it were not supported by the "
        "evidence. Rewrite the section so every sentence is supported by the evidence passages below; drop "
        "or fix unsupported claims and keep supported content. Reply with the new section text only.";

double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double read_probability(const json& reply, std::initializer_list<const char*> keys) {
    for (const char* key : keys) {
        if (auto it = reply.find(key); it != reply.end()) {
            if (!it->is_number()) {
                throw Error(ErrorCode::InvalidVerdict, std::string("verdict field '") + key + "' is not a number");
            }
            return it->get<double>();
        }
    }
    throw Error(ErrorCode::InvalidVerdict, "verdict lacks an entail/contradict/neutral probability");
}

std::string field_text_for_atomizing(const FieldValue& f) { return util::trim(compose::strip_risk_block(f.text)); }

std::vector<std::string> parse_atom_texts(const json& reply) {
    const json& list = reply.is_array() ? reply : reply.value("atoms", json::array());
    std::vector<std::string> out;
    for (const auto& item : list) {
        std::string text;
        if (item.is_string()) {
            text = item.get<std::string>();
        } else if (item.is_object() && item.contains("text") && item["text"].is_string()) {
            text = item["text"].get<std::string>();
        }
        text = util::trim(text);
        if (!text.empty()) {
            out.push_back(std::move(text));
        }
    }
    return out;
}

void sort_report_atoms(std::vector<AtomScore>& atoms) {
    std::sort(atoms.begin(), atoms.end(), [](const AtomScore& a, const AtomScore& b) {
        if (a.score != b.score) {
            return a.score < b.score;
        }
        return a.atom_id < b.atom_id;
    });
}

std::string derive_run_id(const BenchmarkCard& card) {
    return util::sha256_hex(serialize_card(card)).substr(0, 16);
}

json verdict_to_json(const EntailmentVerdict& v) {
    return json{{"atom_id", v.atom_id},
                {"chunk_id", v.chunk_id},
                {"p_entail", v.p_entail},
                {"p_contradict", v.p_contradict},
                {"p_neutral", v.p_neutral}};
}

std::vector<RemediationAction> remediation_for(const std::vector<AtomScore>& atoms, Strategy strategy,
                                               bool revision_follows) {
    std::vector<RemediationAction> actions;
    for (const auto& a : atoms) {
        if (!a.flagged) {
            continue;
        }
        RemediationAction act;
        act.atom_id = a.atom_id;
        switch (strategy) {
        case Strategy::Auto:
            act.strategy = "auto_revise";
            act.outcome = revision_follows ? "field '" + a.field_id + "' revised" : "unresolved: round limit reached";
            break;
        case Strategy::Review:
            act.strategy = "human_review";
            act.outcome = "queued for review";
            break;
        case Strategy::None:
            act.strategy = "none";
            act.outcome = "left flagged";
            break;
        }
        actions.push_back(std::move(act));
    }
    return actions;
}

}  // namespace

std::string_view to_string(AtomStatus status) {
    switch (status) {
    case AtomStatus::Pending: return "pending";
    case AtomStatus::Scored: return "scored";
    case AtomStatus::Flagged: return "flagged";
    case AtomStatus::Resolved: return "resolved";
    }
    return "pending";
}

AtomStatus atom_status_from_string(std::string_view text) {
    if (text == "pending") return AtomStatus::Pending;
    if (text == "scored") return AtomStatus::Scored;
    if (text == "flagged") return AtomStatus::Flagged;
    if (text == "resolved") return AtomStatus::Resolved;
    throw Error(ErrorCode::MalformedJson, "unknown atom status '" + std::string(text) + "'");
}

std::string_view to_string(Strategy strategy) {
    switch (strategy) {
    case Strategy::Auto: return "auto";
    case Strategy::Review: return "review";
    case Strategy::None: return "none";
    }
    return "none";
}

Strategy strategy_from_string(std::string_view text) {
    if (text == "auto") return Strategy::Auto;
    if (text == "review") return Strategy::Review;
    if (text == "none") return Strategy::None;
    throw Error(ErrorCode::InvalidConfig, "remediation strategy must be auto, review or none (got '" +
                                                  std::string(text) + "')");
}

EntailmentVerdict make_verdict(std::string atom_id, std::string chunk_id, double entail, double contradict,
                               double neutral) {
    for (double p : {entail, contradict, neutral}) {
        if (!std::isfinite(p) || p < 0.0) {
            throw Error(ErrorCode::InvalidVerdict, "verdict probabilities must be finite and non-negative");
        }
    }
    const double total = entail + contradict + neutral;
    if (!(total > 0.0)) {
        throw Error(ErrorCode::InvalidVerdict, "verdict probabilities are all zero");
    }
    return EntailmentVerdict{std::move(atom_id), std::move(chunk_id), entail / total, contradict / total,
                             neutral / total};
}

double aggregate_score(std::span<const EntailmentVerdict> verdicts, double epsilon) {
    if (!(epsilon > 0.0)) {
        throw Error(ErrorCode::PreconditionFailed, "aggregate_score needs epsilon > 0");
    }
    if (verdicts.empty()) {
        return 0.5;
    }
    std::vector<double> terms;
    terms.reserve(verdicts.size());
    for (const auto& v : verdicts) {
        terms.push_back(std::log((v.p_entail + epsilon) / (v.p_contradict + epsilon)));
    }
    std::sort(terms.begin(), terms.end());
    double sum = 0.0;
    for (double t : terms) {
        sum += t;
    }
    const double score = logistic(sum);
    return std::clamp(score, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

std::size_t ValidationReport::flag_count() const {
    return static_cast<std::size_t>(std::count_if(atoms.begin(), atoms.end(), [](const AtomScore& a) { return a.flagged; }));
}

json to_json(const ValidationReport& report) {
    json atoms = json::array();
    for (const auto& a : report.atoms) {
        json verdicts = json::array();
        for (const auto& v : a.verdicts) {
            verdicts.push_back(verdict_to_json(v));
        }
        json evidence = json::array();
        for (const auto& e : a.evidence) {
            evidence.push_back(json{{"chunk_id", e.chunk_id}, {"source_id", e.source_id}, {"text", e.text}});
        }
        json entry{{"atom_id", a.atom_id},
                   {"field_id", a.field_id},
                   {"text", a.text},
                   {"score", a.score},
                   {"flagged", a.flagged},
                   {"scored", a.scored},
                   {"status", a.flagged ? "flagged" : "scored"},
                   {"verdicts", verdicts},
                   {"evidence", evidence},
                   {"retrieved", a.retrieved}};
        if (!a.error.empty()) {
            entry["error"] = a.error;
        }
        atoms.push_back(std::move(entry));
    }
    json actions = json::array();
    for (const auto& r : report.remediation_actions) {
        actions.push_back(json{{"atom_id", r.atom_id}, {"strategy", r.strategy}, {"outcome", r.outcome}});
    }
    return json{{"run_id", report.run_id},
                {"round", report.round},
                {"card_revision", report.card_revision},
                {"threshold", report.threshold},
                {"epsilon", report.epsilon},
                {"flag_count", report.flag_count()},
                {"atoms", atoms},
                {"remediation_actions", actions},
                {"warnings", report.warnings}};
}

ValidationReport report_from_json(const json& j) {
    ValidationReport r;
    try {
        r.run_id = j.at("run_id").get<std::string>();
        r.round = j.at("round").get<int>();
        r.card_revision = j.at("card_revision").get<std::int64_t>();
        r.threshold = j.at("threshold").get<double>();
        r.epsilon = j.at("epsilon").get<double>();
        for (const auto& a : j.at("atoms")) {
            AtomScore s;
            s.atom_id = a.at("atom_id").get<std::string>();
            s.field_id = a.at("field_id").get<std::string>();
            s.text = a.at("text").get<std::string>();
            s.score = a.at("score").get<double>();
            s.flagged = a.at("flagged").get<bool>();
            s.scored = a.value("scored", true);
            s.error = a.value("error", "");
            for (const auto& v : a.at("verdicts")) {
                s.verdicts.push_back(EntailmentVerdict{v.at("atom_id").get<std::string>(),
                                                       v.at("chunk_id").get<std::string>(),
                                                       v.at("p_entail").get<double>(),
                                                       v.at("p_contradict").get<double>(),
                                                       v.at("p_neutral").get<double>()});
            }
            for (const auto& e : a.value("evidence", json::array())) {
                s.evidence.push_back(EvidenceRef{e.at("chunk_id").get<std::string>(),
                                                 e.value("source_id", ""), e.value("text", "")});
            }
            s.retrieved = a.value("retrieved", std::vector<std::string>{});
            r.atoms.push_back(std::move(s));
        }
        for (const auto& act : j.at("remediation_actions")) {
            r.remediation_actions.push_back(RemediationAction{act.at("atom_id").get<std::string>(),
                                                              act.at("strategy").get<std::string>(),
                                                              act.value("outcome", "")});
        }
        r.warnings = j.value("warnings", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedJson, std::string("validation report: ") + e.what());
    }
    return r;
}

// ---------------------------------------------------------------------------

std::string atom_id_for(const std::string& field_id, std::int64_t revision, std::size_t ordinal) {
    if (revision > 0) {
        return field_id + "-r" + std::to_string(revision) + "-" + std::to_string(ordinal);
    }
    return field_id + "-" + std::to_string(ordinal);
}

AtomizeResult atomize(const BenchmarkCard& card, llm::Gateway& gateway,
                      const std::optional<std::set<std::string>>& only_fields, std::size_t workers) {
    std::vector<const CardField*> targets;
    for (const auto& f : card.fields) {
        if (only_fields && !only_fields->contains(f.id)) {
            continue;
        }
        if (!field_text_for_atomizing(f.value).empty()) {
            targets.push_back(&f);
        }
    }
    if (targets.empty() && !only_fields) {
        throw Error(ErrorCode::PreconditionFailed, "card has no non-empty field to atomize");
    }

    std::vector<std::vector<std::string>> texts(targets.size());
    util::parallel_for(targets.size(), workers, [&](std::size_t i) {
        const auto& f = *targets[i];
        llm::CallScope scope("atomize/" + f.id + "/r" + std::to_string(f.value.revision));
        const std::string body = field_text_for_atomizing(f.value);
        llm::ChatRequest request;
        request.system = std::string(kAtomizeSystem);
        request.user = "Benchmark: " + card.benchmark_id + "\nSection: " + f.id + "\n\nSection text:\n" + body;
        request.tag = "atomize";
        request.vars = json{{"field", f.id}, {"benchmark_id", card.benchmark_id}, {"text", body}};
        try {
            texts[i] = parse_atom_texts(gateway.complete_json(std::move(request)));
        } catch (const Error& e) {
            throw Error(e.code(), "atomizing field '" + f.id + "': " + e.what());
        }
    });

    AtomizeResult result;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& f = *targets[i];
        if (texts[i].empty()) {
            result.warnings.push_back("atomizer returned no statements for field '" + f.id + "'");
        }
        for (std::size_t k = 0; k < texts[i].size(); ++k) {
            const auto words = util::split_whitespace(texts[i][k]).size();
            const auto id = atom_id_for(f.id, f.value.revision, k + 1);
            if (words > kMaxAtomWords) {
                result.warnings.push_back("atom " + id + " has " + std::to_string(words) + " words (limit " +
                                          std::to_string(kMaxAtomWords) + ")");
            }
            result.atoms.push_back(AtomicStatement{id, f.id, texts[i][k], AtomStatus::Pending});
        }
    }
    return result;
}

EntailmentVerdict judge_entailment(const AtomicStatement& atom, const retrieval::KnowledgeChunk& chunk,
                                   llm::Gateway& gateway) {
    llm::ChatRequest request;
    request.system = std::string(kJudgeSystem);
    request.user = "Context:\n" + chunk.text + "\n\nStatement: " + atom.text;
    request.tag = "judge";
    request.vars = json{{"atom", atom.text}, {"context", chunk.text}, {"chunk_id", chunk.chunk_id}};
    const json reply = gateway.complete_json(std::move(request));
    if (!reply.is_object()) {
        throw Error(ErrorCode::InvalidVerdict, "verdict must be a JSON object");
    }
    return make_verdict(atom.atom_id, chunk.chunk_id, read_probability(reply, {"entail", "entailment"}),
                        read_probability(reply, {"contradict", "contradiction"}),
                        read_probability(reply, {"neutral"}));
}

std::vector<AtomScore> score_atoms(const std::vector<AtomicStatement>& atoms, const retrieval::HybridIndex& index,
                                   llm::Gateway& gateway, const ValidationConfig& config) {
    std::vector<AtomScore> scores(atoms.size());
    util::parallel_for(atoms.size(), config.workers, [&](std::size_t i) {
        const auto& atom = atoms[i];
        llm::CallScope scope("validate/" + atom.atom_id);
        AtomScore& s = scores[i];
        s.atom_id = atom.atom_id;
        s.field_id = atom.field_id;
        s.text = atom.text;
        try {
            const auto& opt = config.retrieval;
            const auto sparse = retrieval::sparse_search(atom.text, index, opt.sparse_k);
            const auto dense = retrieval::dense_search(atom.text, index, opt.dense_k, gateway);
            const auto fused = retrieval::fuse_rrf(sparse, dense, opt.k_rrf);
            for (std::size_t k = 0; k < fused.size() && k < opt.keep; ++k) {
                s.retrieved.push_back(fused[k].chunk_id);
            }
            if (!fused.empty()) {
                auto graded = retrieval::grade_evidence(atom.text, fused, index, gateway, opt.grade_top);
                for (const auto& w : graded.warnings) {
                    spdlog::warn("{}: {}", atom.atom_id, w);
                }
                if (graded.kept.size() > opt.keep) {
                    graded.kept.resize(opt.keep);
                }
                for (const auto& cand : graded.kept) {
                    const auto* chunk = index.find(cand.chunk_id);
                    s.verdicts.push_back(judge_entailment(atom, *chunk, gateway));
                    s.evidence.push_back(EvidenceRef{chunk->chunk_id, chunk->source_id, chunk->text});
                }
            }
            s.score = aggregate_score(s.verdicts, config.epsilon);
            s.flagged = s.score < config.threshold;
        } catch (const std::exception& e) {
            s.scored = false;
            s.flagged = true;
            s.error = e.what();
            s.verdicts.clear();
            s.evidence.clear();
            s.score = aggregate_score({}, config.epsilon);
        }
    });
    return scores;
}

ValidationReport score_card(const BenchmarkCard& card, const retrieval::HybridIndex& index, llm::Gateway& gateway,
                            const ValidationConfig& config) {
    auto atomized = atomize(card, gateway, std::nullopt, config.workers);
    ValidationReport report;
    report.run_id = config.run_id.empty() ? derive_run_id(card) : config.run_id;
    report.round = 1;
    report.card_revision = card.revision();
    report.threshold = config.threshold;
    report.epsilon = config.epsilon;
    report.atoms = score_atoms(atomized.atoms, index, gateway, config);
    sort_report_atoms(report.atoms);
    report.warnings = std::move(atomized.warnings);
    return report;
}

// ---------------------------------------------------------------------------

llm::ChatRequest revision_request(const BenchmarkCard& card, const std::string& field_id,
                                  const std::vector<AtomScore>& flagged_atoms,
                                  const std::vector<EvidenceRef>& evidence) {
    const auto* field = card.field(field_id);
    if (field == nullptr) {
        throw Error(ErrorCode::UnknownSection, "card has no field '" + field_id + "'");
    }
    llm::ChatRequest request;
    request.system = std::string(kReviseSystem);
    request.tag = "revise";
    std::string statements;
    json flagged = json::array();
    for (const auto& a : flagged_atoms) {
        statements += "- " + a.text + "\n";
        flagged.push_back(a.text);
    }
    std::string passages;
    json ids = json::array();
    for (const auto& e : evidence) {
        passages += "[" + e.chunk_id + "]\n" + e.text + "\n\n";
        ids.push_back(e.chunk_id);
    }
    request.user = "Benchmark: " + card.benchmark_id + "\nSection: " + field_id + "\n\nCurrent section text:\n" +
                   util::trim(compose::strip_risk_block(field->text)) + "\n\nUnsupported statements:\n" + statements +
                   "\nEvidence passages:\n\n" + passages;
    request.vars = json{{"field", field_id},
                        {"benchmark_id", card.benchmark_id},
                        {"revision", field->revision},
                        {"flagged", flagged},
                        {"evidence_ids", ids}};
    return request;
}

BenchmarkCard revise_field(const BenchmarkCard& card, const std::string& field_id,
                           const std::vector<AtomScore>& flagged_atoms, const std::vector<EvidenceRef>& evidence,
                           llm::Gateway& gateway) {
    if (card.field(field_id) == nullptr) {
        throw Error(ErrorCode::UnknownSection, "card has no field '" + field_id + "'");
    }
    const bool any_flagged = std::any_of(flagged_atoms.begin(), flagged_atoms.end(), [&](const AtomScore& a) {
        return a.flagged && a.field_id == field_id;
    });
    if (!any_flagged) {
        throw Error(ErrorCode::PreconditionFailed, "field '" + field_id + "' has no flagged atoms to revise");
    }
    std::vector<AtomScore> own;
    std::copy_if(flagged_atoms.begin(), flagged_atoms.end(), std::back_inserter(own),
                 [&](const AtomScore& a) { return a.flagged && a.field_id == field_id; });

    llm::CallScope scope("revise/" + field_id + "/r" + std::to_string(card.field(field_id)->revision));
    std::string text = util::trim(gateway.complete(revision_request(card, field_id, own, evidence)));

    // Keep the generated risk block; revision only covers sourced prose.
    const std::string& old_text = card.field(field_id)->text;
    if (auto pos = old_text.find(compose::kRiskBlockBegin); pos != std::string::npos) {
        text += "\n\n" + old_text.substr(pos);
    }
    BenchmarkCard out = card;
    out.rewrite_field(field_id, std::move(text));
    return out;
}

LoopResult validation_loop(const BenchmarkCard& card, const retrieval::HybridIndex& index, llm::Gateway& gateway,
                           const ValidationConfig& config) {
    if (config.max_rounds < 0) {
        throw Error(ErrorCode::InvalidConfig, "max_rounds must be >= 0");
    }
    LoopResult result;
    result.card = card;
    const std::string run_id = config.run_id.empty() ? derive_run_id(card) : config.run_id;

    auto atomized = atomize(card, gateway, std::nullopt, config.workers);
    std::vector<AtomScore> current = score_atoms(atomized.atoms, index, gateway, config);
    std::vector<std::string> warnings = std::move(atomized.warnings);

    for (int round = 1;; ++round) {
        const bool any_flag = std::any_of(current.begin(), current.end(), [](const AtomScore& a) { return a.flagged; });
        const bool revise_next = config.strategy == Strategy::Auto && any_flag && round <= config.max_rounds;

        ValidationReport report;
        report.run_id = run_id;
        report.round = round;
        report.card_revision = result.card.revision();
        report.threshold = config.threshold;
        report.epsilon = config.epsilon;
        report.atoms = current;
        sort_report_atoms(report.atoms);
        report.remediation_actions = remediation_for(report.atoms, config.strategy, revise_next);
        report.warnings = warnings;
        result.reports.push_back(std::move(report));

        if (!revise_next) {
            break;
        }

        std::map<std::string, std::vector<AtomScore>> flagged_by_field;
        for (const auto& a : current) {
            if (a.flagged) {
                flagged_by_field[a.field_id].push_back(a);
            }
        }
        std::set<std::string> revised;
        for (const auto& [field_id, atoms] : flagged_by_field) {
            std::vector<EvidenceRef> evidence;
            std::set<std::string> seen;
            for (const auto& a : atoms) {
                for (const auto& e : a.evidence) {
                    if (seen.insert(e.chunk_id).second) {
                        evidence.push_back(e);
                    }
                }
            }
            if (evidence.empty()) {
                // Nothing was graded relevant: fall back to the retrieved candidates.
                for (const auto& a : atoms) {
                    for (const auto& id : a.retrieved) {
                        if (const auto* c = index.find(id); c != nullptr && seen.insert(id).second) {
                            evidence.push_back(EvidenceRef{c->chunk_id, c->source_id, c->text});
                        }
                    }
                }
            }
            result.card = revise_field(result.card, field_id, atoms, evidence, gateway);
            revised.insert(field_id);
        }

        auto re_atomized = atomize(result.card, gateway, revised, config.workers);
        warnings = std::move(re_atomized.warnings);
        auto fresh = score_atoms(re_atomized.atoms, index, gateway, config);
        std::erase_if(current, [&](const AtomScore& a) { return revised.contains(a.field_id); });
        current.insert(current.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
    }

    // Field statuses follow the last report.
    const auto& last = result.reports.back();
    std::map<std::string, bool> field_flagged;
    for (const auto& a : last.atoms) {
        field_flagged[a.field_id] = field_flagged[a.field_id] || a.flagged;
    }
    for (auto& f : result.card.fields) {
        auto it = field_flagged.find(f.id);
        if (it == field_flagged.end()) {
            continue;
        }
        const FieldStatus target = it->second ? FieldStatus::Flagged : FieldStatus::Validated;
        if (f.value.status == target) {
            continue;
        }
        if (is_allowed_transition(f.value.status, target)) {
            f.value.status = target;
        } else {
            result.warnings.push_back("field '" + f.id + "' keeps status " + std::string(to_string(f.value.status)) +
                                      " (cannot move to " + std::string(to_string(target)) + ")");
        }
    }
    return result;
}

}  // namespace benchcard::validate
