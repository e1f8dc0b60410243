#pragma once

#include "benchcard/card.hpp"
#include "benchcard/gateway.hpp"
#include "benchcard/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace benchcard::validate {

enum class AtomStatus { Pending, Scored, Flagged, Resolved };

std::string_view to_string(AtomStatus status);
AtomStatus atom_status_from_string(std::string_view text);

struct AtomicStatement {
    std::string atom_id;
    std::string field_id;
    std::string text;
    AtomStatus status = AtomStatus::Pending;

    bool operator==(const AtomicStatement&) const = default;
};

struct EntailmentVerdict {
    std::string atom_id;
    std::string chunk_id;
    double p_entail = 0.0;
    double p_contradict = 0.0;
    double p_neutral = 0.0;

    bool operator==(const EntailmentVerdict&) const = default;
};

// Renormalizes the triple to sum to 1. Negative, non-finite or all-zero
// triples raise InvalidVerdict.
EntailmentVerdict make_verdict(std::string atom_id, std::string chunk_id, double entail, double contradict,
                               double neutral);

inline constexpr double kDefaultEpsilon = 1e-3;
inline constexpr double kDefaultThreshold = 0.6;

// logistic(sum_i ln((p_entail_i + eps) / (p_contradict_i + eps))). The log
// ratios are summed in sorted order so the result does not depend on verdict
// order. Empty input gives exactly 0.5. The result stays inside (0, 1).
double aggregate_score(std::span<const EntailmentVerdict> verdicts, double epsilon = kDefaultEpsilon);

struct EvidenceRef {
    std::string chunk_id;
    std::string source_id;
    std::string text;

    bool operator==(const EvidenceRef&) const = default;
};

struct AtomScore {
    std::string atom_id;
    std::string field_id;
    std::string text;
    double score = 0.5;
    bool flagged = false;
    bool scored = true;  // false when retrieval or judging failed
    std::string error;
    std::vector<EntailmentVerdict> verdicts;
    std::vector<EvidenceRef> evidence;   // judged chunks
    std::vector<std::string> retrieved;  // fused candidates before grading

    bool operator==(const AtomScore&) const = default;
};

enum class Strategy { Auto, Review, None };

std::string_view to_string(Strategy strategy);
Strategy strategy_from_string(std::string_view text);

struct RemediationAction {
    std::string atom_id;
    std::string strategy;  // auto_revise | human_review | none
    std::string outcome;

    bool operator==(const RemediationAction&) const = default;
};

struct ValidationReport {
    std::string run_id;
    int round = 1;
    std::int64_t card_revision = 0;
    double threshold = kDefaultThreshold;
    double epsilon = kDefaultEpsilon;
    std::vector<AtomScore> atoms;  // score ascending
    std::vector<RemediationAction> remediation_actions;
    std::vector<std::string> warnings;

    std::size_t flag_count() const;
    bool operator==(const ValidationReport&) const = default;
};

nlohmann::json to_json(const ValidationReport& report);
ValidationReport report_from_json(const nlohmann::json& j);

struct ValidationConfig {
    double threshold = kDefaultThreshold;
    double epsilon = kDefaultEpsilon;
    Strategy strategy = Strategy::None;
    int max_rounds = 2;
    retrieval::RetrievalOptions retrieval;
    std::size_t workers = 4;
    std::string run_id;  // derived from the card when empty
};

struct AtomizeResult {
    std::vector<AtomicStatement> atoms;
    std::vector<std::string> warnings;
};

// One JSON completion per non-empty field (restricted to `only_fields` when
// given). The generated risk block is not atomized: it is taxonomy output,
// not a claim about the sources.
AtomizeResult atomize(const BenchmarkCard& card, llm::Gateway& gateway,
                      const std::optional<std::set<std::string>>& only_fields = std::nullopt,
                      std::size_t workers = 4);

std::string atom_id_for(const std::string& field_id, std::int64_t revision, std::size_t ordinal);

EntailmentVerdict judge_entailment(const AtomicStatement& atom, const retrieval::KnowledgeChunk& chunk,
                                   llm::Gateway& gateway);

// Retrieve, grade, judge and aggregate each atom. Failures degrade to an
// unscored, flagged entry.
std::vector<AtomScore> score_atoms(const std::vector<AtomicStatement>& atoms, const retrieval::HybridIndex& index,
                                   llm::Gateway& gateway, const ValidationConfig& config);

ValidationReport score_card(const BenchmarkCard& card, const retrieval::HybridIndex& index, llm::Gateway& gateway,
                            const ValidationConfig& config);

llm::ChatRequest revision_request(const BenchmarkCard& card, const std::string& field_id,
                                  const std::vector<AtomScore>& flagged_atoms,
                                  const std::vector<EvidenceRef>& evidence);

// Regenerates one field from the flagged atoms' evidence only. The returned
// card has the new text, revision + 1 and status draft.
BenchmarkCard revise_field(const BenchmarkCard& card, const std::string& field_id,
                           const std::vector<AtomScore>& flagged_atoms, const std::vector<EvidenceRef>& evidence,
                           llm::Gateway& gateway);

struct LoopResult {
    BenchmarkCard card;
    std::vector<ValidationReport> reports;
    std::vector<std::string> warnings;
};

LoopResult validation_loop(const BenchmarkCard& card, const retrieval::HybridIndex& index, llm::Gateway& gateway,
                           const ValidationConfig& config);

}  // namespace benchcard::validate
