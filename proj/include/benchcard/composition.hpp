#pragma once

#include "benchcard/card.hpp"
#include "benchcard/extraction.hpp"
#include "benchcard/gateway.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace benchcard::compose {

struct RiskEntry {
    std::string risk_id;
    std::string name;
    std::string description;

    bool operator==(const RiskEntry&) const = default;
};

class RiskTaxonomy {
public:
    RiskTaxonomy() = default;
    // Throws InvalidSchema on duplicate or empty risk ids.
    explicit RiskTaxonomy(std::vector<RiskEntry> risks);

    static RiskTaxonomy from_json(std::string_view json_text);
    static RiskTaxonomy load(const std::string& path);
    static RiskTaxonomy bundled_default();

    const std::vector<RiskEntry>& risks() const { return m_risks; }
    const RiskEntry* find(std::string_view risk_id) const;

private:
    std::vector<RiskEntry> m_risks;
};

struct RiskFinding {
    std::string risk_id;
    bool applicable = false;
    std::string rationale;

    bool operator==(const RiskFinding&) const = default;
};

struct ComposeOptions {
    std::size_t context_budget_chars = 24000;
    std::size_t workers = 4;
    int max_output_tokens = 1024;
};

// Knowledge base rendered in priority order and cut at `budget` bytes (never
// inside a UTF-8 sequence). Lower-priority documents are the ones truncated.
std::string build_context(const extract::KnowledgeBase& kb, std::size_t budget);

llm::ChatRequest compose_request(const extract::KnowledgeBase& kb, const SectionSpec& section,
                                 const ComposeOptions& options);

// One completion per schema section; every section comes back as a draft at
// revision 0.
BenchmarkCard compose_card(const extract::KnowledgeBase& kb, const CardSchema& schema, llm::Gateway& gateway,
                           const ComposeOptions& options = {});

struct RiskIdentification {
    std::vector<RiskFinding> findings;  // taxonomy order, one per risk
    std::vector<std::string> warnings;
};

inline constexpr std::size_t kRiskBatchSize = 10;

RiskIdentification identify_risks(const BenchmarkCard& card, const RiskTaxonomy& taxonomy, llm::Gateway& gateway,
                                  std::size_t batch_size = kRiskBatchSize);

inline constexpr std::string_view kRiskBlockBegin = "<!-- generated-risks:begin -->";
inline constexpr std::string_view kRiskBlockEnd = "<!-- generated-risks:end -->";

// Replaces the generated risk block in the risks field with bullets for the
// applicable findings, sorted by risk_id. Only the risks field changes.
BenchmarkCard merge_risks(const BenchmarkCard& card, const std::vector<RiskFinding>& findings,
                          const RiskTaxonomy& taxonomy);

// `text` without the generated risk block (and the blank line before it).
std::string strip_risk_block(std::string_view text);

}  // namespace benchcard::compose
