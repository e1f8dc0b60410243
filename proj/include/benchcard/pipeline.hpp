#pragma once

#include "benchcard/card.hpp"
#include "benchcard/gateway.hpp"
#include "benchcard/validation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace benchcard::pipeline {

inline constexpr std::string_view kDefaultCatalog =
        "https://raw.githubusercontent.com/IBM/unitxt/main/src/unitxt/catalog";
inline constexpr std::string_view kDefaultHub = "https://huggingface.co";

struct RunConfig {
    std::string benchmark_identifier;
    std::filesystem::path workspace = "workspace";
    std::string catalog = std::string(kDefaultCatalog);  // directory or URL
    std::string hub = std::string(kDefaultHub);          // directory or URL
    std::optional<std::string> paper;                    // path or URL
    std::vector<std::filesystem::path> user_documents;
    std::vector<std::string> converter_command;  // file path is appended
    std::string converter_url;
    llm::GatewayConfig gateway;
    std::optional<std::string> schema_path;
    std::optional<std::string> taxonomy_path;
    double threshold = validate::kDefaultThreshold;
    validate::Strategy strategy = validate::Strategy::None;
    int max_rounds = 2;
    bool offline = false;
    std::size_t workers = 4;
};

nlohmann::json to_json(const RunConfig& config);

// Throws InvalidConfig; in particular offline runs may not name any URL.
void validate_config(const RunConfig& config);

// Exit codes shared by the CLI.
inline constexpr int kExitClean = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitFlagged = 3;

struct RunOutcome {
    int exit_code = kExitClean;
    std::size_t flag_count = 0;
    std::size_t rounds = 0;
    std::vector<std::string> warnings;
};

// Raised when a phase fails; the message names the phase.
class PhaseError : public Error {
public:
    PhaseError(std::string phase, const Error& cause);
    const std::string& phase() const { return m_phase; }

private:
    std::string m_phase;
};

// extraction -> composition (+ risks) -> index -> validation loop. Writes the
// workspace artifacts and run_log.json (also on failure). `gateway` overrides
// config.gateway when non-null.
RunOutcome run_generate(const RunConfig& config, llm::Gateway* gateway = nullptr);

struct ValidateOptions {
    std::filesystem::path workspace;
    llm::GatewayConfig gateway;
    std::optional<std::string> schema_path;
    double threshold = validate::kDefaultThreshold;
    std::size_t workers = 4;
};

// Scores an existing card against the workspace knowledge base without any
// regeneration. Rebuilds index/ from sources/ when needed.
validate::ValidationReport run_validate(const std::filesystem::path& card_path, const ValidateOptions& options,
                                        llm::Gateway* gateway = nullptr);

// Schema recorded in <workspace>/run_config.json, or the bundled default.
CardSchema workspace_schema(const std::filesystem::path& workspace);

// Gateway config recorded in <workspace>/run_config.json, if any.
std::optional<llm::GatewayConfig> workspace_gateway_config(const std::filesystem::path& workspace);

}  // namespace benchcard::pipeline
