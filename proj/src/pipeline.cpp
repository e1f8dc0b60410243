#include "benchcard/pipeline.hpp"

#include "benchcard/composition.hpp"
#include "benchcard/error.hpp"
#include "benchcard/extraction.hpp"
#include "benchcard/retrieval.hpp"
#include "benchcard/review.hpp"
#include "benchcard/util.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <functional>

namespace benchcard::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct PhaseTiming {
    std::string name;
    double duration_ms = 0.0;
    bool ok = false;
};

// Collects everything run_log.json reports.
struct RunLog {
    std::vector<PhaseTiming> phases;
    std::vector<std::string> warnings;
    std::vector<std::string> notes;

    template <typename Fn>
    auto phase(const std::string& name, Fn&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        auto finish = [&](bool ok) {
            phases.push_back(PhaseTiming{
                    name, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count(),
                    ok});
        };
        spdlog::info("phase {}: start", name);
        try {
            if constexpr (std::is_void_v<decltype(fn())>) {
                fn();
                finish(true);
            } else {
                auto result = fn();
                finish(true);
                return result;
            }
        } catch (const PhaseError&) {
            finish(false);
            throw;
        } catch (const Error& e) {
            finish(false);
            throw PhaseError(name, e);
        } catch (const std::exception& e) {
            finish(false);
            throw PhaseError(name, Error(ErrorCode::IoError, e.what()));
        }
    }

    void warn(std::string message) {
        spdlog::warn("{}", message);
        warnings.push_back(std::move(message));
    }
};

void write_json(const fs::path& path, const json& j) { util::write_file_atomic(path, j.dump(2) + "\n"); }

void write_run_log(const fs::path& workspace, const std::string& benchmark_id, const std::string& started_at,
                   int exit_code, const RunLog& log, const llm::Gateway* gateway,
                   const std::optional<std::string>& failure) {
    json phases = json::array();
    for (const auto& p : log.phases) {
        phases.push_back(json{{"name", p.name}, {"duration_ms", p.duration_ms}, {"ok", p.ok}});
    }
    json j{{"benchmark_id", benchmark_id},
           {"started_at", started_at},
           {"finished_at", util::now_rfc3339()},
           {"exit_code", exit_code},
           {"phases", phases},
           {"calls", gateway != nullptr ? gateway->log().to_json() : json::array()},
           {"warnings", log.warnings},
           {"notes", log.notes}};
    if (failure) {
        j["failure"] = *failure;
    }
    write_json(workspace / "run_log.json", j);
}

CardSchema load_schema(const std::optional<std::string>& path) {
    return path ? CardSchema::load(*path) : CardSchema::bundled_default();
}

std::shared_ptr<extract::ConverterSource> make_converter(const RunConfig& config) {
    if (!config.converter_command.empty()) {
        return std::make_shared<extract::CommandConverter>(config.converter_command);
    }
    if (!config.converter_url.empty()) {
        return std::make_shared<extract::HttpConverter>(config.converter_url);
    }
    return nullptr;
}

std::unique_ptr<extract::CatalogSource> make_catalog(const RunConfig& config,
                                                     const std::shared_ptr<const extract::Fetcher>& fetcher) {
    if (util::is_url(config.catalog)) {
        return std::make_unique<extract::RemoteCatalog>(config.catalog, fetcher);
    }
    return std::make_unique<extract::LocalCatalog>(config.catalog);
}

std::unique_ptr<extract::HubSource> make_hub(const RunConfig& config,
                                             const std::shared_ptr<const extract::Fetcher>& fetcher) {
    if (util::is_url(config.hub)) {
        return std::make_unique<extract::RemoteHub>(config.hub, fetcher);
    }
    return std::make_unique<extract::LocalHub>(config.hub);
}

extract::KnowledgeBase run_extraction(const RunConfig& config, RunLog& log) {
    const fs::path sources = config.workspace / "sources";
    fs::create_directories(sources / "cache");

    extract::Fetcher::Options fetch_options;
    fetch_options.cache_dir = sources / "cache";
    if (auto token = util::get_env("HF_TOKEN")) {
        fetch_options.bearer_token = *token;
    }
    auto fetcher = std::make_shared<const extract::Fetcher>(fetch_options);
    auto catalog = make_catalog(config, fetcher);

    auto card = extract::fetch_unitxt_card(config.benchmark_identifier, *catalog);
    write_json(sources / "unitxt_card.json", benchcard::unitxt_card_to_json(card));

    std::vector<extract::SourceDocument> docs;
    docs.push_back(extract::card_document(card, util::now_rfc3339(), catalog->describe()));

    auto supplementary = extract::resolve_supplementary(card, *catalog);
    for (auto& w : supplementary.warnings) {
        log.warn(w);
    }
    for (auto& d : supplementary.documents) {
        docs.push_back(std::move(d));
    }

    const auto ids = extract::extract_identifiers(card);
    log.notes.push_back("publication link: first URL, arXiv id or DOI found in the card's description, citation "
                        "and tag fields, in that order");
    if (ids.hub_repo_id) {
        try {
            auto hub = make_hub(config, fetcher);
            docs.push_back(extract::fetch_hub_metadata(*ids.hub_repo_id, *hub));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::RepoNotFound && e.code() != ErrorCode::HubUnreachable) {
                throw;
            }
            log.warn("hub metadata for " + *ids.hub_repo_id + " skipped: " + e.what());
        }
    } else {
        log.warn("no dataset repository referenced by the card; hub metadata skipped");
    }

    std::optional<std::string> paper = config.paper;
    if (!paper && ids.publication_url) {
        if (config.offline) {
            log.warn("publication " + *ids.publication_url + " not fetched in offline mode");
        } else {
            paper = ids.publication_url;
        }
    }
    if (paper) {
        auto converter = make_converter(config);
        try {
            docs.push_back(extract::ingest_publication(*paper, converter.get(), fetcher.get()));
        } catch (const Error& e) {
            if (config.paper) {
                throw;  // explicitly requested, so a failure is fatal
            }
            log.warn("publication " + *paper + " skipped: " + e.what());
        }
    }
    for (const auto& path : config.user_documents) {
        docs.push_back(extract::user_document(path));
    }

    auto kb = extract::assemble_knowledge_base(config.benchmark_identifier, std::move(docs));
    write_json(sources / "knowledge_base.json", extract::to_json(kb));
    return kb;
}

retrieval::HybridIndex build_workspace_index(const extract::KnowledgeBase& kb, const fs::path& workspace,
                                             llm::Gateway& gateway) {
    std::vector<retrieval::KnowledgeChunk> chunks;
    for (const auto& doc : kb.documents) {
        auto part = retrieval::chunk_document(doc);
        chunks.insert(chunks.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    retrieval::embed_chunks(chunks, gateway);
    auto index = retrieval::build_index(std::move(chunks));
    index.save(workspace / "index");
    // Validate against the persisted copy so reruns see identical floats.
    return retrieval::HybridIndex::load(workspace / "index");
}

std::string describe_failure(const Error& e) { return std::string(to_string(e.code())) + ": " + e.what(); }

}  // namespace

PhaseError::PhaseError(std::string phase, const Error& cause)
    : Error(cause.code(), "phase " + phase + " failed: " + cause.what()), m_phase(std::move(phase)) {}

json to_json(const RunConfig& c) {
    json converter = nullptr;
    if (!c.converter_command.empty()) {
        converter = json{{"command", c.converter_command}};
    } else if (!c.converter_url.empty()) {
        converter = json{{"url", c.converter_url}};
    }
    std::vector<std::string> user_docs;
    for (const auto& p : c.user_documents) {
        user_docs.push_back(p.string());
    }
    return json{{"benchmark_identifier", c.benchmark_identifier},
                {"workspace", c.workspace.string()},
                {"catalog", c.catalog},
                {"hub", c.hub},
                {"paper", c.paper ? json(*c.paper) : json(nullptr)},
                {"user_documents", user_docs},
                {"converter", converter},
                {"gateway", llm::to_json(c.gateway)},
                {"schema", c.schema_path ? json(*c.schema_path) : json(nullptr)},
                {"taxonomy", c.taxonomy_path ? json(*c.taxonomy_path) : json(nullptr)},
                {"threshold", c.threshold},
                {"remediate", validate::to_string(c.strategy)},
                {"max_rounds", c.max_rounds},
                {"offline", c.offline},
                {"workers", c.workers}};
}

void validate_config(const RunConfig& c) {
    if (util::trim(c.benchmark_identifier).empty()) {
        throw Error(ErrorCode::InvalidConfig, "benchmark identifier is empty");
    }
    if (c.workspace.empty()) {
        throw Error(ErrorCode::InvalidConfig, "workspace path is empty");
    }
    if (!(c.threshold > 0.0 && c.threshold < 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "threshold must lie in (0, 1)");
    }
    if (c.max_rounds < 0) {
        throw Error(ErrorCode::InvalidConfig, "max_rounds must be >= 0");
    }
    if (c.workers == 0) {
        throw Error(ErrorCode::InvalidConfig, "workers must be >= 1");
    }
    if (c.offline) {
        const std::vector<std::pair<std::string, std::string>> locators = {
                {"catalog", c.catalog}, {"hub", c.hub}, {"paper", c.paper.value_or("")},
                {"converter", c.converter_url}, {"llm endpoint", c.gateway.llm_endpoint},
                {"embedding endpoint", c.gateway.embedding_endpoint}};
        for (const auto& [what, value] : locators) {
            if (util::is_url(value)) {
                throw Error(ErrorCode::InvalidConfig, "offline run cannot use a network " + what + " (" + value + ")");
            }
        }
    }
}

RunOutcome run_generate(const RunConfig& config, llm::Gateway* gateway) {
    validate_config(config);
    const CardSchema schema = load_schema(config.schema_path);
    const auto taxonomy = config.taxonomy_path ? compose::RiskTaxonomy::load(*config.taxonomy_path)
                                               : compose::RiskTaxonomy::bundled_default();
    std::unique_ptr<llm::Gateway> owned;
    if (gateway == nullptr) {
        owned = llm::make_gateway(config.gateway);
        gateway = owned.get();
    }

    const fs::path ws = config.workspace;
    fs::create_directories(ws);
    write_json(ws / "run_config.json", to_json(config));
    const std::string started_at = util::now_rfc3339();

    RunLog log;
    log.notes.push_back("risk identification reads the composed card text, not the raw sources");
    RunOutcome outcome;
    try {
        auto kb = log.phase("extraction", [&] { return run_extraction(config, log); });

        auto draft = log.phase("composition", [&] {
            compose::ComposeOptions options;
            options.workers = config.workers;
            auto card = compose::compose_card(kb, schema, *gateway, options);
            if (schema.contains("risks")) {
                auto risks = compose::identify_risks(card, taxonomy, *gateway);
                for (auto& w : risks.warnings) {
                    log.warn(w);
                }
                card = compose::merge_risks(card, risks.findings, taxonomy);
            } else {
                log.warn("schema has no 'risks' section; risk identification skipped");
            }
            util::write_file_atomic(ws / "card_draft.json", serialize_card(card));
            return card;
        });

        auto index = log.phase("index", [&] { return build_workspace_index(kb, ws, *gateway); });

        auto loop = log.phase("validation", [&] {
            validate::ValidationConfig vc;
            vc.threshold = config.threshold;
            vc.strategy = config.strategy;
            vc.max_rounds = config.max_rounds;
            vc.workers = config.workers;
            auto result = validate::validation_loop(draft, index, *gateway, vc);
            fs::create_directories(ws / "validation");
            for (const auto& report : result.reports) {
                write_json(ws / "validation" / ("round_" + std::to_string(report.round) + ".json"),
                           validate::to_json(report));
                for (const auto& w : report.warnings) {
                    log.warn("round " + std::to_string(report.round) + ": " + w);
                }
            }
            for (const auto& w : result.warnings) {
                log.warn(w);
            }
            util::write_file_atomic(ws / "card_final.json", serialize_card(result.card));
            return result;
        });

        const auto& last = loop.reports.back();
        outcome.flag_count = last.flag_count();
        outcome.rounds = loop.reports.size();
        outcome.exit_code = outcome.flag_count == 0 ? kExitClean : kExitFlagged;

        if (config.strategy == validate::Strategy::Review && outcome.flag_count > 0) {
            log.phase("review", [&] {
                review::SessionStore store(ws);
                store.create(loop.card, review::make_session(loop.card, last));
                spdlog::info("review session written to {}", store.session_path().string());
            });
        }
    } catch (const PhaseError& e) {
        outcome.exit_code = kExitFailure;
        outcome.warnings = log.warnings;
        write_run_log(ws, config.benchmark_identifier, started_at, outcome.exit_code, log, gateway,
                      describe_failure(e));
        throw;
    }
    outcome.warnings = log.warnings;
    write_run_log(ws, config.benchmark_identifier, started_at, outcome.exit_code, log, gateway, std::nullopt);
    return outcome;
}

validate::ValidationReport run_validate(const fs::path& card_path, const ValidateOptions& options,
                                        llm::Gateway* gateway) {
    const fs::path ws = options.workspace;
    const bool have_index = fs::exists(ws / "index" / "chunks.json");
    const bool have_sources = fs::exists(ws / "sources" / "knowledge_base.json");
    if (!have_index && !have_sources) {
        throw Error(ErrorCode::MissingWorkspace, "workspace " + ws.string() + " has neither index/ nor sources/");
    }
    const CardSchema schema = options.schema_path ? CardSchema::load(*options.schema_path) : workspace_schema(ws);
    const BenchmarkCard card = parse_card(util::read_file(card_path), schema);

    std::unique_ptr<llm::Gateway> owned;
    if (gateway == nullptr) {
        owned = llm::make_gateway(options.gateway);
        gateway = owned.get();
    }

    retrieval::HybridIndex index;
    if (have_index) {
        index = retrieval::HybridIndex::load(ws / "index");
    } else {
        json j = json::parse(util::read_file(ws / "sources" / "knowledge_base.json"), nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorCode::MalformedJson, "sources/knowledge_base.json is not valid JSON");
        }
        index = build_workspace_index(extract::knowledge_base_from_json(j), ws, *gateway);
    }

    validate::ValidationConfig vc;
    vc.threshold = options.threshold;
    vc.workers = options.workers;
    vc.strategy = validate::Strategy::None;
    auto result = validate::validation_loop(card, index, *gateway, vc);
    auto report = result.reports.back();
    fs::create_directories(ws / "validation");
    write_json(ws / "validation" / "validate_report.json", validate::to_json(report));
    return report;
}

CardSchema workspace_schema(const fs::path& workspace) {
    const fs::path path = workspace / "run_config.json";
    if (fs::exists(path)) {
        json j = json::parse(util::read_file(path), nullptr, false);
        if (!j.is_discarded() && j.contains("schema") && j["schema"].is_string()) {
            return CardSchema::load(j["schema"].get<std::string>());
        }
    }
    return CardSchema::bundled_default();
}

std::optional<llm::GatewayConfig> workspace_gateway_config(const fs::path& workspace) {
    const fs::path path = workspace / "run_config.json";
    if (!fs::exists(path)) {
        return std::nullopt;
    }
    json j = json::parse(util::read_file(path), nullptr, false);
    if (j.is_discarded() || !j.contains("gateway")) {
        return std::nullopt;
    }
    return llm::gateway_config_from_json(j["gateway"]);
}

}  // namespace benchcard::pipeline
