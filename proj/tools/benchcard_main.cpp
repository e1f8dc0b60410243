#include "benchcard/error.hpp"
#include "benchcard/pipeline.hpp"
#include "benchcard/review.hpp"
#include "benchcard/review_server.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

namespace {

using namespace benchcard;

struct GatewayFlags {
    std::string config_path;
    std::string scripted;
};

void add_gateway_flags(CLI::App* cmd, GatewayFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON file with gateway settings");
    cmd->add_option("--scripted", flags.scripted, "Use a scripted chat backend from this JSON file");
}

llm::GatewayConfig resolve_gateway(const GatewayFlags& flags,
                                   const std::optional<llm::GatewayConfig>& fallback = std::nullopt) {
    llm::GatewayConfig config;
    if (!flags.config_path.empty() || !fallback) {
        config = llm::load_gateway_config(flags.config_path.empty() ? std::nullopt
                                                                    : std::optional<std::string>(flags.config_path));
    } else {
        config = *fallback;
    }
    if (!flags.scripted.empty()) {
        config.scripted_path = flags.scripted;
    }
    return config;
}

int report_error(const Error& e) {
    spdlog::error("{} ({})", e.what(), to_string(e.code()));
    return pipeline::kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generate and validate benchmark cards"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // generate
    pipeline::RunConfig run;
    GatewayFlags gen_gateway;
    std::string remediate = "none";
    std::string paper, schema, taxonomy;
    auto* generate = app.add_subcommand("generate", "Run extraction, composition and validation");
    generate->add_option("identifier", run.benchmark_identifier, "Catalog card identifier, e.g. cards.demo")->required();
    generate->add_option("--workspace", run.workspace, "Workspace directory")->capture_default_str();
    generate->add_option("--catalog", run.catalog, "Catalog directory or base URL")->envname("BENCHCARD_CATALOG");
    generate->add_option("--hub", run.hub, "Dataset hub directory or base URL")->envname("BENCHCARD_HUB");
    generate->add_option("--paper", paper, "Publication path or URL (overrides the card's link)");
    generate->add_option("--document", run.user_documents, "Extra markdown document to include");
    generate->add_option("--converter", run.converter_command,
                         "Command converting a document to markdown (file path appended)")
            ->expected(1, -1)
            ->delimiter(',');
    generate->add_option("--converter-url", run.converter_url, "HTTP converter endpoint");
    generate->add_option("--schema", schema, "Card schema JSON");
    generate->add_option("--taxonomy", taxonomy, "Risk taxonomy JSON");
    generate->add_option("--threshold", run.threshold, "Flag atoms scoring below this")->check(CLI::Range(0.0, 1.0));
    generate->add_option("--remediate", remediate, "auto, review or none")
            ->check(CLI::IsMember({"auto", "review", "none"}));
    generate->add_option("--max-rounds", run.max_rounds, "Revision rounds for --remediate auto")
            ->check(CLI::NonNegativeNumber);
    generate->add_option("--workers", run.workers, "Parallel gateway tasks")->check(CLI::PositiveNumber);
    generate->add_flag("--offline", run.offline, "Refuse any network source");
    add_gateway_flags(generate, gen_gateway);

    // validate
    std::string card_path;
    pipeline::ValidateOptions val;
    std::string val_schema;
    GatewayFlags val_gateway;
    auto* validate_cmd = app.add_subcommand("validate", "Score an existing card against a workspace");
    validate_cmd->add_option("card", card_path, "Card JSON")->required()->check(CLI::ExistingFile);
    validate_cmd->add_option("--workspace", val.workspace, "Workspace directory")->required();
    validate_cmd->add_option("--schema", val_schema, "Card schema JSON");
    validate_cmd->add_option("--threshold", val.threshold, "Flag atoms scoring below this")
            ->check(CLI::Range(0.0, 1.0));
    add_gateway_flags(validate_cmd, val_gateway);

    // review
    auto* review_cmd = app.add_subcommand("review", "Human review of flagged statements");
    review_cmd->require_subcommand(1);
    std::filesystem::path review_ws;
    review::ServerOptions server_options;
    std::string static_dir;
    GatewayFlags review_gateway;
    auto* serve = review_cmd->add_subcommand("serve", "Serve the review API");
    serve->add_option("--workspace", review_ws, "Workspace directory")->required();
    serve->add_option("--port", server_options.port, "TCP port")->capture_default_str();
    serve->add_option("--host", server_options.host, "Bind address")->capture_default_str();
    serve->add_option("--ui", static_dir, "Directory with the built review UI");
    add_gateway_flags(serve, review_gateway);
    auto* apply = review_cmd->add_subcommand("apply", "Apply recorded decisions and write card_final.json");
    apply->add_option("--workspace", review_ws, "Workspace directory")->required();
    add_gateway_flags(apply, review_gateway);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    // The gateway is optional for review: only regenerate decisions need it.
    auto review_gateway_for = [&](const std::filesystem::path& ws) -> std::unique_ptr<llm::Gateway> {
        try {
            return llm::make_gateway(resolve_gateway(review_gateway, pipeline::workspace_gateway_config(ws)));
        } catch (const Error& e) {
            spdlog::warn("no LLM gateway for regenerate decisions: {}", e.what());
            return nullptr;
        }
    };

    try {
        if (generate->parsed()) {
            run.strategy = validate::strategy_from_string(remediate);
            if (!paper.empty()) run.paper = paper;
            if (!schema.empty()) run.schema_path = schema;
            if (!taxonomy.empty()) run.taxonomy_path = taxonomy;
            run.gateway = resolve_gateway(gen_gateway);
            auto outcome = pipeline::run_generate(run);
            spdlog::info("card written to {}; {} flagged statement(s) after {} round(s)",
                         (run.workspace / "card_final.json").string(), outcome.flag_count, outcome.rounds);
            return outcome.exit_code;
        }
        if (validate_cmd->parsed()) {
            if (!val_schema.empty()) val.schema_path = val_schema;
            val.gateway = resolve_gateway(val_gateway, pipeline::workspace_gateway_config(val.workspace));
            auto report = pipeline::run_validate(card_path, val);
            spdlog::info("{} statement(s), {} flagged", report.atoms.size(), report.flag_count());
            return report.flag_count() == 0 ? pipeline::kExitClean : pipeline::kExitFlagged;
        }
        if (serve->parsed()) {
            if (!static_dir.empty()) server_options.static_dir = static_dir;
            review::SessionStore store(review_ws);
            auto gateway = review_gateway_for(review_ws);
            return review::serve_until_signal(store, pipeline::workspace_schema(review_ws), gateway.get(),
                                              server_options);
        }
        if (apply->parsed()) {
            review::SessionStore store(review_ws);
            auto gateway = review_gateway_for(review_ws);
            auto result = store.finalize(pipeline::workspace_schema(review_ws), gateway.get());
            for (const auto& w : result.warnings) {
                spdlog::warn("{}", w);
            }
            std::cout << store.final_card_path().string() << "\n";
            return pipeline::kExitClean;
        }
    } catch (const Error& e) {
        return report_error(e);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return pipeline::kExitFailure;
    }
    return pipeline::kExitFailure;
}
