#include <catch2/catch_amalgamated.hpp>

#include "benchcard/error.hpp"
#include "benchcard/pipeline.hpp"
#include "benchcard/review.hpp"
#include "benchcard/util.hpp"
#include "support/test_support.hpp"

#include <algorithm>

using namespace benchcard;
using namespace benchcard::pipeline;
using benchcard::testing::fixtures_dir;
using benchcard::testing::TempDir;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig fixture_run(const fs::path& ws, validate::Strategy strategy = validate::Strategy::None) {
    RunConfig config;
    config.benchmark_identifier = "cards.demo";
    config.workspace = ws;
    config.catalog = (fixtures_dir() / "catalog").string();
    config.hub = (fixtures_dir() / "hub").string();
    config.paper = (fixtures_dir() / "paper.md").string();
    config.offline = true;
    config.strategy = strategy;
    config.workers = 2;
    return config;
}

json read_json(const fs::path& path) { return json::parse(util::read_file(path)); }

bool has_code(const std::function<void()>& fn, ErrorCode code) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code() == code;
    }
    return false;
}

}  // namespace

TEST_CASE("config validation", "[pipeline]") {
    TempDir ws;
    auto ok = fixture_run(ws.path());
    CHECK_NOTHROW(validate_config(ok));

    auto bad = ok;
    bad.benchmark_identifier = "";
    CHECK(has_code([&] { validate_config(bad); }, ErrorCode::InvalidConfig));
    bad = ok;
    bad.threshold = 1.0;
    CHECK(has_code([&] { validate_config(bad); }, ErrorCode::InvalidConfig));
    bad = ok;
    bad.max_rounds = -1;
    CHECK(has_code([&] { validate_config(bad); }, ErrorCode::InvalidConfig));
    bad = ok;
    bad.workers = 0;
    CHECK(has_code([&] { validate_config(bad); }, ErrorCode::InvalidConfig));
    for (auto mutate : std::vector<std::function<void(RunConfig&)>>{
                 [](RunConfig& c) { c.catalog = "https://example.org/catalog"; },
                 [](RunConfig& c) { c.hub = "http://example.org"; },
                 [](RunConfig& c) { c.paper = "https://arxiv.org/abs/0000.00000"; },
                 [](RunConfig& c) { c.converter_url = "http://localhost:5001/convert"; },
                 [](RunConfig& c) { c.gateway.llm_endpoint = "http://localhost:8000/v1/chat/completions"; }}) {
        bad = ok;
        mutate(bad);
        CHECK(has_code([&] { validate_config(bad); }, ErrorCode::InvalidConfig));
        bad.offline = false;
        CHECK_NOTHROW(validate_config(bad));
    }
}

TEST_CASE("offline run with a URL catalog fails before any phase", "[pipeline]") {
    TempDir ws;
    auto config = fixture_run(ws / "w");
    config.catalog = "https://example.org/catalog";
    auto gw = benchcard::testing::fixture_gateway();
    CHECK(has_code([&] { run_generate(config, gw.get()); }, ErrorCode::InvalidConfig));
    CHECK_FALSE(fs::exists(ws / "w" / "sources"));
    CHECK_FALSE(fs::exists(ws / "w" / "card_draft.json"));
    CHECK(gw->log().records().empty());
}

TEST_CASE("generate without remediation", "[pipeline]") {
    TempDir ws;
    auto gw = benchcard::testing::fixture_gateway();
    const auto outcome = run_generate(fixture_run(ws.path()), gw.get());
    CHECK(outcome.exit_code == kExitFlagged);
    CHECK(outcome.flag_count == 1);
    CHECK(outcome.rounds == 1);

    for (const char* artifact :
         {"run_config.json", "run_log.json", "card_draft.json", "card_final.json", "validation/round_1.json",
          "sources/knowledge_base.json", "sources/unitxt_card.json", "index/chunks.json", "index/terms.json"}) {
        INFO(artifact);
        REQUIRE(fs::exists(ws / artifact));
        CHECK_NOTHROW(read_json(ws / artifact));
    }
    CHECK(fs::exists(ws / "index" / "embeddings.f32"));
    CHECK_FALSE(fs::exists(ws / "validation" / "round_2.json"));

    const auto schema = CardSchema::bundled_default();
    const auto draft = parse_card(util::read_file(ws / "card_draft.json"), schema);
    const auto final_card = parse_card(util::read_file(ws / "card_final.json"), schema);
    CHECK(check_completeness(draft, schema).empty());
    CHECK(check_completeness(final_card, schema).empty());
    CHECK(final_card.field("dataset")->status == FieldStatus::Flagged);
    CHECK(final_card.field("risks")->text.find("<!-- generated-risks:begin -->") != std::string::npos);

    const auto kb = extract::knowledge_base_from_json(read_json(ws / "sources" / "knowledge_base.json"));
    CHECK(kb.documents.size() >= 4);
    CHECK(kb.documents.front().origin == extract::Origin::UnitxtCard);

    const auto log = read_json(ws / "run_log.json");
    CHECK(log.at("exit_code") == kExitFlagged);
    std::vector<std::string> phases;
    for (const auto& p : log.at("phases")) {
        phases.push_back(p.at("name").get<std::string>());
        CHECK(p.at("ok") == true);
    }
    CHECK(phases == std::vector<std::string>{"extraction", "composition", "index", "validation"});
    CHECK(log.at("calls").size() == gw->log().records().size());

    const auto report = validate::report_from_json(read_json(ws / "validation" / "round_1.json"));
    CHECK(report.flag_count() == 1);
}

TEST_CASE("generate with automatic remediation", "[pipeline]") {
    TempDir ws;
    auto gw = benchcard::testing::fixture_gateway();
    const auto outcome = run_generate(fixture_run(ws.path(), validate::Strategy::Auto), gw.get());
    CHECK(outcome.exit_code == kExitClean);
    CHECK(outcome.flag_count == 0);
    CHECK(outcome.rounds == 2);
    const auto round2 = validate::report_from_json(read_json(ws / "validation" / "round_2.json"));
    CHECK(round2.flag_count() == 0);
    const auto final_card = parse_card(util::read_file(ws / "card_final.json"), CardSchema::bundled_default());
    CHECK(final_card.field("dataset")->revision == 1);
    CHECK(final_card.field("dataset")->text.find("1,200") != std::string::npos);
}

TEST_CASE("generate with review creates a session", "[pipeline]") {
    TempDir ws;
    auto gw = benchcard::testing::fixture_gateway();
    const auto outcome = run_generate(fixture_run(ws.path(), validate::Strategy::Review), gw.get());
    CHECK(outcome.exit_code == kExitFlagged);
    review::SessionStore store(ws.path());
    REQUIRE(store.exists());
    const auto session = store.load();
    REQUIRE_FALSE(session.atoms.empty());
    CHECK(session.atoms.front().flagged);
    CHECK(session.undecided_flagged().size() == 1);
}

TEST_CASE("failed phases are recorded in the run log", "[pipeline]") {
    TempDir ws;
    auto config = fixture_run(ws.path());
    config.benchmark_identifier = "cards.missing";
    auto gw = benchcard::testing::fixture_gateway();
    try {
        run_generate(config, gw.get());
        FAIL("expected a phase error");
    } catch (const PhaseError& e) {
        CHECK(e.phase() == "extraction");
        CHECK(e.code() == ErrorCode::CardNotFound);
    }
    const auto log = read_json(ws / "run_log.json");
    CHECK(log.at("exit_code") == kExitFailure);
    CHECK(log.at("phases").back().at("ok") == false);
}

TEST_CASE("run_validate", "[pipeline]") {
    TempDir ws;
    auto gw = benchcard::testing::fixture_gateway();

    SECTION("missing workspace") {
        util::write_file_atomic(ws / "card.json", serialize_card(benchcard::testing::fixture_card()));
        CHECK(has_code([&] { run_validate(ws / "card.json", ValidateOptions{ws.path()}, gw.get()); },
                       ErrorCode::MissingWorkspace));
    }

    SECTION("against a generated workspace") {
        run_generate(fixture_run(ws.path(), validate::Strategy::Auto), gw.get());
        const auto first = run_validate(ws / "card_final.json", ValidateOptions{ws.path()}, gw.get());
        const auto second = run_validate(ws / "card_final.json", ValidateOptions{ws.path()}, gw.get());
        CHECK(first.flag_count() == 0);
        CHECK(validate::to_json(first) == validate::to_json(second));
        CHECK(fs::exists(ws / "validation" / "validate_report.json"));

        // A fabricated claim in one field is caught.
        auto card = parse_card(util::read_file(ws / "card_final.json"), CardSchema::bundled_default());
        card.field("methodology")->text = "The demo benchmark contains 50,000 questions.";
        util::write_file_atomic(ws / "fabricated.json", serialize_card(card));
        const auto report = run_validate(ws / "fabricated.json", ValidateOptions{ws.path()}, gw.get());
        CHECK(report.flag_count() == 1);
        CHECK(std::all_of(report.atoms.begin(), report.atoms.end(), [](const validate::AtomScore& a) {
            return a.flagged == (a.field_id == "methodology");
        }));

        // Without index/ the index is rebuilt from sources/.
        fs::remove_all(ws / "index");
        const auto rebuilt = run_validate(ws / "card_final.json", ValidateOptions{ws.path()}, gw.get());
        CHECK(validate::to_json(rebuilt) == validate::to_json(first));
    }
}

// ---------------------------------------------------------------------------
// CLI

namespace {

std::vector<std::string> generate_args(const fs::path& ws, const std::string& remediate) {
    return {"generate",  "cards.demo",
            "--offline", "--workspace",
            ws.string(), "--catalog",
            (fixtures_dir() / "catalog").string(), "--hub",
            (fixtures_dir() / "hub").string(), "--paper",
            (fixtures_dir() / "paper.md").string(), "--scripted",
            (fixtures_dir() / "scripted_gateway.json").string(), "--remediate",
            remediate};
}

}  // namespace

TEST_CASE("cli exit codes", "[pipeline]") {
    TempDir ws;
    SECTION("flagged run exits 3") {
        const auto out = benchcard::testing::run_cli(generate_args(ws / "a", "none"));
        INFO(out.out);
        CHECK(out.exit_code == 3);
        CHECK(fs::exists(ws / "a" / "card_final.json"));

        const auto val = benchcard::testing::run_cli(
                {"validate", (ws / "a" / "card_draft.json").string(), "--workspace", (ws / "a").string(), "--scripted",
                 (fixtures_dir() / "scripted_gateway.json").string()});
        INFO(val.out);
        CHECK(val.exit_code == 3);
    }
    SECTION("auto remediation exits 0") {
        const auto out = benchcard::testing::run_cli(generate_args(ws / "b", "auto"));
        INFO(out.out);
        CHECK(out.exit_code == 0);
    }
    SECTION("review then apply") {
        const auto out = benchcard::testing::run_cli(generate_args(ws / "c", "review"));
        CHECK(out.exit_code == 3);
        const auto blocked = benchcard::testing::run_cli({"review", "apply", "--workspace", (ws / "c").string()});
        INFO(blocked.out);
        CHECK(blocked.exit_code == 1);

        review::SessionStore store(ws / "c");
        for (const auto& id : store.load().undecided_flagged()) {
            store.record_decision(id, review::Decision{review::Action::Regenerate, std::nullopt, "t"});
        }
        const auto applied = benchcard::testing::run_cli({"review", "apply", "--workspace", (ws / "c").string()});
        INFO(applied.out);
        CHECK(applied.exit_code == 0);
        const auto final_card = parse_card(util::read_file(ws / "c" / "card_final.json"), CardSchema::bundled_default());
        CHECK(final_card.field("dataset")->text.find("1,200") != std::string::npos);
    }
    SECTION("offline with a URL is a failure") {
        auto args = generate_args(ws / "d", "none");
        args[6] = "https://example.org/catalog";
        const auto out = benchcard::testing::run_cli(args);
        CHECK(out.exit_code == 1);
        CHECK_FALSE(fs::exists(ws / "d" / "card_draft.json"));
    }
    SECTION("usage errors") {
        CHECK(benchcard::testing::run_cli({"generate"}).exit_code != 0);
        CHECK(benchcard::testing::run_cli({"generate", "cards.demo", "--remediate", "sometimes"}).exit_code != 0);
    }
}
