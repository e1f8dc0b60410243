#include <catch2/catch_amalgamated.hpp>

#include "benchcard/error.hpp"
#include "benchcard/extraction.hpp"
#include "benchcard/util.hpp"
#include "support/test_support.hpp"

using namespace benchcard;
using namespace benchcard::extract;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path catalog_dir() { return testing::fixtures_dir() / "catalog"; }
fs::path hub_dir() { return testing::fixtures_dir() / "hub"; }

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoError;
}

SourceDocument doc(std::string id, Origin origin) {
    return SourceDocument{std::move(id), origin, "t", "body", "2025-01-01T00:00:00Z", "loc"};
}

UnitxtCardDoc card_from(const json& raw) { return UnitxtCardDoc{"cards.inline", raw, scan_catalog_refs(raw)}; }

}  // namespace

TEST_CASE("fetch_unitxt_card from a local catalog", "[extraction]") {
    LocalCatalog catalog(catalog_dir());
    auto card = fetch_unitxt_card("cards.demo", catalog);
    REQUIRE(card.identifier == "cards.demo");
    REQUIRE(card.raw_json == json::parse(util::read_file(catalog_dir() / "cards" / "demo.json")));

    std::set<std::string> cited;
    for (const auto& a : card.cited_assets) {
        cited.insert(std::string(to_string(a.kind)) + ":" + a.identifier);
    }
    REQUIRE(cited == std::set<std::string>{"metric:metrics.accuracy", "template:templates.qa.simple",
                                           "task:tasks.qa.open"});

    REQUIRE(code_of([&] { fetch_unitxt_card("cards.missing", catalog); }) == ErrorCode::CardNotFound);
    REQUIRE(code_of([&] { fetch_unitxt_card("", catalog); }) == ErrorCode::PreconditionFailed);

    LocalCatalog nowhere(testing::fixtures_dir() / "no-such-catalog");
    REQUIRE(code_of([&] { fetch_unitxt_card("cards.demo", nowhere); }) == ErrorCode::CatalogUnreachable);
}

TEST_CASE("cited assets are exactly the catalog references in the card", "[extraction]") {
    testing::TempDir dir;
    fs::create_directories(dir / "cards");
    const std::string text = R"({"__type__": "task_card", "metrics": ["metrics.accuracy"],
        "templates": {"default": "templates.qa.simple"}, "note": "plain prose"})";
    util::write_file_atomic(dir / "cards" / "two.json", text);
    LocalCatalog catalog(dir.path());
    auto card = fetch_unitxt_card("cards.two", catalog);
    REQUIRE(card.cited_assets.size() == 2);
    std::map<std::string, AssetKind> kinds;
    for (const auto& a : card.cited_assets) {
        kinds[a.identifier] = a.kind;
    }
    REQUIRE(kinds == std::map<std::string, AssetKind>{{"metrics.accuracy", AssetKind::Metric},
                                                      {"templates.qa.simple", AssetKind::Template}});
}

TEST_CASE("resolve_supplementary", "[extraction]") {
    LocalCatalog catalog(catalog_dir());

    SECTION("no cited assets") {
        auto result = resolve_supplementary(card_from(json{{"__type__", "task_card"}}), catalog);
        REQUIRE(result.documents.empty());
        REQUIRE(result.warnings.empty());
    }

    SECTION("one present metric") {
        auto result = resolve_supplementary(card_from(json{{"metrics", {"metrics.accuracy"}}}), catalog);
        REQUIRE(result.documents.size() == 1);
        const auto& d = result.documents[0];
        REQUIRE(d.origin == Origin::UnitxtSupplementary);
        REQUIRE(d.source_id == "catalog:metrics.accuracy");
        const auto file = json::parse(util::read_file(catalog_dir() / "metrics" / "accuracy.json"));
        REQUIRE(d.body_markdown.find("```json\n" + file.dump(2) + "\n```") != std::string::npos);
        REQUIRE(d.body_markdown.rfind("# Metric metrics.accuracy\n", 0) == 0);
    }

    SECTION("one present and one absent asset") {
        auto result = resolve_supplementary(card_from(json{{"metrics", {"metrics.accuracy", "metrics.absent"}}}),
                                            catalog);
        REQUIRE(result.documents.size() == 1);
        REQUIRE(result.warnings.size() == 1);
        REQUIRE(result.warnings[0].find("metrics.absent") != std::string::npos);
    }
}

TEST_CASE("extract_identifiers", "[extraction]") {
    auto ids = extract_identifiers(card_from(json::parse(R"({"loader": {"__type__": "load_hf", "path": "org/dataset"}})")));
    REQUIRE(ids.hub_repo_id == "org/dataset");
    REQUIRE_FALSE(ids.publication_url);

    auto none = extract_identifiers(card_from(json{{"__type__", "task_card"}}));
    REQUIRE_FALSE(none.hub_repo_id);
    REQUIRE_FALSE(none.publication_url);

    auto url = extract_identifiers(
            card_from(json{{"__description__", "See https://arxiv.org/abs/0000.00000 for details."}}));
    REQUIRE(url.publication_url == "https://arxiv.org/abs/0000.00000");

    SECTION("first match wins, description before citation") {
        auto two = extract_identifiers(card_from(json{{"__description__", "Paper: https://example.org/a, code: https://example.org/b"},
                                                      {"citation", "https://doi.org/10.1/xyz"}}));
        REQUIRE(two.publication_url == "https://example.org/a");
    }

    SECTION("non-hub loaders and malformed paths are ignored") {
        auto csv = extract_identifiers(card_from(json::parse(R"({"loader": {"__type__": "load_csv", "path": "org/x"}})")));
        REQUIRE_FALSE(csv.hub_repo_id);
        auto bad = extract_identifiers(card_from(json::parse(R"({"loader": {"__type__": "load_hf", "path": "just-a-name"}})")));
        REQUIRE_FALSE(bad.hub_repo_id);
    }
}

TEST_CASE("fetch_hub_metadata", "[extraction]") {
    LocalHub hub(hub_dir());
    auto d = fetch_hub_metadata("org/demo-dataset", hub);
    REQUIRE(d.origin == Origin::HubMetadata);
    REQUIRE(d.source_id == "hub:org/demo-dataset");
    const auto readme = util::trim(util::read_file(hub_dir() / "org" / "demo-dataset" / "README.md"));
    REQUIRE(d.body_markdown.rfind(readme, 0) == 0);
    REQUIRE(d.body_markdown.find("## Hub metadata") != std::string::npos);
    REQUIRE(d.body_markdown.find("- License: cc-by-4.0") != std::string::npos);
    REQUIRE(d.body_markdown.find("- Size categories: 1K<n<10K") != std::string::npos);
    REQUIRE(d.body_markdown.find("- Languages: en") != std::string::npos);

    REQUIRE(code_of([&] { fetch_hub_metadata("org/unknown", hub); }) == ErrorCode::RepoNotFound);
    REQUIRE(code_of([&] { fetch_hub_metadata("not a repo", hub); }) == ErrorCode::InvalidRepoId);

    SECTION("missing license line is omitted") {
        auto text = render_hub_metadata(json::parse(R"({"id": "a/b", "cardData": {"language": ["en", "fr"]}})"));
        REQUIRE(text.find("License") == std::string::npos);
        REQUIRE(text.find("- Languages: en, fr") != std::string::npos);
        REQUIRE(render_hub_metadata(json::object()).empty());
    }
}

TEST_CASE("ingest_publication", "[extraction]") {
    const auto paper = testing::fixtures_dir() / "paper.md";
    auto d = ingest_publication(paper.string(), nullptr);
    REQUIRE(d.body_markdown == util::read_file(paper));
    REQUIRE(d.origin == Origin::Publication);
    REQUIRE(d.source_id == "publication:paper.md");
    REQUIRE(d.title == "Demo: A Small Benchmark for Open-Domain Question Answering");

    REQUIRE(code_of([&] { ingest_publication("https://example.org/paper.pdf", nullptr); }) ==
            ErrorCode::ConverterNotConfigured);
    REQUIRE(code_of([&] { ingest_publication("/no/such/file.md", nullptr); }) == ErrorCode::FileNotFound);

    SECTION("scripted converter") {
        FunctionConverter converter([](const std::string&) { return std::string("# Fixed\n\nConverted text.\n"); });
        auto c = ingest_publication("https://example.org/paper.pdf", &converter);
        REQUIRE(c.body_markdown == "# Fixed\n\nConverted text.\n");
        FunctionConverter empty([](const std::string&) { return std::string("  \n"); });
        REQUIRE(code_of([&] { ingest_publication("https://example.org/paper.pdf", &empty); }) ==
                ErrorCode::ConversionFailed);
    }

    SECTION("command converter gets the path as its argument") {
        testing::TempDir dir;
        util::write_file_atomic(dir / "paper.txt", "# From a command\n\nbody\n");
        CommandConverter converter({"cat"});
        auto c = ingest_publication((dir / "paper.txt").string(), &converter);
        REQUIRE(c.body_markdown == "# From a command\n\nbody\n");
        CommandConverter failing({"false"});
        REQUIRE(code_of([&] { ingest_publication((dir / "paper.txt").string(), &failing); }) ==
                ErrorCode::ConversionFailed);
    }
}

TEST_CASE("assemble_knowledge_base", "[extraction]") {
    REQUIRE(code_of([] { assemble_knowledge_base("x", {}); }) == ErrorCode::EmptyKnowledgeBase);
    REQUIRE(code_of([] {
                assemble_knowledge_base("x", {doc("a", Origin::Publication), doc("a", Origin::HubMetadata)});
            }) == ErrorCode::DuplicateSourceId);

    auto kb = assemble_knowledge_base("x", {doc("u", Origin::UserSupplied), doc("p", Origin::Publication),
                                            doc("h", Origin::HubMetadata), doc("s2", Origin::UnitxtSupplementary),
                                            doc("c", Origin::UnitxtCard), doc("s1", Origin::UnitxtSupplementary)});
    std::vector<std::string> ids;
    for (const auto& d : kb.documents) {
        ids.push_back(d.source_id);
    }
    REQUIRE(ids == std::vector<std::string>{"c", "s2", "s1", "h", "p", "u"});
    REQUIRE(knowledge_base_from_json(to_json(kb)) == kb);
}

TEST_CASE("extraction is repeatable on fixtures", "[extraction]") {
    auto build = [] {
        LocalCatalog catalog(catalog_dir());
        LocalHub hub(hub_dir());
        auto card = fetch_unitxt_card("cards.demo", catalog);
        std::vector<SourceDocument> docs{card_document(card, "2025-01-01T00:00:00Z", catalog.describe())};
        for (auto& d : resolve_supplementary(card, catalog).documents) {
            docs.push_back(d);
        }
        docs.push_back(fetch_hub_metadata(*extract_identifiers(card).hub_repo_id, hub));
        docs.push_back(ingest_publication((testing::fixtures_dir() / "paper.md").string(), nullptr));
        return to_json(assemble_knowledge_base("cards.demo", std::move(docs))).dump();
    };
    REQUIRE(build() == build());
}
