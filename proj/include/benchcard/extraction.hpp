#pragma once

#include "benchcard/card.hpp"
#include "benchcard/error.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace benchcard::extract {

enum class Origin { UnitxtCard, UnitxtSupplementary, HubMetadata, Publication, UserSupplied };

std::string_view to_string(Origin origin);
Origin origin_from_string(std::string_view text);
// Position in the knowledge-base ordering (unitxt_card first).
int origin_priority(Origin origin);

struct SourceDocument {
    std::string source_id;
    Origin origin = Origin::UserSupplied;
    std::string title;
    std::string body_markdown;
    std::string fetched_at;
    std::string locator;

    bool operator==(const SourceDocument&) const = default;
};

struct KnowledgeBase {
    std::string benchmark_identifier;
    std::vector<SourceDocument> documents;

    const SourceDocument* find(std::string_view source_id) const;
    bool operator==(const KnowledgeBase&) const = default;
};

nlohmann::json to_json(const SourceDocument& doc);
SourceDocument source_document_from_json(const nlohmann::json& j);
nlohmann::json to_json(const KnowledgeBase& kb);
KnowledgeBase knowledge_base_from_json(const nlohmann::json& j);

struct ExtractedIdentifiers {
    std::optional<std::string> hub_repo_id;
    std::optional<std::string> publication_url;

    bool operator==(const ExtractedIdentifiers&) const = default;
};

bool is_valid_repo_id(std::string_view repo_id);

// A fetched payload plus where and when it came from.
struct Fetched {
    std::string body;
    std::string locator;
    std::string fetched_at;
};

// HTTP GET with retries and an on-disk cache keyed by sha256(url). A cache hit
// returns identical bytes and the original fetch time.
class Fetcher {
public:
    struct Options {
        std::optional<std::filesystem::path> cache_dir;
        int retries = 2;
        std::chrono::milliseconds backoff{200};
        std::chrono::seconds timeout{60};
        std::optional<std::string> bearer_token;
    };

    Fetcher();
    explicit Fetcher(Options options);

    // nullopt on HTTP 404; throws `unreachable` when the host cannot be
    // reached after retries or answers with another error status.
    std::optional<Fetched> get(const std::string& url, ErrorCode unreachable) const;

    // Local path of the cached body for `url`, fetching it if needed.
    std::optional<std::filesystem::path> get_to_file(const std::string& url, ErrorCode unreachable) const;

private:
    Options m_options;
};

class CatalogSource {
public:
    virtual ~CatalogSource() = default;
    // nullopt when the catalog has no such entry; throws CatalogUnreachable.
    virtual std::optional<Fetched> fetch(const std::string& identifier) = 0;
    virtual std::string describe() const = 0;
};

// Directory of catalog JSON files: "a.b.c" lives at <dir>/a/b/c.json.
class LocalCatalog : public CatalogSource {
public:
    explicit LocalCatalog(std::filesystem::path dir);
    std::optional<Fetched> fetch(const std::string& identifier) override;
    std::string describe() const override { return m_dir.string(); }

private:
    std::filesystem::path m_dir;
};

// GET {base}/{identifier with '.' -> '/'}.json
class RemoteCatalog : public CatalogSource {
public:
    RemoteCatalog(std::string base_url, std::shared_ptr<const Fetcher> fetcher);
    std::optional<Fetched> fetch(const std::string& identifier) override;
    std::string describe() const override { return m_base; }

private:
    std::string m_base;
    std::shared_ptr<const Fetcher> m_fetcher;
};

class HubSource {
public:
    virtual ~HubSource() = default;
    // Both nullopt when the repository is unknown; throws HubUnreachable.
    virtual std::optional<Fetched> readme(const std::string& repo_id) = 0;
    virtual std::optional<Fetched> info(const std::string& repo_id) = 0;
};

// <dir>/<namespace>/<name>/README.md and info.json
class LocalHub : public HubSource {
public:
    explicit LocalHub(std::filesystem::path dir);
    std::optional<Fetched> readme(const std::string& repo_id) override;
    std::optional<Fetched> info(const std::string& repo_id) override;

private:
    std::filesystem::path m_dir;
};

// GET {base}/api/datasets/{repo} and {base}/datasets/{repo}/raw/main/README.md
class RemoteHub : public HubSource {
public:
    RemoteHub(std::string base_url, std::shared_ptr<const Fetcher> fetcher);
    std::optional<Fetched> readme(const std::string& repo_id) override;
    std::optional<Fetched> info(const std::string& repo_id) override;

private:
    std::string m_base;
    std::shared_ptr<const Fetcher> m_fetcher;
};

// Turns a non-markdown document into markdown.
class ConverterSource {
public:
    virtual ~ConverterSource() = default;
    virtual std::string convert_file(const std::filesystem::path& path) = 0;
    // Converters that cannot take URLs get the downloaded file instead.
    virtual bool accepts_urls() const { return false; }
    virtual std::string convert_url(const std::string& url);
};

// Runs `program [args...] <document path>`; stdout is the markdown.
class CommandConverter : public ConverterSource {
public:
    explicit CommandConverter(std::vector<std::string> argv);
    std::string convert_file(const std::filesystem::path& path) override;

private:
    std::vector<std::string> m_argv;
};

// POSTs file bytes (application/octet-stream) or {"url": ...} JSON; the
// response body is the markdown.
class HttpConverter : public ConverterSource {
public:
    explicit HttpConverter(std::string endpoint, std::chrono::seconds timeout = std::chrono::seconds(300));
    std::string convert_file(const std::filesystem::path& path) override;
    bool accepts_urls() const override { return true; }
    std::string convert_url(const std::string& url) override;

private:
    std::string m_endpoint;
    std::chrono::seconds m_timeout;
};

class FunctionConverter : public ConverterSource {
public:
    using Fn = std::function<std::string(const std::string& locator)>;
    explicit FunctionConverter(Fn fn) : m_fn(std::move(fn)) {}
    std::string convert_file(const std::filesystem::path& path) override { return m_fn(path.string()); }
    bool accepts_urls() const override { return true; }
    std::string convert_url(const std::string& url) override { return m_fn(url); }

private:
    Fn m_fn;
};

// ---------------------------------------------------------------------------
// Operations

UnitxtCardDoc fetch_unitxt_card(const std::string& identifier, CatalogSource& catalog);

struct SupplementaryResult {
    std::vector<SourceDocument> documents;
    std::vector<std::string> warnings;
};

SupplementaryResult resolve_supplementary(const UnitxtCardDoc& card, CatalogSource& catalog);

// Markdown view of the card itself (its description as prose plus the JSON).
SourceDocument card_document(const UnitxtCardDoc& card, const std::string& fetched_at,
                             const std::string& locator);

ExtractedIdentifiers extract_identifiers(const UnitxtCardDoc& card);

SourceDocument fetch_hub_metadata(const std::string& repo_id, HubSource& hub);

// Renders the "## Hub metadata" section; absent attributes are omitted.
std::string render_hub_metadata(const nlohmann::json& info);

// `converter` and `fetcher` may be null; they are only needed for non-.md
// files and URLs respectively.
SourceDocument ingest_publication(const std::string& locator, ConverterSource* converter,
                                  const Fetcher* fetcher = nullptr);

SourceDocument user_document(const std::filesystem::path& path);

KnowledgeBase assemble_knowledge_base(const std::string& benchmark_id, std::vector<SourceDocument> docs);

}  // namespace benchcard::extract
