#include "benchcard/extraction.hpp"

#include "benchcard/http.hpp"
#include "benchcard/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <thread>

namespace benchcard::extract {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::optional<Fetched> read_local(const fs::path& path) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        return std::nullopt;
    }
    return Fetched{util::read_file(path), path.string(), util::file_mtime_rfc3339(path)};
}

std::string strip_trailing_slash(std::string url) {
    while (!url.empty() && url.back() == '/') {
        url.pop_back();
    }
    return url;
}

std::string identifier_to_path(const std::string& identifier) {
    std::string out = identifier;
    std::replace(out.begin(), out.end(), '.', '/');
    return out;
}

}  // namespace

std::string_view to_string(Origin origin) {
    switch (origin) {
    case Origin::UnitxtCard: return "unitxt_card";
    case Origin::UnitxtSupplementary: return "unitxt_supplementary";
    case Origin::HubMetadata: return "hub_metadata";
    case Origin::Publication: return "publication";
    case Origin::UserSupplied: return "user_supplied";
    }
    return "user_supplied";
}

Origin origin_from_string(std::string_view text) {
    if (text == "unitxt_card") return Origin::UnitxtCard;
    if (text == "unitxt_supplementary") return Origin::UnitxtSupplementary;
    if (text == "hub_metadata") return Origin::HubMetadata;
    if (text == "publication") return Origin::Publication;
    if (text == "user_supplied") return Origin::UserSupplied;
    throw Error(ErrorCode::MalformedJson, "unknown source origin '" + std::string(text) + "'");
}

int origin_priority(Origin origin) { return static_cast<int>(origin); }

const SourceDocument* KnowledgeBase::find(std::string_view source_id) const {
    auto it = std::find_if(documents.begin(), documents.end(),
                           [&](const SourceDocument& d) { return d.source_id == source_id; });
    return it == documents.end() ? nullptr : &*it;
}

json to_json(const SourceDocument& doc) {
    return json{{"source_id", doc.source_id},
                {"origin", to_string(doc.origin)},
                {"title", doc.title},
                {"body_markdown", doc.body_markdown},
                {"fetched_at", doc.fetched_at},
                {"locator", doc.locator}};
}

SourceDocument source_document_from_json(const json& j) {
    try {
        SourceDocument doc;
        doc.source_id = j.at("source_id").get<std::string>();
        doc.origin = origin_from_string(j.at("origin").get<std::string>());
        doc.title = j.value("title", "");
        doc.body_markdown = j.at("body_markdown").get<std::string>();
        doc.fetched_at = j.value("fetched_at", "");
        doc.locator = j.value("locator", "");
        return doc;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedJson, std::string("source document: ") + e.what());
    }
}

json to_json(const KnowledgeBase& kb) {
    json docs = json::array();
    for (const auto& d : kb.documents) {
        docs.push_back(to_json(d));
    }
    return json{{"benchmark_identifier", kb.benchmark_identifier}, {"documents", docs}};
}

KnowledgeBase knowledge_base_from_json(const json& j) {
    KnowledgeBase kb;
    try {
        kb.benchmark_identifier = j.at("benchmark_identifier").get<std::string>();
        for (const auto& d : j.at("documents")) {
            kb.documents.push_back(source_document_from_json(d));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedJson, std::string("knowledge base: ") + e.what());
    }
    return kb;
}

// ---------------------------------------------------------------------------
// Fetcher

Fetcher::Fetcher() : Fetcher(Options{}) {}

Fetcher::Fetcher(Options options) : m_options(std::move(options)) {}

std::optional<Fetched> Fetcher::get(const std::string& url, ErrorCode unreachable) const {
    fs::path body_path;
    fs::path meta_path;
    if (m_options.cache_dir) {
        const auto key = util::sha256_hex(url);
        body_path = *m_options.cache_dir / (key + ".body");
        meta_path = *m_options.cache_dir / (key + ".json");
        std::error_code ec;
        if (fs::is_regular_file(body_path, ec) && fs::is_regular_file(meta_path, ec)) {
            const auto meta = json::parse(util::read_file(meta_path));
            return Fetched{util::read_file(body_path), url, meta.value("fetched_at", "")};
        }
    }

    http::Headers headers;
    if (m_options.bearer_token) {
        headers.emplace("Authorization", "Bearer " + *m_options.bearer_token);
    }
    std::string last_problem = "no attempt made";
    auto delay = m_options.backoff;
    for (int attempt = 0; attempt <= m_options.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        auto res = http::get(url, headers, m_options.timeout);
        if (!res) {
            last_problem = "connection failed";
            continue;
        }
        if (res->status == 404) {
            return std::nullopt;
        }
        if (res->status >= 500 || res->status == 429) {
            last_problem = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            throw Error(unreachable, "GET " + url + " answered HTTP " + std::to_string(res->status));
        }
        Fetched fetched{std::move(res->body), url, util::now_rfc3339()};
        if (m_options.cache_dir) {
            util::write_file_atomic(body_path, fetched.body);
            util::write_file_atomic(meta_path,
                                    json{{"locator", url}, {"fetched_at", fetched.fetched_at}}.dump(2));
        }
        return fetched;
    }
    throw Error(unreachable, "GET " + url + " failed after " + std::to_string(m_options.retries + 1) +
                                     " attempts: " + last_problem);
}

std::optional<fs::path> Fetcher::get_to_file(const std::string& url, ErrorCode unreachable) const {
    auto fetched = get(url, unreachable);
    if (!fetched) {
        return std::nullopt;
    }
    if (m_options.cache_dir) {
        return *m_options.cache_dir / (util::sha256_hex(url) + ".body");
    }
    const auto tmp = fs::temp_directory_path() / ("benchcard-" + util::sha256_hex(url) + ".body");
    util::write_file_atomic(tmp, fetched->body);
    return tmp;
}

// ---------------------------------------------------------------------------
// Catalogs

LocalCatalog::LocalCatalog(fs::path dir) : m_dir(std::move(dir)) {}

std::optional<Fetched> LocalCatalog::fetch(const std::string& identifier) {
    std::error_code ec;
    if (!fs::is_directory(m_dir, ec)) {
        throw Error(ErrorCode::CatalogUnreachable, "catalog directory " + m_dir.string() + " does not exist");
    }
    return read_local(m_dir / (identifier_to_path(identifier) + ".json"));
}

RemoteCatalog::RemoteCatalog(std::string base_url, std::shared_ptr<const Fetcher> fetcher)
        : m_base(strip_trailing_slash(std::move(base_url))), m_fetcher(std::move(fetcher)) {}

std::optional<Fetched> RemoteCatalog::fetch(const std::string& identifier) {
    return m_fetcher->get(m_base + "/" + identifier_to_path(identifier) + ".json",
                          ErrorCode::CatalogUnreachable);
}

// ---------------------------------------------------------------------------
// Hubs

LocalHub::LocalHub(fs::path dir) : m_dir(std::move(dir)) {}

std::optional<Fetched> LocalHub::readme(const std::string& repo_id) {
    std::error_code ec;
    if (!fs::is_directory(m_dir, ec)) {
        throw Error(ErrorCode::HubUnreachable, "hub directory " + m_dir.string() + " does not exist");
    }
    return read_local(m_dir / repo_id / "README.md");
}

std::optional<Fetched> LocalHub::info(const std::string& repo_id) {
    std::error_code ec;
    if (!fs::is_directory(m_dir, ec)) {
        throw Error(ErrorCode::HubUnreachable, "hub directory " + m_dir.string() + " does not exist");
    }
    return read_local(m_dir / repo_id / "info.json");
}

RemoteHub::RemoteHub(std::string base_url, std::shared_ptr<const Fetcher> fetcher)
        : m_base(strip_trailing_slash(std::move(base_url))), m_fetcher(std::move(fetcher)) {}

std::optional<Fetched> RemoteHub::readme(const std::string& repo_id) {
    return m_fetcher->get(m_base + "/datasets/" + repo_id + "/raw/main/README.md", ErrorCode::HubUnreachable);
}

std::optional<Fetched> RemoteHub::info(const std::string& repo_id) {
    return m_fetcher->get(m_base + "/api/datasets/" + repo_id, ErrorCode::HubUnreachable);
}

// ---------------------------------------------------------------------------
// Converters

std::string ConverterSource::convert_url(const std::string& url) {
    throw Error(ErrorCode::ConversionFailed, "converter cannot take URLs directly: " + url);
}

CommandConverter::CommandConverter(std::vector<std::string> argv) : m_argv(std::move(argv)) {
    if (m_argv.empty()) {
        throw Error(ErrorCode::ConverterNotConfigured, "converter command is empty");
    }
}

std::string CommandConverter::convert_file(const fs::path& path) {
    auto argv = m_argv;
    argv.push_back(path.string());
    const auto result = util::run_command(argv);
    if (result.exit_code != 0) {
        throw Error(ErrorCode::ConversionFailed,
                    "converter '" + m_argv.front() + "' exited with " + std::to_string(result.exit_code));
    }
    if (util::trim(result.out).empty()) {
        throw Error(ErrorCode::ConversionFailed, "converter produced no markdown for " + path.string());
    }
    return result.out;
}

HttpConverter::HttpConverter(std::string endpoint, std::chrono::seconds timeout)
        : m_endpoint(std::move(endpoint)), m_timeout(timeout) {}

std::string HttpConverter::convert_file(const fs::path& path) {
    http::Headers headers{{"X-Filename", path.filename().string()}};
    auto res = http::post(m_endpoint, util::read_file(path), "application/octet-stream", headers, m_timeout);
    if (!res || res->status < 200 || res->status >= 300 || util::trim(res->body).empty()) {
        throw Error(ErrorCode::ConversionFailed, "converter endpoint " + m_endpoint + " failed for " + path.string());
    }
    return res->body;
}

std::string HttpConverter::convert_url(const std::string& url) {
    auto res = http::post(m_endpoint, json{{"url", url}}.dump(), "application/json", {}, m_timeout);
    if (!res || res->status < 200 || res->status >= 300 || util::trim(res->body).empty()) {
        throw Error(ErrorCode::ConversionFailed, "converter endpoint " + m_endpoint + " failed for " + url);
    }
    return res->body;
}

}  // namespace benchcard::extract
