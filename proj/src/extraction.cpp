#include "benchcard/extraction.hpp"

#include "benchcard/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <regex>
#include <set>

namespace benchcard::extract {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string kind_title(AssetKind kind) {
    switch (kind) {
    case AssetKind::Metric: return "Metric";
    case AssetKind::Template: return "Template";
    case AssetKind::Task: return "Task";
    case AssetKind::Loader: return "Loader";
    case AssetKind::Other: return "Catalog asset";
    }
    return "Catalog asset";
}

std::string render_catalog_json(const std::string& heading, const json& raw) {
    std::string body = "# " + heading + "\n\n";
    if (raw.is_object()) {
        for (const char* key : {"__description__", "description"}) {
            if (auto it = raw.find(key); it != raw.end() && it->is_string() && !util::trim(it->get<std::string>()).empty()) {
                body += util::trim(it->get<std::string>()) + "\n\n";
                break;
            }
        }
    }
    body += "```json\n" + raw.dump(2) + "\n```\n";
    return body;
}

json parse_catalog_json(const Fetched& fetched, const std::string& identifier) {
    try {
        return json::parse(fetched.body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedJson, "catalog entry " + identifier + ": " + e.what());
    }
}

std::string join_values(const json& value) {
    if (value.is_string()) {
        return value.get<std::string>();
    }
    if (value.is_array()) {
        std::string out;
        for (const auto& v : value) {
            if (!out.empty()) {
                out += ", ";
            }
            out += v.is_string() ? v.get<std::string>() : v.dump();
        }
        return out;
    }
    if (value.is_null()) {
        return "";
    }
    return value.dump();
}

// cardData.<key>, then top-level <key>, then "<tag_prefix>:value" tags.
std::string hub_attribute(const json& info, std::initializer_list<const char*> keys, std::string_view tag_prefix) {
    if (!info.is_object()) {
        return "";
    }
    for (const char* key : keys) {
        if (auto card = info.find("cardData"); card != info.end() && card->is_object()) {
            if (auto it = card->find(key); it != card->end()) {
                if (auto s = join_values(*it); !s.empty()) {
                    return s;
                }
            }
        }
        if (auto it = info.find(key); it != info.end()) {
            if (auto s = join_values(*it); !s.empty()) {
                return s;
            }
        }
    }
    if (auto tags = info.find("tags"); tags != info.end() && tags->is_array()) {
        std::string out;
        const std::string prefix = std::string(tag_prefix) + ":";
        for (const auto& t : *tags) {
            if (t.is_string() && t.get<std::string>().starts_with(prefix)) {
                if (!out.empty()) {
                    out += ", ";
                }
                out += t.get<std::string>().substr(prefix.size());
            }
        }
        return out;
    }
    return "";
}

std::string first_heading_or(const std::string& markdown, const std::string& fallback) {
    std::size_t pos = 0;
    while (pos < markdown.size()) {
        auto nl = markdown.find('\n', pos);
        if (nl == std::string::npos) {
            nl = markdown.size();
        }
        const auto line = util::trim(std::string_view(markdown).substr(pos, nl - pos));
        if (line.starts_with("# ")) {
            return util::trim(line.substr(2));
        }
        pos = nl + 1;
    }
    return fallback;
}

std::string last_segment(std::string_view locator) {
    auto s = std::string(locator);
    if (auto q = s.find_first_of("?#"); q != std::string::npos) {
        s.resize(q);
    }
    while (!s.empty() && s.back() == '/') {
        s.pop_back();
    }
    const auto slash = s.rfind('/');
    return slash == std::string::npos ? s : s.substr(slash + 1);
}

bool locator_is_markdown(std::string_view locator) {
    return util::to_lower(last_segment(locator)).ends_with(".md");
}

// Earliest URL-like reference in `text`, normalized to an absolute URL.
std::optional<std::pair<std::size_t, std::string>> first_url_in(const std::string& text) {
    static const std::regex kHttp(R"(https?://[^\s<>"'\])}]+)", std::regex::icase);
    static const std::regex kArxiv(R"(\barxiv:\s*(\d{4}\.\d{4,5}(v\d+)?))", std::regex::icase);
    static const std::regex kDoi(R"(\b(?:doi:\s*)?(10\.\d{4,9}/[^\s<>"'\])}]+))", std::regex::icase);

    std::optional<std::pair<std::size_t, std::string>> best;
    auto consider = [&](std::size_t pos, std::string url) {
        while (!url.empty() && std::string_view(".,;:").find(url.back()) != std::string_view::npos) {
            url.pop_back();
        }
        if (!best || pos < best->first) {
            best = std::make_pair(pos, std::move(url));
        }
    };
    std::smatch m;
    if (std::regex_search(text, m, kHttp)) {
        consider(static_cast<std::size_t>(m.position(0)), m.str(0));
    }
    if (std::regex_search(text, m, kArxiv)) {
        consider(static_cast<std::size_t>(m.position(0)), "https://arxiv.org/abs/" + m.str(1));
    }
    if (std::regex_search(text, m, kDoi)) {
        const auto pos = static_cast<std::size_t>(m.position(0));
        // A DOI inside an http URL is already covered by the http match.
        if (!best || pos < best->first) {
            consider(pos, "https://doi.org/" + m.str(1));
        }
    }
    return best;
}

void collect_strings(const json& node, std::string& out) {
    if (node.is_string()) {
        out += node.get<std::string>();
        out.push_back('\n');
    } else if (node.is_array() || node.is_object()) {
        for (const auto& child : node) {
            collect_strings(child, out);
        }
    }
}

}  // namespace

bool is_valid_repo_id(std::string_view repo_id) {
    static const std::regex kRepo(R"(^[A-Za-z0-9][A-Za-z0-9_.\-]*/[A-Za-z0-9][A-Za-z0-9_.\-]*$)");
    return std::regex_match(repo_id.begin(), repo_id.end(), kRepo);
}

UnitxtCardDoc fetch_unitxt_card(const std::string& identifier, CatalogSource& catalog) {
    if (util::trim(identifier).empty()) {
        throw Error(ErrorCode::PreconditionFailed, "benchmark identifier is empty");
    }
    auto fetched = catalog.fetch(identifier);
    if (!fetched) {
        throw Error(ErrorCode::CardNotFound, "card '" + identifier + "' not found in catalog " + catalog.describe());
    }
    UnitxtCardDoc doc;
    doc.identifier = identifier;
    doc.raw_json = parse_catalog_json(*fetched, identifier);
    doc.cited_assets = scan_catalog_refs(doc.raw_json);
    return doc;
}

SupplementaryResult resolve_supplementary(const UnitxtCardDoc& card, CatalogSource& catalog) {
    SupplementaryResult result;
    for (const auto& asset : card.cited_assets) {
        auto fetched = catalog.fetch(asset.identifier);
        if (!fetched) {
            result.warnings.push_back("catalog asset '" + asset.identifier + "' cited by " + card.identifier +
                                      " could not be resolved");
            continue;
        }
        json raw;
        try {
            raw = json::parse(fetched->body);
        } catch (const json::parse_error&) {
            result.warnings.push_back("catalog asset '" + asset.identifier + "' is not valid JSON");
            continue;
        }
        SourceDocument doc;
        doc.source_id = "catalog:" + asset.identifier;
        doc.origin = Origin::UnitxtSupplementary;
        doc.title = asset.identifier;
        doc.body_markdown = render_catalog_json(kind_title(asset.kind) + " " + asset.identifier, raw);
        doc.fetched_at = fetched->fetched_at;
        doc.locator = fetched->locator;
        result.documents.push_back(std::move(doc));
    }
    return result;
}

SourceDocument card_document(const UnitxtCardDoc& card, const std::string& fetched_at, const std::string& locator) {
    SourceDocument doc;
    doc.source_id = "catalog:" + card.identifier;
    doc.origin = Origin::UnitxtCard;
    doc.title = card.identifier;
    doc.body_markdown = render_catalog_json("Unitxt card " + card.identifier, card.raw_json);
    doc.fetched_at = fetched_at;
    doc.locator = locator;
    return doc;
}

ExtractedIdentifiers extract_identifiers(const UnitxtCardDoc& card) {
    ExtractedIdentifiers ids;
    const auto& raw = card.raw_json;
    if (!raw.is_object()) {
        return ids;
    }
    if (auto loader = raw.find("loader"); loader != raw.end() && loader->is_object()) {
        const std::string type = util::to_lower(loader->value("__type__", ""));
        const bool hub_loader = type.empty() || type.find("hf") != std::string::npos;
        if (hub_loader) {
            if (auto path = loader->find("path"); path != loader->end() && path->is_string() &&
                                                  is_valid_repo_id(path->get<std::string>())) {
                ids.hub_repo_id = path->get<std::string>();
            }
        }
    }
    for (const char* key : {"__description__", "description", "citation", "__citation__", "__tags__"}) {
        auto it = raw.find(key);
        if (it == raw.end()) {
            continue;
        }
        std::string text;
        collect_strings(*it, text);
        if (auto url = first_url_in(text)) {
            ids.publication_url = url->second;
            break;
        }
    }
    return ids;
}

std::string render_hub_metadata(const json& info) {
    struct Line {
        const char* label;
        std::string value;
    };
    const std::vector<Line> lines = {
            {"Repository", info.is_object() ? info.value("id", "") : ""},
            {"Pretty name", hub_attribute(info, {"pretty_name"}, "pretty_name")},
            {"License", hub_attribute(info, {"license"}, "license")},
            {"Task categories", hub_attribute(info, {"task_categories"}, "task_categories")},
            {"Task ids", hub_attribute(info, {"task_ids"}, "task_ids")},
            {"Size categories", hub_attribute(info, {"size_categories"}, "size_categories")},
            {"Languages", hub_attribute(info, {"language", "languages"}, "language")},
    };
    std::string body;
    for (const auto& line : lines) {
        if (!line.value.empty()) {
            body += "- " + std::string(line.label) + ": " + line.value + "\n";
        }
    }
    if (body.empty()) {
        return "";
    }
    return "## Hub metadata\n\n" + body;
}

SourceDocument fetch_hub_metadata(const std::string& repo_id, HubSource& hub) {
    if (!is_valid_repo_id(repo_id)) {
        throw Error(ErrorCode::InvalidRepoId, "'" + repo_id + "' is not a namespace/name repository id");
    }
    auto readme = hub.readme(repo_id);
    auto info = hub.info(repo_id);
    if (!readme && !info) {
        throw Error(ErrorCode::RepoNotFound, "hub repository '" + repo_id + "' not found");
    }
    std::string body;
    if (readme) {
        body = util::trim(readme->body);
    }
    if (info) {
        json parsed;
        try {
            parsed = json::parse(info->body);
        } catch (const json::parse_error&) {
            spdlog::warn("hub info for {} is not valid JSON; skipping structured metadata", repo_id);
        }
        if (auto rendered = render_hub_metadata(parsed); !rendered.empty()) {
            if (!body.empty()) {
                body += "\n\n";
            }
            body += rendered;
        }
    }
    if (util::trim(body).empty()) {
        throw Error(ErrorCode::RepoNotFound, "hub repository '" + repo_id + "' has no card or metadata");
    }
    if (body.back() != '\n') {
        body.push_back('\n');
    }
    SourceDocument doc;
    doc.source_id = "hub:" + repo_id;
    doc.origin = Origin::HubMetadata;
    doc.title = repo_id;
    doc.body_markdown = std::move(body);
    doc.fetched_at = readme ? readme->fetched_at : info->fetched_at;
    doc.locator = readme ? readme->locator : info->locator;
    return doc;
}

SourceDocument ingest_publication(const std::string& locator, ConverterSource* converter, const Fetcher* fetcher) {
    SourceDocument doc;
    doc.origin = Origin::Publication;
    doc.locator = locator;
    const std::string name = last_segment(locator);
    doc.source_id = "publication:" + (name.empty() ? util::sha256_hex(locator).substr(0, 16) : name);

    const Fetcher default_fetcher;
    const Fetcher& net = fetcher != nullptr ? *fetcher : default_fetcher;

    if (util::is_url(locator)) {
        if (locator_is_markdown(locator)) {
            auto fetched = net.get(locator, ErrorCode::FileNotFound);
            if (!fetched) {
                throw Error(ErrorCode::FileNotFound, "publication " + locator + " not found");
            }
            doc.body_markdown = std::move(fetched->body);
            doc.fetched_at = fetched->fetched_at;
        } else {
            if (converter == nullptr) {
                throw Error(ErrorCode::ConverterNotConfigured,
                            "publication " + locator + " needs a document converter");
            }
            if (converter->accepts_urls()) {
                doc.body_markdown = converter->convert_url(locator);
                doc.fetched_at = util::now_rfc3339();
            } else {
                auto path = net.get_to_file(locator, ErrorCode::ConversionFailed);
                if (!path) {
                    throw Error(ErrorCode::FileNotFound, "publication " + locator + " not found");
                }
                doc.body_markdown = converter->convert_file(*path);
                doc.fetched_at = util::now_rfc3339();
            }
        }
    } else {
        const fs::path path(locator);
        std::error_code ec;
        if (!fs::is_regular_file(path, ec)) {
            throw Error(ErrorCode::FileNotFound, "publication file " + locator + " not found");
        }
        if (locator_is_markdown(locator)) {
            doc.body_markdown = util::read_file(path);
        } else {
            if (converter == nullptr) {
                throw Error(ErrorCode::ConverterNotConfigured,
                            "publication " + locator + " is not markdown and no converter is configured");
            }
            doc.body_markdown = converter->convert_file(path);
        }
        doc.fetched_at = util::file_mtime_rfc3339(path);
    }
    if (util::trim(doc.body_markdown).empty()) {
        throw Error(ErrorCode::ConversionFailed, "publication " + locator + " has no content");
    }
    doc.title = first_heading_or(doc.body_markdown, name);
    return doc;
}

SourceDocument user_document(const fs::path& path) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        throw Error(ErrorCode::FileNotFound, "document " + path.string() + " not found");
    }
    SourceDocument doc;
    doc.origin = Origin::UserSupplied;
    doc.source_id = "user:" + path.filename().string();
    doc.body_markdown = util::read_file(path);
    doc.title = first_heading_or(doc.body_markdown, path.filename().string());
    doc.locator = path.string();
    doc.fetched_at = util::file_mtime_rfc3339(path);
    return doc;
}

KnowledgeBase assemble_knowledge_base(const std::string& benchmark_id, std::vector<SourceDocument> docs) {
    if (docs.empty()) {
        throw Error(ErrorCode::EmptyKnowledgeBase, "no source documents for " + benchmark_id);
    }
    std::set<std::string> ids;
    for (const auto& d : docs) {
        if (!ids.insert(d.source_id).second) {
            throw Error(ErrorCode::DuplicateSourceId, "duplicate source id '" + d.source_id + "'");
        }
        if (util::trim(d.body_markdown).empty()) {
            throw Error(ErrorCode::PreconditionFailed, "source '" + d.source_id + "' has an empty body");
        }
    }
    std::stable_sort(docs.begin(), docs.end(), [](const SourceDocument& a, const SourceDocument& b) {
        return origin_priority(a.origin) < origin_priority(b.origin);
    });
    return KnowledgeBase{benchmark_id, std::move(docs)};
}

}  // namespace benchcard::extract
