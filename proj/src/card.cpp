#include "benchcard/card.hpp"

#include "benchcard/error.hpp"
#include "benchcard/resources.hpp"
#include "benchcard/util.hpp"

#include <algorithm>
#include <array>
#include <regex>
#include <set>
#include <unordered_set>
#include <utility>

namespace benchcard {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json parse_json_or_throw(std::string_view text, std::string_view what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedJson, std::string(what) + ": " + e.what());
    }
}

const json& require_key(const json& obj, const char* key, std::string_view what) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw Error(ErrorCode::MalformedJson, std::string(what) + ": missing key '" + key + "'");
    }
    return *it;
}

std::string require_string(const json& obj, const char* key, std::string_view what) {
    const auto& value = require_key(obj, key, what);
    if (!value.is_string()) {
        throw Error(ErrorCode::MalformedJson,
                    std::string(what) + ": key '" + key + "' must be a string");
    }
    return value.get<std::string>();
}

struct CatalogNamespace {
    std::string_view prefix;
    AssetKind kind;
};

constexpr std::array kCatalogNamespaces = {
        CatalogNamespace{"metrics.", AssetKind::Metric},
        CatalogNamespace{"templates.", AssetKind::Template},
        CatalogNamespace{"tasks.", AssetKind::Task},
        CatalogNamespace{"loaders.", AssetKind::Loader},
        CatalogNamespace{"processors.", AssetKind::Other},
        CatalogNamespace{"formats.", AssetKind::Other},
        CatalogNamespace{"splitters.", AssetKind::Other},
        CatalogNamespace{"augmentors.", AssetKind::Other},
        CatalogNamespace{"instructions.", AssetKind::Other},
        CatalogNamespace{"system_prompts.", AssetKind::Other},
        CatalogNamespace{"serializers.", AssetKind::Other},
        CatalogNamespace{"operators.", AssetKind::Other},
};

void scan_refs(const json& node, std::vector<AssetRef>& out, std::set<std::string>& seen) {
    if (node.is_string()) {
        const auto& value = node.get_ref<const std::string&>();
        if (auto kind = classify_catalog_ref(value); kind && seen.insert(value).second) {
            out.push_back(AssetRef{*kind, value});
        }
    } else if (node.is_array() || node.is_object()) {
        for (const auto& child : node) {
            scan_refs(child, out, seen);
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema

CardSchema::CardSchema(std::vector<SectionSpec> sections) : m_sections(std::move(sections)) {
    if (m_sections.empty()) {
        throw Error(ErrorCode::InvalidSchema, "schema must define at least one section");
    }
    std::unordered_set<std::string> ids;
    for (const auto& s : m_sections) {
        if (s.id.empty()) {
            throw Error(ErrorCode::InvalidSchema, "section id must be non-empty");
        }
        if (!ids.insert(s.id).second) {
            throw Error(ErrorCode::InvalidSchema, "duplicate section id '" + s.id + "'");
        }
    }
}

CardSchema CardSchema::from_json(std::string_view json_text) {
    const json j = parse_json_or_throw(json_text, "schema");
    if (!j.is_object() || !j.contains("sections") || !j["sections"].is_array()) {
        throw Error(ErrorCode::InvalidSchema, "schema must be an object with a 'sections' array");
    }
    std::vector<SectionSpec> sections;
    for (const auto& s : j["sections"]) {
        if (!s.is_object()) {
            throw Error(ErrorCode::InvalidSchema, "schema section must be an object");
        }
        SectionSpec spec;
        spec.id = require_string(s, "id", "schema section");
        spec.title = s.value("title", spec.id);
        spec.required = s.value("required", true);
        spec.description = s.value("description", "");
        sections.push_back(std::move(spec));
    }
    return CardSchema(std::move(sections));
}

CardSchema CardSchema::load(const std::string& path) {
    return from_json(util::read_file(path));
}

CardSchema CardSchema::bundled_default() {
    return from_json(resources::default_schema_json());
}

std::string CardSchema::to_json() const {
    ordered_json sections = ordered_json::array();
    for (const auto& s : m_sections) {
        sections.push_back(ordered_json{{"id", s.id},
                                        {"title", s.title},
                                        {"required", s.required},
                                        {"description", s.description}});
    }
    return ordered_json{{"sections", sections}}.dump(2);
}

const SectionSpec* CardSchema::find(std::string_view id) const {
    auto it = std::find_if(m_sections.begin(), m_sections.end(),
                           [&](const SectionSpec& s) { return s.id == id; });
    return it == m_sections.end() ? nullptr : &*it;
}

// ---------------------------------------------------------------------------
// Field status

std::string_view to_string(FieldStatus status) {
    switch (status) {
    case FieldStatus::Draft: return "draft";
    case FieldStatus::Validated: return "validated";
    case FieldStatus::Flagged: return "flagged";
    case FieldStatus::HumanEdited: return "human_edited";
    }
    return "draft";
}

FieldStatus field_status_from_string(std::string_view text) {
    if (text == "draft") return FieldStatus::Draft;
    if (text == "validated") return FieldStatus::Validated;
    if (text == "flagged") return FieldStatus::Flagged;
    if (text == "human_edited") return FieldStatus::HumanEdited;
    throw Error(ErrorCode::MalformedJson, "unknown field status '" + std::string(text) + "'");
}

bool is_allowed_transition(FieldStatus from, FieldStatus to) {
    switch (from) {
    case FieldStatus::Draft:
        return to == FieldStatus::Validated || to == FieldStatus::Flagged;
    case FieldStatus::Flagged:
        return to == FieldStatus::Validated || to == FieldStatus::HumanEdited;
    default:
        return false;
    }
}

void check_transition(FieldStatus from, FieldStatus to) {
    if (from != to && !is_allowed_transition(from, to)) {
        throw Error(ErrorCode::InvalidTransition, "field status cannot move from " +
                                                          std::string(to_string(from)) + " to " +
                                                          std::string(to_string(to)));
    }
}

// ---------------------------------------------------------------------------
// Card

const FieldValue* BenchmarkCard::field(std::string_view id) const {
    auto it = std::find_if(fields.begin(), fields.end(),
                           [&](const CardField& f) { return f.id == id; });
    return it == fields.end() ? nullptr : &it->value;
}

FieldValue* BenchmarkCard::field(std::string_view id) {
    auto it = std::find_if(fields.begin(), fields.end(),
                           [&](const CardField& f) { return f.id == id; });
    return it == fields.end() ? nullptr : &it->value;
}

void BenchmarkCard::set_field(const CardSchema& schema, const std::string& id, FieldValue value) {
    if (!schema.contains(id)) {
        throw Error(ErrorCode::UnknownSection, "unknown section '" + id + "'");
    }
    if (auto* existing = field(id)) {
        *existing = std::move(value);
        return;
    }
    fields.push_back(CardField{id, std::move(value)});
    std::stable_sort(fields.begin(), fields.end(), [&](const CardField& a, const CardField& b) {
        const auto& s = schema.sections();
        auto pos = [&](const std::string& fid) {
            return std::find_if(s.begin(), s.end(), [&](const SectionSpec& x) { return x.id == fid; }) -
                   s.begin();
        };
        return pos(a.id) < pos(b.id);
    });
}

void BenchmarkCard::rewrite_field(std::string_view id, std::string text) {
    auto* f = field(id);
    if (f == nullptr) {
        throw Error(ErrorCode::UnknownSection, "card has no field '" + std::string(id) + "'");
    }
    f->text = std::move(text);
    f->revision += 1;
    f->status = FieldStatus::Draft;
}

std::int64_t BenchmarkCard::revision() const {
    std::int64_t total = 0;
    for (const auto& f : fields) {
        total += f.value.revision;
    }
    return total;
}

BenchmarkCard parse_card(std::string_view json_text, const CardSchema& schema) {
    const json j = parse_json_or_throw(json_text, "card");
    if (!j.is_object()) {
        throw Error(ErrorCode::MalformedJson, "card: top level must be an object");
    }
    for (const auto& [key, _] : j.items()) {
        if (key != "benchmark_id" && key != "fields" && key != "generated_at" && key != "sources") {
            throw Error(ErrorCode::MalformedJson, "card: unexpected key '" + key + "'");
        }
    }
    BenchmarkCard card;
    card.benchmark_id = require_string(j, "benchmark_id", "card");

    const auto& fields = require_key(j, "fields", "card");
    if (!fields.is_object()) {
        throw Error(ErrorCode::MalformedJson, "card: 'fields' must be an object");
    }
    for (const auto& [id, value] : fields.items()) {
        if (!schema.contains(id)) {
            throw Error(ErrorCode::UnknownSection, "card: unknown section '" + id + "'");
        }
        if (!value.is_object()) {
            throw Error(ErrorCode::MalformedJson, "card: field '" + id + "' must be an object");
        }
        FieldValue fv;
        fv.text = require_string(value, "text", "card field '" + id + "'");
        if (auto it = value.find("status"); it != value.end()) {
            if (!it->is_string()) {
                throw Error(ErrorCode::MalformedJson, "card: status of '" + id + "' must be a string");
            }
            fv.status = field_status_from_string(it->get<std::string>());
        }
        if (auto it = value.find("revision"); it != value.end()) {
            if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
                throw Error(ErrorCode::MalformedJson,
                            "card: revision of '" + id + "' must be a non-negative integer");
            }
            fv.revision = it->get<std::int64_t>();
        }
        card.fields.push_back(CardField{id, std::move(fv)});
    }
    // Restore schema order (nlohmann::json iterates keys alphabetically).
    std::vector<CardField> ordered;
    ordered.reserve(card.fields.size());
    for (const auto& s : schema.sections()) {
        for (auto& f : card.fields) {
            if (f.id == s.id) {
                ordered.push_back(std::move(f));
            }
        }
    }
    card.fields = std::move(ordered);

    if (auto it = j.find("generated_at"); it != j.end()) {
        if (!it->is_string()) {
            throw Error(ErrorCode::MalformedJson, "card: generated_at must be a string");
        }
        card.generated_at = it->get<std::string>();
    }
    if (auto it = j.find("sources"); it != j.end()) {
        if (!it->is_array()) {
            throw Error(ErrorCode::MalformedJson, "card: sources must be an array");
        }
        for (const auto& s : *it) {
            if (!s.is_object()) {
                throw Error(ErrorCode::MalformedJson, "card: source descriptor must be an object");
            }
            SourceDescriptor d;
            d.source_id = require_string(s, "source_id", "card source");
            d.origin = s.value("origin", "");
            d.title = s.value("title", "");
            d.locator = s.value("locator", "");
            card.sources.push_back(std::move(d));
        }
    }
    return card;
}

std::string serialize_card(const BenchmarkCard& card) {
    ordered_json out;
    out["benchmark_id"] = card.benchmark_id;
    if (card.generated_at) {
        out["generated_at"] = *card.generated_at;
    }
    ordered_json fields = ordered_json::object();
    for (const auto& f : card.fields) {
        fields[f.id] = ordered_json{{"text", f.value.text},
                                    {"status", to_string(f.value.status)},
                                    {"revision", f.value.revision}};
    }
    out["fields"] = std::move(fields);
    ordered_json sources = ordered_json::array();
    for (const auto& s : card.sources) {
        sources.push_back(ordered_json{{"source_id", s.source_id},
                                       {"origin", s.origin},
                                       {"title", s.title},
                                       {"locator", s.locator}});
    }
    out["sources"] = std::move(sources);
    return out.dump(2) + "\n";
}

std::vector<std::string> check_completeness(const BenchmarkCard& card, const CardSchema& schema) {
    std::vector<std::string> missing;
    for (const auto& s : schema.sections()) {
        if (!s.required) {
            continue;
        }
        const auto* f = card.field(s.id);
        if (f == nullptr || util::trim(f->text).empty()) {
            missing.push_back(s.id);
        }
    }
    return missing;
}

// ---------------------------------------------------------------------------
// Unitxt card

std::string_view to_string(AssetKind kind) {
    switch (kind) {
    case AssetKind::Metric: return "metric";
    case AssetKind::Template: return "template";
    case AssetKind::Task: return "task";
    case AssetKind::Loader: return "loader";
    case AssetKind::Other: return "other";
    }
    return "other";
}

AssetKind asset_kind_from_string(std::string_view text) {
    if (text == "metric") return AssetKind::Metric;
    if (text == "template") return AssetKind::Template;
    if (text == "task") return AssetKind::Task;
    if (text == "loader") return AssetKind::Loader;
    if (text == "other") return AssetKind::Other;
    throw Error(ErrorCode::MalformedJson, "unknown asset kind '" + std::string(text) + "'");
}

std::optional<AssetKind> classify_catalog_ref(std::string_view value) {
    static const std::regex kRefSyntax(R"(^[a-z_]+\.[A-Za-z0-9_][A-Za-z0-9_.\-]*$)");
    for (const auto& ns : kCatalogNamespaces) {
        if (value.starts_with(ns.prefix) && value.size() > ns.prefix.size()) {
            if (std::regex_match(value.begin(), value.end(), kRefSyntax) && !value.ends_with(".")) {
                return ns.kind;
            }
            return std::nullopt;
        }
    }
    return std::nullopt;
}

std::vector<AssetRef> scan_catalog_refs(const json& raw) {
    std::vector<AssetRef> out;
    std::set<std::string> seen;
    scan_refs(raw, out, seen);
    return out;
}

json unitxt_card_to_json(const UnitxtCardDoc& doc) {
    json assets = json::array();
    for (const auto& a : doc.cited_assets) {
        assets.push_back(json{{"kind", to_string(a.kind)}, {"identifier", a.identifier}});
    }
    return json{{"identifier", doc.identifier}, {"raw_json", doc.raw_json}, {"cited_assets", assets}};
}

UnitxtCardDoc unitxt_card_from_json(const json& j) {
    if (!j.is_object()) {
        throw Error(ErrorCode::MalformedJson, "unitxt card document must be an object");
    }
    UnitxtCardDoc doc;
    doc.identifier = require_string(j, "identifier", "unitxt card document");
    doc.raw_json = require_key(j, "raw_json", "unitxt card document");
    if (auto it = j.find("cited_assets"); it != j.end()) {
        for (const auto& a : *it) {
            doc.cited_assets.push_back(AssetRef{asset_kind_from_string(a.at("kind").get<std::string>()),
                                                a.at("identifier").get<std::string>()});
        }
    }
    return doc;
}

}  // namespace benchcard
