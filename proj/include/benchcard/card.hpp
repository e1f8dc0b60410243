#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace benchcard {

struct SectionSpec {
    std::string id;
    std::string title;
    bool required = true;
    std::string description;  // guidance handed to the generator

    bool operator==(const SectionSpec&) const = default;
};

class CardSchema {
public:
    CardSchema() = default;
    // Throws InvalidSchema on empty or duplicate ids.
    explicit CardSchema(std::vector<SectionSpec> sections);

    static CardSchema from_json(std::string_view json_text);
    static CardSchema load(const std::string& path);
    static CardSchema bundled_default();

    std::string to_json() const;

    const std::vector<SectionSpec>& sections() const { return m_sections; }
    const SectionSpec* find(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id) != nullptr; }

private:
    std::vector<SectionSpec> m_sections;
};

enum class FieldStatus { Draft, Validated, Flagged, HumanEdited };

std::string_view to_string(FieldStatus status);
FieldStatus field_status_from_string(std::string_view text);

// Allowed status moves: draft -> {validated, flagged}; flagged -> {validated, human_edited}.
bool is_allowed_transition(FieldStatus from, FieldStatus to);
// Throws InvalidTransition when the move is not allowed. Same-status is a no-op.
void check_transition(FieldStatus from, FieldStatus to);

struct FieldValue {
    std::string text;
    FieldStatus status = FieldStatus::Draft;
    std::int64_t revision = 0;

    bool operator==(const FieldValue&) const = default;
};

struct CardField {
    std::string id;
    FieldValue value;

    bool operator==(const CardField&) const = default;
};

struct SourceDescriptor {
    std::string source_id;
    std::string origin;
    std::string title;
    std::string locator;

    bool operator==(const SourceDescriptor&) const = default;
};

// Fields are kept in schema order; that order is the serialization order.
struct BenchmarkCard {
    std::string benchmark_id;
    std::vector<CardField> fields;
    std::optional<std::string> generated_at;
    std::vector<SourceDescriptor> sources;

    const FieldValue* field(std::string_view id) const;
    FieldValue* field(std::string_view id);

    // Inserts or replaces a field, keeping schema order for new ids.
    void set_field(const CardSchema& schema, const std::string& id, FieldValue value);

    // Installs new text as a rewrite: revision + 1, status back to draft.
    void rewrite_field(std::string_view id, std::string text);

    // Sum of field revisions; identifies which card state a report scored.
    std::int64_t revision() const;

    bool operator==(const BenchmarkCard&) const = default;
};

BenchmarkCard parse_card(std::string_view json_text, const CardSchema& schema);
std::string serialize_card(const BenchmarkCard& card);

// Required section ids that are absent or have empty text, in schema order.
std::vector<std::string> check_completeness(const BenchmarkCard& card, const CardSchema& schema);

enum class AssetKind { Metric, Template, Task, Loader, Other };

std::string_view to_string(AssetKind kind);
AssetKind asset_kind_from_string(std::string_view text);

struct AssetRef {
    AssetKind kind = AssetKind::Other;
    std::string identifier;

    bool operator==(const AssetRef&) const = default;
};

struct UnitxtCardDoc {
    std::string identifier;
    nlohmann::json raw_json;
    std::vector<AssetRef> cited_assets;

    bool operator==(const UnitxtCardDoc&) const = default;
};

// Kind for a catalog reference string, or nullopt when the string is not one.
std::optional<AssetKind> classify_catalog_ref(std::string_view value);

// Every catalog reference in any string value of `raw`, first occurrence order.
std::vector<AssetRef> scan_catalog_refs(const nlohmann::json& raw);

nlohmann::json unitxt_card_to_json(const UnitxtCardDoc& doc);
UnitxtCardDoc unitxt_card_from_json(const nlohmann::json& j);

}  // namespace benchcard
