#include "benchcard/composition.hpp"

#include "benchcard/error.hpp"
#include "benchcard/resources.hpp"
#include "benchcard/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>
#include <set>

namespace benchcard::compose {

using nlohmann::json;

namespace {

constexpr std::string_view kComposeSystem =
        "You write one section of a BenchmarkCard, a structured description of an AI benchmark. "
        "Use only facts stated in the provided source material. Write plain declarative sentences "
        "that name the benchmark explicitly. If the sources say nothing relevant, write a single "
        "sentence saying the information is not documented. Do not add headings or markdown.";

constexpr std::string_view kRiskSystem =
        "You assess which risks from a risk taxonomy apply to an AI benchmark, based on its "
        "BenchmarkCard. Reply with JSON only: {\"findings\": [{\"risk_id\": string, "
        "\"applicable\": boolean, \"rationale\": string}]} with exactly one entry per listed risk. "
        "Give a one-sentence rationale grounded in the card for every applicable risk.";

std::string render_document(const extract::SourceDocument& doc) {
    return "### Source: " + doc.title + " [" + doc.source_id + ", " + std::string(extract::to_string(doc.origin)) +
           "]\n\n" + doc.body_markdown + "\n\n";
}

std::string card_text_for_risks(const BenchmarkCard& card) {
    std::string out = "Benchmark: " + card.benchmark_id + "\n";
    for (const auto& f : card.fields) {
        const auto text = util::trim(strip_risk_block(f.value.text));
        if (!text.empty()) {
            out += "\n## " + f.id + "\n" + text + "\n";
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

RiskTaxonomy::RiskTaxonomy(std::vector<RiskEntry> risks) : m_risks(std::move(risks)) {
    std::set<std::string> ids;
    for (const auto& r : m_risks) {
        if (r.risk_id.empty()) {
            throw Error(ErrorCode::InvalidSchema, "risk id must be non-empty");
        }
        if (!ids.insert(r.risk_id).second) {
            throw Error(ErrorCode::InvalidSchema, "duplicate risk id '" + r.risk_id + "'");
        }
    }
}

RiskTaxonomy RiskTaxonomy::from_json(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedJson, std::string("taxonomy: ") + e.what());
    }
    if (!j.is_object() || !j.contains("risks") || !j["risks"].is_array()) {
        throw Error(ErrorCode::InvalidSchema, "taxonomy must be an object with a 'risks' array");
    }
    std::vector<RiskEntry> risks;
    for (const auto& r : j["risks"]) {
        if (!r.is_object() || !r.contains("risk_id") || !r["risk_id"].is_string()) {
            throw Error(ErrorCode::InvalidSchema, "taxonomy entry needs a string risk_id");
        }
        risks.push_back(RiskEntry{r["risk_id"].get<std::string>(), r.value("name", r["risk_id"].get<std::string>()),
                                  r.value("description", "")});
    }
    return RiskTaxonomy(std::move(risks));
}

RiskTaxonomy RiskTaxonomy::load(const std::string& path) { return from_json(util::read_file(path)); }

RiskTaxonomy RiskTaxonomy::bundled_default() { return from_json(resources::default_taxonomy_json()); }

const RiskEntry* RiskTaxonomy::find(std::string_view risk_id) const {
    auto it = std::find_if(m_risks.begin(), m_risks.end(), [&](const RiskEntry& r) { return r.risk_id == risk_id; });
    return it == m_risks.end() ? nullptr : &*it;
}

// ---------------------------------------------------------------------------

std::string build_context(const extract::KnowledgeBase& kb, std::size_t budget) {
    std::string out;
    for (const auto& doc : kb.documents) {
        if (out.size() >= budget) {
            break;
        }
        const std::string rendered = render_document(doc);
        const std::size_t room = budget - out.size();
        out += rendered.substr(0, util::utf8_safe_prefix(rendered, room));
    }
    return out;
}

llm::ChatRequest compose_request(const extract::KnowledgeBase& kb, const SectionSpec& section,
                                 const ComposeOptions& options) {
    llm::ChatRequest request;
    request.system = std::string(kComposeSystem);
    request.user = "Benchmark: " + kb.benchmark_identifier + "\nSection: " + section.title + " (" + section.id +
                   ")\nWhat this section must cover: " + section.description +
                   "\n\nSource material:\n\n" + build_context(kb, options.context_budget_chars) +
                   "Write the " + section.title + " section now.";
    request.max_output_tokens = options.max_output_tokens;
    request.tag = "compose";
    request.vars = json{{"section", section.id}, {"benchmark_id", kb.benchmark_identifier}};
    return request;
}

BenchmarkCard compose_card(const extract::KnowledgeBase& kb, const CardSchema& schema, llm::Gateway& gateway,
                           const ComposeOptions& options) {
    if (kb.documents.empty()) {
        throw Error(ErrorCode::EmptyKnowledgeBase, "cannot compose a card from an empty knowledge base");
    }
    const auto& sections = schema.sections();
    std::vector<std::string> texts(sections.size());
    util::parallel_for(sections.size(), options.workers, [&](std::size_t i) {
        const auto& section = sections[i];
        llm::CallScope scope("compose/" + section.id);
        try {
            texts[i] = util::trim(gateway.complete(compose_request(kb, section, options)));
        } catch (const Error& e) {
            throw Error(e.code(), "section '" + section.id + "': " + e.what());
        }
    });

    BenchmarkCard card;
    card.benchmark_id = kb.benchmark_identifier;
    card.generated_at = util::now_rfc3339();
    for (std::size_t i = 0; i < sections.size(); ++i) {
        card.fields.push_back(CardField{sections[i].id, FieldValue{texts[i], FieldStatus::Draft, 0}});
    }
    for (const auto& doc : kb.documents) {
        card.sources.push_back(
                SourceDescriptor{doc.source_id, std::string(extract::to_string(doc.origin)), doc.title, doc.locator});
    }
    return card;
}

// ---------------------------------------------------------------------------

RiskIdentification identify_risks(const BenchmarkCard& card, const RiskTaxonomy& taxonomy, llm::Gateway& gateway,
                                  std::size_t batch_size) {
    auto non_empty = [&](std::string_view id) {
        const auto* f = card.field(id);
        return f != nullptr && !util::trim(f->text).empty();
    };
    if (!non_empty("purpose") && !non_empty("methodology")) {
        throw Error(ErrorCode::PreconditionFailed, "risk identification needs a purpose or methodology field");
    }
    batch_size = std::max<std::size_t>(1, batch_size);

    RiskIdentification result;
    const auto& risks = taxonomy.risks();
    const std::string card_text = card_text_for_risks(card);
    for (std::size_t begin = 0, batch = 0; begin < risks.size(); begin += batch_size, ++batch) {
        const std::size_t end = std::min(risks.size(), begin + batch_size);
        llm::ChatRequest request;
        request.system = std::string(kRiskSystem);
        request.tag = "risks";
        json ids = json::array();
        std::string listing;
        for (std::size_t i = begin; i < end; ++i) {
            ids.push_back(risks[i].risk_id);
            listing += "- " + risks[i].risk_id + " (" + risks[i].name + "): " + risks[i].description + "\n";
        }
        request.vars = json{{"batch", batch}, {"risk_ids", ids}, {"benchmark_id", card.benchmark_id}};
        request.user = "Risks to assess:\n" + listing + "\nBenchmarkCard:\n" + card_text;

        llm::CallScope scope("risks/" + std::to_string(batch));
        const json reply = gateway.complete_json(std::move(request));
        const json& entries = reply.is_array() ? reply : reply.value("findings", json::array());

        std::map<std::string, RiskFinding> answered;
        for (const auto& e : entries) {
            if (!e.is_object() || !e.contains("risk_id") || !e["risk_id"].is_string()) {
                result.warnings.push_back("risk identifier returned an entry without risk_id");
                continue;
            }
            const auto rid = e["risk_id"].get<std::string>();
            if (std::find(ids.begin(), ids.end(), rid) == ids.end()) {
                result.warnings.push_back("risk identifier returned unknown or out-of-batch risk '" + rid + "'");
                continue;
            }
            if (answered.contains(rid)) {
                result.warnings.push_back("risk identifier answered '" + rid + "' twice; keeping the first");
                continue;
            }
            RiskFinding f;
            f.risk_id = rid;
            f.applicable = e.value("applicable", false);
            f.rationale = e.contains("rationale") && e["rationale"].is_string() ? util::trim(e["rationale"].get<std::string>())
                                                                                : "";
            if (f.applicable && f.rationale.empty()) {
                result.warnings.push_back("risk '" + rid + "' marked applicable without rationale");
                f.rationale = taxonomy.find(rid)->description;
            }
            answered.emplace(rid, std::move(f));
        }
        for (std::size_t i = begin; i < end; ++i) {
            auto it = answered.find(risks[i].risk_id);
            if (it == answered.end()) {
                result.warnings.push_back("risk identifier skipped '" + risks[i].risk_id + "'; treated as not applicable");
                result.findings.push_back(RiskFinding{risks[i].risk_id, false, ""});
            } else {
                result.findings.push_back(std::move(it->second));
            }
        }
    }
    return result;
}

std::string strip_risk_block(std::string_view text) {
    const auto begin = text.find(kRiskBlockBegin);
    if (begin == std::string_view::npos) {
        return std::string(text);
    }
    auto end = text.find(kRiskBlockEnd, begin);
    end = end == std::string_view::npos ? text.size() : end + kRiskBlockEnd.size();
    std::string head(text.substr(0, begin));
    while (!head.empty() && (head.back() == '\n' || head.back() == ' ')) {
        head.pop_back();
    }
    std::string tail(text.substr(end));
    return head + tail;
}

BenchmarkCard merge_risks(const BenchmarkCard& card, const std::vector<RiskFinding>& findings,
                          const RiskTaxonomy& taxonomy) {
    std::set<std::string> covered;
    for (const auto& f : findings) {
        covered.insert(f.risk_id);
    }
    for (const auto& r : taxonomy.risks()) {
        if (!covered.contains(r.risk_id)) {
            throw Error(ErrorCode::PreconditionFailed, "no finding for taxonomy risk '" + r.risk_id + "'");
        }
    }

    std::vector<const RiskFinding*> applicable;
    for (const auto& f : findings) {
        if (f.applicable && taxonomy.find(f.risk_id) != nullptr) {
            applicable.push_back(&f);
        }
    }
    std::sort(applicable.begin(), applicable.end(),
              [](const RiskFinding* a, const RiskFinding* b) { return a->risk_id < b->risk_id; });
    applicable.erase(std::unique(applicable.begin(), applicable.end(),
                                 [](const RiskFinding* a, const RiskFinding* b) { return a->risk_id == b->risk_id; }),
                     applicable.end());

    BenchmarkCard out = card;
    FieldValue* risks = out.field("risks");
    if (risks == nullptr) {
        if (applicable.empty()) {
            return out;
        }
        out.fields.push_back(CardField{"risks", FieldValue{}});
        risks = &out.fields.back().value;
    }
    std::string text = strip_risk_block(risks->text);
    if (!applicable.empty()) {
        std::string block = std::string(kRiskBlockBegin) + "\n";
        for (const auto* f : applicable) {
            block += "- " + taxonomy.find(f->risk_id)->name + ": " + f->rationale + "\n";
        }
        block += std::string(kRiskBlockEnd);
        text = text.empty() ? block : text + "\n\n" + block;
    }
    risks->text = std::move(text);
    return out;
}

}  // namespace benchcard::compose
