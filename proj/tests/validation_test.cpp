#include <catch2/catch_amalgamated.hpp>

#include "benchcard/composition.hpp"
#include "benchcard/error.hpp"
#include "benchcard/util.hpp"
#include "benchcard/validation.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace benchcard;
using namespace benchcard::validate;
using benchcard::testing::VerdictTriple;
using json = nlohmann::json;

namespace {

std::vector<EntailmentVerdict> verdicts_of(const std::vector<VerdictTriple>& triples) {
    std::vector<EntailmentVerdict> out;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        out.push_back(EntailmentVerdict{"a", "c" + std::to_string(i), triples[i].pe, triples[i].pc, triples[i].pn});
    }
    return out;
}

double score_of(const std::vector<VerdictTriple>& triples) { return aggregate_score(verdicts_of(triples)); }

VerdictTriple random_triple(std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    const double a = e(rng), b = e(rng), c = e(rng);
    const double t = a + b + c;
    return VerdictTriple{a / t, b / t, c / t};
}

// A verdict that clearly favours entailment (pe exceeds pc by at least 0.01).
VerdictTriple supporting_triple(std::mt19937_64& rng) {
    for (;;) {
        auto v = random_triple(rng);
        if (v.pe < v.pc) {
            std::swap(v.pe, v.pc);
        }
        if (v.pe - v.pc >= 0.01) {
            return v;
        }
    }
}

std::vector<VerdictTriple> random_list(std::mt19937_64& rng, std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::vector<VerdictTriple> out(len(rng));
    for (auto& v : out) {
        v = random_triple(rng);
    }
    return out;
}

ValidationConfig fixture_config(Strategy strategy = Strategy::None) {
    ValidationConfig config;
    config.strategy = strategy;
    config.run_id = "test-run";
    config.workers = 2;
    return config;
}

const AtomScore& atom_with(const std::vector<AtomScore>& atoms, std::string_view needle) {
    auto it = std::find_if(atoms.begin(), atoms.end(),
                           [&](const AtomScore& a) { return a.text.find(needle) != std::string::npos; });
    if (it == atoms.end()) {
        throw std::runtime_error("no atom containing " + std::string(needle));
    }
    return *it;
}

}  // namespace

// ---------------------------------------------------------------------------
// Aggregation

TEST_CASE("aggregate anchors", "[validation]") {
    CHECK(aggregate_score({}) == 0.5);

    // Hand table: for a single verdict the logistic of the log ratio is
    // (pe + eps) / ((pe + eps) + (pc + eps)).
    struct Row {
        std::vector<VerdictTriple> verdicts;
        double expected;
    };
    const std::vector<Row> table = {
            {{{0.9, 0.1, 0.0}}, 0.901 / 1.002},
            {{{0.1, 0.9, 0.0}}, 0.101 / 1.002},
            {{{0.0, 0.0, 1.0}}, 0.5},
            {{{0.5, 0.5, 0.0}}, 0.5},
            {{{0.9, 0.1, 0.0}, {0.9, 0.1, 0.0}}, 0.811801 / (0.811801 + 0.010201)},
            {{{0.9, 0.1, 0.0}, {0.1, 0.9, 0.0}}, 0.5},
            {{{1.0, 0.0, 0.0}}, 1.001 / 1.002},
    };
    for (const auto& row : table) {
        CHECK(std::abs(score_of(row.verdicts) - row.expected) < 1e-12);
    }

    CHECK(std::abs(score_of({{0.9, 0.1, 0.0}}) - 0.9) <= 1e-3);
    CHECK(std::abs(score_of({{0.9, 0.1, 0.0}, {0.9, 0.1, 0.0}}) - 81.0 / 82.0) <= 1e-3);
}

TEST_CASE("aggregate matches the odds-product oracle", "[validation][property]") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        const auto list = random_list(rng, 6);
        CHECK(score_of(list) == Catch::Approx(benchcard::testing::aggregate_by_odds(list)).margin(1e-12));
    }
}

TEST_CASE("aggregate stays inside the open unit interval", "[validation]") {
    std::vector<VerdictTriple> strong(200, VerdictTriple{1.0, 0.0, 0.0});
    CHECK(score_of(strong) < 1.0);
    std::vector<VerdictTriple> against(200, VerdictTriple{0.0, 1.0, 0.0});
    CHECK(score_of(against) > 0.0);
    CHECK_THROWS_AS(aggregate_score({}, 0.0), Error);
}

TEST_CASE("aggregation properties", "[validation][property]") {
    std::mt19937_64 rng(424242);
    std::size_t saturated = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto list = random_list(rng, 10);

        // Permutation invariance, exactly.
        const double base = score_of(list);
        auto shuffled = list;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        REQUIRE(score_of(shuffled) == base);
        std::reverse(shuffled.begin(), shuffled.end());
        REQUIRE(score_of(shuffled) == base);

        // One more supporting verdict raises the score.
        auto more = list;
        more.insert(more.begin() + static_cast<std::ptrdiff_t>(std::uniform_int_distribution<std::size_t>(
                                            0, more.size())(rng)),
                    supporting_triple(rng));
        const double raised = score_of(more);
        if (base >= std::nextafter(1.0, 0.0)) {
            // Already at the largest double below one.
            ++saturated;
            REQUIRE(raised == base);
        } else {
            REQUIRE(raised > base);
        }
    }
    // The random lists almost never saturate; keep the strict branch meaningful.
    CHECK(saturated < 10);
}

TEST_CASE("flag count does not grow as the threshold falls", "[validation][property]") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> scores;
        const std::size_t atoms = std::uniform_int_distribution<std::size_t>(0, 12)(rng);
        for (std::size_t i = 0; i < atoms; ++i) {
            scores.push_back(score_of(random_list(rng, 5)));
        }
        std::size_t previous = std::numeric_limits<std::size_t>::max();
        for (double tau = 0.99; tau > 0.0; tau -= 0.01) {
            const auto flags = static_cast<std::size_t>(
                    std::count_if(scores.begin(), scores.end(), [&](double s) { return s < tau; }));
            REQUIRE(flags <= previous);
            previous = flags;
        }
    }
}

TEST_CASE("make_verdict normalizes and rejects", "[validation]") {
    const auto v = make_verdict("a", "c", 2.0, 1.0, 1.0);
    CHECK(v.p_entail == 0.5);
    CHECK(v.p_contradict == 0.25);
    CHECK(v.p_neutral == 0.25);
    CHECK_THROWS_AS(make_verdict("a", "c", -0.1, 0.5, 0.6), Error);
    CHECK_THROWS_AS(make_verdict("a", "c", 0.0, 0.0, 0.0), Error);
    CHECK_THROWS_AS(make_verdict("a", "c", std::nan(""), 0.5, 0.5), Error);
    CHECK_THROWS_AS(make_verdict("a", "c", INFINITY, 0.5, 0.5), Error);
}

TEST_CASE("string forms", "[validation]") {
    for (auto s : {AtomStatus::Pending, AtomStatus::Scored, AtomStatus::Flagged, AtomStatus::Resolved}) {
        CHECK(atom_status_from_string(to_string(s)) == s);
    }
    for (auto s : {Strategy::Auto, Strategy::Review, Strategy::None}) {
        CHECK(strategy_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(strategy_from_string("sometimes"), Error);
    CHECK(atom_id_for("dataset", 0, 1) == "dataset-1");
    CHECK(atom_id_for("dataset", 2, 3) == "dataset-r2-3");
}

// ---------------------------------------------------------------------------
// Atomization and judging

TEST_CASE("atomize splits fields and skips the risk block", "[validation]") {
    auto gw = benchcard::testing::fixture_gateway();
    auto card = benchcard::testing::fixture_card();
    const auto schema = CardSchema::bundled_default();
    auto* risks = card.field("risks");
    risks->text += "\n\n" + std::string(compose::kRiskBlockBegin) + "\n- Bias: generated.\n" +
                   std::string(compose::kRiskBlockEnd);
    card.set_field(schema, "limitations", FieldValue{"   ", FieldStatus::Draft, 0});

    const auto result = atomize(card, *gw);
    CHECK(std::none_of(result.atoms.begin(), result.atoms.end(),
                       [](const AtomicStatement& a) { return a.field_id == "limitations"; }));
    CHECK(std::none_of(result.atoms.begin(), result.atoms.end(),
                       [](const AtomicStatement& a) { return a.text.find("generated") != std::string::npos; }));
    const auto dataset = std::count_if(result.atoms.begin(), result.atoms.end(),
                                       [](const AtomicStatement& a) { return a.field_id == "dataset"; });
    CHECK(dataset == 3);
    CHECK(std::any_of(result.atoms.begin(), result.atoms.end(),
                      [](const AtomicStatement& a) { return a.atom_id == "dataset-1"; }));

    SECTION("field filter") {
        const auto only = atomize(card, *gw, std::set<std::string>{"purpose"});
        REQUIRE(only.atoms.size() == 1);
        CHECK(only.atoms[0].field_id == "purpose");
    }
    SECTION("nothing to atomize") {
        BenchmarkCard empty;
        empty.benchmark_id = "x";
        CHECK_THROWS_AS(atomize(empty, *gw), Error);
    }
}

TEST_CASE("judge reads both key spellings", "[validation]") {
    retrieval::KnowledgeChunk chunk;
    chunk.chunk_id = "c1";
    chunk.text = "ctx";
    const AtomicStatement atom{"a-1", "a", "claim", AtomStatus::Pending};

    auto gw = benchcard::testing::scripted_gateway(json::array(
            {json{{"tag", "judge"}, {"response", json{{"entailment", 3}, {"contradiction", 1}, {"neutral", 0}}}}}));
    const auto v = judge_entailment(atom, chunk, *gw);
    CHECK(v.p_entail == 0.75);
    CHECK(v.p_contradict == 0.25);
    CHECK(v.chunk_id == "c1");

    auto bad = benchcard::testing::scripted_gateway(
            json::array({json{{"tag", "judge"}, {"response", json{{"entail", -1}, {"contradict", 1}, {"neutral", 1}}}}}));
    CHECK_THROWS_AS(judge_entailment(atom, chunk, *bad), Error);
}

// ---------------------------------------------------------------------------
// Scoring

TEST_CASE("fixture scoring separates verbatim atoms from the planted claim", "[validation]") {
    auto gw = benchcard::testing::fixture_gateway();
    const auto index = benchcard::testing::fixture_index(*gw);
    const auto report = score_card(benchcard::testing::fixture_card(), index, *gw, fixture_config());

    const auto& planted = atom_with(report.atoms, "50,000");
    CHECK(planted.score <= 0.25);
    CHECK(planted.flagged);
    CHECK(planted.scored);
    CHECK_FALSE(planted.evidence.empty());

    const auto& verbatim = atom_with(report.atoms, "trained annotators");
    CHECK(verbatim.score >= 0.95);
    CHECK_FALSE(verbatim.flagged);
    CHECK(report.flag_count() == 1);

    for (std::size_t i = 1; i < report.atoms.size(); ++i) {
        CHECK(report.atoms[i - 1].score <= report.atoms[i].score);
    }
    for (const auto& a : report.atoms) {
        CHECK(a.flagged == (a.score < kDefaultThreshold));
        CHECK(a.evidence.size() <= 5);
        CHECK(a.retrieved.size() <= 5);
        CHECK(a.verdicts.size() == a.evidence.size());
    }
}

TEST_CASE("atoms with no relevant evidence score 0.5", "[validation]") {
    auto gw = benchcard::testing::scripted_gateway(
            json::array({json{{"tag", "grade"}, {"response", json{{"grades", json::array()}}}}}));
    auto embed = benchcard::testing::fixture_gateway();
    const auto index = benchcard::testing::fixture_index(*embed);
    const auto scores =
            score_atoms({AtomicStatement{"x-1", "x", "Questions about encyclopedias.", AtomStatus::Pending}}, index,
                        *gw, fixture_config());
    REQUIRE(scores.size() == 1);
    CHECK(scores[0].score == 0.5);
    CHECK(scores[0].flagged);
    CHECK(scores[0].scored);
    CHECK(scores[0].verdicts.empty());
}

TEST_CASE("judging failures degrade to unscored and flagged", "[validation]") {
    auto gw = benchcard::testing::scripted_gateway(
            json::array({json{{"tag", "grade"}, {"builtin", "grade_all"}},
                         json{{"tag", "judge"}, {"response", "not json at all"}}}));
    const auto index = benchcard::testing::fixture_index(*gw);
    const auto scores = score_atoms(
            {AtomicStatement{"x-1", "x", "The demo benchmark contains 1,200 questions.", AtomStatus::Pending}}, index,
            *gw, fixture_config());
    REQUIRE(scores.size() == 1);
    CHECK_FALSE(scores[0].scored);
    CHECK(scores[0].flagged);
    CHECK_FALSE(scores[0].error.empty());
}

TEST_CASE("the threshold decides flags", "[validation]") {
    auto gw = benchcard::testing::fixture_gateway();
    const auto index = benchcard::testing::fixture_index(*gw);
    auto config = fixture_config();
    config.threshold = 0.999;
    const auto strict = score_card(benchcard::testing::fixture_card(), index, *gw, config);
    config.threshold = 0.01;
    const auto lax = score_card(benchcard::testing::fixture_card(), index, *gw, config);
    CHECK(strict.flag_count() >= lax.flag_count());
    CHECK(lax.flag_count() == 0);
}

// ---------------------------------------------------------------------------
// Loop

TEST_CASE("validation loop without remediation", "[validation]") {
    auto gw = benchcard::testing::fixture_gateway();
    const auto index = benchcard::testing::fixture_index(*gw);
    const auto result = validation_loop(benchcard::testing::fixture_card(), index, *gw, fixture_config());
    REQUIRE(result.reports.size() == 1);
    CHECK(result.reports[0].flag_count() == 1);
    CHECK(result.card.field("dataset")->status == FieldStatus::Flagged);
    CHECK(result.card.field("purpose")->status == FieldStatus::Validated);
    REQUIRE(result.reports[0].remediation_actions.size() == 1);
    CHECK(result.reports[0].remediation_actions[0].strategy == "none");
}

TEST_CASE("validation loop with automatic revision", "[validation]") {
    auto gw = benchcard::testing::fixture_gateway();
    const auto index = benchcard::testing::fixture_index(*gw);
    const auto draft = benchcard::testing::fixture_card();
    const auto result = validation_loop(draft, index, *gw, fixture_config(Strategy::Auto));
    REQUIRE(result.reports.size() == 2);
    CHECK(result.reports[0].flag_count() == 1);
    CHECK(result.reports[0].remediation_actions.at(0).strategy == "auto_revise");
    CHECK(result.reports[1].flag_count() == 0);
    CHECK(result.reports[1].round == 2);
    CHECK(result.reports[1].card_revision == result.reports[0].card_revision + 1);

    const auto* dataset = result.card.field("dataset");
    CHECK(dataset->revision == 1);
    CHECK(dataset->text.find("1,200") != std::string::npos);
    CHECK(dataset->status == FieldStatus::Validated);
    // Untouched fields keep their text and revision.
    CHECK(result.card.field("purpose")->text == draft.field("purpose")->text);
    CHECK(result.card.field("purpose")->revision == 0);
    // Re-atomized atoms carry the revision in their id.
    CHECK(std::any_of(result.reports[1].atoms.begin(), result.reports[1].atoms.end(),
                      [](const AtomScore& a) { return a.atom_id == "dataset-r1-1"; }));
}

TEST_CASE("round limit leaves atoms unresolved", "[validation]") {
    auto script = json::parse(util::read_file(benchcard::testing::fixtures_dir() / "scripted_gateway.json"));
    for (auto& rule : script["rules"]) {
        if (rule.value("tag", "") == "revise") {
            rule["response"] = "The demo benchmark contains 50,000 questions.";
        }
    }
    auto gw = benchcard::testing::scripted_gateway(script);
    const auto index = benchcard::testing::fixture_index(*gw);
    auto config = fixture_config(Strategy::Auto);
    config.max_rounds = 1;
    const auto result = validation_loop(benchcard::testing::fixture_card(), index, *gw, config);
    REQUIRE(result.reports.size() == 2);
    CHECK(result.reports[1].flag_count() == 1);
    CHECK(result.reports[1].remediation_actions.at(0).outcome.find("unresolved") != std::string::npos);
    CHECK(result.card.field("dataset")->status == FieldStatus::Flagged);
}

TEST_CASE("revise_field needs flagged atoms of the field", "[validation]") {
    auto gw = benchcard::testing::fixture_gateway();
    const auto card = benchcard::testing::fixture_card();
    CHECK_THROWS_AS(revise_field(card, "dataset", {}, {}, *gw), Error);
}

TEST_CASE("report json round trip", "[validation]") {
    auto gw = benchcard::testing::fixture_gateway();
    const auto index = benchcard::testing::fixture_index(*gw);
    const auto report = score_card(benchcard::testing::fixture_card(), index, *gw, fixture_config());
    const auto j = to_json(report);
    CHECK(j.at("flag_count") == 1);
    const auto back = report_from_json(json::parse(j.dump()));
    CHECK(back == report);
}
