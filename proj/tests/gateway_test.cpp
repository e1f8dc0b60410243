#include <catch2/catch_amalgamated.hpp>

#include "benchcard/error.hpp"
#include "benchcard/gateway.hpp"
#include "benchcard/scripted_backend.hpp"
#include "benchcard/util.hpp"
#include "support/test_support.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

using namespace benchcard;
using namespace benchcard::llm;
using json = nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoError;
}

// Independent reimplementation of the scripted embedding: FNV-1a 64 over each
// normalized token, bucket = hash mod 256, counts, then L2 norm.
std::vector<double> oracle_hash_embedding(const std::string& text) {
    std::vector<double> v(256, 0.0);
    std::string cleaned;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 128 && std::ispunct(u)) {
            continue;
        }
        cleaned.push_back(u < 128 ? static_cast<char>(std::tolower(u)) : c);
    }
    std::istringstream in(cleaned);
    std::string token;
    while (in >> token) {
        std::uint64_t h = 14695981039346656037ULL;
        for (unsigned char c : token) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        v[h % 256] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

class CountingBackend : public ChatBackend {
public:
    std::string complete(const ChatRequest&) override {
        const int now = ++m_active;
        int seen = m_peak.load();
        while (now > seen && !m_peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --m_active;
        return "ok";
    }
    int peak() const { return m_peak.load(); }

private:
    std::atomic<int> m_active{0};
    std::atomic<int> m_peak{0};
};

class RecordingBackend : public ChatBackend {
public:
    explicit RecordingBackend(std::vector<std::string> replies) : m_replies(std::move(replies)) {}
    std::string complete(const ChatRequest& request) override {
        prompts.push_back(request.user);
        attempts.push_back(request.attempt);
        return m_replies.at(std::min(prompts.size() - 1, m_replies.size() - 1));
    }
    std::vector<std::string> prompts;
    std::vector<int> attempts;

private:
    std::vector<std::string> m_replies;
};

}  // namespace

TEST_CASE("scripted completion", "[gateway]") {
    Gateway gw(std::make_shared<ScriptedChatBackend>(std::map<std::string, std::string>{{"PING", "PONG"}}), nullptr);
    ChatRequest req;
    req.user = "PING";
    REQUIRE(gw.complete(req) == "PONG");

    req.user = "unknown prompt";
    REQUIRE(code_of([&] { gw.complete(req); }) == ErrorCode::MissingScript);
}

TEST_CASE("scripted rules match tag, vars and prompt text", "[gateway]") {
    auto gw = testing::scripted_gateway(json::parse(R"({"rules": [
        {"tag": "compose", "when": {"section": "purpose"}, "response": "P"},
        {"tag": "compose", "response": "other"},
        {"user_contains": "needle", "response": {"found": true}},
        {"tag": "flaky", "responses": ["nope", "{\"ok\": 1}"]}
    ]})"));
    ChatRequest req;
    req.tag = "compose";
    req.vars = json{{"section", "purpose"}};
    REQUIRE(gw->complete(req) == "P");
    req.vars = json{{"section", "metrics"}};
    REQUIRE(gw->complete(req) == "other");

    ChatRequest needle;
    needle.user = "a needle in a haystack";
    REQUIRE(gw->complete_json(needle) == json{{"found", true}});

    ChatRequest flaky;
    flaky.tag = "flaky";
    REQUIRE(gw->complete_json(flaky) == json{{"ok", 1}});
    REQUIRE(gw->log().records().back().attempts == 2);
}

TEST_CASE("JSON mode retries then fails", "[gateway]") {
    auto backend = std::make_shared<RecordingBackend>(std::vector<std::string>{"not json"});
    Gateway gw(backend, nullptr);
    ChatRequest req;
    req.user = "give json";
    req.response_format = ResponseFormat::Json;
    REQUIRE(code_of([&] { gw.complete(req); }) == ErrorCode::NonJsonOutputAfterRetries);
    REQUIRE(backend->prompts.size() == 3);
    REQUIRE(backend->attempts == std::vector<int>{0, 1, 2});
    REQUIRE(backend->prompts[0] == "give json");
    // the invalid output is echoed back in the corrective reminder
    REQUIRE(backend->prompts[1].find("not json") != std::string::npos);
    REQUIRE(backend->prompts[1].rfind("give json", 0) == 0);

    auto records = gw.log().records();
    REQUIRE(records.size() == 1);
    REQUIRE_FALSE(records[0].ok);
    REQUIRE(records[0].attempts == 3);
}

TEST_CASE("JSON replies may be fenced", "[gateway]") {
    REQUIRE(try_parse_json_reply("```json\n{\"a\": 1}\n```") == json{{"a", 1}});
    REQUIRE(try_parse_json_reply("  [1,2]  ") == json::array({1, 2}));
    REQUIRE_FALSE(try_parse_json_reply("Sure! {\"a\": 1}"));

    auto backend = std::make_shared<RecordingBackend>(std::vector<std::string>{"```\n{\"b\": 2}\n```"});
    Gateway gw(backend, nullptr);
    ChatRequest req;
    req.response_format = ResponseFormat::Json;
    const auto out = gw.complete(req);
    REQUIRE(json::parse(out) == json{{"b", 2}});
}

TEST_CASE("free text is returned without retry", "[gateway]") {
    auto backend = std::make_shared<RecordingBackend>(std::vector<std::string>{"not json"});
    Gateway gw(backend, nullptr);
    REQUIRE(gw.complete(ChatRequest{}) == "not json");
    REQUIRE(backend->prompts.size() == 1);
}

TEST_CASE("context limit", "[gateway]") {
    auto gw = testing::scripted_gateway(json::parse(R"({"rules": [{"response": "x"}], "max_prompt_chars": 10})"));
    ChatRequest req;
    req.user = std::string(50, 'a');
    REQUIRE(code_of([&] { gw->complete(req); }) == ErrorCode::ContextTooLarge);
}

TEST_CASE("in-flight cap", "[gateway]") {
    auto backend = std::make_shared<CountingBackend>();
    GatewayOptions options;
    options.max_in_flight = 2;
    Gateway gw(backend, nullptr, options);
    util::parallel_for(12, 8, [&](std::size_t) { gw.complete(ChatRequest{}); });
    REQUIRE(backend->peak() <= 2);
    REQUIRE(backend->peak() >= 1);
    REQUIRE(gw.log().size() == 12);
}

TEST_CASE("embeddings", "[gateway]") {
    auto gw = testing::scripted_gateway(json::object({{"rules", json::array()}}));

    SECTION("deterministic and unit norm") {
        auto a = gw->embed({"a"});
        auto b = gw->embed({"a"});
        REQUIRE(a == b);
        auto many = gw->embed({"the quick brown fox", "jumps over", "the lazy dog!", "x"});
        REQUIRE(many.size() == 4);
        for (const auto& v : many) {
            REQUIRE(v.dimension() == 256);
            double n = 0.0;
            for (double x : v.values) n += x * x;
            REQUIRE(std::abs(std::sqrt(n) - 1.0) < 1e-9);
        }
    }

    SECTION("matches the independent hashing oracle") {
        for (const std::string text : {"Accuracy is the fraction of questions answered exactly.",
                                       "BM25 ranks; dense vectors re-rank.", "Données 测试 ключ"}) {
            auto v = gw->embed({text})[0];
            auto expected = oracle_hash_embedding(text);
            for (std::size_t i = 0; i < 256; ++i) {
                REQUIRE(v.values[i] == Catch::Approx(expected[i]).margin(1e-12));
            }
        }
    }

    SECTION("distinct strings are not identical") {
        auto v = gw->embed({"exact match accuracy", "annotators wrote answers"});
        double direct = 0.0;
        for (std::size_t i = 0; i < 256; ++i) direct += v[0].values[i] * v[1].values[i];
        REQUIRE(cosine(v[0], v[1]) == Catch::Approx(direct).margin(1e-12));
        REQUIRE(cosine(v[0], v[1]) < 1.0);
    }

    SECTION("input validation") {
        REQUIRE(code_of([&] { gw->embed({}); }) == ErrorCode::EmptyInput);
        REQUIRE(code_of([&] { gw->embed({"ok", "   "}); }) == ErrorCode::EmptyInput);
    }
}

TEST_CASE("embedding dimension is fixed per gateway", "[gateway]") {
    class Flip : public EmbeddingBackend {
    public:
        std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
            std::vector<std::vector<double>> out;
            for (std::size_t i = 0; i < texts.size(); ++i) {
                out.emplace_back(m_calls == 0 ? 3 : 4, 1.0);
            }
            ++m_calls;
            return out;
        }

    private:
        int m_calls = 0;
    };
    Gateway gw(nullptr, std::make_shared<Flip>());
    REQUIRE(gw.embed({"a"})[0].dimension() == 3);
    REQUIRE(code_of([&] { gw.embed({"b"}); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("call log is ordered by scope and sequence", "[gateway]") {
    auto gw = testing::scripted_gateway(json::parse(R"({"rules": [{"response": "{}"}]})"));
    util::parallel_for(6, 3, [&](std::size_t i) {
        CallScope scope("task/" + std::to_string(i));
        gw->complete(ChatRequest{});
        gw->complete(ChatRequest{});
    });
    auto records = gw->log().records();
    REQUIRE(records.size() == 12);
    for (std::size_t i = 0; i < records.size(); ++i) {
        REQUIRE(records[i].scope == "task/" + std::to_string(i / 2));
        REQUIRE(records[i].seq == i % 2);
        REQUIRE(records[i].request_sha256.size() == 64);
    }
    {
        CallScope outer("outer");
        CallScope inner("inner");
        REQUIRE(CallScope::current() == "outer/inner");
    }
    REQUIRE(CallScope::current().empty());
}

TEST_CASE("sentence splitter", "[gateway]") {
    auto s = split_sentences("# Heading\n\nFirst one. Second one! Third?\n- bullet item\n<!-- hidden. -->Tail");
    REQUIRE(s == std::vector<std::string>{"Heading.", "First one.", "Second one!", "Third?", "bullet item.", "Tail."});
    REQUIRE(split_sentences("Version 1.2 is out. Done.") ==
            std::vector<std::string>{"Version 1.2 is out.", "Done."});
}

TEST_CASE("gateway config", "[gateway]") {
    testing::TempDir dir;
    util::write_file_atomic(dir / "cfg.json", R"({"gateway": {"llm_endpoint": "http://h:1/v1/chat/completions",
        "llm_model": "m", "timeout_seconds": 30, "scripted": ""}})");
    ::setenv("BENCHCARD_LLM_MODEL", "override", 1);
    auto cfg = load_gateway_config((dir / "cfg.json").string());
    ::unsetenv("BENCHCARD_LLM_MODEL");
    REQUIRE(cfg.llm_endpoint == "http://h:1/v1/chat/completions");
    REQUIRE(cfg.llm_model == "override");
    REQUIRE(cfg.timeout_seconds == 30);
    REQUIRE(gateway_config_from_json(to_json(cfg)) == cfg);

    REQUIRE(load_gateway_config(std::nullopt).timeout_seconds == 120);

    util::write_file_atomic(dir / "bad.json", R"({"timeout_seconds": 0})");
    REQUIRE(code_of([&] { load_gateway_config((dir / "bad.json").string()); }) == ErrorCode::InvalidConfig);

    GatewayConfig none;
    REQUIRE(code_of([&] { make_gateway(none); }) == ErrorCode::InvalidConfig);
    GatewayConfig scripted;
    scripted.scripted_path = (testing::fixtures_dir() / "scripted_gateway.json").string();
    REQUIRE(make_gateway(scripted) != nullptr);
}
