#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace benchcard::llm {

enum class ResponseFormat { FreeText, Json };

struct ChatRequest {
    std::string system;
    std::string user;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    ResponseFormat response_format = ResponseFormat::FreeText;

    // Routing metadata. Remote backends ignore both; scripted backends match on
    // them so tests need not reproduce whole prompts.
    std::string tag;
    nlohmann::json vars = nlohmann::json::object();

    // 0 on the first try; bumped by the gateway on each JSON retry.
    int attempt = 0;
};

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dimension() const { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

double dot(const EmbeddingVector& a, const EmbeddingVector& b);
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    // Raw, possibly unnormalized vectors; one per input.
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
    virtual std::size_t max_batch() const { return 64; }
};

struct CallRecord {
    std::string scope;
    std::size_t seq = 0;
    std::string kind;  // "chat" or "embed"
    std::string tag;
    std::string request_sha256;
    std::string response_sha256;
    int attempts = 0;
    bool ok = true;
    std::string error;
    std::string started_at;
    double duration_ms = 0.0;
};

// Collects one record per gateway call. Records are ordered by (scope, seq)
// so concurrent fan-out still yields a reproducible log.
class CallLog {
public:
    void add(CallRecord record);
    std::vector<CallRecord> records() const;
    std::size_t size() const;
    nlohmann::json to_json() const;

private:
    mutable std::mutex m_mutex;
    std::vector<CallRecord> m_records;
    std::map<std::string, std::size_t> m_next_seq;
};

// Names the calls made on this thread until destroyed. Nested scopes join
// with '/'.
class CallScope {
public:
    explicit CallScope(const std::string& name);
    ~CallScope();
    CallScope(const CallScope&) = delete;
    CallScope& operator=(const CallScope&) = delete;

    static std::string current();

private:
    std::string m_previous;
};

struct GatewayOptions {
    int json_attempts = 3;
    std::size_t max_in_flight = 4;
};

class Gateway {
public:
    Gateway(std::shared_ptr<ChatBackend> chat,
            std::shared_ptr<EmbeddingBackend> embedding,
            GatewayOptions options = {});

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    // With ResponseFormat::Json the returned text always parses as JSON;
    // otherwise NonJsonOutputAfterRetries is thrown.
    std::string complete(ChatRequest request);

    // complete() in JSON mode, parsed.
    nlohmann::json complete_json(ChatRequest request);

    // Unit-norm vectors, one per input, all of one dimension per gateway.
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);

    CallLog& log() { return m_log; }
    const CallLog& log() const { return m_log; }
    const GatewayOptions& options() const { return m_options; }

private:
    class Slot;

    std::shared_ptr<ChatBackend> m_chat;
    std::shared_ptr<EmbeddingBackend> m_embedding;
    GatewayOptions m_options;
    CallLog m_log;

    std::mutex m_slot_mutex;
    std::condition_variable m_slot_cv;
    std::size_t m_in_flight = 0;

    std::mutex m_dim_mutex;
    std::optional<std::size_t> m_dimension;
};

// Strips a surrounding ``` fence if present and tries to parse.
std::optional<nlohmann::json> try_parse_json_reply(const std::string& text);

struct GatewayConfig {
    std::string llm_endpoint;
    std::string llm_model;
    std::string api_key_env = "BENCHCARD_API_KEY";
    std::string embedding_endpoint;
    std::string embedding_model;
    int timeout_seconds = 120;
    std::size_t max_in_flight = 4;
    std::string scripted_path;  // non-empty selects the scripted backends

    bool operator==(const GatewayConfig&) const = default;
};

// Reads optional JSON config then applies BENCHCARD_* environment overrides.
GatewayConfig load_gateway_config(const std::optional<std::string>& path);
nlohmann::json to_json(const GatewayConfig& config);
GatewayConfig gateway_config_from_json(const nlohmann::json& j);

std::unique_ptr<Gateway> make_gateway(const GatewayConfig& config);

}  // namespace benchcard::llm
