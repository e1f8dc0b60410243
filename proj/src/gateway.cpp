#include "benchcard/gateway.hpp"

#include "benchcard/error.hpp"
#include "benchcard/http.hpp"
#include "benchcard/scripted_backend.hpp"
#include "benchcard/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <tuple>

namespace benchcard::llm {

using nlohmann::json;

namespace {

thread_local std::string t_scope;

std::string request_fingerprint(const ChatRequest& r) {
    return r.system + "\x1f" + r.user;
}

}  // namespace

double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dimension() != b.dimension()) {
        throw Error(ErrorCode::DimensionMismatch, "embedding dimensions differ");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        sum += a.values[i] * b.values[i];
    }
    return sum;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot(a, b) / (na * nb);
}

// ---------------------------------------------------------------------------

void CallLog::add(CallRecord record) {
    std::lock_guard lock(m_mutex);
    record.seq = m_next_seq[record.scope]++;
    m_records.push_back(std::move(record));
}

std::vector<CallRecord> CallLog::records() const {
    std::lock_guard lock(m_mutex);
    auto out = m_records;
    std::stable_sort(out.begin(), out.end(), [](const CallRecord& a, const CallRecord& b) {
        return std::tie(a.scope, a.seq) < std::tie(b.scope, b.seq);
    });
    return out;
}

std::size_t CallLog::size() const {
    std::lock_guard lock(m_mutex);
    return m_records.size();
}

json CallLog::to_json() const {
    json out = json::array();
    for (const auto& r : records()) {
        json entry{{"scope", r.scope},
                   {"seq", r.seq},
                   {"kind", r.kind},
                   {"tag", r.tag},
                   {"request_sha256", r.request_sha256},
                   {"response_sha256", r.response_sha256},
                   {"attempts", r.attempts},
                   {"ok", r.ok},
                   {"started_at", r.started_at},
                   {"duration_ms", r.duration_ms}};
        if (!r.ok) {
            entry["error"] = r.error;
        }
        out.push_back(std::move(entry));
    }
    return out;
}

CallScope::CallScope(const std::string& name) : m_previous(t_scope) {
    t_scope = m_previous.empty() ? name : m_previous + "/" + name;
}

CallScope::~CallScope() { t_scope = m_previous; }

std::string CallScope::current() { return t_scope; }

// ---------------------------------------------------------------------------

class Gateway::Slot {
public:
    explicit Slot(Gateway& g) : m_gateway(g) {
        std::unique_lock lock(g.m_slot_mutex);
        g.m_slot_cv.wait(lock, [&] { return g.m_in_flight < g.m_options.max_in_flight; });
        ++g.m_in_flight;
    }
    ~Slot() {
        {
            std::lock_guard lock(m_gateway.m_slot_mutex);
            --m_gateway.m_in_flight;
        }
        m_gateway.m_slot_cv.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

private:
    Gateway& m_gateway;
};

Gateway::Gateway(std::shared_ptr<ChatBackend> chat,
                 std::shared_ptr<EmbeddingBackend> embedding,
                 GatewayOptions options)
        : m_chat(std::move(chat)), m_embedding(std::move(embedding)), m_options(options) {
    m_options.json_attempts = std::max(1, m_options.json_attempts);
    m_options.max_in_flight = std::max<std::size_t>(1, m_options.max_in_flight);
}

std::optional<json> try_parse_json_reply(const std::string& text) {
    std::string body = util::trim(text);
    if (body.starts_with("```")) {
        const auto first_nl = body.find('\n');
        const auto last_fence = body.rfind("```");
        if (first_nl != std::string::npos && last_fence != std::string::npos && last_fence > first_nl) {
            body = body.substr(first_nl + 1, last_fence - first_nl - 1);
        }
    }
    try {
        return json::parse(body);
    } catch (const json::parse_error&) {
        return std::nullopt;
    }
}

std::string Gateway::complete(ChatRequest request) {
    if (!m_chat) {
        throw Error(ErrorCode::BackendUnreachable, "no chat backend configured");
    }
    CallRecord record;
    record.scope = CallScope::current();
    record.kind = "chat";
    record.tag = request.tag;
    record.request_sha256 = util::sha256_hex(request_fingerprint(request));
    record.started_at = util::now_rfc3339();
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&](bool ok, const std::string& response, const std::string& error) {
        record.ok = ok;
        record.response_sha256 = ok ? util::sha256_hex(response) : "";
        record.error = error;
        record.duration_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        m_log.add(record);
    };

    const std::string original_user = request.user;
    const int attempts = request.response_format == ResponseFormat::Json ? m_options.json_attempts : 1;
    std::string last_output;
    try {
        for (int attempt = 0; attempt < attempts; ++attempt) {
            request.attempt = attempt;
            record.attempts = attempt + 1;
            {
                Slot slot(*this);
                last_output = m_chat->complete(request);
            }
            if (request.response_format == ResponseFormat::FreeText) {
                finish(true, last_output, "");
                return last_output;
            }
            if (auto parsed = try_parse_json_reply(last_output)) {
                std::string canonical = parsed->dump();
                finish(true, canonical, "");
                return canonical;
            }
            spdlog::debug("non-JSON reply for '{}' (attempt {}/{})", request.tag, attempt + 1, attempts);
            request.user = original_user +
                           "\n\nYour previous reply was not valid JSON:\n" + last_output +
                           "\n\nReply again with a single valid JSON value and nothing else.";
        }
    } catch (const Error& e) {
        finish(false, "", e.what());
        throw;
    }
    const std::string message = "no valid JSON after " + std::to_string(attempts) +
                                " attempts (tag '" + request.tag + "')";
    finish(false, "", message);
    throw Error(ErrorCode::NonJsonOutputAfterRetries, message);
}

json Gateway::complete_json(ChatRequest request) {
    request.response_format = ResponseFormat::Json;
    return json::parse(complete(std::move(request)));
}

std::vector<EmbeddingVector> Gateway::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) {
        throw Error(ErrorCode::EmptyInput, "embed: no texts");
    }
    for (const auto& t : texts) {
        if (util::trim(t).empty()) {
            throw Error(ErrorCode::EmptyInput, "embed: blank text");
        }
    }
    if (!m_embedding) {
        throw Error(ErrorCode::BackendUnreachable, "no embedding backend configured");
    }
    CallRecord record;
    record.scope = CallScope::current();
    record.kind = "embed";
    record.tag = "embed";
    record.attempts = 1;
    std::string joined;
    for (const auto& t : texts) {
        joined += t;
        joined.push_back('\x1f');
    }
    record.request_sha256 = util::sha256_hex(joined);
    record.started_at = util::now_rfc3339();
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    try {
        const std::size_t batch = std::max<std::size_t>(1, m_embedding->max_batch());
        for (std::size_t begin = 0; begin < texts.size(); begin += batch) {
            const std::size_t end = std::min(texts.size(), begin + batch);
            std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                           texts.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<std::vector<double>> raw;
            {
                Slot slot(*this);
                raw = m_embedding->embed(chunk);
            }
            if (raw.size() != chunk.size()) {
                throw Error(ErrorCode::BackendUnreachable, "embedding backend returned " +
                                                                   std::to_string(raw.size()) +
                                                                   " vectors for " +
                                                                   std::to_string(chunk.size()) + " inputs");
            }
            for (auto& v : raw) {
                {
                    std::lock_guard lock(m_dim_mutex);
                    if (!m_dimension) {
                        m_dimension = v.size();
                    } else if (*m_dimension != v.size()) {
                        throw Error(ErrorCode::DimensionMismatch,
                                    "embedding dimension " + std::to_string(v.size()) +
                                            " differs from " + std::to_string(*m_dimension));
                    }
                }
                double norm = 0.0;
                for (double x : v) {
                    norm += x * x;
                }
                norm = std::sqrt(norm);
                if (!(norm > 0.0) || !std::isfinite(norm)) {
                    throw Error(ErrorCode::BackendUnreachable, "embedding backend returned a zero vector");
                }
                for (double& x : v) {
                    x /= norm;
                }
                out.push_back(EmbeddingVector{std::move(v)});
            }
        }
    } catch (const Error& e) {
        record.ok = false;
        record.error = e.what();
        record.duration_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        m_log.add(record);
        throw;
    }
    std::string digest_input;
    for (const auto& v : out) {
        digest_input.append(reinterpret_cast<const char*>(v.values.data()), v.values.size() * sizeof(double));
    }
    record.response_sha256 = util::sha256_hex(digest_input);
    record.duration_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    m_log.add(record);
    return out;
}

// ---------------------------------------------------------------------------

GatewayConfig gateway_config_from_json(const json& llm) {
    GatewayConfig config;
    if (!llm.is_object()) {
        throw Error(ErrorCode::InvalidConfig, "gateway config must be a JSON object");
    }
    try {
        config.llm_endpoint = llm.value("llm_endpoint", config.llm_endpoint);
        config.llm_model = llm.value("llm_model", config.llm_model);
        config.api_key_env = llm.value("api_key_env", config.api_key_env);
        config.embedding_endpoint = llm.value("embedding_endpoint", config.embedding_endpoint);
        config.embedding_model = llm.value("embedding_model", config.embedding_model);
        config.timeout_seconds = llm.value("timeout_seconds", config.timeout_seconds);
        config.max_in_flight = llm.value("max_in_flight", config.max_in_flight);
        config.scripted_path = llm.value("scripted", config.scripted_path);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("gateway config: ") + e.what());
    }
    return config;
}

GatewayConfig load_gateway_config(const std::optional<std::string>& path) {
    GatewayConfig config;
    if (path) {
        json j;
        try {
            j = json::parse(util::read_file(*path));
        } catch (const json::parse_error& e) {
            throw Error(ErrorCode::InvalidConfig, "config " + *path + ": " + e.what());
        }
        config = gateway_config_from_json(j.contains("gateway") ? j["gateway"] : j);
    }
    if (auto v = util::get_env("BENCHCARD_LLM_ENDPOINT")) config.llm_endpoint = *v;
    if (auto v = util::get_env("BENCHCARD_LLM_MODEL")) config.llm_model = *v;
    if (auto v = util::get_env("BENCHCARD_API_KEY_ENV")) config.api_key_env = *v;
    if (auto v = util::get_env("BENCHCARD_EMBEDDING_ENDPOINT")) config.embedding_endpoint = *v;
    if (auto v = util::get_env("BENCHCARD_EMBEDDING_MODEL")) config.embedding_model = *v;
    if (auto v = util::get_env("BENCHCARD_TIMEOUT")) {
        try {
            config.timeout_seconds = std::stoi(*v);
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "BENCHCARD_TIMEOUT must be an integer");
        }
    }
    if (auto v = util::get_env("BENCHCARD_SCRIPTED")) config.scripted_path = *v;
    if (config.timeout_seconds <= 0) {
        throw Error(ErrorCode::InvalidConfig, "timeout_seconds must be positive");
    }
    return config;
}

json to_json(const GatewayConfig& config) {
    return json{{"llm_endpoint", config.llm_endpoint},
                {"llm_model", config.llm_model},
                {"api_key_env", config.api_key_env},
                {"embedding_endpoint", config.embedding_endpoint},
                {"embedding_model", config.embedding_model},
                {"timeout_seconds", config.timeout_seconds},
                {"max_in_flight", config.max_in_flight},
                {"scripted", config.scripted_path}};
}

std::unique_ptr<Gateway> make_gateway(const GatewayConfig& config) {
    GatewayOptions options;
    options.max_in_flight = config.max_in_flight;
    if (!config.scripted_path.empty()) {
        return std::make_unique<Gateway>(
                std::make_shared<ScriptedChatBackend>(ScriptedChatBackend::from_file(config.scripted_path)),
                std::make_shared<HashEmbeddingBackend>(), options);
    }
    if (config.llm_endpoint.empty()) {
        throw Error(ErrorCode::InvalidConfig,
                    "no chat backend configured (set llm_endpoint or a scripted backend)");
    }
    std::optional<std::string> key;
    if (!config.api_key_env.empty()) {
        key = util::get_env(config.api_key_env.c_str());
    }
    const std::chrono::seconds timeout(config.timeout_seconds);
    auto chat = std::make_shared<RemoteChatBackend>(
            RemoteEndpoint{config.llm_endpoint, config.llm_model, key, timeout});
    std::shared_ptr<EmbeddingBackend> embedding;
    if (!config.embedding_endpoint.empty()) {
        embedding = std::make_shared<RemoteEmbeddingBackend>(
                RemoteEndpoint{config.embedding_endpoint, config.embedding_model, key, timeout});
    } else {
        spdlog::warn("no embedding endpoint configured; dense retrieval uses the hashing embedding");
        embedding = std::make_shared<HashEmbeddingBackend>();
    }
    return std::make_unique<Gateway>(std::move(chat), std::move(embedding), options);
}

}  // namespace benchcard::llm
