#include "benchcard/http.hpp"

#include "benchcard/error.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace benchcard::http {

Url split_url(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) {
        throw Error(ErrorCode::InvalidConfig, "not a URL: " + std::string(url));
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string_view::npos) {
        return Url{std::string(url), "/"};
    }
    return Url{std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

namespace {

httplib::Headers to_httplib(const Headers& headers) {
    httplib::Headers out;
    for (const auto& [k, v] : headers) {
        out.emplace(k, v);
    }
    return out;
}

httplib::Client make_client(const Url& url, std::chrono::seconds timeout) {
    httplib::Client client(url.origin);
    client.set_connection_timeout(std::chrono::seconds(std::min<long>(timeout.count(), 30)));
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    client.set_follow_location(true);
    return client;
}

}  // namespace

std::optional<Response> get(std::string_view url, const Headers& headers, std::chrono::seconds timeout) {
    const auto parts = split_url(url);
    auto client = make_client(parts, timeout);
    auto res = client.Get(parts.path, to_httplib(headers));
    if (!res) {
        spdlog::debug("GET {} failed: {}", url, httplib::to_string(res.error()));
        return std::nullopt;
    }
    return Response{res->status, res->body};
}

std::optional<Response> post(std::string_view url, const std::string& body,
                             const std::string& content_type, const Headers& headers,
                             std::chrono::seconds timeout) {
    const auto parts = split_url(url);
    auto client = make_client(parts, timeout);
    auto res = client.Post(parts.path, to_httplib(headers), body, content_type);
    if (!res) {
        spdlog::debug("POST {} failed: {}", url, httplib::to_string(res.error()));
        return std::nullopt;
    }
    return Response{res->status, res->body};
}

}  // namespace benchcard::http

namespace benchcard::llm {

using nlohmann::json;

namespace {

http::Headers auth_headers(const RemoteEndpoint& endpoint) {
    http::Headers headers;
    if (endpoint.api_key) {
        headers.emplace("Authorization", "Bearer " + *endpoint.api_key);
    }
    return headers;
}

json post_json(const RemoteEndpoint& endpoint, const json& payload) {
    auto res = http::post(endpoint.url, payload.dump(), "application/json", auth_headers(endpoint),
                          endpoint.timeout);
    if (!res) {
        throw Error(ErrorCode::BackendUnreachable, "cannot reach " + endpoint.url);
    }
    if (res->status == 413 ||
        (res->status == 400 && res->body.find("context") != std::string::npos &&
         res->body.find("length") != std::string::npos)) {
        throw Error(ErrorCode::ContextTooLarge, "backend rejected prompt size: " + res->body.substr(0, 200));
    }
    if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorCode::BackendUnreachable, endpoint.url + " answered HTTP " +
                                                           std::to_string(res->status) + ": " +
                                                           res->body.substr(0, 200));
    }
    try {
        return json::parse(res->body);
    } catch (const json::parse_error&) {
        throw Error(ErrorCode::BackendUnreachable, endpoint.url + " returned a non-JSON body");
    }
}

}  // namespace

RemoteChatBackend::RemoteChatBackend(RemoteEndpoint endpoint) : m_endpoint(std::move(endpoint)) {}

std::string RemoteChatBackend::complete(const ChatRequest& request) {
    json messages = json::array();
    if (!request.system.empty()) {
        messages.push_back(json{{"role", "system"}, {"content", request.system}});
    }
    messages.push_back(json{{"role", "user"}, {"content", request.user}});
    json payload{{"model", m_endpoint.model},
                 {"messages", messages},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_output_tokens}};
    if (request.response_format == ResponseFormat::Json) {
        payload["response_format"] = json{{"type", "json_object"}};
    }
    const json reply = post_json(m_endpoint, payload);
    try {
        const auto& content = reply.at("choices").at(0).at("message").at("content");
        return content.is_string() ? content.get<std::string>() : content.dump();
    } catch (const json::exception&) {
        throw Error(ErrorCode::BackendUnreachable, "chat reply lacks choices[0].message.content");
    }
}

RemoteEmbeddingBackend::RemoteEmbeddingBackend(RemoteEndpoint endpoint)
        : m_endpoint(std::move(endpoint)) {}

std::vector<std::vector<double>> RemoteEmbeddingBackend::embed(const std::vector<std::string>& texts) {
    const json reply = post_json(m_endpoint, json{{"model", m_endpoint.model}, {"input", texts}});
    std::vector<std::vector<double>> out(texts.size());
    try {
        const auto& data = reply.at("data");
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& item = data[i];
            const std::size_t idx = item.contains("index") ? item["index"].get<std::size_t>() : i;
            if (idx >= out.size()) {
                throw Error(ErrorCode::BackendUnreachable, "embedding reply index out of range");
            }
            out[idx] = item.at("embedding").get<std::vector<double>>();
        }
    } catch (const json::exception&) {
        throw Error(ErrorCode::BackendUnreachable, "embedding reply lacks data[].embedding");
    }
    return out;
}

}  // namespace benchcard::llm
