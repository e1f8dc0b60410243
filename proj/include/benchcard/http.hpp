#pragma once

#include "benchcard/gateway.hpp"

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace benchcard::http {

struct Url {
    std::string origin;  // scheme://host[:port]
    std::string path;    // always starts with '/'
};

Url split_url(std::string_view url);

struct Response {
    int status = 0;
    std::string body;
};

using Headers = std::multimap<std::string, std::string>;

// nullopt when the server cannot be reached at all.
std::optional<Response> get(std::string_view url, const Headers& headers,
                            std::chrono::seconds timeout);
std::optional<Response> post(std::string_view url, const std::string& body,
                             const std::string& content_type, const Headers& headers,
                             std::chrono::seconds timeout);

}  // namespace benchcard::http

namespace benchcard::llm {

struct RemoteEndpoint {
    std::string url;
    std::string model;
    std::optional<std::string> api_key;
    std::chrono::seconds timeout{120};
};

// Chat-completion wire shape: {"model", "messages": [{role, content}...]};
// the result is choices[0].message.content.
class RemoteChatBackend : public ChatBackend {
public:
    explicit RemoteChatBackend(RemoteEndpoint endpoint);
    std::string complete(const ChatRequest& request) override;

private:
    RemoteEndpoint m_endpoint;
};

// Embedding wire shape: {"model", "input": [...]} -> data[i].embedding.
class RemoteEmbeddingBackend : public EmbeddingBackend {
public:
    explicit RemoteEmbeddingBackend(RemoteEndpoint endpoint);
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

private:
    RemoteEndpoint m_endpoint;
};

}  // namespace benchcard::llm
