#pragma once

#include "benchcard/card.hpp"
#include "benchcard/gateway.hpp"
#include "benchcard/review.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace benchcard::review {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8765;  // 0 picks a free port
    std::optional<std::filesystem::path> static_dir;
};

// JSON API over a SessionStore. Every response body is
// {"ok": true, "data": ...} or {"ok": false, "error": {"code", "message"}}.
class ReviewServer {
public:
    ReviewServer(SessionStore& store, CardSchema schema, llm::Gateway* gateway, ServerOptions options = {});
    ~ReviewServer();
    ReviewServer(const ReviewServer&) = delete;
    ReviewServer& operator=(const ReviewServer&) = delete;

    // Binds the socket and returns the bound port. Throws IoError on failure.
    int bind();
    // Serves until stop() is called. bind() must have succeeded.
    void serve();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> m_impl;
};

// Runs a server on the given workspace until SIGINT or SIGTERM.
int serve_until_signal(SessionStore& store, const CardSchema& schema, llm::Gateway* gateway, ServerOptions options);

}  // namespace benchcard::review
