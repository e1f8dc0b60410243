#include "benchcard/review_server.hpp"

#include "benchcard/error.hpp"
#include "benchcard/util.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <thread>

namespace benchcard::review {

using nlohmann::json;

namespace {

constexpr std::string_view kPlaceholderPage =
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>Card review</title></head>"
        "<body><h1>Card review</h1><p>The review UI bundle is not installed. The JSON API is served under "
        "<code>/api/</code>.</p></body></html>";

int status_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidDecision:
    case ErrorCode::MalformedJson: return 422;
    case ErrorCode::UnknownAtom:
    case ErrorCode::NoSession: return 404;
    case ErrorCode::UndecidedAtoms: return 409;
    default: return 500;
    }
}

void send_ok(httplib::Response& res, const json& data, int status = 200) {
    res.status = status;
    res.set_content(json{{"ok", true}, {"data", data}}.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
    res.status = status;
    res.set_content(json{{"ok", false}, {"error", {{"code", code}, {"message", message}}}}.dump(), "application/json");
}

std::atomic<ReviewServer*> g_signal_target{nullptr};

extern "C" void handle_stop_signal(int) {
    if (auto* server = g_signal_target.load()) {
        server->stop();
    }
}

}  // namespace

struct ReviewServer::Impl {
    SessionStore& store;
    CardSchema schema;
    llm::Gateway* gateway;
    ServerOptions options;
    httplib::Server server;
    int bound_port = -1;

    Impl(SessionStore& s, CardSchema sc, llm::Gateway* g, ServerOptions o)
        : store(s), schema(std::move(sc)), gateway(g), options(std::move(o)) {}

    template <typename Fn>
    void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            send_error(res, status_for(e.code()), to_string(e.code()), e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    }

    void routes() {
        server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_ok(res, json{{"status", "up"}}); });

        server.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                auto session = store.load();
                json data = to_json(session);
                data["undecided_flagged"] = session.undecided_flagged();
                send_ok(res, data);
            });
        });

        server.Get("/api/atoms", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto session = store.load();
                const std::string filter = req.has_param("status") ? req.get_param_value("status") : "";
                json atoms = json::array();
                for (const auto& a : session.atoms) {
                    if (filter.empty() || a.status == filter) {
                        atoms.push_back(to_json(a));
                    }
                }
                send_ok(res, atoms);
            });
        });

        server.Get(R"(/api/atoms/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto session = store.load();
                const auto* atom = session.find(req.matches[1].str());
                if (atom == nullptr) {
                    throw Error(ErrorCode::UnknownAtom, "no atom '" + req.matches[1].str() + "'");
                }
                send_ok(res, to_json(*atom));
            });
        });

        server.Post(R"(/api/atoms/([^/]+)/decision)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                json body = json::parse(req.body, nullptr, false);
                if (body.is_discarded()) {
                    throw Error(ErrorCode::InvalidDecision, "request body is not JSON");
                }
                const Decision decision = parse_decision(body);
                send_ok(res, to_json(store.record_decision(req.matches[1].str(), decision)));
            });
        });

        server.Post("/api/finalize", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                auto result = store.finalize(schema, gateway);
                send_ok(res, json{{"card", json::parse(serialize_card(result.card))},
                                  {"warnings", result.warnings},
                                  {"path", store.final_card_path().string()}});
            });
        });

        if (options.static_dir && std::filesystem::is_directory(*options.static_dir)) {
            server.set_mount_point("/", options.static_dir->string());
        } else {
            server.Get("/", [](const httplib::Request&, httplib::Response& res) {
                res.set_content(std::string(kPlaceholderPage), "text/html; charset=utf-8");
            });
        }
    }
};

ReviewServer::ReviewServer(SessionStore& store, CardSchema schema, llm::Gateway* gateway, ServerOptions options)
    : m_impl(std::make_unique<Impl>(store, std::move(schema), gateway, std::move(options))) {
    m_impl->routes();
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind() {
    auto& impl = *m_impl;
    if (impl.options.port == 0) {
        impl.bound_port = impl.server.bind_to_any_port(impl.options.host);
    } else {
        impl.bound_port = impl.server.bind_to_port(impl.options.host, impl.options.port) ? impl.options.port : -1;
    }
    if (impl.bound_port < 0) {
        throw Error(ErrorCode::IoError,
                    "cannot bind " + impl.options.host + ":" + std::to_string(impl.options.port));
    }
    return impl.bound_port;
}

void ReviewServer::serve() {
    if (m_impl->bound_port < 0) {
        throw Error(ErrorCode::PreconditionFailed, "serve() called before bind()");
    }
    m_impl->server.listen_after_bind();
}

void ReviewServer::stop() {
    if (m_impl) {
        m_impl->server.stop();
    }
}

int serve_until_signal(SessionStore& store, const CardSchema& schema, llm::Gateway* gateway, ServerOptions options) {
    // Fail early with a clear error rather than serving an empty API.
    store.load();
    ReviewServer server(store, schema, gateway, options);
    const int port = server.bind();
    g_signal_target.store(&server);
    std::signal(SIGINT, handle_stop_signal);
    std::signal(SIGTERM, handle_stop_signal);
    spdlog::info("review API listening on http://{}:{}/", options.host, port);
    server.serve();
    g_signal_target.store(nullptr);
    std::signal(SIGINT, SIG_DFL);
    std::signal(SIGTERM, SIG_DFL);
    spdlog::info("review server stopped");
    return 0;
}

}  // namespace benchcard::review
