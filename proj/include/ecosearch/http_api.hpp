#pragma once

#include <string>

#include "httplib.h"
#include "json.hpp"

#include "ecosearch/error.hpp"
#include "ecosearch/search_service.hpp"

namespace ecosearch::http {

inline int status_for(errc code) {
    switch (code) {
    case errc::not_found: return 404;
    case errc::empty_export: return 409;
    case errc::encoder_unavailable: return 503;
    case errc::parse:
    case errc::domain:
    case errc::range:
    case errc::shape:
    case errc::normalization:
    case errc::invalid_mark:
    case errc::degenerate_vector: return 400;
    default: return 500;
    }
}

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, errc code, const std::string& message) {
    send_json(res, status_for(code), {{"error", std::string(to_string(code))}, {"message", message}});
}

namespace detail {

template <class Fn> auto guarded(Fn fn) {
    return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const error& e) {
            send_error(res, e.code(), e.what());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, errc::parse, e.what());
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
        }
    };
}

inline nlohmann::json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw error(errc::parse, "request body must be a JSON object");
    return j;
}

} // namespace detail

/// Registers the v1 API on `server`. `service` must outlive the server.
///
///   POST /v1/sessions                      -> {session_id}
///   POST /v1/sessions/{id}/search          {query_text, filters, k, nprobe?} -> {hits: [...]}
///   POST /v1/sessions/{id}/marks           {observation_id, marked} -> mark state
///   GET  /v1/sessions/{id}/export.csv      -> text/csv
///   GET  /v1/health                        -> {status, corpus_size, dim, nlist}
inline void register_routes(httplib::Server& server, SearchService& service) {
    using detail::guarded;

    server.Get("/v1/health", guarded([&](const httplib::Request&, httplib::Response& res) {
                   send_json(res, 200, service.health());
               }));

    server.Post("/v1/sessions", guarded([&](const httplib::Request&, httplib::Response& res) {
                    send_json(res, 201, {{"session_id", service.create_session()}});
                }));

    server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/search)",
                guarded([&](const httplib::Request& req, httplib::Response& res) {
                    auto body = detail::parse_body(req);
                    auto text = body.at("query_text").get<std::string>();
                    auto spec = filter_from_json(body.value("filters", nlohmann::json()));
                    auto k = body.at("k").get<std::int64_t>();
                    if (k < 1) throw error(errc::domain, "k must be at least 1");
                    std::optional<std::size_t> nprobe;
                    if (body.contains("nprobe") && !body["nprobe"].is_null()) {
                        auto p = body["nprobe"].get<std::int64_t>();
                        if (p < 1) throw error(errc::domain, "nprobe must be at least 1");
                        nprobe = static_cast<std::size_t>(p);
                    }
                    auto page = service.run_query(req.matches[1], text, spec, static_cast<std::size_t>(k), nprobe);
                    nlohmann::json hits = nlohmann::json::array();
                    for (const auto& e : page) hits.push_back(to_json(e));
                    send_json(res, 200, {{"hits", hits}});
                }));

    server.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/marks)",
                guarded([&](const httplib::Request& req, httplib::Response& res) {
                    auto body = detail::parse_body(req);
                    auto id = body.at("observation_id").get<std::uint64_t>();
                    auto marked = body.at("marked").get<bool>();
                    auto state = service.mark(req.matches[1], id, marked);
                    send_json(res, 200,
                              {{"observation_id", id}, {"marked", state.marked}, {"marked_at", state.marked_at}});
                }));

    server.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/export\.csv)",
               guarded([&](const httplib::Request& req, httplib::Response& res) {
                   std::string id = req.matches[1];
                   res.status = 200;
                   res.set_header("Content-Disposition", "attachment; filename=\"session-" + id + ".csv\"");
                   res.set_content(service.export_csv(id), "text/csv");
               }));
}

} // namespace ecosearch::http
