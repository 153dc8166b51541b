#include "evads/review_server.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evads/error.hpp"

namespace evads::review {

using json = nlohmann::json;

int http_status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse:
    case ErrorKind::kValidation:
    case ErrorKind::kNotApplicable:
      return 400;
    case ErrorKind::kState:
    case ErrorKind::kConflict:
      return 409;
    default:
      return 500;
  }
}

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res,
            {{"error", std::string(to_string(e.kind()))}, {"message", e.what()}, {"details", e.details()}},
            http_status_for(e.kind()));
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kValidation, std::string("request body is not JSON: ") + e.what());
  }
}

std::string reviewer_of(const httplib::Request& req) {
  if (req.has_param("reviewer")) return req.get_param_value("reviewer");
  return req.get_header_value("X-Reviewer-Id");
}

/// Runs a handler, turning toolkit errors into JSON error responses.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
    }
  };
}

}  // namespace

ReviewServer::ReviewServer(ReviewStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

ReviewServer::~ReviewServer() { stop(); }

void ReviewServer::install_routes() {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type, X-Reviewer-Id"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/v1/queue/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const std::string reviewer = reviewer_of(req);
          if (reviewer.empty()) throw Error(ErrorKind::kValidation, "reviewer id missing");
          const auto leased = store_.next_pending(reviewer);
          if (!leased) {
            send_json(res, {{"empty", true}});
            return;
          }
          send_json(res, {{"empty", false},
                          {"item", qa::to_json(leased->item)},
                          {"context", leased->rendered_context},
                          {"evidence", leased->rendered_evidence},
                          {"metadata", leased->metadata},
                          {"lease_expiry_ms", leased->lease_expiry_ms}});
        }));

  s.Post("/v1/verdict", guarded([this](const httplib::Request& req, httplib::Response& res) {
           ReviewVerdict v = verdict_from_json(parse_body(req));
           if (v.reviewer_id.empty()) v.reviewer_id = reviewer_of(req);
           const QaStatus status = store_.submit_verdict(v);
           const auto rec = store_.item(v.qa_id);
           send_json(res, {{"qa_id", v.qa_id},
                           {"status", std::string(qa::to_string(status))},
                           {"cycle", rec ? rec->item.cycle : 0}});
         }));

  s.Get(R"(/v1/items/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const std::string qa_id = req.matches[1];
          const auto rec = store_.item(qa_id);
          if (!rec) {
            send_json(res, {{"error", "not_found"}, {"message", "no item " + qa_id}}, 404);
            return;
          }
          json history = json::array();
          for (const auto& e : rec->history) history.push_back(to_json(e));
          json body = {{"item", qa::to_json(rec->item)}, {"history", history}};
          if (rec->lease_reviewer) body["lease"] = {{"reviewer", *rec->lease_reviewer}, {"expiry_ms", *rec->lease_expiry_ms}};
          send_json(res, body);
        }));

  s.Get("/v1/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
          send_json(res, to_json(store_.stats()));
        }));

  s.Post("/v1/enqueue", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           std::vector<QaItem> items;
           for (const auto& j : body.value("items", json::array())) items.push_back(qa::qa_from_json(j));
           for (const auto& c : body.value("contexts", json::array())) {
             store_.put_context(aligner::context_from_json(c.is_string() ? c.get<std::string>() : c.dump()));
           }
           send_json(res, {{"enqueued", store_.enqueue(items)}});
         }));

  s.Get("/v1/export/accepted", guarded([this](const httplib::Request&, httplib::Response& res) {
          std::size_t n = 0;
          res.set_content(store_.accepted_jsonl(&n), "application/x-ndjson");
          res.set_header("X-Item-Count", std::to_string(n));
        }));

  s.Get("/v1/regeneration", guarded([this](const httplib::Request&, httplib::Response& res) {
          json items = json::array();
          for (const auto& item : store_.awaiting_regeneration()) items.push_back(qa::to_json(item));
          send_json(res, {{"items", items}});
        }));

  s.Post("/v1/audit/reopen", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           if (!body.contains("qa_id")) throw Error(ErrorKind::kValidation, "qa_id missing");
           const std::string qa_id = body.at("qa_id").get<std::string>();
           const QaStatus status =
               store_.reopen(qa_id, body.value("auditor_id", std::string{}), body.value("reason", std::string{}));
           send_json(res, {{"qa_id", qa_id}, {"status", std::string(qa::to_string(status))}});
         }));
}

int ReviewServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorKind::kStorage, "cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error(ErrorKind::kStorage, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void ReviewServer::serve() { server_->listen_after_bind(); }

void ReviewServer::stop() {
  if (server_) server_->stop();
}

}  // namespace evads::review
