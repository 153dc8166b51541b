#pragma once

#include <memory>
#include <string>

#include "evads/error.hpp"
#include "evads/review_store.hpp"

namespace httplib {
class Server;
}

namespace evads::review {

/// HTTP front end for a ReviewStore. Every route lives under /v1/ and speaks
/// JSON, except the accepted-set export which streams JSON lines.
///
///   GET  /v1/queue/next?reviewer=ID   (or header X-Reviewer-Id)
///   POST /v1/verdict
///   GET  /v1/items/{qa_id}
///   GET  /v1/stats
///   POST /v1/enqueue                  {"items": [...], "contexts": [...]}
///   GET  /v1/export/accepted
///   GET  /v1/regeneration
///   POST /v1/audit/reopen             {"qa_id", "auditor_id", "reason"}
class ReviewServer {
 public:
  explicit ReviewServer(ReviewStore& store);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  void install_routes();

  ReviewStore& store_;
  std::unique_ptr<httplib::Server> server_;
};

/// Maps an error kind to the HTTP status the server answers with.
int http_status_for(ErrorKind kind);

}  // namespace evads::review
