#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "evads/error.hpp"

namespace evads::backend {

/// A chat-style completion request. `tags` carry routing hints (role, task,
/// persona, qa_id) used by scripted backends and logs; they are never sent
/// over the wire.
struct ChatRequest {
  std::string system;
  std::string user;
  double temperature = 0.0;
  std::map<std::string, std::string> tags;

  /// Stable identity of the prompt content (system + user + temperature).
  std::string fingerprint() const;
};

struct BackendProfile {
  std::string name = "mock";
  /// `http://host:port/path` for a chat-completions endpoint, or `mock:<scenario>`.
  std::string endpoint;
  std::string model;
  double timeout_s = 60.0;
  int max_retries = 2;
  /// Upper bound on concurrent requests against this backend.
  int max_in_flight = 4;

  void validate() const;
  bool is_mock() const;
};

/// Transport to a language model. complete() throws Error(kBackend) when the
/// service cannot be reached; malformed content is the caller's concern.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
  virtual std::string name() const = 0;
};

/// OpenAI-compatible chat-completions over HTTP.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendProfile profile);
  std::string complete(const ChatRequest& request) override;
  std::string name() const override { return profile_.name; }

 private:
  BackendProfile profile_;
  std::string scheme_host_port_;
  std::string path_;
};

/// One scripted rule of a mock scenario. A request matches when every
/// non-empty field of `match_tags` equals the request tag and every string in
/// `contains` occurs in the user prompt. The k-th attempt of an identical
/// request receives replies[min(k, size-1)], so replies stay deterministic
/// regardless of the order concurrent requests arrive in.
struct MockRule {
  std::map<std::string, std::string> match_tags;
  std::vector<std::string> contains;
  std::vector<std::string> replies;
  bool unreachable = false;
};

class MockBackend : public ChatBackend {
 public:
  MockBackend(std::string name, std::vector<MockRule> rules);

  /// Reads `<fixtures_dir>/mock/<scenario>.jsonl`, one rule per line:
  /// `{"match": {...}, "contains": [...], "replies": [...], "unreachable": false}`.
  static std::unique_ptr<MockBackend> from_scenario(const std::string& scenario,
                                                    const std::filesystem::path& fixtures_dir);
  static std::vector<MockRule> parse_rules(const std::string& jsonl, const std::string& source = "<mock>");

  std::string complete(const ChatRequest& request) override;
  std::string name() const override { return name_; }
  std::size_t calls() const;

 private:
  std::string name_;
  std::vector<MockRule> rules_;
  mutable std::mutex mu_;
  std::map<std::string, std::size_t> attempts_;
  std::size_t calls_ = 0;
};

/// Wraps a function; used for programmatic test doubles.
class CallbackBackend : public ChatBackend {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  CallbackBackend(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string complete(const ChatRequest& request) override { return fn_(request); }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  Fn fn_;
};

std::shared_ptr<ChatBackend> make_backend(const BackendProfile& profile, const std::filesystem::path& fixtures_dir);

/// Outcome of one attempt's parse: a value, or the reason it was rejected.
template <typename T>
struct Parsed {
  std::optional<T> value;
  std::string error;
};

/// Calls the backend up to 1 + max_retries times until `parse` yields a value.
/// Transport failures count as attempts; if every attempt failed at the
/// transport level the last Error(kBackend) is rethrown. Otherwise returns
/// nullopt and stores the last parse error in `last_error`.
template <typename T>
std::optional<T> complete_with_retries(ChatBackend& backend, const ChatRequest& request, int max_retries,
                                       const std::function<Parsed<T>(const std::string&)>& parse,
                                       std::string* last_error = nullptr, std::string* last_raw = nullptr) {
  std::optional<Error> transport_error;
  bool any_reply = false;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::string raw;
    try {
      raw = backend.complete(request);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kBackend) throw;
      transport_error = e;
      continue;
    }
    any_reply = true;
    if (last_raw) *last_raw = raw;
    Parsed<T> p = parse(raw);
    if (p.value) return p.value;
    if (last_error) *last_error = p.error;
  }
  if (!any_reply && transport_error) throw *transport_error;
  return std::nullopt;
}

/// Replaces every `{{key}}` in `tmpl` with vars[key]; unknown keys are kept.
std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& vars);

/// The contents of the first ``` fenced block (an optional language tag on the
/// opening fence is skipped), or nullopt when there is none.
std::optional<std::string> extract_fenced_block(const std::string& reply);

}  // namespace evads::backend
