#include "evads/backend.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evads/text.hpp"

namespace evads::backend {

using json = nlohmann::json;

std::string ChatRequest::fingerprint() const {
  std::uint64_t h = text::fnv1a64(system);
  h = text::fnv1a64("\x1f", h);
  h = text::fnv1a64(user, h);
  h = text::fnv1a64("\x1f" + std::to_string(temperature), h);
  return text::hex64(h);
}

void BackendProfile::validate() const {
  if (endpoint.empty()) throw Error(ErrorKind::kConfig, "backend '" + name + "' has no endpoint");
  if (max_retries < 0) throw Error(ErrorKind::kConfig, "max_retries must be >= 0");
  if (!(timeout_s > 0.0)) throw Error(ErrorKind::kConfig, "timeout_s must be > 0");
  if (max_in_flight < 1) throw Error(ErrorKind::kConfig, "max_in_flight must be >= 1");
  if (!is_mock() && endpoint.rfind("http://", 0) != 0) {
    throw Error(ErrorKind::kConfig, "endpoint must be http://host:port/path or mock:<scenario>, got '" + endpoint + "'");
  }
}

bool BackendProfile::is_mock() const { return endpoint.rfind("mock:", 0) == 0; }

HttpChatBackend::HttpChatBackend(BackendProfile profile) : profile_(std::move(profile)) {
  profile_.validate();
  const std::string rest = profile_.endpoint.substr(7);
  const auto slash = rest.find('/');
  scheme_host_port_ = "http://" + rest.substr(0, slash);
  path_ = slash == std::string::npos ? "/v1/chat/completions" : rest.substr(slash);
}

std::string HttpChatBackend::complete(const ChatRequest& request) {
  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(profile_.timeout_s);
  const auto usecs = static_cast<time_t>((profile_.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  json body;
  if (!profile_.model.empty()) body["model"] = profile_.model;
  body["temperature"] = request.temperature;
  body["messages"] = json::array();
  if (!request.system.empty()) body["messages"].push_back({{"role", "system"}, {"content", request.system}});
  body["messages"].push_back({{"role", "user"}, {"content", request.user}});

  httplib::Headers headers;
  if (const char* key = std::getenv("EVADS_API_KEY")) headers.emplace("Authorization", std::string("Bearer ") + key);

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::kBackend, profile_.name + ": request to " + profile_.endpoint +
                                         " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorKind::kBackend, profile_.name + ": HTTP " + std::to_string(res->status) + " from " +
                                         profile_.endpoint);
  }
  try {
    const json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    // A reachable service with an unexpected body: hand the raw text back so
    // the caller's parser counts it as a malformed attempt.
    spdlog::warn("{}: unexpected response shape: {}", profile_.name, e.what());
    return res->body;
  }
}

MockBackend::MockBackend(std::string name, std::vector<MockRule> rules)
    : name_(std::move(name)), rules_(std::move(rules)) {}

std::vector<MockRule> MockBackend::parse_rules(const std::string& jsonl, const std::string& source) {
  std::vector<MockRule> rules;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      MockRule r;
      if (j.contains("match")) {
        for (const auto& [k, v] : j["match"].items()) r.match_tags[k] = v.get<std::string>();
      }
      if (j.contains("contains")) r.contains = j["contains"].get<std::vector<std::string>>();
      if (j.contains("replies")) r.replies = j["replies"].get<std::vector<std::string>>();
      if (j.contains("reply")) r.replies.push_back(j["reply"].get<std::string>());
      r.unreachable = j.value("unreachable", false);
      if (!r.unreachable && r.replies.empty()) throw std::invalid_argument("rule has no replies");
      rules.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError(std::string("bad mock rule: ") + e.what(), line_no, source);
    }
  }
  return rules;
}

std::unique_ptr<MockBackend> MockBackend::from_scenario(const std::string& scenario,
                                                        const std::filesystem::path& fixtures_dir) {
  const auto path = fixtures_dir / "mock" / (scenario + ".jsonl");
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "mock scenario not found: " + path.string(), {path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return std::make_unique<MockBackend>("mock:" + scenario, parse_rules(ss.str(), path.string()));
}

std::string MockBackend::complete(const ChatRequest& request) {
  const MockRule* rule = nullptr;
  for (const auto& r : rules_) {
    bool ok = true;
    for (const auto& [k, v] : r.match_tags) {
      auto it = request.tags.find(k);
      if (it == request.tags.end() || it->second != v) {
        ok = false;
        break;
      }
    }
    for (const auto& needle : r.contains) {
      if (!ok) break;
      if (request.user.find(needle) == std::string::npos) ok = false;
    }
    if (ok) {
      rule = &r;
      break;
    }
  }
  std::lock_guard lock(mu_);
  ++calls_;
  if (rule == nullptr) throw Error(ErrorKind::kBackend, name_ + ": no scripted reply for request");
  if (rule->unreachable) throw Error(ErrorKind::kBackend, name_ + ": scripted endpoint unreachable");
  const std::size_t k = attempts_[request.fingerprint()]++;
  return rule->replies[std::min(k, rule->replies.size() - 1)];
}

std::size_t MockBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::shared_ptr<ChatBackend> make_backend(const BackendProfile& profile, const std::filesystem::path& fixtures_dir) {
  profile.validate();
  if (profile.is_mock()) return MockBackend::from_scenario(profile.endpoint.substr(5), fixtures_dir);
  return std::make_shared<HttpChatBackend>(profile);
}

std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const auto open = tmpl.find("{{", i);
    if (open == std::string::npos) {
      out.append(tmpl, i, std::string::npos);
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string::npos) {
      out.append(tmpl, i, std::string::npos);
      break;
    }
    out.append(tmpl, i, open - i);
    const std::string key = text::trim(tmpl.substr(open + 2, close - open - 2));
    auto it = vars.find(key);
    if (it != vars.end()) out += it->second;
    else out.append(tmpl, open, close + 2 - open);
    i = close + 2;
  }
  return out;
}

std::optional<std::string> extract_fenced_block(const std::string& reply) {
  const auto open = reply.find("```");
  if (open == std::string::npos) return std::nullopt;
  auto body_start = reply.find('\n', open + 3);
  if (body_start == std::string::npos) return std::nullopt;
  ++body_start;
  const auto close = reply.find("```", body_start);
  if (close == std::string::npos) return std::nullopt;
  return reply.substr(body_start, close - body_start);
}

}  // namespace evads::backend
