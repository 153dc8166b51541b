#include "evads/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "evads/aligner.hpp"
#include "evads/annotator.hpp"
#include "evads/backend.hpp"
#include "evads/corpus.hpp"
#include "evads/density.hpp"
#include "evads/error.hpp"
#include "evads/evaluator.hpp"
#include "evads/qa.hpp"
#include "evads/review_server.hpp"
#include "evads/review_store.hpp"
#include "evads/reward.hpp"
#include "evads/sampler.hpp"
#include "evads/text.hpp"

#ifndef EVADS_VERSION
#define EVADS_VERSION "0.0.0"
#endif

namespace evads::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct BackendFlags {
  std::string endpoint;
  std::string model;
  int retries = 2;
  double timeout_s = 60.0;
};

struct Common {
  std::uint64_t seed = 0;
  std::string log_level = "info";
  std::string prompts = "prompts";
  std::string fixtures = "fixtures";
  unsigned workers = 4;
};

void write_text(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kStorage, "cannot write " + path.string(), {path.string()});
  out << body;
  if (!out) throw Error(ErrorKind::kStorage, "write failed for " + path.string(), {path.string()});
}

std::shared_ptr<backend::ChatBackend> make_client(const BackendFlags& flags, const Common& common,
                                                  backend::BackendProfile* profile_out) {
  backend::BackendProfile p;
  p.endpoint = flags.endpoint;
  p.name = flags.endpoint;
  p.model = flags.model;
  p.max_retries = flags.retries;
  p.timeout_s = flags.timeout_s;
  p.max_in_flight = static_cast<int>(std::max(1u, common.workers));
  p.validate();
  *profile_out = p;
  return backend::make_backend(p, common.fixtures);
}

void add_backend_flags(CLI::App* cmd, const std::string& role, BackendFlags& flags, bool required = true) {
  auto* opt = cmd->add_option("--" + role + "-backend", flags.endpoint,
                              "http://host:port/path of a chat-completions endpoint, or mock:<scenario>");
  if (required) opt->required();
  cmd->add_option("--" + role + "-model", flags.model, "model name sent to the endpoint");
  cmd->add_option("--" + role + "-retries", flags.retries, "retries for malformed replies")->capture_default_str();
  cmd->add_option("--" + role + "-timeout", flags.timeout_s, "request timeout in seconds")->capture_default_str();
}

std::vector<qa::TaskKind> parse_tasks(const std::string& spec) {
  std::vector<qa::TaskKind> tasks;
  if (spec.empty() || spec == "all") return {std::begin(qa::kAllTasks), std::end(qa::kAllTasks)};
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto t = qa::parse_task(text::trim(part));
    if (std::find(tasks.begin(), tasks.end(), t) == tasks.end()) tasks.push_back(t);
  }
  return tasks;
}

fs::path context_path(const fs::path& dir, const std::string& video_id) { return dir / (video_id + ".context.json"); }

aligner::StructuredContext context_for(const VideoRecord& record, const Manifest& manifest,
                                       const std::optional<fs::path>& dir) {
  if (dir) {
    const auto path = context_path(*dir, record.video_id);
    if (fs::exists(path)) return aligner::load_context(path);
    spdlog::info("{}: no stored context in {}, aligning", record.video_id, dir->string());
  }
  return aligner::align_record(record, manifest.base_dir);
}

review::ReviewServer* g_server = nullptr;

extern "C" void handle_stop_signal(int) {
  if (g_server) g_server->stop();
}

void configure_logging(const std::string& level) {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("evads");
    spdlog::set_default_logger(l);
    return l;
  }();
  (void)logger;
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Toolkit for building and scoring e-commerce video QA benchmarks", "evads"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", EVADS_VERSION);

  Common common;
  app.add_option("--seed", common.seed, "seed for every random choice")->capture_default_str();
  app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error|off")->capture_default_str();
  app.add_option("--prompts", common.prompts, "prompt template directory")->capture_default_str();
  app.add_option("--fixtures", common.fixtures, "directory holding mock/<scenario>.jsonl")->capture_default_str();
  app.add_option("--workers", common.workers, "parallel workers")->capture_default_str();

  // density
  std::string manifest_path, out_path, tsv_path, name = "corpus";
  density::DensityConfig dcfg;
  bool no_clamp = false;
  auto* density_cmd = app.add_subcommand("density", "per-video and corpus density report");
  density_cmd->add_option("--manifest", manifest_path)->required();
  density_cmd->add_option("--out", out_path, "report JSON")->required();
  density_cmd->add_option("--tsv", tsv_path, "optional one-row TSV summary");
  density_cmd->add_option("--name", name, "benchmark name in the TSV")->capture_default_str();
  density_cmd->add_option("--d", dcfg.neighborhood_d, "temporal neighborhood")->capture_default_str();
  density_cmd->add_option("--alpha", dcfg.alpha, "output scale")->capture_default_str();
  density_cmd->add_flag("--no-clamp", no_clamp, "keep negative cosines");

  // sample
  sampler::SamplingConfig scfg;
  std::string selected_path, dropped_path;
  std::vector<std::string> filters;
  auto* sample_cmd = app.add_subcommand("sample", "category-balanced dynamic sampling plan");
  sample_cmd->add_option("--manifest", manifest_path)->required();
  sample_cmd->add_option("--out", out_path, "plan JSON")->required();
  sample_cmd->add_option("--a", scfg.a, "ratio upper bound in (0, 1]")->capture_default_str();
  sample_cmd->add_option("--b", scfg.b, "inflection count")->capture_default_str();
  sample_cmd->add_option("--selected", selected_path, "write the selected records as a manifest");
  sample_cmd->add_option("--rule,--filter", filters, "ordered filter rule, e.g. min_duration=5 (repeatable)");
  sample_cmd->add_option("--dropped", dropped_path, "write filtered-out records as JSON lines");

  // align
  std::string out_dir;
  bool render = false;
  auto* align_cmd = app.add_subcommand("align", "build per-second structured contexts");
  align_cmd->add_option("--manifest", manifest_path)->required();
  align_cmd->add_option("--out-dir", out_dir)->required();
  align_cmd->add_flag("--render", render, "also write <video_id>.txt renderings");

  // annotate
  std::string contexts_dir, tasks_spec = "all", store_path, failures_path;
  BackendFlags persona_flags, judge_flags;
  annotator::AnnotatorConfig acfg;
  bool regenerate = false;
  auto* annotate_cmd = app.add_subcommand("annotate", "multi-persona QA generation with adjudication");
  annotate_cmd->add_option("--manifest", manifest_path)->required();
  annotate_cmd->add_option("--out", out_path, "QA items as JSON lines")->required();
  annotate_cmd->add_option("--contexts", contexts_dir, "directory of aligned contexts");
  annotate_cmd->add_option("--tasks", tasks_spec, "comma list of BP,CM,ML,CI,RC or all")->capture_default_str();
  annotate_cmd->add_option("--candidates", acfg.candidates_per_persona, "candidates per persona")
      ->capture_default_str();
  annotate_cmd->add_option("--store", store_path, "review store to enqueue results into");
  annotate_cmd->add_flag("--regenerate", regenerate, "regenerate items rejected in the review store");
  annotate_cmd->add_option("--failures", failures_path, "write aborted tasks as JSON lines");
  add_backend_flags(annotate_cmd, "persona", persona_flags);
  add_backend_flags(annotate_cmd, "judge", judge_flags);

  // evaluate
  std::string qa_path, pred_path, cache_path, condition = "base";
  BackendFlags eval_flags;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "judge predictions and aggregate S/R2/R5");
  evaluate_cmd->add_option("--manifest", manifest_path);
  evaluate_cmd->add_option("--qa", qa_path)->required();
  evaluate_cmd->add_option("--pred", pred_path)->required();
  evaluate_cmd->add_option("--out", out_path, "eval_report.json")->required();
  evaluate_cmd->add_option("--tsv", tsv_path, "task-by-metric table");
  evaluate_cmd->add_option("--cache", cache_path, "judge cache (JSON lines)");
  evaluate_cmd->add_option("--condition", condition, "base|base+asr")->capture_default_str();
  add_backend_flags(evaluate_cmd, "judge", eval_flags);

  // reward score
  std::string rollouts_path;
  reward::RewardConfig rcfg;
  BackendFlags reward_flags;
  auto* reward_cmd = app.add_subcommand("reward", "trace rewards and group advantages");
  reward_cmd->require_subcommand(1);
  auto* score_cmd = reward_cmd->add_subcommand("score", "score rollout groups");
  score_cmd->add_option("--rollouts", rollouts_path)->required();
  score_cmd->add_option("--out", out_path, "scored rollouts as JSON lines")->required();
  score_cmd->add_option("--alpha1", rcfg.alpha1, "answer weight")->capture_default_str();
  score_cmd->add_option("--alpha2", rcfg.alpha2, "trace weight")->capture_default_str();
  score_cmd->add_option("--eps", rcfg.epsilon, "advantage epsilon")->capture_default_str();
  add_backend_flags(score_cmd, "judge", reward_flags);

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  double lease_minutes = 30.0;
  std::string enqueue_path;
  auto* serve_cmd = app.add_subcommand("serve", "review service over HTTP");
  serve_cmd->add_option("--store", store_path, "sqlite store file")->required();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--lease-minutes", lease_minutes)->capture_default_str();
  serve_cmd->add_option("--enqueue", enqueue_path, "QA items to enqueue before serving");
  serve_cmd->add_option("--contexts", contexts_dir, "contexts to load for enqueued items");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    configure_logging(common.log_level);
    const std::string effective = app.config_to_str(true, false);
    spdlog::info("evads {} config={} seed={}", EVADS_VERSION, text::hex64(text::fnv1a64(effective)), common.seed);
    spdlog::debug("effective config:\n{}", effective);

    if (*density_cmd) {
      dcfg.clamp_negative_cosine = !no_clamp;
      dcfg.validate();
      const Manifest m = load_manifest(manifest_path);
      const auto report = density::corpus_density_report(m, dcfg, common.workers);
      write_text(out_path, density::report_to_json(report));
      if (!tsv_path.empty()) write_text(tsv_path, density::report_to_tsv(report, name));
      spdlog::info("density: {} videos -> {}", report.per_video.size(), out_path);
    } else if (*sample_cmd) {
      scfg.seed = common.seed;
      scfg.validate();
      Manifest m = load_manifest(manifest_path);
      if (!filters.empty()) {
        std::vector<sampler::FilterRule> rules;
        for (const auto& f : filters) rules.push_back(sampler::parse_rule(f));
        auto result = sampler::apply_filters(m, rules);
        if (!dropped_path.empty()) {
          std::string body;
          for (const auto& d : result.dropped) {
            body += json{{"video_id", d.video_id}, {"rule", d.rule}, {"reason", d.reason}}.dump() + "\n";
          }
          write_text(dropped_path, body);
        }
        spdlog::info("filters dropped {} of {} records", result.dropped.size(), m.records.size());
        m = std::move(result.kept);
      }
      const auto plan = sampler::build_plan(m, scfg);
      write_text(out_path, sampler::plan_to_json(plan));
      if (!selected_path.empty()) save_manifest(selected_path, sampler::apply_plan(m, plan));
      spdlog::info("sample: selected {} of {} records", plan.total_selected(), m.records.size());
    } else if (*align_cmd) {
      const Manifest m = load_manifest(manifest_path);
      fs::create_directories(out_dir);
      for (const auto& record : m.records) {
        const auto ctx = aligner::align_record(record, m.base_dir);
        aligner::save_context(context_path(out_dir, record.video_id), ctx);
        if (render) write_text(fs::path(out_dir) / (record.video_id + ".txt"), aligner::render_context(ctx));
      }
      spdlog::info("align: {} contexts -> {}", m.records.size(), out_dir);
    } else if (*annotate_cmd) {
      acfg.prompt_root = common.prompts;
      annotator::AnnotationBackends backends;
      backends.persona.client = make_client(persona_flags, common, &backends.persona.profile);
      backends.judge.client = make_client(judge_flags, common, &backends.judge.profile);
      const Manifest m = load_manifest(manifest_path);
      const std::optional<fs::path> ctx_dir =
          contexts_dir.empty() ? std::nullopt : std::optional<fs::path>(contexts_dir);
      std::optional<review::ReviewStore> store;
      if (!store_path.empty()) store.emplace(store_path);

      annotator::AnnotationRun run;
      if (regenerate) {
        if (!store) throw Error(ErrorKind::kConfig, "--regenerate needs --store");
        for (const auto& rejected : store->awaiting_regeneration()) {
          const VideoRecord* record = m.find(rejected.video_id);
          if (!record) throw Error(ErrorKind::kReconciliation, rejected.qa_id + ": video missing from manifest");
          auto ctx = store->context(rejected.video_id);
          if (!ctx) ctx = context_for(*record, m, ctx_dir);
          try {
            run.items.push_back(annotator::regenerate_item(rejected, *ctx, backends, acfg, rejected.flags));
          } catch (const Error& e) {
            if (!is_runtime_kind(e.kind())) throw;
            run.failures.push_back({rejected.video_id, rejected.task, e.what()});
          }
        }
      } else {
        const auto tasks = parse_tasks(tasks_spec);
        std::vector<std::pair<VideoRecord, aligner::StructuredContext>> videos;
        for (const auto& record : m.records) videos.emplace_back(record, context_for(record, m, ctx_dir));
        run = annotator::annotate_corpus(videos, tasks, backends, acfg, common.workers);
        if (store) {
          for (const auto& [record, ctx] : videos) store->put_context(ctx);
        }
      }
      qa::write_qa_items(out_path, run.items);
      if (store) spdlog::info("enqueued {} item(s) into {}", store->enqueue(run.items), store_path);
      if (!failures_path.empty()) {
        std::string body;
        for (const auto& f : run.failures) {
          body += json{{"video_id", f.video_id}, {"task", std::string(qa::to_string(f.task))}, {"error", f.error}}
                      .dump() +
                  "\n";
        }
        write_text(failures_path, body);
      }
      spdlog::info("annotate: {} item(s), {} aborted task(s)", run.items.size(), run.failures.size());
      if (!run.failures.empty()) {
        for (const auto& f : run.failures) spdlog::error("{} {}: {}", f.video_id, qa::to_string(f.task), f.error);
        return kExitRuntime;
      }
    } else if (*evaluate_cmd) {
      evaluator::EvaluationOptions opts;
      opts.condition = evaluator::parse_condition(condition);
      opts.workers = common.workers;
      backend::BackendProfile profile;
      auto client = make_client(eval_flags, common, &profile);
      const auto judge = evaluator::Judge::load(profile, client, common.prompts);
      const Manifest m = manifest_path.empty() ? Manifest{} : load_manifest(manifest_path);
      std::optional<evaluator::JudgeCache> cache;
      if (!cache_path.empty()) {
        cache.emplace(cache_path);
        opts.cache = &*cache;
      }
      const auto report =
          evaluator::run_evaluation(m, qa::read_qa_items(qa_path), evaluator::read_predictions(pred_path), judge, opts);
      write_text(out_path, evaluator::report_to_json(report).dump(2) + "\n");
      if (!tsv_path.empty()) write_text(tsv_path, evaluator::report_to_tsv(report));
      spdlog::info("evaluate: judged {} of {}, excluded {}", report.n_judged, report.n_submitted, report.n_excluded);
    } else if (*reward_cmd) {
      rcfg.validate();
      backend::BackendProfile profile;
      auto client = make_client(reward_flags, common, &profile);
      const auto judge = evaluator::Judge::load(profile, client, common.prompts);
      std::string body;
      for (auto& rollout : reward::read_rollouts(rollouts_path)) {
        body += reward::rollout_to_json(reward::score_group(std::move(rollout), judge, rcfg)).dump() + "\n";
      }
      write_text(out_path, body);
    } else if (*serve_cmd) {
      review::StoreOptions opts;
      opts.lease_ttl = std::chrono::milliseconds(static_cast<std::int64_t>(lease_minutes * 60000.0));
      review::ReviewStore store(store_path, opts);
      if (!contexts_dir.empty()) {
        for (const auto& entry : fs::directory_iterator(contexts_dir)) {
          if (entry.path().extension() == ".json") store.put_context(aligner::load_context(entry.path()));
        }
      }
      if (!enqueue_path.empty()) {
        spdlog::info("enqueued {} item(s)", store.enqueue(qa::read_qa_items(enqueue_path)));
      }
      review::ReviewServer server(store);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, handle_stop_signal);
      std::signal(SIGTERM, handle_stop_signal);
      spdlog::info("review service listening on http://{}:{}/v1/", host, bound);
      server.serve();
      g_server = nullptr;
    }
    return kExitOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    for (const auto& d : e.details()) spdlog::error("  {}", d);
    return is_runtime_kind(e.kind()) ? kExitRuntime : kExitValidation;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
}

}  // namespace evads::cli
