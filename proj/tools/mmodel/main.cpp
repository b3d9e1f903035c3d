// mmodel: train, evaluate, decode and ablate the multi-task model.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "multimodel/checkpoint.hpp"
#include "multimodel/config.hpp"
#include "multimodel/selftest.hpp"
#include "multimodel/train.hpp"

namespace {

using namespace mm;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string tasks;
  std::string ckpt;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "flat key = value config file");
  app->add_option("--seed", c.seed, "run seed");
  app->add_option("--steps", c.steps, "training steps");
  app->add_option("--tasks", c.tasks, "comma-separated task names, or 'all'");
  app->add_option("--ckpt", c.ckpt, "checkpoint path");
  app->add_option("--out", c.out, "output directory");
}

Config resolve(const Common& c) {
  Config cfg;
  try {
    if (!c.config.empty()) cfg = load_config(c.config);
    if (c.seed) cfg.train.seed = *c.seed;
    if (c.steps) {
      cfg.train.steps = *c.steps;
      cfg.battery_steps = *c.steps;
    }
    if (!c.tasks.empty()) set_config_value(cfg, "tasks", c.tasks);
    if (!c.ckpt.empty()) cfg.ckpt = c.ckpt;
    if (!c.out.empty()) cfg.out = c.out;
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (cfg.train.tasks == std::vector<std::string>{"all"}) cfg.train.tasks = standard_task_names();
  return cfg;
}

std::vector<std::size_t> task_ids(const TaskSuite& suite, const Config& cfg) {
  std::vector<std::size_t> ids;
  for (const auto& t : cfg.train.tasks) {
    try {
      ids.push_back(suite.index_of(t));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  return ids;
}

ModelParams load_model(const TaskSuite& suite, const Config& cfg) {
  ModelParams p = ModelParams::init(suite_model_config(cfg.train.model, suite), cfg.train.seed);
  assign_tensors(p, load_checkpoint(cfg.ckpt));
  return p;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "dev-long") return Split::dev_long;
  throw UsageError("unknown split '" + s + "' (train, dev, dev-long)");
}

void set_log_level() {
  const char* env = std::getenv("MM_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else spdlog::warn("MM_LOG_LEVEL '{}' not one of error, info, debug; using info", level);
}

int cmd_train(const Common& common) {
  Config cfg = resolve(common);
  const TaskSuite suite(cfg.train.world_seed, cfg.train.parse_budget);
  task_ids(suite, cfg);
  std::filesystem::create_directories(cfg.out);
  if (cfg.train.log_path.empty()) cfg.train.log_path = (std::filesystem::path(cfg.out) / "metrics.tsv").string();
  std::ofstream(std::filesystem::path(cfg.out) / "config.txt") << serialize_config(cfg);
  spdlog::info("training {} task(s) for {} steps, seed {}", cfg.train.tasks.size(), cfg.train.steps, cfg.train.seed);

  Progress progress;
  double window = 0.0;
  std::size_t n = 0;
  progress.on_step = [&](std::size_t step, const std::string& task, double loss, double norm) {
    spdlog::debug("step {} {} loss {:.4f} grad-norm {:.3f}", step, task, loss, norm);
    window += loss;
    if (++n == 100 || step == cfg.train.steps) {
      spdlog::info("step {} mean loss {:.4f}", step, window / static_cast<double>(n));
      window = 0.0;
      n = 0;
    }
  };
  progress.on_eval = [](const EvalRecord& r) { spdlog::info("eval {}", format_log_line(r)); };
  TrainResult r = train(suite, cfg.train, progress);
  save_checkpoint(r.best_params, cfg.ckpt);
  spdlog::info("best mean dev log-perplexity {:.4f} at step {}; checkpoint {}", r.best_dev_logppl, r.best_step, cfg.ckpt);
  return 0;
}

int cmd_eval(const Common& common, const std::string& split) {
  const Config cfg = resolve(common);
  const TaskSuite suite(cfg.train.world_seed, cfg.train.parse_budget);
  const auto ids = task_ids(suite, cfg);
  const Split s = parse_split(split);
  const ModelParams p = load_model(suite, cfg);
  std::cout << "task\tlogppl\tacc\texact\n";
  for (std::size_t id : ids) {
    const Metrics m = evaluate(p, suite, id, dev_set(suite, cfg.train, id, s), cfg.train.batch);
    std::cout << format_log_line({0, suite.task(id).name, m}).substr(2) << '\n';
  }
  return 0;
}

int cmd_decode(const Common& common, const std::string& task, const std::optional<std::string>& input,
               const std::optional<std::uint64_t>& sample, const std::string& split) {
  const Config cfg = resolve(common);
  const TaskSuite suite(cfg.train.world_seed, cfg.train.parse_budget);
  std::size_t id;
  try {
    id = suite.index_of(task);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (input.has_value() == sample.has_value()) throw UsageError("decode needs exactly one of --input or --sample");
  const TaskSpec& spec = suite.task(id);
  Example ex;
  if (sample) {
    ex = suite.example(id, parse_split(split), cfg.train.seed, *sample);
  } else {
    if (spec.input != Modality::language) throw UsageError(task + " takes " + modality_name(spec.input) + " input; use --sample");
    ex.task = spec.task_id;
    ex.input_ids = encode_text(*input, suite.vocab());
  }
  const ModelParams p = load_model(suite, cfg);
  const TaskRoute route = suite.route(id);
  const std::size_t max_len = std::max<std::size_t>(ex.input_ids.size() * 3, 2 * kLongMax + 8);
  const auto out = generate(p, route, ex, max_len);
  std::cout << "route\t" << modality_name(route.input) << " -> " << modality_name(route.output) << "\t"
            << suite.vocab().token(route.command_id) << '\n';
  std::cout << "input\t" << suite.render_input(ex) << '\n';
  if (sample) std::cout << "reference\t" << suite.render_target(ex) << '\n';
  if (route.output == Modality::categorical) std::cout << "output\tclass " << out.front() << '\n';
  else std::cout << "output\t" << decode_tokens(out, suite.vocab()) << '\n';
  return 0;
}

int cmd_ablate(const Common& common) {
  const Config cfg = resolve(common);
  const TaskSuite suite(cfg.train.world_seed, cfg.train.parse_budget);
  BatteryConfig b;
  b.base = cfg.train;
  b.steps = cfg.battery_steps;
  Progress progress;
  progress.on_eval = [](const EvalRecord& r) { spdlog::info("eval {}", format_log_line(r)); };
  spdlog::info("experiment battery: {} updates per condition", b.steps);
  const BatteryReport report = experiment_battery(suite, b, progress);
  std::filesystem::create_directories(cfg.out);
  std::ofstream(std::filesystem::path(cfg.out) / "report.txt") << report.text;
  std::cout << report.text;
  return 0;
}

int cmd_selftest(const Common& common) {
  const Config cfg = resolve(common);
  std::size_t failed = 0;
  run_selftest(cfg.train.seed, [&](const SelfTestResult& r) {
    failed += !r.passed;
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << r.name;
    if (!r.passed || spdlog::get_level() <= spdlog::level::debug) std::cout << "  " << r.detail;
    std::cout << std::endl;
  });
  std::cout << (failed ? std::to_string(failed) + " check(s) failed" : std::string("all checks passed")) << '\n';
  return failed ? 1 : 0;
}

int cmd_gen_data(const Common& common, std::size_t count, const std::string& split) {
  const Config cfg = resolve(common);
  const TaskSuite suite(cfg.train.world_seed, cfg.train.parse_budget);
  const Split s = parse_split(split);
  std::filesystem::create_directories(cfg.out);
  for (std::size_t id : task_ids(suite, cfg)) {
    const auto path = std::filesystem::path(cfg.out) / (suite.task(id).name + "." + split + ".tsv");
    export_tsv(suite, id, s, cfg.train.seed, count, path.string());
    spdlog::info("wrote {} examples to {}", count, path.string());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level();
  CLI::App app{"Multi-modal, multi-task sequence model"};
  app.require_subcommand(1);
  Common common;

  auto* train = app.add_subcommand("train", "train on the configured tasks");
  add_common(train, common);

  std::string split = "dev";
  auto* eval = app.add_subcommand("eval", "dev metrics of a checkpoint");
  add_common(eval, common);
  eval->add_option("--split", split, "dev or dev-long");

  std::string task;
  std::optional<std::string> input;
  std::optional<std::uint64_t> sample;
  auto* decode = app.add_subcommand("decode", "greedy output for one input");
  add_common(decode, common);
  decode->add_option("--task", task, "task name")->required();
  decode->add_option("--input", input, "input text");
  decode->add_option("--sample", sample, "generated example id");
  decode->add_option("--split", split, "split of --sample");

  auto* ablate = app.add_subcommand("ablate", "joint-vs-single, transfer and ablation tables");
  add_common(ablate, common);

  auto* selftest = app.add_subcommand("selftest", "run the invariant suite");
  add_common(selftest, common);

  std::size_t count = 100;
  auto* gen = app.add_subcommand("gen-data", "export synthetic examples as input<TAB>target lines");
  add_common(gen, common);
  gen->add_option("--count", count, "examples per task");
  gen->add_option("--split", split, "train, dev or dev-long");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, split);
    if (*decode) return cmd_decode(common, task, input, sample, split);
    if (*ablate) return cmd_ablate(common);
    if (*selftest) return cmd_selftest(common);
    if (*gen) return cmd_gen_data(common, count, split);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure, aborting: {}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
