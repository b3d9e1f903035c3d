#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "multimodel/model.hpp"
#include "multimodel/optim.hpp"
#include "multimodel/taskgen.hpp"

namespace mm {

struct Metrics {
  double logppl = 0.0;   // mean natural-log NLL per scored token
  double accuracy = 0.0; // per token, teacher forced
  double exact = 0.0;    // per sequence, greedy decoding
  std::size_t tokens = 0;
  std::size_t sequences = 0;
};

/// Fraction of positions where the prediction equals the target.
double token_accuracy(std::span<const int> targets, std::span<const int> predictions);
/// Fraction of sequences reproduced exactly.
double exact_match(std::span<const std::vector<int>> targets, std::span<const std::vector<int>> predictions);

Metrics evaluate(const ModelParams& p, const TaskSuite& suite, std::size_t task, std::span<const Example> dev,
                 std::size_t batch = 16);

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  std::vector<std::string> tasks{"copy"};
  std::size_t batch = 16;
  std::size_t steps = 2000;
  std::size_t eval_every = 500;
  std::size_t dev_size = 128;
  std::uint64_t seed = 1;
  std::uint64_t world_seed = 1;
  std::size_t parse_budget = 512;
  std::size_t threads = 1;  // workers for per-example shards and evaluation
  std::string log_path;     // metric log, appended when set
};

/// `base` with vocabulary, command count and modality nets sized for the suite.
ModelConfig suite_model_config(ModelConfig base, const TaskSuite& suite);

struct BatchGradients {
  double loss = 0.0;
  double nll = 0.0;  // mean over scored tokens
  double aux = 0.0;  // balance costs over the batch importance
  std::size_t scored = 0;
  std::vector<Tensor> grads;  // visit order
};

/// Training-mode loss and parameter gradients of one batch, the same
/// quantities as forward_teacher_forced. Each example runs on its own tape
/// (concurrently with `threads` > 1); the balance-cost gradient of the summed
/// importance is seeded back into every example, and per-example gradients
/// are added in example order, so the result does not depend on `threads`.
BatchGradients batch_gradients(const ModelParams& p, const TaskRoute& route, std::span<const Example> batch,
                               const RngStream& rng, std::size_t threads = 1);

/// Position in the round-robin schedule: the task trained at `step`.
std::size_t scheduled_task(std::size_t n_tasks, std::size_t step);

struct EvalRecord {
  std::size_t step = 0;
  std::string task;
  Metrics metrics;
};

/// "step<TAB>task<TAB>logppl<TAB>acc<TAB>exact"
std::string format_log_line(const EvalRecord& r);

struct TrainResult {
  ModelParams final_params;
  ModelParams best_params;  // lowest mean dev log-perplexity seen at an eval
  std::size_t best_step = 0;
  double best_dev_logppl = 0.0;
  std::vector<EvalRecord> log;
  std::vector<std::size_t> batches_per_task;
  std::vector<double> losses;  // training loss per step
};

struct Progress {
  std::function<void(std::size_t step, const std::string& task, double loss, double grad_norm)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
};

/// Round-robin training of one shared parameter set: step s trains task
/// s mod n on that task's next batch. Dev metrics for every task are logged
/// every `eval_every` steps and after the last step.
TrainResult train(const TaskSuite& suite, const TrainConfig& config, const Progress& progress = {},
                  const ModelParams* init = nullptr);

/// Dev examples used by train() for `task`.
std::vector<Example> dev_set(const TaskSuite& suite, const TrainConfig& config, std::size_t task,
                             Split split = Split::dev);

struct BatteryConfig {
  TrainConfig base;  // tasks and steps ignored
  std::size_t steps = 3000;  // parameter updates per condition
  /// The eight non-diagnostic tasks; copy and reverse stay out.
  std::vector<std::string> joint_tasks{"audio-classify", "image-classify", "image-caption", "parse",
                                       "translate-ab",   "translate-ba",   "translate-ac",  "translate-ca"};
  std::vector<std::string> single_tasks{"audio-classify", "image-classify", "translate-ab", "parse"};
  std::string translation_task = "translate-ab";
  std::string image_task = "image-classify";
};

struct BatteryRow {
  std::string table;      // "joint-vs-single", "parse-transfer", "ablation"
  std::string task;
  std::string condition;  // joint, alone, +image, +all, full, no-moe, no-attention
  std::string split;
  Metrics metrics;
};

struct BatteryReport {
  std::vector<BatteryRow> rows;
  std::string text;
  const BatteryRow* find(const std::string& table, const std::string& task, const std::string& condition) const;
};

/// Joint-vs-single, low-data parse transfer, and architecture ablations.
BatteryReport experiment_battery(const TaskSuite& suite, const BatteryConfig& config,
                                 const Progress& progress = {});

std::string render_report(const std::vector<BatteryRow>& rows, std::size_t steps);

}  // namespace mm
