#include "multimodel/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <thread>

namespace mm {

double token_accuracy(std::span<const int> targets, std::span<const int> predictions) {
  if (targets.size() != predictions.size()) throw std::invalid_argument("token_accuracy: length mismatch");
  if (targets.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) hit += targets[i] == predictions[i];
  return static_cast<double>(hit) / static_cast<double>(targets.size());
}

double exact_match(std::span<const std::vector<int>> targets, std::span<const std::vector<int>> predictions) {
  if (targets.size() != predictions.size()) throw std::invalid_argument("exact_match: count mismatch");
  if (targets.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) hit += targets[i] == predictions[i];
  return static_cast<double>(hit) / static_cast<double>(targets.size());
}

namespace {

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Runs fn(0..n-1) on up to `threads` workers; results land by index, so the
// outcome does not depend on the thread count.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

BatchGradients batch_gradients(const ModelParams& p, const TaskRoute& route, std::span<const Example> batch,
                               const RngStream& rng, std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  const std::size_t n = batch.size();
  std::vector<std::unique_ptr<Tape>> tapes(n);
  std::vector<ExampleForward> fwd(n);
  parallel_for(n, threads, [&](std::size_t i) {
    tapes[i] = std::make_unique<Tape>();
    fwd[i] = forward_example(track(p, *tapes[i]), route, batch[i], true, rng.fork(i));
  });

  BatchGradients out;
  double nll = 0.0;
  for (const auto& f : fwd) {
    nll += f.nll.item();
    out.scored += f.scored;
  }
  out.nll = nll / static_cast<double>(out.scored);

  // Balance cost of the batch-summed importance, differentiated on its own tape.
  const std::size_t layers = fwd[0].importance.size();
  const double weights[] = {p.encoder_moe.balance_weight, p.decoder_moe.balance_weight};
  std::vector<Tensor> aux_grad(layers);
  if (layers) {
    Tape t;
    Tensor aux;
    std::vector<Tensor> leaves;
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<double> total(fwd[0].importance[l].size(), 0.0);
      for (const auto& f : fwd)
        for (std::size_t e = 0; e < total.size(); ++e) total[e] += f.importance[l][e];
      const std::size_t experts = total.size();
      leaves.push_back(t.leaf(Tensor({experts}, std::move(total))));
      Tensor c = scale(cv_squared(leaves.back()), weights[l]);
      aux = aux.defined() ? add(aux, c) : c;
    }
    out.aux = aux.item();
    Gradients g = t.backward(aux);
    for (std::size_t l = 0; l < layers; ++l) aux_grad[l] = g[l];
  }
  out.loss = out.nll + out.aux;

  std::vector<std::vector<Tensor>> per(n);
  const Tensor nll_seed = Tensor::scalar(1.0 / static_cast<double>(out.scored));
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<Tape::Seed> seeds{{fwd[i].nll, nll_seed}};
    for (std::size_t l = 0; l < layers; ++l) seeds.push_back({fwd[i].importance[l], aux_grad[l]});
    per[i] = std::move(tapes[i]->backward(seeds).tensors());
    fwd[i] = {};
    tapes[i].reset();
  });

  for (std::size_t j = 0; j < per[0].size(); ++j) {
    std::vector<double> acc(per[0][j].values().begin(), per[0][j].values().end());
    for (std::size_t i = 1; i < n; ++i) {
      const auto v = per[i][j].values();
      for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += v[e];
    }
    out.grads.emplace_back(per[0][j].shape(), std::move(acc));
  }
  return out;
}

Metrics evaluate(const ModelParams& p, const TaskSuite& suite, std::size_t task, std::span<const Example> dev,
                 std::size_t batch) {
  Metrics m;
  if (dev.empty()) return m;
  const TaskRoute route = suite.route(task);
  double nll = 0.0;
  std::size_t hits = 0, exact = 0;
  for (std::size_t begin = 0; begin < dev.size(); begin += batch) {
    const auto chunk = dev.subspan(begin, std::min(batch, dev.size() - begin));
    TeacherForced f = forward_teacher_forced(p, route, chunk, false, RngStream(0));
    nll += f.nll.item() * static_cast<double>(f.scored);
    m.tokens += f.scored;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const Example& ex = chunk[i];
      const std::vector<int> targets = route.output == Modality::categorical ? std::vector<int>{ex.label} : ex.target_ids;
      const auto probs = f.probabilities[i].values();
      const std::size_t width = probs.size() / targets.size();
      std::size_t row_hits = 0;
      for (std::size_t t = 0; t < targets.size(); ++t) row_hits += argmax(probs.subspan(t * width, width)) == targets[t];
      hits += row_hits;
      if (route.output == Modality::categorical) exact += row_hits;
      else exact += generate(p, route, ex, targets.size()) == targets;
    }
  }
  m.sequences = dev.size();
  m.logppl = nll / static_cast<double>(m.tokens);
  m.accuracy = static_cast<double>(hits) / static_cast<double>(m.tokens);
  m.exact = static_cast<double>(exact) / static_cast<double>(m.sequences);
  return m;
}

ModelConfig suite_model_config(ModelConfig base, const TaskSuite& suite) {
  base.vocab = suite.vocab().size();
  base.n_tasks = suite.tasks().size();
  base.image = base.audio = base.categorical = true;
  base.n_classes = suite.categorical_classes();
  return base;
}

std::size_t scheduled_task(std::size_t n_tasks, std::size_t step) {
  if (n_tasks == 0) throw std::invalid_argument("empty task schedule");
  return step % n_tasks;
}

std::string format_log_line(const EvalRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%s\t%.6f\t%.6f\t%.6f", r.step, r.task.c_str(), r.metrics.logppl,
                r.metrics.accuracy, r.metrics.exact);
  return buf;
}

std::vector<Example> dev_set(const TaskSuite& suite, const TrainConfig& config, std::size_t task, Split split) {
  return suite.examples(task, split, config.seed, 0, config.dev_size);
}

TrainResult train(const TaskSuite& suite, const TrainConfig& config, const Progress& progress,
                  const ModelParams* init) {
  if (config.tasks.empty()) throw std::invalid_argument("train: no tasks");
  if (config.batch == 0) throw std::invalid_argument("train: batch must be positive");
  std::vector<std::size_t> ids;
  for (const auto& name : config.tasks) ids.push_back(suite.index_of(name));

  TrainResult r;
  r.final_params = init ? *init : ModelParams::init(suite_model_config(config.model, suite), config.seed);
  std::vector<Tensor> flat = flatten(r.final_params);
  OptState opt = make_opt_state(config.adam, flat);
  r.batches_per_task.assign(ids.size(), 0);
  r.best_dev_logppl = std::numeric_limits<double>::infinity();
  r.best_params = r.final_params;

  std::vector<std::vector<Example>> dev(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) dev[i] = dev_set(suite, config, ids[i]);

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open metric log " + config.log_path);
  }

  auto run_eval = [&](std::size_t step) {
    std::vector<Metrics> m(ids.size());
    parallel_for(ids.size(), config.threads, [&](std::size_t i) { m[i] = evaluate(r.final_params, suite, ids[i], dev[i], config.batch); });
    double mean = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      EvalRecord rec{step, suite.task(ids[i]).name, m[i]};
      if (log) log << format_log_line(rec) << '\n' << std::flush;
      if (progress.on_eval) progress.on_eval(rec);
      r.log.push_back(std::move(rec));
      mean += m[i].logppl / static_cast<double>(ids.size());
    }
    if (mean < r.best_dev_logppl) {
      r.best_dev_logppl = mean;
      r.best_params = r.final_params;
      r.best_step = step;
    }
  };

  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::size_t slot = scheduled_task(ids.size(), step);
    const std::size_t task = ids[slot];
    const std::uint64_t k = r.batches_per_task[slot]++;
    const auto examples = suite.examples(task, Split::train, config.seed, k * config.batch, (k + 1) * config.batch);

    BatchGradients g = batch_gradients(r.final_params, suite.route(task), examples,
                                       RngStream(config.seed).fork("train").fork(step), config.threads);
    const double loss = g.loss;
    check_finite(std::span<const double>(&loss, 1), "training loss");
    const StepInfo info = adam_step(flat, g.grads, opt);
    unflatten(r.final_params, flat);
    r.losses.push_back(loss);
    if (progress.on_step) progress.on_step(step + 1, suite.task(task).name, loss, info.grad_norm);
    if ((config.eval_every && (step + 1) % config.eval_every == 0) || step + 1 == config.steps) run_eval(step + 1);
  }
  if (config.steps == 0) run_eval(0);
  return r;
}

const BatteryRow* BatteryReport::find(const std::string& table, const std::string& task,
                                      const std::string& condition) const {
  for (const auto& row : rows)
    if (row.table == table && row.task == task && row.condition == condition) return &row;
  return nullptr;
}

std::string render_report(const std::vector<BatteryRow>& rows, std::size_t steps) {
  std::string out = "# parameter updates per condition: " + std::to_string(steps) +
                    " (equal total updates; joint runs split them round-robin across their tasks)\n";
  std::vector<std::string> tables;
  for (const auto& row : rows)
    if (std::find(tables.begin(), tables.end(), row.table) == tables.end()) tables.push_back(row.table);
  for (const auto& table : tables) {
    std::size_t w_task = 4, w_cond = 9;
    for (const auto& row : rows)
      if (row.table == table) {
        w_task = std::max(w_task, row.task.size());
        w_cond = std::max(w_cond, row.condition.size());
      }
    char line[256];
    out += "\n[" + table + "]\n";
    std::snprintf(line, sizeof line, "%-*s  %-*s  %-8s  %8s  %8s  %8s\n", static_cast<int>(w_task), "task",
                  static_cast<int>(w_cond), "condition", "split", "logppl", "acc", "exact");
    out += line;
    for (const auto& row : rows) {
      if (row.table != table) continue;
      std::snprintf(line, sizeof line, "%-*s  %-*s  %-8s  %8.4f  %8.4f  %8.4f\n", static_cast<int>(w_task),
                    row.task.c_str(), static_cast<int>(w_cond), row.condition.c_str(), row.split.c_str(),
                    row.metrics.logppl, row.metrics.accuracy, row.metrics.exact);
      out += line;
    }
  }
  return out;
}

BatteryReport experiment_battery(const TaskSuite& suite, const BatteryConfig& config, const Progress& progress) {
  BatteryReport report;
  std::map<std::string, TrainResult> runs;
  auto run = [&](const std::string& key, std::vector<std::string> tasks, ModelConfig model) -> const TrainResult& {
    auto it = runs.find(key);
    if (it != runs.end()) return it->second;
    TrainConfig c = config.base;
    c.tasks = std::move(tasks);
    c.steps = config.steps;
    c.model = model;
    c.log_path.clear();
    return runs.emplace(key, train(suite, c, progress)).first->second;
  };
  auto measure = [&](const TrainResult& r, const std::string& task, Split split) {
    const std::size_t id = suite.index_of(task);
    return evaluate(r.best_params, suite, id, dev_set(suite, config.base, id, split), config.base.batch);
  };
  auto split_name = [](Split s) { return s == Split::dev_long ? std::string("dev-long") : std::string("dev"); };

  const TrainResult& joint = run("joint", config.joint_tasks, config.base.model);
  for (const auto& task : config.single_tasks) {
    report.rows.push_back({"joint-vs-single", task, "joint", "dev", measure(joint, task, Split::dev)});
    report.rows.push_back(
        {"joint-vs-single", task, "alone", "dev", measure(run("alone:" + task, {task}, config.base.model), task, Split::dev)});
  }

  const TrainResult& alone = run("alone:parse", {"parse"}, config.base.model);
  const TrainResult& with_image = run("parse+image", {"parse", config.image_task}, config.base.model);
  report.rows.push_back({"parse-transfer", "parse", "alone", "dev", measure(alone, "parse", Split::dev)});
  report.rows.push_back({"parse-transfer", "parse", "+image", "dev", measure(with_image, "parse", Split::dev)});
  report.rows.push_back({"parse-transfer", "parse", "+all", "dev", measure(joint, "parse", Split::dev)});

  const std::vector<std::string> pair{config.translation_task, config.image_task};
  for (const char* condition : {"full", "no-moe", "no-attention"}) {
    ModelConfig m = config.base.model;
    if (std::string(condition) == "no-moe") m.use_moe = false;
    if (std::string(condition) == "no-attention") m.use_attention = false;
    const TrainResult& r = run(std::string("ablation:") + condition, pair, m);
    report.rows.push_back({"ablation", config.translation_task, condition, split_name(Split::dev_long),
                           measure(r, config.translation_task, Split::dev_long)});
    report.rows.push_back({"ablation", config.image_task, condition, split_name(Split::dev),
                           measure(r, config.image_task, Split::dev)});
  }
  report.text = render_report(report.rows, config.steps);
  return report;
}

}  // namespace mm
