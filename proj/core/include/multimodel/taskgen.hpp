#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "multimodel/model.hpp"
#include "multimodel/tokenizer.hpp"

// Synthetic, seed-deterministic stand-ins for the multi-task corpora.
namespace mm {

enum class TaskKind { audio_classify, image_classify, image_caption, parse, translate, copy, reverse };

enum class Split { train, dev, dev_long };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::copy;
  Modality input = Modality::language;
  Modality output = Modality::language;
  int task_id = 0;
  int command_id = 0;
  std::size_t min_len = 3;  // language inputs, in words
  std::size_t max_len = 8;
  std::size_t n_classes = 0;
  int class_offset = 0;    // first label of this task in the shared categorical output
  std::size_t budget = 0;  // distinct training examples; 0 means unbounded
  int source_lang = -1;    // translation lexicons
  int target_lang = -1;
};

/// The ten desk tasks in their fixed order; the position is the task id.
const std::vector<std::string>& standard_task_names();

/// Lengths of the long dev split (longer than anything trained on).
inline constexpr std::size_t kLongMin = 9;
inline constexpr std::size_t kLongMax = 12;
inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kAudioLength = 256;
inline constexpr std::size_t kDeskVocab = 512;

/// Shared vocabulary, lexicons and task specs. Everything here is fixed by
/// `world_seed`; per-example randomness comes from the seed passed to
/// `example`.
class TaskSuite {
 public:
  explicit TaskSuite(std::uint64_t world_seed = 1, std::size_t parse_budget = 512);

  const Vocab& vocab() const { return vocab_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  /// Size of the categorical output shared by the classification tasks;
  /// each task owns a disjoint label range.
  std::size_t categorical_classes() const;
  const TaskSpec& task(std::size_t id) const { return tasks_.at(id); }
  /// Throws std::invalid_argument for an unknown name.
  std::size_t index_of(const std::string& name) const;
  TaskRoute route(std::size_t id) const;

  /// Example `index` of a split. Train and dev never share an input: an
  /// input's content hash decides which split may emit it.
  Example example(std::size_t task, Split split, std::uint64_t seed, std::uint64_t index) const;
  std::vector<Example> examples(std::size_t task, Split split, std::uint64_t seed, std::uint64_t begin,
                                std::uint64_t end) const;

  /// Words of translation lexicon 0 (A), 1 (B) or 2 (C).
  const std::vector<std::string>& lexicon(int lang) const { return lexicons_.at(static_cast<std::size_t>(lang)); }
  /// Lexicon index in `to` of word `i` of lexicon `from`.
  std::size_t translate_word(int from, int to, std::size_t i) const;
  /// Every word any generator can emit.
  std::vector<std::string> all_words() const;
  int word_id(const std::string& word) const;

  /// Line-oriented rendering for export ("input<TAB>target").
  std::string render_input(const Example& ex) const;
  std::string render_target(const Example& ex) const;

  static bool is_dev_content(const Example& ex);

 private:
  Example draw(const TaskSpec& spec, std::size_t min_len, std::size_t max_len,
               RngStream rng) const;
  std::vector<int> ids_of(const std::vector<std::string>& words) const;

  Vocab vocab_;
  std::vector<TaskSpec> tasks_;
  std::vector<std::vector<std::string>> lexicons_;
  std::vector<std::vector<std::size_t>> to_a_;  // lexicon b -> index in A
  std::vector<std::string> determiners_, adjectives_, nouns_, verbs_;
  std::vector<std::string> pattern_words_;
};

/// Balanced-bracket check for parse targets: "(x" opens, ")x" closes label x.
bool brackets_balanced(const std::vector<std::string>& tokens);

/// Padded batch view of a list of examples of one task.
struct Batch {
  int task = 0;
  std::vector<Example> examples;
  std::size_t target_len = 0;
  std::vector<int> targets;        // [B, target_len], pad-filled
  std::vector<std::uint8_t> mask;  // 1 where a target position is scored
  Pair hint{1, 1};                 // spatial factoring for categorical routes
};

Batch make_batch(const TaskSuite& suite, std::size_t task, std::vector<Example> examples);

/// Writes `count` examples of a split as "input<TAB>target" lines.
void export_tsv(const TaskSuite& suite, std::size_t task, Split split, std::uint64_t seed, std::size_t count,
                const std::string& path);

}  // namespace mm
