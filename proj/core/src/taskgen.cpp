#include "multimodel/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

namespace mm {

const std::vector<std::string>& standard_task_names() {
  static const std::vector<std::string> names{
      "audio-classify", "image-classify", "image-caption", "parse",  "translate-ab",
      "translate-ba",   "translate-ac",   "translate-ca",  "copy",   "reverse",
  };
  return names;
}

namespace {

constexpr std::uint64_t kDevBase = std::uint64_t{1} << 40;
constexpr std::uint64_t kLongBase = std::uint64_t{1} << 41;
constexpr std::size_t kAlphabet = 16;  // copy / reverse use the first 16 words of lexicon A
constexpr long kLexiconCount = 1'000'000;
constexpr std::size_t kAudioStages = 8;

std::vector<std::string> make_lexicon(const char* consonants) {
  static constexpr const char* vowels = "aeiou";
  auto syllable = [&](std::size_t s) { return std::string{consonants[s / 5], vowels[s % 5]}; };
  std::vector<std::string> words;
  for (std::size_t j = 0; j < 20; ++j) words.push_back(syllable(j) + syllable((7 * j + 3) % 20));
  return words;
}

std::vector<std::size_t> permutation(std::size_t n, RngStream rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i-- > 1;) std::swap(p[i], p[rng.next_below(i + 1)]);
  return p;
}

std::uint64_t content_hash(const Example& ex) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  auto feed = [&](std::uint64_t v) { h = mix64(h ^ v); };
  for (int id : ex.input_ids) feed(static_cast<std::uint64_t>(id));
  if (ex.signal.defined())
    for (double v : ex.signal.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      feed(bits);
    }
  return h;
}

}  // namespace

TaskSuite::TaskSuite(std::uint64_t world_seed, std::size_t parse_budget) {
  const RngStream world(world_seed);
  lexicons_ = {make_lexicon("bdgk"), make_lexicon("mnlr"), make_lexicon("pstv")};
  to_a_.push_back(permutation(20, world.fork("identity")));
  for (std::size_t i = 0; i < 20; ++i) to_a_[0][i] = i;
  to_a_.push_back(permutation(20, world.fork("lexicon-b")));
  to_a_.push_back(permutation(20, world.fork("lexicon-c")));
  determiners_ = {"the", "some"};
  adjectives_ = {"red", "big", "old", "new"};
  nouns_ = {"cat", "dog", "fox", "owl", "bee", "ant", "elk", "yak"};
  verbs_ = {"saw", "ate", "met", "hid", "ran", "fed", "got", "led"};
  pattern_words_ = {"plain", "stripes", "bars", "checks"};

  const auto& names = standard_task_names();
  const auto words = all_words();
  std::map<std::string, long> counts;
  for (const auto& w : words)
    if (!counts.emplace(w, kLexiconCount).second) throw std::logic_error("task lexicon word repeated: " + w);

  // Zipf-distributed filler words so the merge budget fills up exactly.
  const std::size_t target = kDeskVocab - 3 - names.size();
  RngStream filler = world.fork("filler");
  for (std::size_t n = 0;; ++n) {
    std::string w;
    const std::size_t len = 3 + filler.next_below(6);
    for (std::size_t i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + filler.next_below(26)));
    if (!counts.contains(w)) counts.emplace(w, static_cast<long>(1000 / (n + 1) + 2));
    if (n % 100 != 99) continue;
    vocab_ = learn(counts, target, names);
    if (vocab_.size() == kDeskVocab) break;
    if (n > 100000) throw std::logic_error("could not fill the desk vocabulary");
  }
  for (const auto& w : words)
    if (vocab_.find(w + std::string(Vocab::kEndOfWord)) < 0)
      throw std::logic_error("task word '" + w + "' is not a single vocabulary token");

  for (std::size_t i = 0; i < names.size(); ++i) {
    TaskSpec s;
    s.name = names[i];
    s.task_id = static_cast<int>(i);
    s.command_id = vocab_.command_id(i);
    if (s.name == "audio-classify") {
      s.kind = TaskKind::audio_classify;
      s.input = Modality::audio;
      s.output = Modality::categorical;
      s.n_classes = 4;
      s.class_offset = 4;
    } else if (s.name == "image-classify") {
      s.kind = TaskKind::image_classify;
      s.input = Modality::image;
      s.output = Modality::categorical;
      s.n_classes = 4;
    } else if (s.name == "image-caption") {
      s.kind = TaskKind::image_caption;
      s.input = Modality::image;
    } else if (s.name == "parse") {
      s.kind = TaskKind::parse;
      s.budget = parse_budget;
    } else if (s.name == "copy") {
      s.kind = TaskKind::copy;
    } else if (s.name == "reverse") {
      s.kind = TaskKind::reverse;
    } else {
      s.kind = TaskKind::translate;
      auto lang = [](char c) { return c == 'a' ? 0 : c == 'b' ? 1 : 2; };
      s.source_lang = lang(s.name[10]);
      s.target_lang = lang(s.name[11]);
    }
    tasks_.push_back(s);
  }
}

std::size_t TaskSuite::categorical_classes() const {
  std::size_t n = 0;
  for (const auto& t : tasks_) n = std::max(n, static_cast<std::size_t>(t.class_offset) + t.n_classes);
  return n;
}

std::vector<std::string> TaskSuite::all_words() const {
  std::vector<std::string> w;
  for (const auto& lex : lexicons_) w.insert(w.end(), lex.begin(), lex.end());
  for (const auto* list : {&determiners_, &adjectives_, &nouns_, &verbs_, &pattern_words_})
    w.insert(w.end(), list->begin(), list->end());
  for (const char* t : {"dt", "jj", "nn", "vb", "(s", ")s", "(np", ")np", "(vp", ")vp"}) w.emplace_back(t);
  return w;
}

int TaskSuite::word_id(const std::string& word) const {
  const int id = vocab_.find(word + std::string(Vocab::kEndOfWord));
  if (id < 0) throw std::invalid_argument("not a task word: " + word);
  return id;
}

std::vector<int> TaskSuite::ids_of(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  for (const auto& w : words) ids.push_back(word_id(w));
  ids.push_back(Vocab::kTerm);
  return ids;
}

std::size_t TaskSuite::index_of(const std::string& name) const {
  for (const auto& t : tasks_)
    if (t.name == name) return static_cast<std::size_t>(t.task_id);
  throw std::invalid_argument("unknown task '" + name + "'");
}

TaskRoute TaskSuite::route(std::size_t id) const {
  const TaskSpec& s = task(id);
  return {s.task_id, s.input, s.output, s.command_id};
}

std::size_t TaskSuite::translate_word(int from, int to, std::size_t i) const {
  const std::size_t a = to_a_.at(static_cast<std::size_t>(from)).at(i);
  const auto& target = to_a_.at(static_cast<std::size_t>(to));
  return static_cast<std::size_t>(std::find(target.begin(), target.end(), a) - target.begin());
}

bool TaskSuite::is_dev_content(const Example& ex) { return content_hash(ex) % 8 == 0; }

Example TaskSuite::draw(const TaskSpec& spec, std::size_t min_len, std::size_t max_len, RngStream rng) const {
  Example ex;
  ex.task = spec.task_id;
  auto length = [&] { return min_len + rng.next_below(max_len - min_len + 1); };
  switch (spec.kind) {
    case TaskKind::copy:
    case TaskKind::reverse: {
      std::vector<std::string> w(length());
      for (auto& x : w) x = lexicons_[0][rng.next_below(kAlphabet)];
      ex.input_ids = ids_of(w);
      if (spec.kind == TaskKind::reverse) std::reverse(w.begin(), w.end());
      ex.target_ids = ids_of(w);
      break;
    }
    case TaskKind::translate: {
      std::vector<std::string> src(length()), dst;
      const auto& lex = lexicons_[static_cast<std::size_t>(spec.source_lang)];
      for (auto& x : src) {
        const std::size_t i = rng.next_below(lex.size());
        x = lex[i];
        dst.push_back(lexicons_[static_cast<std::size_t>(spec.target_lang)]
                               [translate_word(spec.source_lang, spec.target_lang, i)]);
      }
      ex.input_ids = ids_of(src);
      ex.target_ids = ids_of(dst);
      break;
    }
    case TaskKind::parse: {
      std::vector<std::string> words, tree{"(s"};
      auto noun_phrase = [&] {
        tree.push_back("(np");
        words.push_back(determiners_[rng.next_below(determiners_.size())]);
        tree.push_back("dt");
        for (std::size_t k = rng.next_below(3); k > 0; --k) {
          words.push_back(adjectives_[rng.next_below(adjectives_.size())]);
          tree.push_back("jj");
        }
        words.push_back(nouns_[rng.next_below(nouns_.size())]);
        tree.push_back("nn");
        tree.push_back(")np");
      };
      noun_phrase();
      tree.push_back("(vp");
      words.push_back(verbs_[rng.next_below(verbs_.size())]);
      tree.push_back("vb");
      if (rng.next_below(2) == 1) noun_phrase();
      tree.push_back(")vp");
      tree.push_back(")s");
      ex.input_ids = ids_of(words);
      ex.target_ids = ids_of(tree);
      break;
    }
    case TaskKind::image_classify: {
      const std::size_t n = kImageSize, half = n / 2;
      const std::size_t bright = rng.next_below(4);
      double level[4], tint[3];
      for (std::size_t q = 0; q < 4; ++q) level[q] = q == bright ? 0.6 + 0.3 * rng.next_uniform() : 0.05 + 0.35 * rng.next_uniform();
      for (double& t : tint) t = 0.7 + 0.3 * rng.next_uniform();
      std::vector<double> px(n * n * 3);
      double sums[4] = {0, 0, 0, 0};
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          const std::size_t q = (r >= half ? 2 : 0) + (c >= half ? 1 : 0);
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = std::clamp(level[q] * tint[ch] + 0.2 * (rng.next_uniform() - 0.5), 0.0, 1.0);
            px[(r * n + c) * 3 + ch] = v;
            sums[q] += v;
          }
        }
      ex.signal = Tensor({1, n, n, 3}, std::move(px));
      ex.label = spec.class_offset + static_cast<int>(std::max_element(sums, sums + 4) - sums);
      break;
    }
    case TaskKind::image_caption: {
      const std::size_t n = kImageSize, half = n / 2;
      std::size_t pattern[2];
      double hi[2], lo[2];
      std::size_t phase[2];
      for (std::size_t s = 0; s < 2; ++s) {
        pattern[s] = rng.next_below(4);
        hi[s] = 0.7 + 0.3 * rng.next_uniform();
        lo[s] = pattern[s] == 0 ? hi[s] : 0.3 * rng.next_uniform();
        phase[s] = rng.next_below(4);
      }
      std::vector<double> px(n * n * 3);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          const std::size_t s = c >= half ? 1 : 0;
          bool on = true;
          switch (pattern[s]) {
            case 1: on = (r + phase[s]) % 4 < 2; break;
            case 2: on = (c + phase[s]) % 4 < 2; break;
            case 3: on = ((r + phase[s]) / 2 + (c + phase[s]) / 2) % 2 == 0; break;
            default: break;
          }
          const double v = std::clamp((on ? hi[s] : lo[s]) + 0.1 * (rng.next_uniform() - 0.5), 0.0, 1.0);
          for (std::size_t ch = 0; ch < 3; ++ch) px[(r * n + c) * 3 + ch] = v;
        }
      ex.signal = Tensor({1, n, n, 3}, std::move(px));
      ex.target_ids = ids_of({pattern_words_[pattern[0]], pattern_words_[pattern[1]]});
      break;
    }
    case TaskKind::audio_classify: {
      static constexpr double lo[] = {3, 7, 15, 31}, hi[] = {5, 11, 23, 47};
      const std::size_t bucket = rng.next_below(4);
      const double f = lo[bucket] + (hi[bucket] - lo[bucket]) * rng.next_uniform();
      const double phase = 2 * std::numbers::pi * rng.next_uniform();
      std::vector<double> wave(kAudioLength);
      for (std::size_t t = 0; t < kAudioLength; ++t)
        wave[t] = std::sin(2 * std::numbers::pi * f * static_cast<double>(t) / kAudioLength + phase);
      ex.signal = Tensor({1, kAudioLength, 1}, std::move(wave));
      ex.label = spec.class_offset + static_cast<int>(bucket);
      break;
    }
  }
  return ex;
}

Example TaskSuite::example(std::size_t task_id, Split split, std::uint64_t seed, std::uint64_t index) const {
  const TaskSpec& spec = task(task_id);
  std::uint64_t key = index;
  std::size_t min_len = spec.min_len, max_len = spec.max_len;
  if (split == Split::train) {
    if (spec.budget) key = index % spec.budget;
  } else if (split == Split::dev) {
    key += kDevBase;
  } else {
    key += kLongBase;
    min_len = kLongMin;
    max_len = kLongMax;
  }
  const RngStream base = RngStream(seed).fork(spec.name).fork(key);
  for (std::uint64_t attempt = 0; attempt < 4096; ++attempt) {
    Example ex = draw(spec, min_len, max_len, base.fork(attempt));
    if (is_dev_content(ex) == (split != Split::train)) return ex;
  }
  throw std::logic_error("could not draw an example for the requested split");
}

std::vector<Example> TaskSuite::examples(std::size_t task_id, Split split, std::uint64_t seed, std::uint64_t begin,
                                         std::uint64_t end) const {
  std::vector<Example> out;
  for (std::uint64_t i = begin; i < end; ++i) out.push_back(example(task_id, split, seed, i));
  return out;
}

std::string TaskSuite::render_input(const Example& ex) const {
  if (!ex.input_ids.empty()) return decode_tokens(ex.input_ids, vocab_);
  if (!ex.signal.defined()) return "";
  std::string shape;
  for (std::size_t i = 1; i < ex.signal.rank(); ++i) shape += (i > 1 ? "x" : "") + std::to_string(ex.signal.dim(i));
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(content_hash(ex)));
  return std::string(task(static_cast<std::size_t>(ex.task)).input == Modality::image ? "image " : "audio ") + shape +
         " #" + hash;
}

std::string TaskSuite::render_target(const Example& ex) const {
  if (!ex.target_ids.empty()) return decode_tokens(ex.target_ids, vocab_);
  return "class " + std::to_string(ex.label);
}

bool brackets_balanced(const std::vector<std::string>& tokens) {
  std::vector<std::string> open;
  for (const auto& t : tokens) {
    if (t.size() > 1 && t[0] == '(') {
      open.push_back(t.substr(1));
    } else if (t.size() > 1 && t[0] == ')') {
      if (open.empty() || open.back() != t.substr(1)) return false;
      open.pop_back();
    }
  }
  return open.empty();
}

Batch make_batch(const TaskSuite& suite, std::size_t task, std::vector<Example> examples) {
  if (examples.empty()) throw std::invalid_argument("make_batch: no examples");
  const TaskSpec& spec = suite.task(task);
  Batch b;
  b.task = spec.task_id;
  for (const auto& e : examples)
    if (e.task != spec.task_id) throw std::invalid_argument("make_batch: example from another task");
  if (spec.output == Modality::categorical) {
    b.target_len = 1;
    for (const auto& e : examples) {
      b.targets.push_back(e.label);
      b.mask.push_back(1);
    }
    const Tensor& s = examples.front().signal;
    if (spec.input == Modality::image) {
      b.hint = {image_reduced(s.dim(1)), image_reduced(s.dim(2))};
    } else {
      std::size_t t = s.dim(1);
      for (std::size_t i = 0; i < kAudioStages; ++i) t = (t + 1) / 2;
      b.hint = {t, s.rank() == 4 ? s.dim(2) : 1};
    }
  } else {
    for (const auto& e : examples) b.target_len = std::max(b.target_len, e.target_ids.size());
    for (const auto& e : examples)
      for (std::size_t t = 0; t < b.target_len; ++t) {
        const bool real = t < e.target_ids.size();
        b.targets.push_back(real ? e.target_ids[t] : Vocab::kPad);
        b.mask.push_back(real ? 1 : 0);
      }
  }
  b.examples = std::move(examples);
  return b;
}

void export_tsv(const TaskSuite& suite, std::size_t task, Split split, std::uint64_t seed, std::size_t count,
                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t i = 0; i < count; ++i) {
    const Example ex = suite.example(task, split, seed, i);
    out << suite.render_input(ex) << '\t' << suite.render_target(ex) << '\n';
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace mm
