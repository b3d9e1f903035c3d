#include "multimodel/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mm {

namespace {

constexpr std::string_view kReserved[] = {"<pad>", "</s>", "<unk>"};
constexpr std::string_view kCommandPrefix = "<to:";

bool is_command_string(std::string_view s) {
  return s.size() > kCommandPrefix.size() + 1 && s.starts_with(kCommandPrefix) && s.ends_with(">");
}

}  // namespace

std::string Vocab::command_token(std::string_view task_name) {
  return std::string(kCommandPrefix) + std::string(task_name) + ">";
}

bool Vocab::is_reserved_string(std::string_view s) {
  return std::find(std::begin(kReserved), std::end(kReserved), s) != std::end(kReserved) || is_command_string(s);
}

Vocab::Vocab(std::vector<std::string> tokens, std::vector<Merge> merges)
    : tokens_(std::move(tokens)), merges_(std::move(merges)) {
  if (tokens_.size() < 4) throw std::invalid_argument("vocab: too few tokens");
  for (int i = 0; i < 3; ++i)
    if (tokens_[static_cast<std::size_t>(i)] != kReserved[i])
      throw std::invalid_argument("vocab: id " + std::to_string(i) + " must be " + std::string(kReserved[i]));
  while (kFirstCommand + n_commands_ < tokens_.size() && is_command_string(tokens_[kFirstCommand + n_commands_]))
    ++n_commands_;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("vocab: empty token at id " + std::to_string(i));
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocab: duplicate token '" + tokens_[i] + "'");
    if (i >= kFirstCommand + n_commands_ && is_reserved_string(tokens_[i]))
      throw std::invalid_argument("vocab: reserved token '" + tokens_[i] + "' outside the reserved ids");
  }
  if (!index_.contains(std::string(kEndOfWord))) throw std::invalid_argument("vocab: missing end-of-word marker");
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [l, rt] = merges_[r];
    if (!index_.contains(l) || !index_.contains(rt) || !index_.contains(l + rt))
      throw std::invalid_argument("vocab: merge " + std::to_string(r) + " (" + l + ", " + rt +
                                  ") refers to missing tokens");
    if (is_reserved_string(l + rt)) throw std::invalid_argument("vocab: merge produces a reserved token");
    ranks_.emplace(merges_[r], static_cast<int>(r));
  }
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

int Vocab::command_id(std::size_t task) const {
  if (task >= n_commands_) throw std::out_of_range("vocab: no command token for task " + std::to_string(task));
  return kFirstCommand + static_cast<int>(task);
}

int Vocab::merge_rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find({left, right});
  return it == ranks_.end() ? -1 : it->second;
}

std::vector<std::string> split_chars(std::string_view word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t n = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 1;
    n = std::min(n, word.size() - i);
    out.emplace_back(word.substr(i, n));
    i += n;
  }
  return out;
}

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<std::string> word_symbols(std::string_view word) {
  auto s = split_chars(word);
  s.emplace_back(Vocab::kEndOfWord);
  return s;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

}  // namespace

Vocab learn(std::string_view corpus, std::size_t target, const std::vector<std::string>& command_names) {
  std::map<std::string, long> counts;
  for (auto& w : split_words(corpus)) ++counts[w];
  return learn(counts, target, command_names);
}

Vocab learn(const std::map<std::string, long>& counts, std::size_t target,
            const std::vector<std::string>& command_names) {
  if (counts.empty()) throw std::invalid_argument("learn: empty corpus");

  std::vector<std::string> tokens(std::begin(kReserved), std::end(kReserved));
  for (const auto& name : command_names) tokens.push_back(Vocab::command_token(name));
  const std::size_t reserved = tokens.size();

  std::set<std::string> base{std::string(Vocab::kEndOfWord)};
  std::vector<std::pair<std::vector<std::string>, long>> words;
  for (const auto& [w, c] : counts) {
    if (c <= 0 || w.empty() || w.find_first_of(" \t\n\r") != std::string::npos)
      throw std::invalid_argument("learn: bad word count entry '" + w + "'");
    words.emplace_back(word_symbols(w), c);
    for (const auto& ch : words.back().first) base.insert(ch);
  }
  for (const auto& b : base) {
    if (Vocab::is_reserved_string(b)) throw std::invalid_argument("learn: corpus character collides with a reserved token");
    tokens.push_back(b);
  }
  std::set<std::string> known(tokens.begin(), tokens.end());
  std::vector<Vocab::Merge> merges;
  std::set<Vocab::Merge> banned;

  while (tokens.size() - reserved < target) {
    std::map<Vocab::Merge, long> pairs;
    for (const auto& [sym, c] : words)
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) pairs[{sym[i], sym[i + 1]}] += c;
    const Vocab::Merge* best = nullptr;
    long best_count = 1;
    for (const auto& [pair, c] : pairs)
      if (c > best_count && !banned.contains(pair)) {
        best = &pair;
        best_count = c;
      }
    if (!best) break;
    const std::string merged = best->first + best->second;
    if (Vocab::is_reserved_string(merged) || merged == Vocab::kEndOfWord || known.contains(merged)) {
      banned.insert(*best);
      continue;
    }
    const Vocab::Merge m = *best;
    for (auto& [sym, c] : words) apply_merge(sym, m.first, m.second);
    merges.push_back(m);
    tokens.push_back(merged);
    known.insert(merged);
  }
  return Vocab(std::move(tokens), std::move(merges));
}

std::vector<int> encode_text(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    auto sym = word_symbols(w);
    while (sym.size() > 1) {
      int best = -1;
      std::size_t at = 0;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        const int r = vocab.merge_rank(sym[i], sym[i + 1]);
        if (r >= 0 && (best < 0 || r < best)) {
          best = r;
          at = i;
        }
      }
      if (best < 0) break;
      const std::string left = sym[at], right = sym[at + 1];
      apply_merge(sym, left, right);
    }
    for (const auto& s : sym) {
      const int id = vocab.find(s);
      ids.push_back(id < 0 ? Vocab::kUnknown : id);
    }
  }
  ids.push_back(Vocab::kTerm);
  return ids;
}

std::string decode_tokens(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocab::kTerm) break;
    if (id == Vocab::kPad || (id >= Vocab::kFirstCommand && id < Vocab::kFirstCommand + static_cast<int>(vocab.command_count())))
      continue;
    std::string_view t = vocab.token(id);
    if (t.ends_with(Vocab::kEndOfWord)) {
      out.append(t.substr(0, t.size() - Vocab::kEndOfWord.size()));
      out.push_back(' ');
    } else {
      out.append(t);
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else out.push_back(c);
  }
  return out;
}

std::string unescape(const std::string& s, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 1 == s.size()) throw std::runtime_error("vocab line " + std::to_string(line) + ": dangling escape");
    const char n = s[++i];
    if (n == '\\') out.push_back('\\');
    else if (n == 'n') out.push_back('\n');
    else throw std::runtime_error("vocab line " + std::to_string(line) + ": unknown escape");
  }
  return out;
}

}  // namespace

void save_vocab(const Vocab& vocab, const std::string& vocab_path, const std::string& merges_path) {
  std::ofstream v(vocab_path, std::ios::binary);
  if (!v) throw std::runtime_error("cannot write " + vocab_path);
  v << "MMVOCAB 1\n";
  for (const auto& t : vocab.tokens()) v << escape(t) << '\n';
  std::ofstream m(merges_path, std::ios::binary);
  if (!m) throw std::runtime_error("cannot write " + merges_path);
  for (const auto& [l, r] : vocab.merges()) m << escape(l) << '\t' << escape(r) << '\n';
  if (!v || !m) throw std::runtime_error("short write while saving the vocabulary");
}

Vocab load_vocab(const std::string& vocab_path, const std::string& merges_path) {
  std::ifstream v(vocab_path, std::ios::binary);
  if (!v) throw std::runtime_error("cannot read " + vocab_path);
  std::string line;
  if (!std::getline(v, line) || line != "MMVOCAB 1") throw std::runtime_error(vocab_path + ": bad header");
  std::vector<std::string> tokens;
  for (std::size_t n = 2; std::getline(v, line); ++n) tokens.push_back(unescape(line, n));
  std::ifstream m(merges_path, std::ios::binary);
  if (!m) throw std::runtime_error("cannot read " + merges_path);
  std::vector<Vocab::Merge> merges;
  for (std::size_t n = 1; std::getline(m, line); ++n) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(merges_path + " line " + std::to_string(n) + ": no tab");
    merges.emplace_back(unescape(line.substr(0, tab), n), unescape(line.substr(tab + 1), n));
  }
  return Vocab(std::move(tokens), std::move(merges));
}

}  // namespace mm
