#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mm {

/// Byte-pair-merge subword vocabulary. Ids 0..2 are pad, termination and
/// unknown; ids 3.. are one command token per task; then the base symbols
/// (characters and the end-of-word marker) and the merge products in rank
/// order.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kTerm = 1;
  static constexpr int kUnknown = 2;
  static constexpr int kFirstCommand = 3;
  static constexpr std::string_view kEndOfWord = "</w>";

  using Merge = std::pair<std::string, std::string>;

  Vocab() = default;
  /// Validates and indexes an explicit token list and merge table.
  Vocab(std::vector<std::string> tokens, std::vector<Merge> merges);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::string& token(int id) const;
  /// -1 when absent.
  int find(std::string_view token) const;
  std::size_t command_count() const { return n_commands_; }
  int command_id(std::size_t task) const;
  /// -1 when the pair is not a merge.
  int merge_rank(const std::string& left, const std::string& right) const;

  static std::string command_token(std::string_view task_name);
  static bool is_reserved_string(std::string_view s);

 private:
  std::vector<std::string> tokens_;
  std::vector<Merge> merges_;
  std::unordered_map<std::string, int> index_;
  std::map<Merge, int> ranks_;
  std::size_t n_commands_ = 0;
};

/// Learns merges from whitespace-separated words until the non-reserved part
/// of the vocabulary (base symbols plus merges) reaches `target` or no pair
/// occurs twice. Equal counts go to the lexicographically smallest pair.
Vocab learn(std::string_view corpus, std::size_t target, const std::vector<std::string>& command_names);
/// Same, from precomputed word frequencies.
Vocab learn(const std::map<std::string, long>& word_counts, std::size_t target,
            const std::vector<std::string>& command_names);

/// Splits a word into characters (UTF-8 code points).
std::vector<std::string> split_chars(std::string_view word);

/// Applies the merges in rank order to each word; unknown characters become
/// the unknown id; a termination id is appended.
std::vector<int> encode_text(std::string_view text, const Vocab& vocab);
/// Inverse of encode_text up to whitespace normalization. Stops at the
/// termination id; skips pad and command ids.
std::string decode_tokens(std::span<const int> ids, const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& vocab_path, const std::string& merges_path);
Vocab load_vocab(const std::string& vocab_path, const std::string& merges_path);

}  // namespace mm
