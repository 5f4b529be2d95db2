#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cner/utf8.hpp"

namespace cner {

/// A whitespace-free token; offsets are code-point indices into the owning
/// sentence's `raw`, with `char_end` inclusive.
struct Token {
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  bool operator==(const Token&) const = default;
};

struct Sentence {
  std::vector<Token> tokens;
  std::string raw;

  /// Builds a sentence whose raw text is the tokens joined by single spaces.
  static Sentence from_tokens(const std::vector<std::string>& words) {
    Sentence s;
    std::size_t offset = 0;
    for (const auto& word : words) {
      const std::size_t length = decode_utf8(word).size();
      if (length == 0) throw std::invalid_argument("empty token");
      if (!s.raw.empty()) {
        s.raw.push_back(' ');
        ++offset;
      }
      s.tokens.push_back(Token{word, offset, offset + length - 1});
      s.raw += word;
      offset += length;
    }
    return s;
  }

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }

  bool operator==(const Sentence&) const = default;
};

struct LabeledSentence {
  Sentence sentence;
  std::vector<std::string> tags;

  bool operator==(const LabeledSentence&) const = default;
};

/// Tokens joined by single spaces: the character view language models read.
inline std::u32string spaced_text(const Sentence& sentence) {
  std::u32string out;
  for (const auto& token : sentence.tokens) {
    if (!out.empty()) out.push_back(U' ');
    out += decode_utf8(token.text);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

inline bool is_terminator(char32_t cp) { return cp == U'.' || cp == U'!' || cp == U'?'; }

inline void split_tokens(const std::u32string& raw, std::vector<Token>& tokens) {
  std::size_t i = 0;
  while (i < raw.size()) {
    if (is_space(raw[i])) {
      ++i;
      continue;
    }
    if (is_punct(raw[i])) {
      tokens.push_back(Token{encode_utf8(raw.substr(i, 1)), i, i});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size() && !is_space(raw[j]) && !is_punct(raw[j])) ++j;
    tokens.push_back(Token{encode_utf8(raw.substr(i, j - i)), i, j - 1});
    i = j;
  }
}

}  // namespace detail

/// Rule-based segmentation: a sentence ends at `.`, `!` or `?` followed by
/// whitespace or end of input. Tokens split on whitespace, and every
/// punctuation character becomes its own token. Throws Utf8Error.
inline std::vector<Sentence> tokenize(std::string_view text) {
  const std::u32string cps = decode_utf8(text);
  std::vector<Sentence> sentences;
  std::size_t i = 0;
  const std::size_t n = cps.size();
  while (i < n) {
    while (i < n && is_space(cps[i])) ++i;
    if (i == n) break;
    const std::size_t start = i;
    std::size_t end = n;  // exclusive
    for (std::size_t j = i; j < n; ++j) {
      if (detail::is_terminator(cps[j]) && (j + 1 == n || is_space(cps[j + 1]))) {
        end = j + 1;
        break;
      }
    }
    std::size_t stop = end;
    while (stop > start && is_space(cps[stop - 1])) --stop;
    const std::u32string raw = cps.substr(start, stop - start);
    Sentence sentence;
    sentence.raw = encode_utf8(raw);
    detail::split_tokens(raw, sentence.tokens);
    if (!sentence.tokens.empty()) sentences.push_back(std::move(sentence));
    i = end;
  }
  return sentences;
}

// ---------------------------------------------------------------------------
// BIO tags

enum class TagPrefix { kOutside, kBegin, kInside };

struct TagParts {
  TagPrefix prefix = TagPrefix::kOutside;
  std::string_view type;
};

/// Returns nullopt for anything other than `O`, `B-X` or `I-X` with non-empty X.
inline std::optional<TagParts> parse_tag(std::string_view tag) {
  if (tag == "O") return TagParts{};
  if (tag.size() < 3 || tag[1] != '-') return std::nullopt;
  if (tag[0] == 'B') return TagParts{TagPrefix::kBegin, tag.substr(2)};
  if (tag[0] == 'I') return TagParts{TagPrefix::kInside, tag.substr(2)};
  return std::nullopt;
}

/// True when no I-X follows anything but B-X or I-X of the same type.
inline bool is_valid_bio(std::span<const std::string> tags) {
  std::string_view open_type;
  bool open = false;
  for (const auto& tag : tags) {
    const auto parts = parse_tag(tag);
    if (!parts) return false;
    if (parts->prefix == TagPrefix::kInside && (!open || parts->type != open_type)) return false;
    open = parts->prefix != TagPrefix::kOutside;
    open_type = parts->type;
  }
  return true;
}

/// Rewrites every I-X that does not continue an X span to B-X. Idempotent.
inline std::vector<std::string> bio_normalize(std::span<const std::string> tags,
                                              std::size_t* repaired = nullptr) {
  std::vector<std::string> out;
  out.reserve(tags.size());
  std::string open_type;
  bool open = false;
  for (const auto& tag : tags) {
    const auto parts = parse_tag(tag);
    if (!parts) throw std::invalid_argument("malformed BIO tag '" + tag + "'");
    if (parts->prefix == TagPrefix::kInside && (!open || parts->type != open_type)) {
      out.push_back("B-" + std::string(parts->type));
      if (repaired) ++*repaired;
    } else {
      out.push_back(tag);
    }
    open = parts->prefix != TagPrefix::kOutside;
    open_type = std::string(parts->type);
  }
  return out;
}

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct BioParseResult {
  std::vector<LabeledSentence> sentences;
  std::size_t repaired_tags = 0;
};

/// Parses `token<TAB>tag` lines with blank-line sentence separators.
inline BioParseResult parse_bio(std::string_view bytes) {
  decode_utf8(bytes);  // validates the whole file up front
  BioParseResult result;
  std::vector<std::string> words;
  std::vector<std::string> tags;
  auto flush = [&] {
    if (words.empty()) return;
    LabeledSentence ls;
    ls.sentence = Sentence::from_tokens(words);
    ls.tags = bio_normalize(tags, &result.repaired_tags);
    result.sentences.push_back(std::move(ls));
    words.clear();
    tags.clear();
  };
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    ++line_no;
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos) eol = bytes.size();
    std::string_view line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      flush();
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0 || line.find('\t', tab + 1) != std::string_view::npos) {
      throw FormatError("expected 'token<TAB>tag'", line_no);
    }
    const std::string_view word = line.substr(0, tab);
    const std::string_view tag = line.substr(tab + 1);
    for (char32_t cp : decode_utf8(word)) {
      if (is_space(cp)) throw FormatError("token contains whitespace", line_no);
    }
    if (!parse_tag(tag)) throw FormatError("unknown tag shape '" + std::string(tag) + "'", line_no);
    words.emplace_back(word);
    tags.emplace_back(tag);
  }
  flush();
  return result;
}

inline std::string serialize_bio(std::span<const LabeledSentence> sentences) {
  std::string out;
  for (const auto& ls : sentences) {
    for (std::size_t i = 0; i < ls.sentence.tokens.size(); ++i) {
      out += ls.sentence.tokens[i].text;
      out.push_back('\t');
      out += ls.tags.at(i);
      out.push_back('\n');
    }
    out.push_back('\n');
  }
  return out;
}

// ---------------------------------------------------------------------------
// Character vocabulary

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class CharVocabulary {
 public:
  static constexpr int kUnknown = 0;
  static constexpr int kBoundary = 1;
  static constexpr int kPad = 2;
  static constexpr int kReserved = 3;

  CharVocabulary() = default;

  /// `chars` in id order; the first gets id kReserved.
  explicit CharVocabulary(std::vector<char32_t> chars) : chars_(std::move(chars)) {
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (!ids_.emplace(chars_[i], static_cast<int>(i) + kReserved).second) {
        throw std::invalid_argument("duplicate character in vocabulary");
      }
    }
  }

  int id(char32_t cp) const {
    const auto it = ids_.find(cp);
    return it == ids_.end() ? kUnknown : it->second;
  }

  bool contains(char32_t cp) const { return ids_.count(cp) != 0; }
  int size() const { return static_cast<int>(chars_.size()) + kReserved; }
  const std::vector<char32_t>& chars() const { return chars_; }

  std::vector<int> encode(std::u32string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char32_t cp : text) out.push_back(id(cp));
    return out;
  }

  /// Comma-separated hexadecimal code points in id order.
  std::string serialize() const {
    std::string out;
    char buf[16];
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (i) out.push_back(',');
      std::snprintf(buf, sizeof buf, "%x", static_cast<unsigned>(chars_[i]));
      out += buf;
    }
    return out;
  }

  static CharVocabulary deserialize(std::string_view text) {
    std::vector<char32_t> chars;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t comma = text.find(',', pos);
      if (comma == std::string_view::npos) comma = text.size();
      const std::string item(text.substr(pos, comma - pos));
      std::size_t used = 0;
      unsigned long value = 0;
      try {
        value = std::stoul(item, &used, 16);
      } catch (const std::exception&) {
        used = 0;
      }
      if (item.empty() || used != item.size() || value > 0x10FFFF) {
        throw std::invalid_argument("bad character vocabulary entry '" + item + "'");
      }
      chars.push_back(static_cast<char32_t>(value));
      pos = comma + 1;
    }
    return CharVocabulary(std::move(chars));
  }

  std::uint64_t digest() const { return fnv1a(serialize()); }

  bool operator==(const CharVocabulary& other) const { return chars_ == other.chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> ids_;
};

/// Characters seen at least `min_count` times, by descending count then code point.
/// Counts are taken over the space-joined token text of each sentence.
inline CharVocabulary build_char_vocab(std::span<const Sentence> corpus, std::size_t min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be at least 1");
  std::map<char32_t, std::size_t> counts;
  for (const auto& sentence : corpus) {
    for (char32_t cp : spaced_text(sentence)) ++counts[cp];
  }
  if (counts.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<char32_t, std::size_t>> kept;
  for (const auto& [cp, count] : counts) {
    if (count >= min_count) kept.emplace_back(cp, count);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<char32_t> chars;
  chars.reserve(kept.size());
  for (const auto& entry : kept) chars.push_back(entry.first);
  return CharVocabulary(std::move(chars));
}

// ---------------------------------------------------------------------------
// Tag inventory

/// {B-X, I-X} per entity type in lexicographic type order, then O.
class TagSet {
 public:
  TagSet() { rebuild(); }

  explicit TagSet(std::vector<std::string> entity_types) : types_(std::move(entity_types)) {
    std::sort(types_.begin(), types_.end());
    types_.erase(std::unique(types_.begin(), types_.end()), types_.end());
    for (const auto& type : types_) {
      if (type.empty()) throw std::invalid_argument("empty entity type");
    }
    rebuild();
  }

  static TagSet from_data(std::span<const LabeledSentence> data) {
    std::vector<std::string> types;
    for (const auto& ls : data) {
      for (const auto& tag : ls.tags) {
        const auto parts = parse_tag(tag);
        if (!parts) throw std::invalid_argument("malformed BIO tag '" + tag + "'");
        if (parts->prefix != TagPrefix::kOutside) types.emplace_back(parts->type);
      }
    }
    return TagSet(std::move(types));
  }

  const std::vector<std::string>& entity_types() const { return types_; }
  const std::vector<std::string>& tags() const { return tags_; }
  int size() const { return static_cast<int>(tags_.size()); }
  int outside() const { return size() - 1; }
  const std::string& tag(int id) const { return tags_.at(static_cast<std::size_t>(id)); }

  std::optional<int> index_of(std::string_view tag) const {
    const auto it = index_.find(std::string(tag));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const TagSet& other) const { return types_ == other.types_; }

 private:
  void rebuild() {
    tags_.clear();
    index_.clear();
    for (const auto& type : types_) {
      tags_.push_back("B-" + type);
      tags_.push_back("I-" + type);
    }
    tags_.push_back("O");
    for (std::size_t i = 0; i < tags_.size(); ++i) index_[tags_[i]] = static_cast<int>(i);
  }

  std::vector<std::string> types_;
  std::vector<std::string> tags_;
  std::map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Pretraining corpus selection

struct Document {
  std::string id;
  std::string text;

  bool operator==(const Document&) const = default;
};

inline const std::vector<std::string>& default_case_report_keywords() {
  static const std::vector<std::string> keywords = {"case report", "clinical report"};
  return keywords;
}

/// Keeps, in order, documents whose lowercased text contains any lowercased keyword.
inline std::vector<Document> filter_case_reports(
    std::span<const Document> documents,
    std::span<const std::string> keywords = default_case_report_keywords()) {
  if (keywords.empty()) throw std::invalid_argument("keyword list must not be empty");
  std::vector<std::string> lowered;
  for (const auto& k : keywords) lowered.push_back(to_lower_utf8(k));
  std::vector<Document> kept;
  for (const auto& doc : documents) {
    const std::string text = to_lower_utf8(doc.text);
    const bool hit = std::any_of(lowered.begin(), lowered.end(), [&](const std::string& k) {
      return text.find(k) != std::string::npos;
    });
    if (hit) kept.push_back(doc);
  }
  return kept;
}

/// Line-delimited documents; ids are 1-based line numbers. Blank lines skipped.
inline std::vector<Document> split_line_documents(std::string_view text) {
  std::vector<Document> docs;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      docs.push_back(Document{std::to_string(line_no), std::string(line)});
    }
    if (eol == text.size()) break;
    pos = eol + 1;
  }
  return docs;
}

}  // namespace cner
