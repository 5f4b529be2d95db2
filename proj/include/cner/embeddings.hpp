#pragma once

#include <charconv>
#include <cstddef>
#include <cstdio>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cner/char_lm.hpp"
#include "cner/container.hpp"
#include "cner/tensor.hpp"
#include "cner/text_corpus.hpp"
#include "cner/utf8.hpp"
#include "cner/word_lm.hpp"

namespace cner {

// ---------------------------------------------------------------------------
// Static word vectors

enum class OovPolicy { kZeros, kMean };

inline OovPolicy parse_oov_policy(std::string_view text) {
  if (text == "zeros") return OovPolicy::kZeros;
  if (text == "mean") return OovPolicy::kMean;
  throw std::invalid_argument("unknown OOV policy '" + std::string(text) + "' (expected zeros or mean)");
}

inline const char* to_string(OovPolicy p) { return p == OovPolicy::kZeros ? "zeros" : "mean"; }

class LexiconFormatError : public std::runtime_error {
 public:
  LexiconFormatError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Text format: one entry per line, the word then `dim` floats, separated by
/// spaces. The dimension comes from the first entry. Values are written with
/// 6 significant digits.
class StaticLexicon {
 public:
  StaticLexicon() = default;

  static StaticLexicon parse(std::string_view text, OovPolicy oov = OovPolicy::kZeros) {
    StaticLexicon lex;
    lex.oov_ = oov;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      std::string_view line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      const auto fields = split_fields(line);
      if (fields.empty()) continue;
      if (fields.size() < 2) throw LexiconFormatError("entry has no vector values", line_no);
      const std::size_t dim = fields.size() - 1;
      if (lex.dim_ == 0) {
        lex.dim_ = dim;
      } else if (dim != lex.dim_) {
        throw LexiconFormatError("expected " + std::to_string(lex.dim_) + " values, found " + std::to_string(dim),
                                 line_no);
      }
      std::vector<float> v(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        const auto f = fields[k + 1];
        const auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v[k]);
        if (ec != std::errc() || end != f.data() + f.size()) {
          throw LexiconFormatError("non-numeric value '" + std::string(f) + "'", line_no);
        }
      }
      lex.insert(std::string(fields[0]), std::move(v));
    }
    if (lex.dim_ == 0) throw LexiconFormatError("no entries", line_no);
    lex.refresh_mean();
    return lex;
  }

  static StaticLexicon load(const std::string& path, OovPolicy oov = OovPolicy::kZeros) {
    return parse(read_file_bytes(path), oov);
  }

  std::string serialize() const {
    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < words_.size(); ++i) {
      out += words_[i];
      for (float v : vector_at(i)) {
        std::snprintf(buf, sizeof buf, " %.6g", static_cast<double>(v));
        out += buf;
      }
      out.push_back('\n');
    }
    return out;
  }

  void save(const std::string& path) const { write_file_bytes(path, serialize()); }

  /// Adds or replaces an entry.
  void insert(std::string word, std::vector<float> v) {
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_ || dim_ == 0) throw nn::DimensionError("vector for '" + word + "' has the wrong dimension");
    const auto it = index_.find(word);
    if (it != index_.end()) {
      ++duplicates_;
      std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
    } else {
      index_.emplace(word, words_.size());
      words_.push_back(std::move(word));
      data_.insert(data_.end(), v.begin(), v.end());
    }
    refresh_mean();
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  /// Entries replaced by a later line of the same word.
  std::size_t duplicates() const { return duplicates_; }
  OovPolicy oov_policy() const { return oov_; }
  void set_oov_policy(OovPolicy p) { oov_ = p; }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  /// Exact match, then lowercase match, then the OOV vector.
  std::span<const float> lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) {
      try {
        it = index_.find(to_lower_utf8(token));
      } catch (const Utf8Error&) {
        it = index_.end();
      }
    }
    if (it != index_.end()) return vector_at(it->second);
    return oov_ == OovPolicy::kZeros ? std::span<const float>(zeros_) : std::span<const float>(mean_);
  }

  bool operator==(const StaticLexicon& o) const {
    return dim_ == o.dim_ && words_ == o.words_ && data_ == o.data_ && oov_ == o.oov_;
  }

 private:
  static std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
      if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
  }

  std::span<const float> vector_at(std::size_t i) const {
    return std::span<const float>(data_.data() + i * dim_, dim_);
  }

  void refresh_mean() {
    zeros_.assign(dim_, 0.0f);
    mean_.assign(dim_, 0.0f);
    if (words_.empty()) return;
    std::vector<double> acc(dim_, 0.0);
    for (std::size_t i = 0; i < words_.size(); ++i) {
      for (std::size_t k = 0; k < dim_; ++k) acc[k] += data_[i * dim_ + k];
    }
    for (std::size_t k = 0; k < dim_; ++k) mean_[k] = static_cast<float>(acc[k] / static_cast<double>(words_.size()));
  }

  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
  std::vector<float> zeros_;
  std::vector<float> mean_;
  std::size_t duplicates_ = 0;
  OovPolicy oov_ = OovPolicy::kZeros;
};

// ---------------------------------------------------------------------------
// Stack specification: `kind:path[;key=value...]` members joined by ','.
// Paths may not contain ',' or ';'.

struct MemberSpec {
  std::string kind;  // static | char_lm | word_lm
  std::string path;
  std::map<std::string, std::string> options;

  bool operator==(const MemberSpec&) const = default;
};

struct StackSpec {
  std::vector<MemberSpec> members;

  static StackSpec parse(std::string_view text) {
    StackSpec spec;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t comma = text.find(',', pos);
      if (comma == std::string_view::npos) comma = text.size();
      spec.members.push_back(parse_member(text.substr(pos, comma - pos)));
      if (comma == text.size()) break;
      pos = comma + 1;
    }
    return spec;
  }

  std::string to_string() const {
    std::string out;
    for (const auto& m : members) {
      if (!out.empty()) out.push_back(',');
      out += m.kind + ":" + m.path;
      for (const auto& [k, v] : m.options) out += ";" + k + "=" + v;
    }
    return out;
  }

  bool operator==(const StackSpec&) const = default;

 private:
  static MemberSpec parse_member(std::string_view text) {
    const std::size_t colon = text.find(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw std::invalid_argument("bad stack member '" + std::string(text) + "' (expected kind:path)");
    }
    MemberSpec m;
    m.kind = std::string(text.substr(0, colon));
    if (m.kind != "static" && m.kind != "char_lm" && m.kind != "word_lm") {
      throw std::invalid_argument("unknown stack member kind '" + m.kind + "'");
    }
    std::string_view rest = text.substr(colon + 1);
    std::size_t semi = rest.find(';');
    m.path = std::string(rest.substr(0, semi));
    if (m.path.empty()) throw std::invalid_argument("stack member '" + m.kind + "' has no path");
    while (semi != std::string_view::npos) {
      rest = rest.substr(semi + 1);
      semi = rest.find(';');
      const std::string_view opt = rest.substr(0, semi);
      const std::size_t eq = opt.find('=');
      if (eq == std::string_view::npos || eq == 0) {
        throw std::invalid_argument("bad stack member option '" + std::string(opt) + "'");
      }
      const std::string key(opt.substr(0, eq));
      const bool known = (m.kind == "static" && key == "oov") || (m.kind == "word_lm" && key == "mixing");
      if (!known) throw std::invalid_argument("option '" + key + "' does not apply to " + m.kind + " members");
      m.options[key] = std::string(opt.substr(eq + 1));
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Embedders

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string kind() const = 0;
  /// [tokens x dim]
  virtual nn::DenseArray<float> embed(const Sentence& sentence) const = 0;
};

class StaticEmbedder : public Embedder {
 public:
  explicit StaticEmbedder(std::shared_ptr<const StaticLexicon> lexicon) : lexicon_(std::move(lexicon)) {}
  std::size_t dim() const override { return lexicon_->dim(); }
  std::string kind() const override { return "static"; }
  nn::DenseArray<float> embed(const Sentence& sentence) const override {
    nn::DenseArray<float> out({sentence.tokens.size(), dim()});
    for (std::size_t k = 0; k < sentence.tokens.size(); ++k) {
      const auto v = lexicon_->lookup(sentence.tokens[k].text);
      std::copy(v.begin(), v.end(), out.row(k).begin());
    }
    return out;
  }
  const StaticLexicon& lexicon() const { return *lexicon_; }

 private:
  std::shared_ptr<const StaticLexicon> lexicon_;
};

class CharLMEmbedder : public Embedder {
 public:
  explicit CharLMEmbedder(std::shared_ptr<const CharLMModel> model) : model_(std::move(model)) {}
  std::size_t dim() const override { return model_->embedding_dim(); }
  std::string kind() const override { return "char_lm"; }
  nn::DenseArray<float> embed(const Sentence& sentence) const override {
    if (sentence.tokens.empty()) return nn::DenseArray<float>({0, dim()});
    return embed_words_flair(*model_, sentence);
  }

 private:
  std::shared_ptr<const CharLMModel> model_;
};

class WordLMEmbedder : public Embedder {
 public:
  WordLMEmbedder(std::shared_ptr<const WordLMModel> model, LayerMixing mixing)
      : model_(std::move(model)), mixing_(std::move(mixing)) {
    mixing_.resolve(model_->config().layers);
  }
  std::size_t dim() const override { return model_->embedding_dim(); }
  std::string kind() const override { return "word_lm"; }
  nn::DenseArray<float> embed(const Sentence& sentence) const override {
    if (sentence.tokens.empty()) return nn::DenseArray<float>({0, dim()});
    return embed_words_elmo(*model_, sentence, mixing_);
  }

 private:
  std::shared_ptr<const WordLMModel> model_;
  LayerMixing mixing_;
};

class StackMemberError : public std::runtime_error {
 public:
  StackMemberError(std::size_t index, const std::string& kind, const std::string& what)
      : std::runtime_error("stack member " + std::to_string(index) + " (" + kind + "): " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Concatenation of member outputs in member order.
class EmbedderStack {
 public:
  EmbedderStack() = default;
  explicit EmbedderStack(std::vector<std::shared_ptr<const Embedder>> members, std::string spec = {})
      : members_(std::move(members)), spec_(std::move(spec)) {
    if (members_.empty()) throw std::invalid_argument("embedder stack needs at least one member");
    for (const auto& m : members_) total_dim_ += m->dim();
  }

  std::size_t total_dim() const { return total_dim_; }
  std::size_t size() const { return members_.size(); }
  const Embedder& member(std::size_t i) const { return *members_.at(i); }
  const std::string& spec() const { return spec_; }

  /// Column offset of member i's block.
  std::size_t offset(std::size_t i) const {
    std::size_t off = 0;
    for (std::size_t m = 0; m < i; ++m) off += members_.at(m)->dim();
    return off;
  }

 private:
  std::vector<std::shared_ptr<const Embedder>> members_;
  std::string spec_;
  std::size_t total_dim_ = 0;
};

/// [tokens x total_dim]. A member failure is rethrown as StackMemberError.
inline nn::DenseArray<float> stack_embed(const EmbedderStack& stack, const Sentence& sentence) {
  const std::size_t n = sentence.tokens.size();
  nn::DenseArray<float> out({n, stack.total_dim()});
  std::size_t offset = 0;
  for (std::size_t m = 0; m < stack.size(); ++m) {
    const Embedder& member = stack.member(m);
    nn::DenseArray<float> block;
    try {
      block = member.embed(sentence);
    } catch (const std::exception& e) {
      throw StackMemberError(m, member.kind(), e.what());
    }
    if (block.rank() != 2 || block.dim(0) != n || block.dim(1) != member.dim()) {
      throw StackMemberError(m, member.kind(), "returned a block of unexpected shape");
    }
    for (std::size_t k = 0; k < n; ++k) {
      const auto src = block.row(k);
      std::copy(src.begin(), src.end(), out.row(k).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += member.dim();
  }
  return out;
}

/// Loads every member file named by the stack spec; kind mismatches and load errors
/// name the member.
inline EmbedderStack load_stack(const StackSpec& spec) {
  if (spec.members.empty()) throw std::invalid_argument("empty stack spec");
  std::vector<std::shared_ptr<const Embedder>> members;
  for (std::size_t i = 0; i < spec.members.size(); ++i) {
    const auto& m = spec.members[i];
    try {
      if (m.kind == "static") {
        const auto it = m.options.find("oov");
        const OovPolicy oov = it == m.options.end() ? OovPolicy::kZeros : parse_oov_policy(it->second);
        members.push_back(std::make_shared<StaticEmbedder>(
            std::make_shared<const StaticLexicon>(StaticLexicon::load(m.path, oov))));
      } else if (m.kind == "char_lm") {
        members.push_back(std::make_shared<CharLMEmbedder>(
            std::make_shared<const CharLMModel>(CharLMModel::from_container(load_container(m.path)))));
      } else {
        const auto it = m.options.find("mixing");
        const LayerMixing mixing = it == m.options.end() ? LayerMixing::mean() : LayerMixing::parse(it->second);
        members.push_back(std::make_shared<WordLMEmbedder>(
            std::make_shared<const WordLMModel>(WordLMModel::from_container(load_container(m.path))), mixing));
      }
    } catch (const std::exception& e) {
      throw StackMemberError(i, m.kind, e.what());
    }
  }
  return EmbedderStack(std::move(members), spec.to_string());
}

}  // namespace cner
