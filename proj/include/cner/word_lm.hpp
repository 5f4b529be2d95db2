#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cner/char_lm.hpp"
#include "cner/container.hpp"
#include "cner/layers.hpp"
#include "cner/optim.hpp"
#include "cner/rng.hpp"
#include "cner/tensor.hpp"
#include "cner/text_corpus.hpp"

namespace cner {

struct CnnFilter {
  std::size_t width = 1;
  std::size_t count = 1;

  bool operator==(const CnnFilter&) const = default;
};

inline std::string format_filters(const std::vector<CnnFilter>& filters) {
  std::string out;
  for (const auto& f : filters) {
    if (!out.empty()) out.push_back(',');
    out += std::to_string(f.width) + ":" + std::to_string(f.count);
  }
  return out;
}

/// Parses "width:count,width:count,...".
inline std::vector<CnnFilter> parse_filters(std::string_view text) {
  std::vector<CnnFilter> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    const std::string item(text.substr(pos, comma - pos));
    const std::size_t colon = item.find(':');
    std::size_t width = 0, count = 0;
    try {
      std::size_t used_w = 0, used_c = 0;
      if (colon == std::string::npos) throw std::invalid_argument("");
      width = std::stoul(item.substr(0, colon), &used_w);
      count = std::stoul(item.substr(colon + 1), &used_c);
      if (used_w != colon || used_c != item.size() - colon - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::invalid_argument("bad CNN filter spec '" + item + "' (expected width:count)");
    }
    if (width == 0 || count == 0) throw std::invalid_argument("CNN filter width and count must be positive");
    out.push_back({width, count});
    if (comma == text.size()) break;
    pos = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("empty CNN filter spec");
  return out;
}

struct WordLMConfig {
  std::size_t hidden_size = 2048;
  std::size_t projection_dim = 256;
  std::size_t layers = 2;
  std::size_t max_word_chars = 50;
  std::size_t char_embed_dim = 16;
  std::vector<CnnFilter> cnn_filters = {{1, 32}, {2, 32}, {3, 64}, {4, 64}, {5, 64}};
  std::size_t highway_layers = 1;
  std::size_t vocab_size = 25000;  // most frequent corpus words kept; <UNK>, <S>, </S> come on top
  std::string softmax = "full";
  double lr = 1.0;
  double anneal_factor = 4.0;
  int patience = 1;
  double clip_norm = 5.0;
  double min_lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t min_count = 1;  // character vocabulary threshold

  std::size_t filter_total() const {
    std::size_t total = 0;
    for (const auto& f : cnn_filters) total += f.count;
    return total;
  }

  std::size_t max_filter_width() const {
    std::size_t w = 0;
    for (const auto& f : cnn_filters) w = std::max(w, f.width);
    return w;
  }

  void validate() const {
    if (hidden_size == 0 || projection_dim == 0 || layers == 0 || max_word_chars == 0 || char_embed_dim == 0 ||
        vocab_size == 0 || batch_size == 0 || max_epochs == 0 || min_count == 0 || cnn_filters.empty()) {
      throw std::invalid_argument("word-LM sizes must be positive");
    }
    if (projection_dim > hidden_size) throw std::invalid_argument("projection_dim must not exceed hidden_size");
    if (softmax != "full") throw std::invalid_argument("only the full softmax is implemented");
    nn::SgdState{lr, anneal_factor, patience, clip_norm}.validate();
  }

  bool operator==(const WordLMConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Word vocabulary

class WordVocabulary {
 public:
  static constexpr int kUnknown = 0;
  static constexpr int kSentenceBegin = 1;
  static constexpr int kSentenceEnd = 2;
  static constexpr int kReserved = 3;

  WordVocabulary() = default;
  explicit WordVocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!ids_.emplace(words_[i], static_cast<int>(i) + kReserved).second) {
        throw std::invalid_argument("duplicate word '" + words_[i] + "' in vocabulary");
      }
    }
  }

  /// Top `max_words` words by descending count, ties in byte order.
  static WordVocabulary build(std::span<const Sentence> corpus, std::size_t max_words) {
    std::map<std::string, std::size_t> counts;
    for (const auto& s : corpus) {
      for (const auto& t : s.tokens) ++counts[t.text];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > max_words) ranked.resize(max_words);
    std::vector<std::string> words;
    for (auto& entry : ranked) words.push_back(std::move(entry.first));
    return WordVocabulary(std::move(words));
  }

  int id(const std::string& word) const {
    const auto it = ids_.find(word);
    return it == ids_.end() ? kUnknown : it->second;
  }
  int size() const { return static_cast<int>(words_.size()) + kReserved; }
  const std::vector<std::string>& words() const { return words_; }

  /// Length-prefixed list: `<bytes>:<word>` repeated.
  std::string serialize() const {
    std::string out;
    for (const auto& w : words_) out += std::to_string(w.size()) + ":" + w;
    return out;
  }

  static WordVocabulary deserialize(std::string_view text) {
    std::vector<std::string> words;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const std::size_t colon = text.find(':', pos);
      if (colon == std::string_view::npos) throw std::invalid_argument("bad word vocabulary encoding");
      std::size_t length = 0;
      for (std::size_t i = pos; i < colon; ++i) {
        if (text[i] < '0' || text[i] > '9') throw std::invalid_argument("bad word vocabulary length");
        length = length * 10 + static_cast<std::size_t>(text[i] - '0');
      }
      if (colon == pos || colon + 1 + length > text.size()) throw std::invalid_argument("bad word vocabulary length");
      words.emplace_back(text.substr(colon + 1, length));
      pos = colon + 1 + length;
    }
    return WordVocabulary(std::move(words));
  }

  bool operator==(const WordVocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// Character-CNN token encoder

template <class T>
struct ConvBank {
  std::size_t width = 1;
  nn::Parameter<T> weight;  // [count x width*char_dim]
  nn::Parameter<T> bias;    // [count]
};

template <class T>
struct HighwayLayer {
  nn::Parameter<T> transform_weight;  // [F x F]
  nn::Parameter<T> transform_bias;
  nn::Parameter<T> gate_weight;       // [F x F]
  nn::Parameter<T> gate_bias;
};

template <class T>
struct EncoderCache {
  std::vector<int> chars;
  std::vector<std::vector<std::size_t>> argmax;  // per bank, per filter: window start
  std::vector<std::vector<T>> pooled;            // per bank: tanh activation at the argmax
  std::vector<std::vector<T>> highway_in;        // per highway layer
  std::vector<std::vector<T>> highway_gate;
  std::vector<std::vector<T>> highway_value;
  std::vector<T> top;                            // input to the projection
};

/// Context-independent token vectors: character embeddings, convolution banks
/// with tanh and max-over-time pooling, highway layers, linear projection.
/// Words are framed by BOUNDARY on both sides after truncation to
/// max_word_chars, then padded with PAD up to the widest filter.
template <class T>
class TokenEncoder {
 public:
  TokenEncoder() = default;
  TokenEncoder(const CharVocabulary& vocab, const WordLMConfig& config)
      : char_vocab_size_(static_cast<std::size_t>(vocab.size())),
        max_word_chars_(config.max_word_chars),
        min_length_(config.max_filter_width()),
        embedding_("encoder.char_embedding", char_vocab_size_ + 2, config.char_embed_dim),
        projection_("encoder.projection.weight", {config.projection_dim, config.filter_total()}),
        projection_bias_("encoder.projection.bias", {config.projection_dim}) {
    const std::size_t e = config.char_embed_dim;
    for (std::size_t b = 0; b < config.cnn_filters.size(); ++b) {
      const auto& f = config.cnn_filters[b];
      const std::string prefix = "encoder.conv" + std::to_string(b);
      banks_.push_back(ConvBank<T>{f.width, nn::Parameter<T>(prefix + ".weight", {f.count, f.width * e}),
                                   nn::Parameter<T>(prefix + ".bias", {f.count})});
    }
    const std::size_t total = config.filter_total();
    for (std::size_t h = 0; h < config.highway_layers; ++h) {
      const std::string prefix = "encoder.highway" + std::to_string(h);
      highways_.push_back(HighwayLayer<T>{nn::Parameter<T>(prefix + ".transform.weight", {total, total}),
                                          nn::Parameter<T>(prefix + ".transform.bias", {total}),
                                          nn::Parameter<T>(prefix + ".gate.weight", {total, total}),
                                          nn::Parameter<T>(prefix + ".gate.bias", {total})});
    }
  }

  std::size_t output_dim() const { return projection_.value.dim(0); }
  int sentence_begin_id() const { return static_cast<int>(char_vocab_size_); }
  int sentence_end_id() const { return static_cast<int>(char_vocab_size_) + 1; }

  /// Gate biases start at -1 so highway layers initially favour carrying.
  void init(Rng& rng) {
    embedding_.init(rng);
    for (auto& bank : banks_) {
      nn::init_uniform(bank.weight.value, bank.weight.value.dim(1), rng);
      bank.bias.value.fill(T(0));
    }
    for (auto& h : highways_) {
      nn::init_uniform(h.transform_weight.value, h.transform_weight.value.dim(1), rng);
      h.transform_bias.value.fill(T(0));
      nn::init_uniform(h.gate_weight.value, h.gate_weight.value.dim(1), rng);
      h.gate_bias.value.fill(T(-1));
    }
    nn::init_uniform(projection_.value, projection_.value.dim(1), rng);
    projection_bias_.value.fill(T(0));
  }

  void collect(nn::ParameterList<T>& out) {
    embedding_.collect(out);
    for (auto& bank : banks_) {
      out.push_back(&bank.weight);
      out.push_back(&bank.bias);
    }
    for (auto& h : highways_) {
      out.push_back(&h.transform_weight);
      out.push_back(&h.transform_bias);
      out.push_back(&h.gate_weight);
      out.push_back(&h.gate_bias);
    }
    out.push_back(&projection_);
    out.push_back(&projection_bias_);
  }

  /// Character ids of a word after truncation, framing and padding.
  std::vector<int> word_chars(const CharVocabulary& vocab, std::string_view word) const {
    std::u32string text = decode_utf8(word);
    if (text.size() > max_word_chars_) text.resize(max_word_chars_);
    std::vector<int> ids{CharVocabulary::kBoundary};
    for (char32_t cp : text) ids.push_back(vocab.id(cp));
    ids.push_back(CharVocabulary::kBoundary);
    return pad(std::move(ids));
  }

  std::vector<int> marker_chars(int marker) const {
    return pad({CharVocabulary::kBoundary, marker, CharVocabulary::kBoundary});
  }

  std::vector<T> encode(const std::vector<int>& chars, EncoderCache<T>* cache) const {
    const std::size_t e = embedding_.dim();
    std::vector<T> pooled_all;
    if (cache) {
      cache->chars = chars;
      cache->argmax.assign(banks_.size(), {});
      cache->pooled.assign(banks_.size(), {});
    }
    std::vector<T> window;
    for (std::size_t b = 0; b < banks_.size(); ++b) {
      const auto& bank = banks_[b];
      const std::size_t count = bank.weight.value.dim(0);
      const std::size_t positions = chars.size() - bank.width + 1;
      std::vector<T> best(count, -std::numeric_limits<T>::infinity());
      std::vector<std::size_t> where(count, 0);
      std::vector<T> act(count);
      window.resize(bank.width * e);
      for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t k = 0; k < bank.width; ++k) {
          const auto row = embedding_.lookup(static_cast<std::size_t>(chars[p + k]));
          std::copy(row.begin(), row.end(), window.begin() + static_cast<std::ptrdiff_t>(k * e));
        }
        nn::affine(bank.weight.value, bank.bias.value, std::span<const T>(window), std::span<T>(act));
        for (std::size_t j = 0; j < count; ++j) {
          const T a = std::tanh(act[j]);
          if (a > best[j]) {
            best[j] = a;
            where[j] = p;
          }
        }
      }
      if (cache) {
        cache->argmax[b] = where;
        cache->pooled[b] = best;
      }
      pooled_all.insert(pooled_all.end(), best.begin(), best.end());
    }
    std::vector<T> y = std::move(pooled_all);
    const std::size_t f = y.size();
    if (cache) {
      cache->highway_in.clear();
      cache->highway_gate.clear();
      cache->highway_value.clear();
    }
    for (const auto& h : highways_) {
      std::vector<T> gate(f), value(f);
      nn::affine(h.gate_weight.value, h.gate_bias.value, std::span<const T>(y), std::span<T>(gate));
      nn::affine(h.transform_weight.value, h.transform_bias.value, std::span<const T>(y), std::span<T>(value));
      std::vector<T> next(f);
      for (std::size_t j = 0; j < f; ++j) {
        gate[j] = nn::sigmoid(gate[j]);
        value[j] = std::tanh(value[j]);
        next[j] = gate[j] * value[j] + (T(1) - gate[j]) * y[j];
      }
      if (cache) {
        cache->highway_in.push_back(y);
        cache->highway_gate.push_back(gate);
        cache->highway_value.push_back(value);
      }
      y = std::move(next);
    }
    std::vector<T> out(output_dim());
    nn::affine(projection_.value, projection_bias_.value, std::span<const T>(y), std::span<T>(out));
    if (cache) cache->top = std::move(y);
    return out;
  }

  void backward(const EncoderCache<T>& cache, std::span<const T> d_out) {
    const std::size_t e = embedding_.dim();
    std::vector<T> dy(cache.top.size(), T(0));
    nn::affine_backward(projection_.value, std::span<const T>(cache.top), d_out, projection_.grad, &projection_bias_.grad,
                        std::span<T>(dy));
    for (std::size_t hi = highways_.size(); hi-- > 0;) {
      auto& h = highways_[hi];
      const auto& y_in = cache.highway_in[hi];
      const auto& gate = cache.highway_gate[hi];
      const auto& value = cache.highway_value[hi];
      const std::size_t f = y_in.size();
      std::vector<T> dz_gate(f), dz_value(f), dy_in(f);
      for (std::size_t j = 0; j < f; ++j) {
        dz_gate[j] = dy[j] * (value[j] - y_in[j]) * gate[j] * (T(1) - gate[j]);
        dz_value[j] = dy[j] * gate[j] * (T(1) - value[j] * value[j]);
        dy_in[j] = dy[j] * (T(1) - gate[j]);
      }
      nn::affine_backward(h.gate_weight.value, std::span<const T>(y_in), std::span<const T>(dz_gate), h.gate_weight.grad,
                          &h.gate_bias.grad, std::span<T>(dy_in));
      nn::affine_backward(h.transform_weight.value, std::span<const T>(y_in), std::span<const T>(dz_value),
                          h.transform_weight.grad, &h.transform_bias.grad, std::span<T>(dy_in));
      dy = std::move(dy_in);
    }
    std::size_t offset = 0;
    std::vector<T> window, dwindow;
    for (std::size_t b = 0; b < banks_.size(); ++b) {
      auto& bank = banks_[b];
      const std::size_t count = bank.weight.value.dim(0);
      const std::size_t span = bank.width * e;
      window.resize(span);
      for (std::size_t j = 0; j < count; ++j) {
        const T a = cache.pooled[b][j];
        const T dpre = dy[offset + j] * (T(1) - a * a);
        bank.bias.grad[j] += dpre;
        if (dpre == T(0)) continue;
        const std::size_t p = cache.argmax[b][j];
        T* dw = bank.weight.grad.data() + j * span;
        const T* w = bank.weight.value.data() + j * span;
        for (std::size_t k = 0; k < bank.width; ++k) {
          const std::size_t id = static_cast<std::size_t>(cache.chars[p + k]);
          const auto row = embedding_.lookup(id);
          auto grow = embedding_.table.grad.row(id);
          for (std::size_t d = 0; d < e; ++d) {
            dw[k * e + d] += dpre * row[d];
            grow[d] += dpre * w[k * e + d];
          }
        }
      }
      offset += count;
    }
  }

 private:
  std::vector<int> pad(std::vector<int> ids) const {
    while (ids.size() < min_length_) ids.push_back(CharVocabulary::kPad);
    return ids;
  }

  std::size_t char_vocab_size_ = 0;
  std::size_t max_word_chars_ = 50;
  std::size_t min_length_ = 1;
  nn::Embedding<T> embedding_;
  std::vector<ConvBank<T>> banks_;
  std::vector<HighwayLayer<T>> highways_;
  nn::Parameter<T> projection_;
  nn::Parameter<T> projection_bias_;
};

// ---------------------------------------------------------------------------
// Model

template <class T>
class WordLanguageModel {
 public:
  WordLanguageModel(CharVocabulary chars, WordVocabulary words, WordLMConfig config)
      : chars_(std::move(chars)), words_(std::move(words)), config_(std::move(config)) {
    config_.validate();
    encoder_ = TokenEncoder<T>(chars_, config_);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      forward_.emplace_back("forward.layer" + std::to_string(l), config_.projection_dim, config_.hidden_size,
                            config_.projection_dim);
    }
    for (std::size_t l = 0; l < config_.layers; ++l) {
      backward_.emplace_back("backward.layer" + std::to_string(l), config_.projection_dim, config_.hidden_size,
                             config_.projection_dim);
    }
    softmax_ = nn::SoftmaxLayer<T>("softmax", config_.projection_dim, static_cast<std::size_t>(words_.size()));
  }

  void init(Rng& rng) {
    encoder_.init(rng);
    for (auto& layer : forward_) layer.init(rng);
    for (auto& layer : backward_) layer.init(rng);
    softmax_.init(rng);
  }

  const CharVocabulary& char_vocab() const { return chars_; }
  const WordVocabulary& word_vocab() const { return words_; }
  const WordLMConfig& config() const { return config_; }
  TokenEncoder<T>& encoder() { return encoder_; }
  const TokenEncoder<T>& encoder() const { return encoder_; }
  std::vector<nn::LstmLayer<T>>& forward_layers() { return forward_; }
  std::vector<nn::LstmLayer<T>>& backward_layers() { return backward_; }
  const std::vector<nn::LstmLayer<T>>& forward_layers() const { return forward_; }
  const std::vector<nn::LstmLayer<T>>& backward_layers() const { return backward_; }

  /// Both directions score their predictions through this one layer.
  nn::SoftmaxLayer<T>& forward_softmax() { return softmax_; }
  nn::SoftmaxLayer<T>& backward_softmax() { return softmax_; }

  /// Per-token output dimension of word extraction.
  std::size_t embedding_dim() const { return 2 * config_.projection_dim; }

  nn::ParameterList<T> parameters() {
    nn::ParameterList<T> out;
    encoder_.collect(out);
    for (auto& layer : forward_) layer.collect(out);
    for (auto& layer : backward_) layer.collect(out);
    softmax_.collect(out);
    return out;
  }

  std::vector<int> token_chars(const std::string& word) const { return encoder_.word_chars(chars_, word); }

  ModelContainer to_container() const {
    ModelContainer c;
    c.metadata["kind"] = "word_lm";
    c.metadata["char_vocab"] = chars_.serialize();
    c.metadata["char_vocab_digest"] = std::to_string(chars_.digest());
    c.metadata["word_vocab"] = words_.serialize();
    c.metadata["word_vocab_digest"] = std::to_string(fnv1a(words_.serialize()));
    c.metadata["config.hidden_size"] = std::to_string(config_.hidden_size);
    c.metadata["config.projection_dim"] = std::to_string(config_.projection_dim);
    c.metadata["config.layers"] = std::to_string(config_.layers);
    c.metadata["config.max_word_chars"] = std::to_string(config_.max_word_chars);
    c.metadata["config.char_embed_dim"] = std::to_string(config_.char_embed_dim);
    c.metadata["config.cnn_filters"] = format_filters(config_.cnn_filters);
    c.metadata["config.highway_layers"] = std::to_string(config_.highway_layers);
    c.metadata["config.vocab_size"] = std::to_string(config_.vocab_size);
    c.metadata["config.softmax"] = config_.softmax;
    c.metadata["config.lr"] = format_double(config_.lr);
    c.metadata["config.anneal_factor"] = format_double(config_.anneal_factor);
    c.metadata["config.patience"] = std::to_string(config_.patience);
    c.metadata["config.clip_norm"] = format_double(config_.clip_norm);
    c.metadata["config.min_lr"] = format_double(config_.min_lr);
    c.metadata["config.batch_size"] = std::to_string(config_.batch_size);
    c.metadata["config.max_epochs"] = std::to_string(config_.max_epochs);
    c.metadata["config.min_count"] = std::to_string(config_.min_count);
    store_parameters(c, const_cast<WordLanguageModel&>(*this).parameters());
    return c;
  }

  static WordLanguageModel from_container(const ModelContainer& c) {
    c.expect_kind("word_lm");
    CharVocabulary chars = CharVocabulary::deserialize(c.get("char_vocab"));
    if (std::to_string(chars.digest()) != c.get("char_vocab_digest")) {
      throw ContainerError("character vocabulary digest mismatch");
    }
    WordVocabulary words = WordVocabulary::deserialize(c.get("word_vocab"));
    if (std::to_string(fnv1a(words.serialize())) != c.get("word_vocab_digest")) {
      throw ContainerError("word vocabulary digest mismatch");
    }
    WordLMConfig config;
    config.hidden_size = static_cast<std::size_t>(metadata_int(c, "config.hidden_size"));
    config.projection_dim = static_cast<std::size_t>(metadata_int(c, "config.projection_dim"));
    config.layers = static_cast<std::size_t>(metadata_int(c, "config.layers"));
    config.max_word_chars = static_cast<std::size_t>(metadata_int(c, "config.max_word_chars"));
    config.char_embed_dim = static_cast<std::size_t>(metadata_int(c, "config.char_embed_dim"));
    config.cnn_filters = parse_filters(c.get("config.cnn_filters"));
    config.highway_layers = static_cast<std::size_t>(metadata_int(c, "config.highway_layers"));
    config.vocab_size = static_cast<std::size_t>(metadata_int(c, "config.vocab_size"));
    config.softmax = c.get("config.softmax");
    config.lr = metadata_double(c, "config.lr");
    config.anneal_factor = metadata_double(c, "config.anneal_factor");
    config.patience = static_cast<int>(metadata_int(c, "config.patience"));
    config.clip_norm = metadata_double(c, "config.clip_norm");
    config.min_lr = metadata_double(c, "config.min_lr");
    config.batch_size = static_cast<std::size_t>(metadata_int(c, "config.batch_size"));
    config.max_epochs = static_cast<std::size_t>(metadata_int(c, "config.max_epochs"));
    config.min_count = static_cast<std::size_t>(metadata_int(c, "config.min_count"));
    WordLanguageModel model(std::move(chars), std::move(words), config);
    load_parameters(c, model.parameters());
    return model;
  }

 private:
  CharVocabulary chars_;
  WordVocabulary words_;
  WordLMConfig config_;
  TokenEncoder<T> encoder_;
  std::vector<nn::LstmLayer<T>> forward_;
  std::vector<nn::LstmLayer<T>> backward_;
  nn::SoftmaxLayer<T> softmax_;
};

using WordLMModel = WordLanguageModel<float>;

/// Encoder output for each token of the sentence, context-independent.
template <class T>
nn::DenseArray<T> encode_tokens(const WordLanguageModel<T>& model, const Sentence& sentence) {
  if (sentence.tokens.empty()) throw std::invalid_argument("encode_tokens needs at least one token");
  nn::DenseArray<T> out({sentence.tokens.size(), model.config().projection_dim});
  for (std::size_t k = 0; k < sentence.tokens.size(); ++k) {
    const auto v = model.encoder().encode(model.token_chars(sentence.tokens[k].text), nullptr);
    std::copy(v.begin(), v.end(), out.row(k).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

struct BilmLoss {
  double forward_nats = 0.0;
  double backward_nats = 0.0;
  std::size_t forward_count = 0;
  std::size_t backward_count = 0;
  std::size_t skipped_empty = 0;

  double forward_mean() const { return forward_count ? forward_nats / static_cast<double>(forward_count) : 0.0; }
  double backward_mean() const { return backward_count ? backward_nats / static_cast<double>(backward_count) : 0.0; }
  /// Nats per token, mean of the two directions.
  double mean() const { return 0.5 * (forward_mean() + backward_mean()); }
};

namespace detail {

/// The LM view of a sentence: <S>, tokens, </S>, with per-position character
/// ids and word targets.
struct BilmSequence {
  std::vector<std::vector<int>> chars;
  std::vector<int> targets;
};

template <class T>
BilmSequence bilm_sequence(const WordLanguageModel<T>& model, const Sentence& sentence) {
  BilmSequence seq;
  seq.chars.push_back(model.encoder().marker_chars(model.encoder().sentence_begin_id()));
  seq.targets.push_back(WordVocabulary::kSentenceBegin);
  for (const auto& t : sentence.tokens) {
    seq.chars.push_back(model.token_chars(t.text));
    seq.targets.push_back(model.word_vocab().id(t.text));
  }
  seq.chars.push_back(model.encoder().marker_chars(model.encoder().sentence_end_id()));
  seq.targets.push_back(WordVocabulary::kSentenceEnd);
  return seq;
}

template <class T>
std::pair<double, std::size_t> bilm_direction(std::vector<nn::LstmLayer<T>>& layers, nn::SoftmaxLayer<T>& softmax,
                                              const std::vector<std::vector<T>>& inputs,
                                              const std::vector<int>& targets, bool accumulate, T scale,
                                              std::vector<std::vector<T>>* d_inputs) {
  std::vector<std::vector<std::vector<T>>> layer_inputs;
  std::vector<std::vector<nn::LstmStepCache<T>>> caches(layers.size());
  std::vector<std::vector<T>> h = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto state = layers[l].zero_state();
    if (accumulate) layer_inputs.push_back(h);
    h = layers[l].forward(h, state, accumulate ? &caches[l] : nullptr);
  }
  double nats = 0.0;
  std::vector<T> scratch;
  std::vector<std::vector<T>> dh(accumulate ? h.size() : 0, std::vector<T>(softmax.input_dim(), T(0)));
  for (std::size_t t = 0; t < targets.size(); ++t) {
    nats += softmax.loss(std::span<const T>(h[t]), static_cast<std::size_t>(targets[t]), scratch, scale,
                         accumulate ? std::span<T>(dh[t]) : std::span<T>(), accumulate);
  }
  if (accumulate) {
    for (std::size_t l = layers.size(); l-- > 0;) dh = layers[l].backward(caches[l], dh);
    *d_inputs = std::move(dh);
  }
  return {nats, targets.size()};
}

}  // namespace detail

/// Forward stack predicts each next token from <S> t1..tk; backward stack
/// predicts each previous token over the reversed sequence. Empty sentences
/// are skipped and counted. With `accumulate_grad`, adds the gradient of
/// mean() into the parameters.
template <class T>
BilmLoss bilm_loss(WordLanguageModel<T>& model, std::span<const Sentence> batch, bool accumulate_grad) {
  BilmLoss loss;
  std::vector<detail::BilmSequence> seqs;
  for (const auto& s : batch) {
    if (s.tokens.empty()) {
      ++loss.skipped_empty;
      continue;
    }
    seqs.push_back(detail::bilm_sequence(model, s));
  }
  std::size_t predictions = 0;
  for (const auto& q : seqs) predictions += q.targets.size() - 1;
  if (predictions == 0) return loss;
  const T scale = T(0.5) / static_cast<T>(predictions);

  // Unique token character sequences are encoded once per batch.
  std::map<std::vector<int>, std::size_t> unique;
  std::vector<const std::vector<int>*> unique_chars;
  for (const auto& q : seqs) {
    for (const auto& c : q.chars) {
      if (unique.emplace(c, unique_chars.size()).second) unique_chars.push_back(&unique.find(c)->first);
    }
  }
  std::vector<EncoderCache<T>> enc_cache(accumulate_grad ? unique_chars.size() : 0);
  std::vector<std::vector<T>> encoded(unique_chars.size());
  for (std::size_t u = 0; u < unique_chars.size(); ++u) {
    encoded[u] = model.encoder().encode(*unique_chars[u], accumulate_grad ? &enc_cache[u] : nullptr);
  }
  std::vector<std::vector<T>> d_encoded(accumulate_grad ? unique_chars.size() : 0,
                                        std::vector<T>(model.config().projection_dim, T(0)));

  for (const auto& q : seqs) {
    const std::size_t n = q.chars.size();
    std::vector<std::size_t> slot(n);
    for (std::size_t i = 0; i < n; ++i) slot[i] = unique.find(q.chars[i])->second;

    std::vector<std::vector<T>> f_in, b_in;
    std::vector<int> f_tgt, b_tgt;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      f_in.push_back(encoded[slot[i]]);
      f_tgt.push_back(q.targets[i + 1]);
    }
    for (std::size_t i = n - 1; i >= 1; --i) {
      b_in.push_back(encoded[slot[i]]);
      b_tgt.push_back(q.targets[i - 1]);
    }
    std::vector<std::vector<T>> df, db;
    auto [fn, fc] = detail::bilm_direction(model.forward_layers(), model.forward_softmax(), f_in, f_tgt,
                                           accumulate_grad, scale, &df);
    auto [bn, bc] = detail::bilm_direction(model.backward_layers(), model.backward_softmax(), b_in, b_tgt,
                                           accumulate_grad, scale, &db);
    loss.forward_nats += fn;
    loss.forward_count += fc;
    loss.backward_nats += bn;
    loss.backward_count += bc;
    if (accumulate_grad) {
      for (std::size_t i = 0; i + 1 < n; ++i) {
        auto& d = d_encoded[slot[i]];
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += df[i][k];
      }
      for (std::size_t j = 0; j + 1 < n; ++j) {
        auto& d = d_encoded[slot[n - 1 - j]];
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += db[j][k];
      }
    }
  }
  if (accumulate_grad) {
    for (std::size_t u = 0; u < unique_chars.size(); ++u) {
      model.encoder().backward(enc_cache[u], std::span<const T>(d_encoded[u]));
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Contextual states and extraction

/// Layer outputs over <S> t1..tn </S>. forward[l][i] is the forward layer-l
/// output after consuming position i; backward[l][i] is the backward output
/// after consuming positions n+1 down to i.
template <class T>
struct BilmStates {
  std::vector<std::vector<T>> encoded;
  std::vector<std::vector<std::vector<T>>> forward;
  std::vector<std::vector<std::vector<T>>> backward;
};

template <class T>
BilmStates<T> bilm_states(const WordLanguageModel<T>& model, const Sentence& sentence) {
  const auto seq = detail::bilm_sequence(model, sentence);
  BilmStates<T> out;
  for (const auto& c : seq.chars) out.encoded.push_back(model.encoder().encode(c, nullptr));
  std::vector<std::vector<T>> h = out.encoded;
  for (const auto& layer : model.forward_layers()) {
    auto state = layer.zero_state();
    h = layer.forward(h, state, nullptr);
    out.forward.push_back(h);
  }
  h.assign(out.encoded.rbegin(), out.encoded.rend());
  for (const auto& layer : model.backward_layers()) {
    auto state = layer.zero_state();
    h = layer.forward(h, state, nullptr);
    out.backward.emplace_back(h.rbegin(), h.rend());
  }
  return out;
}

struct LayerMixing {
  enum class Kind { kMean, kTop, kWeights };
  Kind kind = Kind::kMean;
  std::vector<double> weights;

  static LayerMixing mean() { return {}; }
  static LayerMixing top() { return {Kind::kTop, {}}; }
  static LayerMixing explicit_weights(std::vector<double> w) { return {Kind::kWeights, std::move(w)}; }

  /// "mean", "top", or explicit weights "w0/w1/...".
  static LayerMixing parse(std::string_view text) {
    if (text == "mean") return mean();
    if (text == "top") return top();
    std::vector<double> w;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t comma = text.find('/', pos);
      if (comma == std::string_view::npos) comma = text.size();
      const std::string item(text.substr(pos, comma - pos));
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != item.size()) throw std::invalid_argument("bad layer mixing '" + std::string(text) + "'");
      w.push_back(v);
      if (comma == text.size()) break;
      pos = comma + 1;
    }
    return explicit_weights(std::move(w));
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::kMean: return "mean";
      case Kind::kTop: return "top";
      case Kind::kWeights: break;
    }
    std::string out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (i) out.push_back('/');
      out += format_double(weights[i]);
    }
    return out;
  }

  /// Weight per layer 0..layers.
  std::vector<double> resolve(std::size_t layers) const {
    switch (kind) {
      case Kind::kMean:
        return std::vector<double>(layers + 1, 1.0 / static_cast<double>(layers + 1));
      case Kind::kTop: {
        std::vector<double> w(layers + 1, 0.0);
        w.back() = 1.0;
        return w;
      }
      case Kind::kWeights:
        break;
    }
    if (weights.size() != layers + 1) {
      throw std::invalid_argument("layer mixing has " + std::to_string(weights.size()) + " weights, model has " +
                                  std::to_string(layers + 1) + " layers");
    }
    return weights;
  }
};

/// Per-token vectors [tokens x 2*projection_dim]. Layer 0 is the encoder
/// output duplicated; layer l >= 1 concatenates forward and backward outputs.
template <class T>
nn::DenseArray<T> embed_words_elmo(const WordLanguageModel<T>& model, const Sentence& sentence,
                                   const LayerMixing& mixing = {}) {
  const auto weights = mixing.resolve(model.config().layers);
  if (sentence.tokens.empty()) throw std::invalid_argument("sentence has no tokens");
  const auto states = bilm_states(model, sentence);
  const std::size_t p = model.config().projection_dim;
  nn::DenseArray<T> out({sentence.tokens.size(), 2 * p});
  for (std::size_t k = 0; k < sentence.tokens.size(); ++k) {
    const std::size_t i = k + 1;
    auto row = out.row(k);
    for (std::size_t d = 0; d < p; ++d) {
      double first = weights[0] * static_cast<double>(states.encoded[i][d]);
      double second = first;
      for (std::size_t l = 0; l < model.config().layers; ++l) {
        first += weights[l + 1] * static_cast<double>(states.forward[l][i][d]);
        second += weights[l + 1] * static_cast<double>(states.backward[l][i][d]);
      }
      row[d] = static_cast<T>(first);
      row[p + d] = static_cast<T>(second);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

/// Shuffled sentence batches, SGD with clipping, annealing on dev nats/token
/// (training nats when `dev` is empty); returns the best-dev model.
inline LmTrainResult<WordLMModel> train_word_lm(std::span<const Sentence> corpus, const WordLMConfig& config, Rng& rng,
                                                std::span<const Sentence> dev, const LmTrainOptions& options = {}) {
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  config.validate();
  WordLMModel model(build_char_vocab(corpus, config.min_count), WordVocabulary::build(corpus, config.vocab_size), config);
  model.init(rng);
  auto params = model.parameters();

  nn::SgdState sgd;
  sgd.lr = config.lr;
  sgd.anneal_factor = config.anneal_factor;
  sgd.patience = config.patience;
  sgd.clip_norm = config.clip_norm;
  sgd.min_lr = config.min_lr;
  sgd.direction = nn::MetricDirection::kLowerIsBetter;

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::span<const Sentence> dev_set = dev.empty() ? corpus : dev;
  LmTrainResult<WordLMModel> result{model, {}, false};
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double nats = 0.0;
    std::size_t batches = 0;
    const double lr = sgd.lr;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<Sentence> batch;
      for (std::size_t i = start; i < std::min(start + config.batch_size, order.size()); ++i) {
        batch.push_back(corpus[order[i]]);
      }
      nn::zero_grads(params);
      const auto loss = bilm_loss(model, batch, true);
      if (loss.forward_count == 0) continue;
      nn::sgd_step(params, sgd.lr, sgd.clip_norm);
      nats += loss.mean();
      ++batches;
    }
    const double dev_loss = bilm_loss(model, dev_set, false).mean();
    sgd = nn::maybe_anneal(sgd, dev_loss);
    LmEpochRecord record{epoch, batches ? nats / static_cast<double>(batches) : 0.0, dev_loss, lr, sgd.improved};
    if (sgd.improved) {
      result.model = model;
      if (!options.checkpoint_path.empty()) save_container(options.checkpoint_path, model.to_container());
    }
    result.epochs.push_back(record);
    if (options.log) *options.log << detail::lm_epoch_line(record, "token") << "\n";
    if (sgd.stop) {
      result.stopped_on_lr_floor = true;
      break;
    }
  }
  return result;
}

}  // namespace cner
