#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cner/container.hpp"
#include "cner/layers.hpp"
#include "cner/optim.hpp"
#include "cner/rng.hpp"
#include "cner/tensor.hpp"
#include "cner/text_corpus.hpp"

namespace cner {

struct CharLMConfig {
  std::size_t hidden_size = 2048;
  std::size_t sequence_length = 250;
  std::size_t batch_size = 100;
  std::size_t char_embed_dim = 64;
  double lr = 20.0;
  double anneal_factor = 4.0;
  int patience = 1;
  double clip_norm = 5.0;
  double min_lr = 1e-4;
  std::size_t max_epochs = 10;
  std::size_t min_count = 1;

  void validate() const {
    if (hidden_size == 0 || sequence_length == 0 || batch_size == 0 || char_embed_dim == 0 || max_epochs == 0 ||
        min_count == 0) {
      throw std::invalid_argument("char-LM sizes must be positive");
    }
    nn::SgdState{lr, anneal_factor, patience, clip_norm}.validate();
  }

  bool operator==(const CharLMConfig&) const = default;
};

/// One direction: character embedding, a single LSTM layer and a softmax
/// decoder back onto the character vocabulary.
template <class T>
struct CharRnn {
  nn::Embedding<T> embedding;
  nn::LstmLayer<T> lstm;
  nn::SoftmaxLayer<T> decoder;

  CharRnn() = default;
  CharRnn(const std::string& prefix, std::size_t vocab_size, const CharLMConfig& config)
      : embedding(prefix + ".embedding", vocab_size, config.char_embed_dim),
        lstm(prefix + ".lstm", config.char_embed_dim, config.hidden_size),
        decoder(prefix + ".decoder", config.hidden_size, vocab_size) {}

  void init(Rng& rng) {
    embedding.init(rng);
    lstm.init(rng);
    decoder.init(rng);
  }

  void collect(nn::ParameterList<T>& out) {
    embedding.collect(out);
    lstm.collect(out);
    decoder.collect(out);
  }

  /// Hidden state after consuming each id in turn, starting from `state`.
  std::vector<std::vector<T>> run(std::span<const int> ids, nn::LstmState<T>& state) const {
    std::vector<std::vector<T>> outputs;
    outputs.reserve(ids.size());
    std::vector<T> scratch;
    for (int id : ids) {
      lstm.step(embedding.lookup(static_cast<std::size_t>(id)), state, nullptr, scratch);
      outputs.push_back(state.r);
    }
    return outputs;
  }
};

template <class T>
class CharLanguageModel {
 public:
  CharLanguageModel(CharVocabulary vocab, CharLMConfig config)
      : vocab_(std::move(vocab)),
        config_(config),
        forward_("forward", static_cast<std::size_t>(vocab_.size()), config_),
        backward_("backward", static_cast<std::size_t>(vocab_.size()), config_) {
    config_.validate();
  }

  /// Forward direction first, then backward, from one generator.
  void init(Rng& rng) {
    forward_.init(rng);
    backward_.init(rng);
  }

  const CharVocabulary& vocab() const { return vocab_; }
  const CharLMConfig& config() const { return config_; }
  CharRnn<T>& forward_rnn() { return forward_; }
  CharRnn<T>& backward_rnn() { return backward_; }
  const CharRnn<T>& forward_rnn() const { return forward_; }
  const CharRnn<T>& backward_rnn() const { return backward_; }

  /// Per-token output dimension of word extraction.
  std::size_t embedding_dim() const { return 2 * config_.hidden_size; }

  nn::ParameterList<T> parameters() {
    nn::ParameterList<T> out;
    forward_.collect(out);
    backward_.collect(out);
    return out;
  }

  ModelContainer to_container() const {
    ModelContainer c;
    c.metadata["kind"] = "char_lm";
    c.metadata["char_vocab"] = vocab_.serialize();
    c.metadata["char_vocab_digest"] = std::to_string(vocab_.digest());
    c.metadata["config.hidden_size"] = std::to_string(config_.hidden_size);
    c.metadata["config.sequence_length"] = std::to_string(config_.sequence_length);
    c.metadata["config.batch_size"] = std::to_string(config_.batch_size);
    c.metadata["config.char_embed_dim"] = std::to_string(config_.char_embed_dim);
    c.metadata["config.lr"] = format_double(config_.lr);
    c.metadata["config.anneal_factor"] = format_double(config_.anneal_factor);
    c.metadata["config.patience"] = std::to_string(config_.patience);
    c.metadata["config.clip_norm"] = format_double(config_.clip_norm);
    c.metadata["config.min_lr"] = format_double(config_.min_lr);
    c.metadata["config.max_epochs"] = std::to_string(config_.max_epochs);
    c.metadata["config.min_count"] = std::to_string(config_.min_count);
    store_parameters(c, const_cast<CharLanguageModel&>(*this).parameters());
    return c;
  }

  static CharLanguageModel from_container(const ModelContainer& c) {
    c.expect_kind("char_lm");
    CharVocabulary vocab = CharVocabulary::deserialize(c.get("char_vocab"));
    if (std::to_string(vocab.digest()) != c.get("char_vocab_digest")) {
      throw ContainerError("character vocabulary digest mismatch");
    }
    CharLMConfig config;
    config.hidden_size = static_cast<std::size_t>(metadata_int(c, "config.hidden_size"));
    config.sequence_length = static_cast<std::size_t>(metadata_int(c, "config.sequence_length"));
    config.batch_size = static_cast<std::size_t>(metadata_int(c, "config.batch_size"));
    config.char_embed_dim = static_cast<std::size_t>(metadata_int(c, "config.char_embed_dim"));
    config.lr = metadata_double(c, "config.lr");
    config.anneal_factor = metadata_double(c, "config.anneal_factor");
    config.patience = static_cast<int>(metadata_int(c, "config.patience"));
    config.clip_norm = metadata_double(c, "config.clip_norm");
    config.min_lr = metadata_double(c, "config.min_lr");
    config.max_epochs = static_cast<std::size_t>(metadata_int(c, "config.max_epochs"));
    config.min_count = static_cast<std::size_t>(metadata_int(c, "config.min_count"));
    CharLanguageModel model(std::move(vocab), config);
    load_parameters(c, model.parameters());
    return model;
  }

 private:
  CharVocabulary vocab_;
  CharLMConfig config_;
  CharRnn<T> forward_;
  CharRnn<T> backward_;
};

using CharLMModel = CharLanguageModel<float>;

// ---------------------------------------------------------------------------
// Character streams

struct CharOrigin {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t sentence = kNone;  // kNone marks a BOUNDARY position
  std::size_t offset = 0;        // index into spaced_text(sentence)
};

struct CharStream {
  std::vector<int> ids;
  std::vector<CharOrigin> origin;
};

/// BOUNDARY, sentence 0, BOUNDARY, sentence 1, ..., BOUNDARY.
inline CharStream make_char_stream(const CharVocabulary& vocab, std::span<const Sentence> sentences) {
  CharStream stream;
  stream.ids.push_back(CharVocabulary::kBoundary);
  stream.origin.push_back({});
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const std::u32string text = spaced_text(sentences[s]);
    for (std::size_t k = 0; k < text.size(); ++k) {
      stream.ids.push_back(vocab.id(text[k]));
      stream.origin.push_back(CharOrigin{s, k});
    }
    stream.ids.push_back(CharVocabulary::kBoundary);
    stream.origin.push_back({});
  }
  return stream;
}

/// Splits a stream into at most `rows` contiguous pieces that overlap by one
/// id, so each transition of the stream is predicted exactly once.
inline std::vector<std::vector<int>> batchify(const std::vector<int>& ids, std::size_t rows) {
  std::vector<std::vector<int>> out;
  if (ids.size() < 2 || rows == 0) return out;
  const std::size_t transitions = ids.size() - 1;
  const std::size_t per_row = (transitions + rows - 1) / rows;
  for (std::size_t start = 0; start < transitions; start += per_row) {
    const std::size_t stop = std::min(start + per_row, transitions);
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                     ids.begin() + static_cast<std::ptrdiff_t>(stop + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

struct CharLMLoss {
  double forward_nats = 0.0;   // summed
  double backward_nats = 0.0;  // summed
  std::size_t forward_count = 0;
  std::size_t backward_count = 0;

  double forward_mean() const { return forward_count ? forward_nats / static_cast<double>(forward_count) : 0.0; }
  double backward_mean() const { return backward_count ? backward_nats / static_cast<double>(backward_count) : 0.0; }
  /// Training objective: sum of the two per-direction means.
  double total() const { return forward_mean() + backward_mean(); }
  /// Nats per character averaged over directions.
  double mean() const { return 0.5 * total(); }

  CharLMLoss& operator+=(const CharLMLoss& o) {
    forward_nats += o.forward_nats;
    backward_nats += o.backward_nats;
    forward_count += o.forward_count;
    backward_count += o.backward_count;
    return *this;
  }
};

/// One truncated-backprop window: every row holds its inputs followed by the
/// final target (predictions are row[t] -> row[t+1]). Empty rows are idle.
struct CharLMWindowBatch {
  std::vector<std::vector<int>> forward_rows;
  std::vector<std::vector<int>> backward_rows;
};

/// Hidden state carried between consecutive windows, one entry per row.
template <class T>
struct CharLMCarry {
  std::vector<nn::LstmState<T>> forward;
  std::vector<nn::LstmState<T>> backward;
};

namespace detail {

template <class T>
std::pair<double, std::size_t> char_rnn_window(CharRnn<T>& rnn, const std::vector<std::vector<int>>& rows,
                                               std::vector<nn::LstmState<T>>& carry, bool accumulate, int vocab_size) {
  std::size_t predictions = 0;
  for (const auto& row : rows) {
    for (int id : row) {
      if (id < 0 || id >= vocab_size) {
        throw std::out_of_range("character id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(vocab_size));
      }
    }
    if (row.size() >= 2) predictions += row.size() - 1;
  }
  if (carry.size() < rows.size()) carry.resize(rows.size(), rnn.lstm.zero_state());
  const T scale = predictions ? T(1) / static_cast<T>(predictions) : T(0);
  double nats = 0.0;
  std::vector<T> scratch;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 2) continue;
    const std::size_t steps = row.size() - 1;
    std::vector<std::vector<T>> xs(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const auto e = rnn.embedding.lookup(static_cast<std::size_t>(row[t]));
      xs[t].assign(e.begin(), e.end());
    }
    std::vector<nn::LstmStepCache<T>> caches;
    const auto outputs = rnn.lstm.forward(xs, carry[r], accumulate ? &caches : nullptr);
    std::vector<std::vector<T>> dh(accumulate ? steps : 0, std::vector<T>(rnn.lstm.output_dim(), T(0)));
    for (std::size_t t = 0; t < steps; ++t) {
      nats += rnn.decoder.loss(std::span<const T>(outputs[t]), static_cast<std::size_t>(row[t + 1]), scratch, scale,
                               accumulate ? std::span<T>(dh[t]) : std::span<T>(), accumulate);
    }
    if (accumulate) {
      const auto dxs = rnn.lstm.backward(caches, dh);
      for (std::size_t t = 0; t < steps; ++t) {
        rnn.embedding.accumulate(static_cast<std::size_t>(row[t]), std::span<const T>(dxs[t]));
      }
    }
  }
  return {nats, predictions};
}

}  // namespace detail

/// Cross-entropy of next-character prediction over one window, forward model
/// left to right and backward model over the reversed stream. With
/// `accumulate_grad`, adds the gradient of loss.total() into the parameters.
/// `carry` supplies and receives the per-row recurrent state.
template <class T>
CharLMLoss char_lm_loss(CharLanguageModel<T>& model, const CharLMWindowBatch& batch, CharLMCarry<T>& carry,
                        bool accumulate_grad) {
  CharLMLoss loss;
  const int v = model.vocab().size();
  auto [fn, fc] = detail::char_rnn_window(model.forward_rnn(), batch.forward_rows, carry.forward, accumulate_grad, v);
  auto [bn, bc] = detail::char_rnn_window(model.backward_rnn(), batch.backward_rows, carry.backward, accumulate_grad, v);
  loss.forward_nats = fn;
  loss.forward_count = fc;
  loss.backward_nats = bn;
  loss.backward_count = bc;
  return loss;
}

/// Loss over whole sentences rendered as one stream, state carried throughout.
template <class T>
CharLMLoss evaluate_char_lm(const CharLanguageModel<T>& model, std::span<const Sentence> sentences) {
  const CharStream stream = make_char_stream(model.vocab(), sentences);
  CharLMWindowBatch batch;
  batch.forward_rows.push_back(stream.ids);
  batch.backward_rows.emplace_back(stream.ids.rbegin(), stream.ids.rend());
  CharLMCarry<T> carry;
  return char_lm_loss(const_cast<CharLanguageModel<T>&>(model), batch, carry, false);
}

/// exp of nats per character averaged over both directions.
template <class T>
double perplexity(const CharLanguageModel<T>& model, std::span<const Sentence> heldout) {
  if (heldout.empty()) throw std::invalid_argument("perplexity needs a non-empty heldout set");
  return std::exp(evaluate_char_lm(model, heldout).mean());
}

// ---------------------------------------------------------------------------
// Word extraction

/// Layout of one sentence for extraction: BOUNDARY, characters with single
/// spaces between tokens, BOUNDARY. Token k covers stream positions
/// [token_start[k], token_end[k]]; its vector reads the forward state at
/// token_end[k] + 1 and the backward state at token_start[k] - 1.
struct FlairLayout {
  std::vector<int> ids;
  std::vector<std::size_t> token_start;
  std::vector<std::size_t> token_end;

  std::size_t forward_read(std::size_t k) const { return token_end[k] + 1; }
  std::size_t backward_read(std::size_t k) const { return token_start[k] - 1; }
};

inline FlairLayout flair_layout(const CharVocabulary& vocab, const Sentence& sentence) {
  if (sentence.tokens.empty()) throw std::invalid_argument("sentence has no tokens; tokenize it first");
  FlairLayout layout;
  layout.ids.push_back(CharVocabulary::kBoundary);
  for (std::size_t k = 0; k < sentence.tokens.size(); ++k) {
    if (k) layout.ids.push_back(vocab.id(U' '));
    const std::u32string text = decode_utf8(sentence.tokens[k].text);
    if (text.empty()) throw std::invalid_argument("empty token");
    layout.token_start.push_back(layout.ids.size());
    for (char32_t cp : text) layout.ids.push_back(vocab.id(cp));
    layout.token_end.push_back(layout.ids.size() - 1);
  }
  layout.ids.push_back(CharVocabulary::kBoundary);
  return layout;
}

/// Per-token contextual vectors [tokens x 2*hidden]: forward state just after
/// the token concatenated with backward state just before it.
template <class T>
nn::DenseArray<T> embed_words_flair(const CharLanguageModel<T>& model, const Sentence& sentence) {
  const FlairLayout layout = flair_layout(model.vocab(), sentence);
  const std::size_t n = layout.ids.size();
  auto fstate = model.forward_rnn().lstm.zero_state();
  const auto fwd = model.forward_rnn().run(layout.ids, fstate);
  std::vector<int> reversed(layout.ids.rbegin(), layout.ids.rend());
  auto bstate = model.backward_rnn().lstm.zero_state();
  const auto bwd_rev = model.backward_rnn().run(reversed, bstate);
  const std::size_t h = model.config().hidden_size;
  nn::DenseArray<T> out({sentence.tokens.size(), 2 * h});
  for (std::size_t k = 0; k < sentence.tokens.size(); ++k) {
    const auto& f = fwd[layout.forward_read(k)];
    const auto& b = bwd_rev[n - 1 - layout.backward_read(k)];
    auto row = out.row(k);
    std::copy(f.begin(), f.end(), row.begin());
    std::copy(b.begin(), b.end(), row.begin() + static_cast<std::ptrdiff_t>(h));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct LmEpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // nats per unit, averaged over directions
  double dev_loss = 0.0;
  double lr = 0.0;
  bool improved = false;
};

struct LmTrainOptions {
  std::string checkpoint_path;    // best-dev checkpoint written here when non-empty
  std::ostream* log = nullptr;    // line-delimited key=value records
};

template <class Model>
struct LmTrainResult {
  Model model;
  std::vector<LmEpochRecord> epochs;
  bool stopped_on_lr_floor = false;
};

namespace detail {

inline std::string lm_epoch_line(const LmEpochRecord& r, const char* unit) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%zu train_nats_per_%s=%.6f dev_nats_per_%s=%.6f lr=%.6g improved=%d",
                r.epoch, unit, r.train_loss, unit, r.dev_loss, r.lr, r.improved ? 1 : 0);
  return buf;
}

}  // namespace detail

/// SGD over truncated-backprop windows with state carried across windows of
/// each row; anneals on dev nats/char (training nats when `dev` is empty) and
/// returns the best-dev model.
inline LmTrainResult<CharLMModel> train_char_lm(std::span<const Sentence> corpus, const CharLMConfig& config,
                                                Rng& rng, std::span<const Sentence> dev,
                                                const LmTrainOptions& options = {}) {
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  config.validate();
  CharLMModel model(build_char_vocab(corpus, config.min_count), config);
  model.init(rng);
  auto params = model.parameters();

  const CharStream stream = make_char_stream(model.vocab(), corpus);
  const std::vector<int> reversed(stream.ids.rbegin(), stream.ids.rend());
  const auto forward_rows = batchify(stream.ids, config.batch_size);
  const auto backward_rows = batchify(reversed, config.batch_size);
  std::size_t longest = 0;
  for (const auto& row : forward_rows) longest = std::max(longest, row.size() - 1);
  const std::size_t windows = (longest + config.sequence_length - 1) / config.sequence_length;
  auto slice = [&](const std::vector<std::vector<int>>& rows, std::size_t w) {
    std::vector<std::vector<int>> out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t start = w * config.sequence_length;
      if (start + 1 >= rows[r].size()) continue;
      const std::size_t stop = std::min(start + config.sequence_length + 1, rows[r].size());
      out[r].assign(rows[r].begin() + static_cast<std::ptrdiff_t>(start),
                    rows[r].begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return out;
  };

  nn::SgdState sgd;
  sgd.lr = config.lr;
  sgd.anneal_factor = config.anneal_factor;
  sgd.patience = config.patience;
  sgd.clip_norm = config.clip_norm;
  sgd.min_lr = config.min_lr;
  sgd.direction = nn::MetricDirection::kLowerIsBetter;

  LmTrainResult<CharLMModel> result{model, {}, false};
  const std::span<const Sentence> dev_set = dev.empty() ? corpus : dev;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    CharLMCarry<float> carry;
    CharLMLoss epoch_loss;
    const double lr = sgd.lr;
    for (std::size_t w = 0; w < windows; ++w) {
      CharLMWindowBatch batch{slice(forward_rows, w), slice(backward_rows, w)};
      nn::zero_grads(params);
      epoch_loss += char_lm_loss(model, batch, carry, true);
      nn::sgd_step(params, sgd.lr, sgd.clip_norm);
    }
    const double dev_loss = evaluate_char_lm(model, dev_set).mean();
    sgd = nn::maybe_anneal(sgd, dev_loss);
    LmEpochRecord record{epoch, epoch_loss.mean(), dev_loss, lr, sgd.improved};
    if (sgd.improved) {
      result.model = model;
      if (!options.checkpoint_path.empty()) save_container(options.checkpoint_path, model.to_container());
    }
    result.epochs.push_back(record);
    if (options.log) *options.log << detail::lm_epoch_line(record, "char") << "\n";
    if (sgd.stop) {
      result.stopped_on_lr_floor = true;
      break;
    }
  }
  return result;
}

}  // namespace cner
