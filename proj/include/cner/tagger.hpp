#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cner/container.hpp"
#include "cner/crf.hpp"
#include "cner/embeddings.hpp"
#include "cner/eval.hpp"
#include "cner/layers.hpp"
#include "cner/optim.hpp"
#include "cner/rng.hpp"
#include "cner/tensor.hpp"
#include "cner/text_corpus.hpp"

namespace cner {

struct TaggerConfig {
  std::size_t hidden_size = 256;  // per direction
  double lr = 0.1;
  double anneal_factor = 2.0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  int patience = 3;
  double clip_norm = 5.0;
  double min_lr = 1e-4;
  double dropout = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (hidden_size == 0 || batch_size == 0 || max_epochs == 0) throw std::invalid_argument("tagger sizes must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
    nn::SgdState{lr, anneal_factor, patience, clip_norm}.validate();
  }

  bool operator==(const TaggerConfig&) const = default;
};

namespace detail {

inline std::string encode_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += std::to_string(s.size()) + ":" + s;
  return out;
}

inline std::vector<std::string> decode_list(std::string_view text) {
  // Same framing as the word vocabulary.
  return WordVocabulary::deserialize(text).words();
}

}  // namespace detail

/// Maps BIO strings to tag ids. Tags whose entity type is not in the tagset
/// become O and are counted in `unknown`.
inline std::vector<int> encode_tags(const TagSet& tagset, std::span<const std::string> tags,
                                    std::size_t* unknown = nullptr) {
  std::vector<int> out;
  out.reserve(tags.size());
  for (const auto& t : tags) {
    const auto id = tagset.index_of(t);
    if (id) {
      out.push_back(*id);
    } else {
      if (!parse_tag(t)) throw std::invalid_argument("malformed BIO tag '" + t + "'");
      if (unknown) ++*unknown;
      out.push_back(tagset.outside());
    }
  }
  return out;
}

class TaggerModel {
 public:
  TaggerModel(TagSet tagset, std::size_t input_dim, std::string stack_spec, TaggerConfig config)
      : tagset_(std::move(tagset)),
        input_dim_(input_dim),
        stack_spec_(std::move(stack_spec)),
        config_(config),
        forward_("encoder.forward", input_dim, config.hidden_size),
        backward_("encoder.backward", input_dim, config.hidden_size),
        emission_("emission", 2 * config.hidden_size, static_cast<std::size_t>(tagset_.size())),
        transitions_("crf.transitions", {tag_count() + 2, tag_count() + 2}),
        forbidden_(bio_forbidden_mask(tagset_)) {
    config_.validate();
    if (input_dim == 0) throw std::invalid_argument("tagger input dimension must be positive");
    clamp_transitions(transitions_.value, forbidden_);
  }

  void init(Rng& rng) {
    forward_.init(rng);
    backward_.init(rng);
    emission_.init(rng);
    transitions_.value.fill(0.0f);
    clamp_transitions(transitions_.value, forbidden_);
  }

  const TagSet& tagset() const { return tagset_; }
  std::size_t tag_count() const { return static_cast<std::size_t>(tagset_.size()); }
  std::size_t input_dim() const { return input_dim_; }
  const std::string& stack_spec() const { return stack_spec_; }
  const TaggerConfig& config() const { return config_; }
  const nn::DenseArray<float>& transitions() const { return transitions_.value; }

  nn::ParameterList<float> parameters() {
    nn::ParameterList<float> out;
    forward_.collect(out);
    backward_.collect(out);
    emission_.collect(out);
    out.push_back(&transitions_);
    return out;
  }

  /// Emission scores [tokens x K] for precomputed features [tokens x input_dim].
  nn::DenseArray<float> emissions(const nn::DenseArray<float>& features) const {
    return run(features, nullptr);
  }

  std::vector<int> decode(const nn::DenseArray<float>& features) const {
    if (features.dim(0) == 0) return {};
    return viterbi_decode(emissions(features), transitions_.value).path;
  }

  /// CRF negative log-likelihood; with `accumulate`, adds scale * gradient.
  double nll(const nn::DenseArray<float>& features, std::span<const int> gold, bool accumulate, double scale = 1.0) {
    if (features.dim(0) == 0) return 0.0;
    Cache cache;
    const auto em = run(features, accumulate ? &cache : nullptr);
    if (!accumulate) return crf_nll(em, transitions_.value, gold);
    nn::DenseArray<float> d_em(em.dims());
    const double loss = crf_nll(em, transitions_.value, gold, &d_em, &transitions_.grad, scale);
    backprop(cache, d_em);
    return loss;
  }

  /// Zeroes gradients on forbidden transitions and restores the sentinel.
  void enforce_structure() {
    for (std::size_t i = 0; i < forbidden_.size(); ++i) {
      if (forbidden_[i]) transitions_.grad[i] = 0.0f;
    }
    clamp_transitions(transitions_.value, forbidden_);
  }

  ModelContainer to_container() const {
    ModelContainer c;
    c.metadata["kind"] = "tagger";
    c.metadata["tagset"] = detail::encode_list(tagset_.entity_types());
    c.metadata["stack_spec"] = stack_spec_;
    c.metadata["input_dim"] = std::to_string(input_dim_);
    c.metadata["config.hidden_size"] = std::to_string(config_.hidden_size);
    c.metadata["config.lr"] = format_double(config_.lr);
    c.metadata["config.anneal_factor"] = format_double(config_.anneal_factor);
    c.metadata["config.batch_size"] = std::to_string(config_.batch_size);
    c.metadata["config.max_epochs"] = std::to_string(config_.max_epochs);
    c.metadata["config.patience"] = std::to_string(config_.patience);
    c.metadata["config.clip_norm"] = format_double(config_.clip_norm);
    c.metadata["config.min_lr"] = format_double(config_.min_lr);
    c.metadata["config.dropout"] = format_double(config_.dropout);
    c.metadata["config.seed"] = std::to_string(config_.seed);
    store_parameters(c, const_cast<TaggerModel&>(*this).parameters());
    return c;
  }

  static TaggerModel from_container(const ModelContainer& c) {
    c.expect_kind("tagger");
    TaggerConfig config;
    config.hidden_size = static_cast<std::size_t>(metadata_int(c, "config.hidden_size"));
    config.lr = metadata_double(c, "config.lr");
    config.anneal_factor = metadata_double(c, "config.anneal_factor");
    config.batch_size = static_cast<std::size_t>(metadata_int(c, "config.batch_size"));
    config.max_epochs = static_cast<std::size_t>(metadata_int(c, "config.max_epochs"));
    config.patience = static_cast<int>(metadata_int(c, "config.patience"));
    config.clip_norm = metadata_double(c, "config.clip_norm");
    config.min_lr = metadata_double(c, "config.min_lr");
    config.dropout = metadata_double(c, "config.dropout");
    config.seed = static_cast<std::uint64_t>(metadata_int(c, "config.seed"));
    TaggerModel model(TagSet(detail::decode_list(c.get("tagset"))),
                      static_cast<std::size_t>(metadata_int(c, "input_dim")), c.get("stack_spec"), config);
    load_parameters(c, model.parameters());
    return model;
  }

 private:
  struct Cache {
    std::vector<nn::LstmStepCache<float>> forward, backward;
    std::vector<std::vector<float>> hidden;  // [tokens][2H]
  };

  nn::DenseArray<float> run(const nn::DenseArray<float>& features, Cache* cache) const {
    if (features.rank() != 2 || features.dim(1) != input_dim_) {
      throw nn::DimensionError("tagger expects " + std::to_string(input_dim_) + "-dimensional token features, got " +
                               std::to_string(features.rank() == 2 ? features.dim(1) : 0));
    }
    const std::size_t n = features.dim(0);
    const std::size_t h = config_.hidden_size;
    std::vector<std::vector<float>> xs(n), rev(n);
    for (std::size_t t = 0; t < n; ++t) {
      const auto row = features.row(t);
      xs[t].assign(row.begin(), row.end());
      rev[n - 1 - t] = xs[t];
    }
    auto fs = forward_.zero_state();
    auto bs = backward_.zero_state();
    const auto fo = forward_.forward(xs, fs, cache ? &cache->forward : nullptr);
    const auto bo = backward_.forward(rev, bs, cache ? &cache->backward : nullptr);
    nn::DenseArray<float> em({n, tag_count()});
    std::vector<float> hidden(2 * h);
    if (cache) cache->hidden.assign(n, {});
    for (std::size_t t = 0; t < n; ++t) {
      std::copy(fo[t].begin(), fo[t].end(), hidden.begin());
      std::copy(bo[n - 1 - t].begin(), bo[n - 1 - t].end(), hidden.begin() + static_cast<std::ptrdiff_t>(h));
      nn::affine(emission_.weight.value, emission_.bias.value, std::span<const float>(hidden), em.row(t));
      if (cache) cache->hidden[t] = hidden;
    }
    return em;
  }

  void backprop(const Cache& cache, const nn::DenseArray<float>& d_em) {
    const std::size_t n = cache.hidden.size();
    const std::size_t h = config_.hidden_size;
    std::vector<std::vector<float>> df(n, std::vector<float>(h, 0.0f)), db(n, std::vector<float>(h, 0.0f));
    std::vector<float> dh(2 * h);
    for (std::size_t t = 0; t < n; ++t) {
      std::fill(dh.begin(), dh.end(), 0.0f);
      nn::affine_backward(emission_.weight.value, std::span<const float>(cache.hidden[t]), d_em.row(t),
                          emission_.weight.grad, &emission_.bias.grad, std::span<float>(dh));
      std::copy(dh.begin(), dh.begin() + static_cast<std::ptrdiff_t>(h), df[t].begin());
      std::copy(dh.begin() + static_cast<std::ptrdiff_t>(h), dh.end(), db[n - 1 - t].begin());
    }
    forward_.backward(cache.forward, df);
    backward_.backward(cache.backward, db);
  }

  TagSet tagset_;
  std::size_t input_dim_;
  std::string stack_spec_;
  TaggerConfig config_;
  nn::LstmLayer<float> forward_;
  nn::LstmLayer<float> backward_;
  nn::SoftmaxLayer<float> emission_;  // only its affine part is used
  nn::Parameter<float> transitions_;
  std::vector<bool> forbidden_;
};

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
  std::vector<std::string> tags;
  std::vector<Span> spans;
};

inline Prediction predict_features(const TaggerModel& model, const nn::DenseArray<float>& features) {
  Prediction out;
  for (int id : model.decode(features)) out.tags.push_back(model.tagset().tag(id));
  out.spans = spans_from_bio(out.tags);
  return out;
}

inline Prediction predict(const TaggerModel& model, const EmbedderStack& stack, const Sentence& sentence) {
  if (sentence.tokens.empty()) return {};
  return predict_features(model, stack_embed(stack, sentence));
}

// ---------------------------------------------------------------------------
// Training

struct TaggerEpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean CRF NLL per sentence
  double dev_f1 = 0.0;
  double lr = 0.0;
  bool improved = false;
};

struct TaggerTrainOptions {
  std::string checkpoint_path;
  std::ostream* log = nullptr;
};

struct TaggerTrainResult {
  TaggerModel model;
  std::vector<TaggerEpochRecord> epochs;
  std::size_t unknown_dev_tags = 0;
  bool stopped_on_lr_floor = false;
};

/// Frozen per-token features with gold tags.
struct FeatureSet {
  std::vector<nn::DenseArray<float>> features;
  std::vector<LabeledSentence> gold;
};

inline FeatureSet precompute_features(const EmbedderStack& stack, std::span<const LabeledSentence> data) {
  FeatureSet out;
  for (const auto& ls : data) {
    out.features.push_back(stack_embed(stack, ls.sentence));
    out.gold.push_back(ls);
  }
  return out;
}

namespace detail {

inline double features_f1(const TaggerModel& model, const FeatureSet& set) {
  std::vector<std::vector<std::string>> pred;
  for (const auto& f : set.features) pred.push_back(predict_features(model, f).tags);
  return micro_f1(set.gold, pred).micro.f1();
}

inline std::string tagger_epoch_line(const TaggerEpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%zu train_loss=%.6f dev_micro_f1=%.6f lr=%.6g improved=%d", r.epoch,
                r.train_loss, r.dev_f1, r.lr, r.improved ? 1 : 0);
  return buf;
}

}  // namespace detail

/// Minibatch SGD on mean CRF NLL with inverted dropout on the frozen
/// features; anneals on dev micro-F1 and keeps the best-dev model. With an
/// empty dev set the training set stands in.
inline TaggerTrainResult train_tagger_features(const FeatureSet& train, const FeatureSet& dev, const TagSet& tagset,
                                               std::size_t input_dim, const std::string& stack_spec,
                                               const TaggerConfig& config, const TaggerTrainOptions& options = {}) {
  if (train.features.empty()) throw std::invalid_argument("training set is empty");
  config.validate();
  Rng rng(config.seed);
  TaggerModel model(tagset, input_dim, stack_spec, config);
  model.init(rng);
  auto params = model.parameters();

  std::vector<std::vector<int>> gold_ids;
  for (const auto& ls : train.gold) gold_ids.push_back(encode_tags(tagset, ls.tags));
  std::size_t unknown = 0;
  for (const auto& ls : dev.gold) encode_tags(tagset, ls.tags, &unknown);
  if (unknown && options.log) *options.log << "warning: " << unknown << " dev tags outside the tagset mapped to O\n";

  nn::SgdState sgd;
  sgd.lr = config.lr;
  sgd.anneal_factor = config.anneal_factor;
  sgd.patience = config.patience;
  sgd.clip_norm = config.clip_norm;
  sgd.min_lr = config.min_lr;
  sgd.direction = nn::MetricDirection::kHigherIsBetter;

  const FeatureSet& dev_set = dev.features.empty() ? train : dev;
  std::vector<std::size_t> order(train.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const float keep = static_cast<float>(1.0 - config.dropout);
  TaggerTrainResult result{model, {}, unknown, false};
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    const double lr = sgd.lr;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(start + config.batch_size, order.size());
      nn::zero_grads(params);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        nn::DenseArray<float> x = train.features[i];
        if (config.dropout > 0.0) {
          for (auto& v : x.values()) v = rng.bernoulli(1.0 - config.dropout) ? v / keep : 0.0f;
        }
        total += model.nll(x, gold_ids[i], true, 1.0 / static_cast<double>(stop - start));
      }
      model.enforce_structure();
      nn::sgd_step(params, sgd.lr, sgd.clip_norm);
      model.enforce_structure();
    }
    const double f1 = detail::features_f1(model, dev_set);
    sgd = nn::maybe_anneal(sgd, f1);
    TaggerEpochRecord record{epoch, total / static_cast<double>(order.size()), f1, lr, sgd.improved};
    if (sgd.improved) {
      result.model = model;
      if (!options.checkpoint_path.empty()) save_container(options.checkpoint_path, model.to_container());
    }
    result.epochs.push_back(record);
    if (options.log) *options.log << detail::tagger_epoch_line(record) << "\n";
    if (sgd.stop) {
      result.stopped_on_lr_floor = true;
      break;
    }
  }
  return result;
}

/// Embeds both sets through the frozen stack, derives the tagset from `train`
/// and trains.
inline TaggerTrainResult train_tagger(std::span<const LabeledSentence> train, std::span<const LabeledSentence> dev,
                                      const EmbedderStack& stack, const TaggerConfig& config,
                                      const TaggerTrainOptions& options = {}) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  const TagSet tagset = TagSet::from_data(train);
  return train_tagger_features(precompute_features(stack, train), precompute_features(stack, dev), tagset,
                               stack.total_dim(), stack.spec(), config, options);
}

}  // namespace cner
