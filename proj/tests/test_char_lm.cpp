#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "cner/char_lm.hpp"
#include "oracles.hpp"

using namespace cner;

namespace {

CharLMConfig small_config(std::size_t hidden = 16) {
  CharLMConfig c;
  c.hidden_size = hidden;
  c.char_embed_dim = 8;
  c.sequence_length = 20;
  c.batch_size = 4;
  c.lr = 1.0;
  c.max_epochs = 3;
  return c;
}

template <class T>
CharLanguageModel<T> small_model(const std::vector<Sentence>& corpus, std::uint64_t seed, std::size_t hidden = 16) {
  CharLanguageModel<T> m(build_char_vocab(corpus, 1), small_config(hidden));
  Rng rng(seed);
  m.init(rng);
  return m;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(CharStreamTest, BoundariesAndOrigins) {
  const std::vector<Sentence> s = {Sentence::from_tokens({"ab", "c"}), Sentence::from_tokens({"d"})};
  const auto vocab = build_char_vocab(s, 1);
  const auto stream = make_char_stream(vocab, s);
  // B a b ' ' c B d B
  ASSERT_EQ(stream.ids.size(), 8u);
  EXPECT_EQ(stream.ids[0], CharVocabulary::kBoundary);
  EXPECT_EQ(stream.ids[5], CharVocabulary::kBoundary);
  EXPECT_EQ(stream.ids[7], CharVocabulary::kBoundary);
  EXPECT_EQ(stream.ids[3], vocab.id(U' '));
  EXPECT_EQ(stream.origin[6].sentence, 1u);
  EXPECT_EQ(stream.origin[6].offset, 0u);
  EXPECT_EQ(stream.origin[4].offset, 3u);
  EXPECT_EQ(stream.origin[5].sentence, CharOrigin::kNone);
}

TEST(Batchify, EachTransitionOnce) {
  for (std::size_t len = 2; len < 40; ++len) {
    std::vector<int> ids(len);
    for (std::size_t i = 0; i < len; ++i) ids[i] = static_cast<int>(i);
    for (std::size_t rows = 1; rows < 8; ++rows) {
      const auto out = batchify(ids, rows);
      ASSERT_LE(out.size(), rows);
      std::vector<int> seen(len - 1, 0);
      for (const auto& row : out) {
        ASSERT_GE(row.size(), 2u);
        for (std::size_t t = 0; t + 1 < row.size(); ++t) {
          ASSERT_EQ(row[t + 1], row[t] + 1);
          ++seen[static_cast<std::size_t>(row[t])];
        }
      }
      for (int c : seen) ASSERT_EQ(c, 1);
    }
  }
}

TEST(CharLMLossTest, UntrainedNearUniform) {
  std::vector<Sentence> corpus;
  for (const char* w : {"abcdefghij", "klmnopqrst", "uvwxyzABCD"}) corpus.push_back(Sentence::from_tokens({w}));
  auto model = small_model<float>(corpus, 3);
  const int v = model.vocab().size();
  ASSERT_EQ(v, 30 + CharVocabulary::kReserved);
  const auto loss = evaluate_char_lm(model, corpus);
  EXPECT_NEAR(loss.forward_mean(), std::log(double(v)), 0.3);
  EXPECT_NEAR(loss.backward_mean(), std::log(double(v)), 0.3);
  EXPECT_NEAR(loss.total(), loss.forward_mean() + loss.backward_mean(), 1e-12);
}

TEST(CharLMLossTest, ZeroDecoderGivesExactUniformPerplexity) {
  const auto corpus = oracle::toy_char_corpus();
  auto model = small_model<double>(corpus, 4);
  for (auto* rnn : {&model.forward_rnn(), &model.backward_rnn()}) {
    rnn->decoder.weight.value.fill(0.0);
    rnn->decoder.bias.value.fill(0.0);
  }
  EXPECT_NEAR(perplexity(model, corpus), double(model.vocab().size()), 1e-9);
  EXPECT_THROW(perplexity(model, std::span<const Sentence>{}), std::invalid_argument);
}

TEST(CharLMLossTest, DegenerateAndInvalidRows) {
  const auto corpus = oracle::toy_char_corpus();
  auto model = small_model<float>(corpus, 5);
  CharLMCarry<float> carry;
  CharLMWindowBatch single{{{CharVocabulary::kBoundary}}, {{CharVocabulary::kBoundary}}};
  const auto l1 = char_lm_loss(model, single, carry, true);
  EXPECT_EQ(l1.forward_count, 0u);
  EXPECT_TRUE(std::isfinite(l1.total()));
  CharLMWindowBatch pair{{{CharVocabulary::kBoundary, 4}}, {{4, CharVocabulary::kBoundary}}};
  EXPECT_TRUE(std::isfinite(char_lm_loss(model, pair, carry, true).total()));
  CharLMWindowBatch bad{{{1, model.vocab().size()}}, {}};
  EXPECT_THROW(char_lm_loss(model, bad, carry, false), std::out_of_range);
}

TEST(CharLMLossTest, PalindromeSymmetry) {
  const std::vector<Sentence> corpus = {Sentence::from_tokens({"ab", "c", "ba"}), Sentence::from_tokens({"x"}),
                                        Sentence::from_tokens({"ab", "c", "ba"})};
  auto model = small_model<double>(corpus, 6);
  auto params = model.parameters();
  const std::size_t half = params.size() / 2;
  for (std::size_t i = 0; i < half; ++i) params[half + i]->value = params[i]->value;
  const auto loss = evaluate_char_lm(model, corpus);
  EXPECT_NEAR(loss.forward_mean(), loss.backward_mean(), 1e-5);
  EXPECT_EQ(loss.forward_count, loss.backward_count);
}

TEST(CharLMLossTest, GradientMatchesFiniteDifferences) {
  const auto corpus = oracle::toy_char_corpus();
  auto model = small_model<double>(corpus, 7, 6);
  const auto stream = make_char_stream(model.vocab(), std::span<const Sentence>(corpus).first(2));
  const std::vector<int> reversed(stream.ids.rbegin(), stream.ids.rend());
  CharLMWindowBatch batch{batchify(stream.ids, 2), batchify(reversed, 2)};
  // Nonzero carried state exercises the carry path.
  CharLMCarry<double> start;
  for (int r = 0; r < 2; ++r) {
    auto s = model.forward_rnn().lstm.zero_state();
    for (auto& v : s.r) v = 0.1 * (r + 1);
    for (auto& v : s.c) v = -0.2;
    start.forward.push_back(s);
    start.backward.push_back(s);
  }
  auto loss_fn = [&](bool acc) {
    CharLMCarry<double> carry = start;
    return char_lm_loss(model, batch, carry, acc).total();
  };
  const auto r = oracle::gradient_agreement<double>(loss_fn, model.parameters(), 300, 11);
  EXPECT_GE(r.coordinates, 50u);
  EXPECT_LT(r.max_abs, 1e-8) << r.worst;
  EXPECT_LT(r.max_rel_large, 1e-5);
}

TEST(FlairLayoutTest, SingleToken) {
  const auto s = Sentence::from_tokens({"a"});
  const auto vocab = build_char_vocab(std::vector<Sentence>{s}, 1);
  const auto layout = flair_layout(vocab, s);
  ASSERT_EQ(layout.ids.size(), 3u);
  EXPECT_EQ(layout.forward_read(0), 2u);
  EXPECT_EQ(layout.backward_read(0), 0u);
  EXPECT_EQ(layout.ids[2], CharVocabulary::kBoundary);
  EXPECT_EQ(layout.ids[0], CharVocabulary::kBoundary);
}

TEST(FlairLayoutTest, ReadPositionsBracketEveryToken) {
  Rng rng(8);
  const std::vector<Sentence> base = {Sentence::from_tokens({"abc"})};
  const auto vocab = build_char_vocab(base, 1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> words;
    for (std::size_t k = 0, n = 1 + rng.index(8); k < n; ++k) {
      std::string w;
      for (std::size_t c = 0, m = 1 + rng.index(6); c < m; ++c) w.push_back(static_cast<char>('a' + rng.index(4)));
      words.push_back(w);
    }
    const auto s = Sentence::from_tokens(words);
    const auto layout = flair_layout(vocab, s);
    for (std::size_t k = 0; k < words.size(); ++k) {
      ASSERT_GT(layout.forward_read(k), layout.token_end[k]);
      ASSERT_LT(layout.backward_read(k), layout.token_start[k]);
      ASSERT_LT(layout.forward_read(k), layout.ids.size());
      ASSERT_EQ(layout.token_end[k] - layout.token_start[k] + 1, words[k].size());
      const int after = layout.ids[layout.forward_read(k)];
      const int before = layout.ids[layout.backward_read(k)];
      ASSERT_TRUE(after == CharVocabulary::kBoundary || after == vocab.id(U' '));
      ASSERT_TRUE(before == CharVocabulary::kBoundary || before == vocab.id(U' '));
    }
  }
  EXPECT_THROW(flair_layout(vocab, Sentence{}), std::invalid_argument);
}

TEST(EmbedWordsFlair, DimensionsPurityAndReadout) {
  const auto corpus = oracle::toy_char_corpus();
  const auto model = small_model<float>(corpus, 9, 12);
  const auto s = Sentence::from_tokens({"the", "cat", "ran"});
  const auto a = embed_words_flair(model, s);
  ASSERT_EQ(a.dim(0), 3u);
  ASSERT_EQ(a.dim(1), 24u);
  EXPECT_EQ(a, embed_words_flair(model, s));
  // Token 1 ("cat") spans stream positions 5..7: forward state after position 8,
  // backward state after consuming the reversed stream down to position 4.
  const auto layout = flair_layout(model.vocab(), s);
  auto fs = model.forward_rnn().lstm.zero_state();
  const std::vector<int> prefix(layout.ids.begin(), layout.ids.begin() + 9);
  const auto f = model.forward_rnn().run(prefix, fs);
  auto bs = model.backward_rnn().lstm.zero_state();
  const std::vector<int> suffix(layout.ids.rbegin(), layout.ids.rend() - 4);
  const auto b = model.backward_rnn().run(suffix, bs);
  for (std::size_t d = 0; d < 12; ++d) {
    EXPECT_EQ(a(1, d), f.back()[d]);
    EXPECT_EQ(a(1, 12 + d), b.back()[d]);
  }
}

TEST(TrainCharLM, ToyRunDecreasesAndIsContextual) {
  const auto corpus = oracle::toy_char_corpus();
  auto config = small_config(64);
  config.lr = 2.0;
  config.max_epochs = 3;
  Rng rng(10);
  std::ostringstream log;
  LmTrainOptions opts;
  opts.log = &log;
  const auto result = train_char_lm(corpus, config, rng, std::span<const Sentence>(corpus).last(3), opts);
  ASSERT_EQ(result.epochs.size(), 3u);
  EXPECT_LT(result.epochs[1].dev_loss, result.epochs[0].dev_loss);
  EXPECT_LT(result.epochs[2].dev_loss, result.epochs[1].dev_loss);
  EXPECT_NE(log.str().find("epoch=1 train_nats_per_char="), std::string::npos);

  const auto a = embed_words_flair(result.model, Sentence::from_tokens({"the", "cat", "sat"}));
  const auto b = embed_words_flair(result.model, Sentence::from_tokens({"a", "cat", "ran"}));
  EXPECT_LT(cosine(a.row(1), b.row(1)), 1.0);
}

TEST(TrainCharLM, DeterministicCheckpoints) {
  const auto corpus = oracle::toy_char_corpus();
  auto config = small_config(8);
  config.max_epochs = 2;
  std::string bytes[2];
  for (auto& out : bytes) {
    Rng rng(12);
    out = write_container(train_char_lm(corpus, config, rng, {}).model.to_container());
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  const auto back = CharLMModel::from_container(read_container(bytes[0]));
  EXPECT_EQ(write_container(back.to_container()), bytes[0]);
  Rng rng(1);
  EXPECT_THROW(train_char_lm(std::vector<Sentence>{}, config, rng, {}), std::invalid_argument);
}

TEST(CharLMContainer, RejectsWrongKindAndDigest) {
  const auto corpus = oracle::toy_char_corpus();
  auto c = small_model<float>(corpus, 13).to_container();
  auto wrong = c;
  wrong.metadata["kind"] = "word_lm";
  EXPECT_THROW(CharLMModel::from_container(wrong), KindMismatchError);
  c.metadata["char_vocab_digest"] = "1";
  EXPECT_THROW(CharLMModel::from_container(c), ContainerError);
}
