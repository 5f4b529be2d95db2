#include <gtest/gtest.h>

#include <memory>
#include <string>
#include <vector>

#include "cner/embeddings.hpp"
#include "oracles.hpp"

using namespace cner;

namespace {

std::vector<float> vec(std::span<const float> s) { return {s.begin(), s.end()}; }

std::shared_ptr<const CharLMModel> tiny_char_lm(std::size_t hidden) {
  CharLMConfig c;
  c.hidden_size = hidden;
  c.char_embed_dim = 4;
  auto m = std::make_shared<CharLMModel>(build_char_vocab(oracle::toy_char_corpus(), 1), c);
  Rng rng(1);
  m->init(rng);
  return m;
}

std::shared_ptr<const WordLMModel> tiny_word_lm(std::size_t projection) {
  WordLMConfig c;
  c.hidden_size = projection;
  c.projection_dim = projection;
  c.layers = 1;
  c.char_embed_dim = 4;
  c.cnn_filters = {{1, 4}, {2, 4}};
  const auto corpus = oracle::toy_word_corpus();
  auto m = std::make_shared<WordLMModel>(build_char_vocab(corpus, 1), WordVocabulary::build(corpus, 50), c);
  Rng rng(2);
  m->init(rng);
  return m;
}

}  // namespace

TEST(StaticLexiconTest, ParseAndLookup) {
  const auto lex = StaticLexicon::parse("fever 1 2 3\nFever 4 5 6\n\ncough\t0.5 -1 2e1\r\n");
  EXPECT_EQ(lex.dim(), 3u);
  EXPECT_EQ(lex.size(), 3u);
  EXPECT_EQ(vec(lex.lookup("fever")), (std::vector<float>{1, 2, 3}));
  EXPECT_EQ(vec(lex.lookup("Fever")), (std::vector<float>{4, 5, 6}));
  EXPECT_EQ(vec(lex.lookup("COUGH")), (std::vector<float>{0.5f, -1, 20}));
  EXPECT_EQ(vec(lex.lookup("sepsis")), (std::vector<float>{0, 0, 0}));
}

TEST(StaticLexiconTest, MeanOovPolicy) {
  const auto lex = StaticLexicon::parse("a 1 2\nb 3 -2\n", OovPolicy::kMean);
  EXPECT_EQ(vec(lex.lookup("zzz")), (std::vector<float>{2, 0}));
  EXPECT_EQ(parse_oov_policy("mean"), OovPolicy::kMean);
  EXPECT_THROW(parse_oov_policy("random"), std::invalid_argument);
}

TEST(StaticLexiconTest, ErrorsNameTheLine) {
  const std::pair<const char*, std::size_t> cases[] = {
      {"a 1 2\nb 1\n", 2}, {"a 1 2\n\nb\n", 3}, {"a 1 x\n", 1}, {"a 1 2\nb 1 2 3\n", 2}, {"\n\n", 2}, {"a 1.5.2\n", 1},
  };
  for (const auto& [text, line] : cases) {
    try {
      StaticLexicon::parse(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const LexiconFormatError& e) {
      EXPECT_EQ(e.line(), line) << text;
    }
  }
}

TEST(StaticLexiconTest, LaterDuplicatesReplaceAndRoundTrip) {
  const auto lex = StaticLexicon::parse("a 1 2\nb 3 4\na 5 6\n");
  EXPECT_EQ(lex.duplicates(), 1u);
  EXPECT_EQ(lex.size(), 2u);
  EXPECT_EQ(vec(lex.lookup("a")), (std::vector<float>{5, 6}));
  EXPECT_EQ(StaticLexicon::parse(lex.serialize()), lex);
  auto copy = lex;
  EXPECT_THROW(copy.insert("c", {1, 2, 3}), nn::DimensionError);
}

TEST(StackSpecTest, ParseAndPrint) {
  const auto spec = StackSpec::parse("static:/data/vec.txt;oov=mean,char_lm:fw.bin,word_lm:elmo.bin;mixing=top");
  ASSERT_EQ(spec.members.size(), 3u);
  EXPECT_EQ(spec.members[0].kind, "static");
  EXPECT_EQ(spec.members[0].path, "/data/vec.txt");
  EXPECT_EQ(spec.members[0].options.at("oov"), "mean");
  EXPECT_EQ(spec.members[2].options.at("mixing"), "top");
  EXPECT_EQ(StackSpec::parse(spec.to_string()), spec);
  EXPECT_EQ(spec.to_string(), "static:/data/vec.txt;oov=mean,char_lm:fw.bin,word_lm:elmo.bin;mixing=top");
}

TEST(StackSpecTest, RejectsMalformedMembers) {
  for (const char* bad : {"", "static", ":x", "glove:x", "static:", "static:x,", "static:x;oov", "static:x;=1",
                          "char_lm:x;oov=zeros", "static:x;mixing=top"}) {
    EXPECT_THROW(StackSpec::parse(bad), std::invalid_argument) << bad;
  }
}

TEST(EmbedderStackTest, BlocksEqualMemberOutputs) {
  const auto lex = std::make_shared<const StaticLexicon>(StaticLexicon::parse("the 1 2 3\ncat 4 5 6\n"));
  const auto clm = tiny_char_lm(5);
  const auto wlm = tiny_word_lm(4);
  const std::vector<std::shared_ptr<const Embedder>> members = {
      std::make_shared<StaticEmbedder>(lex), std::make_shared<CharLMEmbedder>(clm),
      std::make_shared<WordLMEmbedder>(wlm, LayerMixing::top())};
  const EmbedderStack stack(members);
  EXPECT_EQ(stack.total_dim(), 3u + 10u + 8u);
  EXPECT_EQ(stack.offset(1), 3u);
  EXPECT_EQ(stack.offset(2), 13u);
  const auto s = Sentence::from_tokens({"the", "cat", "sat"});
  const auto all = stack_embed(stack, s);
  ASSERT_EQ(all.dim(0), 3u);
  for (std::size_t m = 0; m < members.size(); ++m) {
    const auto block = members[m]->embed(s);
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t d = 0; d < members[m]->dim(); ++d) ASSERT_EQ(all(k, stack.offset(m) + d), block(k, d));
    }
  }
}

TEST(EmbedderStackTest, EmptySentenceAndFailures) {
  const auto lex = std::make_shared<const StaticLexicon>(StaticLexicon::parse("x 1\n"));
  const EmbedderStack stack({std::make_shared<StaticEmbedder>(lex), std::make_shared<CharLMEmbedder>(tiny_char_lm(3))});
  const auto empty = stack_embed(stack, Sentence{});
  EXPECT_EQ(empty.dim(0), 0u);
  EXPECT_EQ(empty.dim(1), 7u);
  EXPECT_THROW(EmbedderStack(std::vector<std::shared_ptr<const Embedder>>{}), std::invalid_argument);
  EXPECT_THROW(WordLMEmbedder(tiny_word_lm(4), LayerMixing::explicit_weights({1, 1, 1})), std::invalid_argument);
}

TEST(EmbedderStackTest, PublishedWidths) {
  std::string text = "w";
  for (int i = 0; i < 100; ++i) text += " 0.1";
  const auto lex = std::make_shared<const StaticLexicon>(StaticLexicon::parse(text));
  const auto wlm = tiny_word_lm(256);
  const EmbedderStack with_word({std::make_shared<StaticEmbedder>(lex),
                                 std::make_shared<WordLMEmbedder>(wlm, LayerMixing::mean())});
  EXPECT_EQ(with_word.total_dim(), 612u);
  const std::size_t h = 7;
  const EmbedderStack with_char({std::make_shared<StaticEmbedder>(lex), std::make_shared<CharLMEmbedder>(tiny_char_lm(h))});
  EXPECT_EQ(with_char.total_dim(), 100 + 2 * h);
}

TEST(LoadStack, FromFilesWithMemberErrors) {
  const auto dir = oracle::temp_dir("load_stack");
  const std::string lex_path = (dir / "lex.txt").string();
  write_file_bytes(lex_path, "the 1 2\n");
  const std::string clm_path = (dir / "clm.bin").string();
  save_container(clm_path, tiny_char_lm(4)->to_container());
  const auto stack = load_stack(StackSpec::parse("static:" + lex_path + ";oov=mean,char_lm:" + clm_path));
  EXPECT_EQ(stack.total_dim(), 10u);
  EXPECT_EQ(stack.spec(), "static:" + lex_path + ";oov=mean,char_lm:" + clm_path);
  try {
    load_stack(StackSpec::parse("static:" + lex_path + ",word_lm:" + clm_path));
    FAIL();
  } catch (const StackMemberError& e) {
    EXPECT_EQ(e.index(), 1u);
    EXPECT_NE(std::string(e.what()).find("word_lm"), std::string::npos);
  }
  try {
    load_stack(StackSpec::parse("static:" + (dir / "missing.txt").string()));
    FAIL();
  } catch (const StackMemberError& e) {
    EXPECT_EQ(e.index(), 0u);
  }
}
