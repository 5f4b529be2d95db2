#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cner/cli.hpp"
#include "oracles.hpp"

using namespace cner;

namespace {

struct Result {
  int code;
  std::string out;
  std::string log;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, log;
  const int code = cli::run(args, out, log);
  return {code, out.str(), log.str()};
}

std::string join_lines(const std::vector<Sentence>& sentences) {
  std::string text;
  for (const auto& s : sentences) text += s.raw + "\n";
  return text;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = oracle::temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    write_file_bytes(path("chars.txt"), join_lines(oracle::toy_char_corpus()));
    write_file_bytes(path("words.txt"), join_lines(oracle::toy_word_corpus()));
    write_file_bytes(path("train.bio"), serialize_bio(oracle::toy_bio_dataset()));
    std::string lex;
    Rng rng(5);
    std::vector<std::string> seen;
    for (const auto& ls : oracle::toy_bio_dataset()) {
      for (const auto& t : ls.sentence.tokens) {
        if (std::find(seen.begin(), seen.end(), t.text) != seen.end()) continue;
        seen.push_back(t.text);
        lex += t.text;
        for (int d = 0; d < 8; ++d) lex += " " + std::to_string(rng.uniform(-1, 1));
        lex += "\n";
      }
    }
    write_file_bytes(path("lex.txt"), lex);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Result pretrain_char(const std::string& out) {
    return run({"pretrain-char", "--corpus", path("chars.txt"), "--output", path(out), "--char_lm.hidden_size", "8",
                "--char_lm.char_embed_dim", "4", "--char_lm.batch_size", "4", "--char_lm.sequence_length", "20",
                "--char_lm.max_epochs", "2", "--char_lm.lr", "1"});
  }

  Result pretrain_word(const std::string& out, const std::string& projection = "8") {
    return run({"pretrain-word", "--corpus", path("words.txt"), "--output", path(out), "--word_lm.hidden_size",
                projection == "8" ? "16" : projection, "--word_lm.projection_dim", projection, "--word_lm.layers", "1",
                "--word_lm.char_embed_dim", "4", "--word_lm.cnn_filters", "1:4,2:4", "--word_lm.max_epochs", "1",
                "--word_lm.batch_size", "5"});
  }

  Result train(const std::string& out, const std::string& epochs = "30") {
    return run({"train", "--train", path("train.bio"), "--stack", "static:" + path("lex.txt"), "--output", path(out),
                "--tagger.hidden_size", "16", "--tagger.batch_size", "1", "--tagger.dropout", "0", "--tagger.max_epochs",
                epochs});
  }

  std::filesystem::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  const auto bad_key = run({"stats", "--train", path("train.bio"), "--no_such_key", "1"});
  EXPECT_EQ(bad_key.code, 2);
  EXPECT_NE(bad_key.log.find("unknown config key 'no_such_key'"), std::string::npos);
  EXPECT_EQ(run({"stats", "--train"}).code, 2);
  EXPECT_EQ(run({"stats", "stray"}).code, 2);
}

TEST_F(CliTest, ConfigFileKeysCommentsAndOverrides) {
  write_file_bytes(path("run.cfg"), "# stats run\nname = fromfile\nformat = records\n");
  const auto r = run({"stats", "--config", path("run.cfg"), "--train", path("train.bio"), "--format", "text"});
  ASSERT_EQ(r.code, 0) << r.log;
  EXPECT_NE(r.out.find("fromfile"), std::string::npos);
  EXPECT_NE(r.log.find("config format = text"), std::string::npos);
  write_file_bytes(path("bad.cfg"), "bogus = 1\n");
  EXPECT_EQ(run({"stats", "--config", path("bad.cfg"), "--train", path("train.bio")}).code, 2);
  write_file_bytes(path("bad2.cfg"), "name\n");
  EXPECT_EQ(run({"stats", "--config", path("bad2.cfg"), "--train", path("train.bio")}).code, 2);
  EXPECT_EQ(run({"stats", "--config", path("missing.cfg"), "--train", path("train.bio")}).code, 2);
}

TEST_F(CliTest, PretrainBadKeyMissingCorpusAndBadValue) {
  EXPECT_EQ(run({"pretrain-char", "--corpus", path("chars.txt"), "--output", path("x.bin"), "--char_lm.hidden", "8"}).code, 2);
  EXPECT_EQ(run({"pretrain-char", "--corpus", path("nope.txt"), "--output", path("x.bin")}).code, 2);
  EXPECT_EQ(run({"pretrain-char", "--corpus", path("chars.txt")}).code, 2);
  EXPECT_EQ(run({"pretrain-char", "--corpus", path("chars.txt"), "--output", path("x.bin"), "--char_lm.lr", "-1"}).code, 2);
  EXPECT_EQ(run({"pretrain-word", "--corpus", path("words.txt"), "--output", path("x.bin"), "--word_lm.cnn_filters", "3"}).code, 2);
  EXPECT_FALSE(std::filesystem::exists(path("x.bin")));
}

TEST_F(CliTest, PretrainIsDeterministicAndLogsConfig) {
  const auto a = pretrain_char("a.bin");
  ASSERT_EQ(a.code, 0) << a.log;
  ASSERT_EQ(pretrain_char("b.bin").code, 0);
  EXPECT_EQ(read_file_bytes(path("a.bin")), read_file_bytes(path("b.bin")));
  EXPECT_NE(a.log.find("config seed = 1"), std::string::npos);
  EXPECT_NE(a.log.find("epoch=2 train_nats_per_char="), std::string::npos);
  EXPECT_EQ(load_container(path("a.bin")).kind(), "char_lm");

  ASSERT_EQ(pretrain_word("w1.bin").code, 0);
  ASSERT_EQ(pretrain_word("w2.bin").code, 0);
  EXPECT_EQ(read_file_bytes(path("w1.bin")), read_file_bytes(path("w2.bin")));
}

TEST_F(CliTest, TrainPredictEvalRoundTrip) {
  const auto t = train("tagger.bin");
  ASSERT_EQ(t.code, 0) << t.log;
  std::size_t epoch_lines = 0;
  for (std::size_t p = t.log.find("epoch="); p != std::string::npos; p = t.log.find("epoch=", p + 1)) ++epoch_lines;
  EXPECT_EQ(epoch_lines, 30u);
  ASSERT_EQ(train("tagger2.bin").code, 0);
  EXPECT_EQ(read_file_bytes(path("tagger.bin")), read_file_bytes(path("tagger2.bin")));

  const auto p = run({"predict", "--model", path("tagger.bin"), "--input", path("train.bio"), "--output", path("pred.txt")});
  ASSERT_EQ(p.code, 0) << p.log;
  const auto e = run({"eval", "--gold", path("train.bio"), "--pred", path("pred.txt"), "--format", "records"});
  ASSERT_EQ(e.code, 0) << e.log;
  EXPECT_NE(e.out.find("type=micro"), std::string::npos);
  EXPECT_NE(e.out.find("f1=1.000000"), std::string::npos) << e.out;

  const auto direct = run({"eval", "--gold", path("train.bio"), "--model", path("tagger.bin")});
  ASSERT_EQ(direct.code, 0) << direct.log;
  const auto gold = parse_bio(read_file_bytes(path("train.bio"))).sentences;
  std::vector<std::vector<std::string>> tags;
  for (const auto& ls : gold) tags.push_back(ls.tags);
  EXPECT_EQ(direct.out, render_report(micro_f1(gold, tags)));

  const auto spans = run({"predict", "--model", path("tagger.bin"), "--input", path("train.bio"), "--format", "spans"});
  ASSERT_EQ(spans.code, 0);
  EXPECT_NE(spans.out.find("sentence=0 type="), std::string::npos);
}

TEST_F(CliTest, TrainErrors) {
  EXPECT_EQ(run({"train", "--train", path("missing.bio"), "--stack", "static:" + path("lex.txt"), "--output",
                 path("t.bin")}).code, 2);
  const auto missing_member = run({"train", "--train", path("train.bio"), "--stack", "static:" + path("nolex.txt"),
                                   "--output", path("t.bin")});
  EXPECT_EQ(missing_member.code, 2);
  EXPECT_NE(missing_member.log.find("stack member 0 (static)"), std::string::npos);
  EXPECT_EQ(run({"train", "--train", path("train.bio"), "--stack", "glove:" + path("lex.txt"), "--output",
                 path("t.bin")}).code, 2);
  EXPECT_EQ(run({"train", "--train", path("train.bio"), "--stack", "static:" + path("lex.txt")}).code, 2);
}

TEST_F(CliTest, KindMismatchesNameExpectedKind) {
  ASSERT_EQ(pretrain_char("clm.bin").code, 0);
  ASSERT_EQ(train("tagger.bin", "1").code, 0);
  write_file_bytes(path("in.txt"), "the patient had fever.\n");
  const auto embed_tagger = run({"embed", "--model", path("tagger.bin"), "--input", path("in.txt")});
  EXPECT_EQ(embed_tagger.code, 2);
  EXPECT_NE(embed_tagger.log.find("char_lm"), std::string::npos);
  const auto predict_lm = run({"predict", "--model", path("clm.bin"), "--input", path("train.bio")});
  EXPECT_EQ(predict_lm.code, 2);
  EXPECT_NE(predict_lm.log.find("tagger"), std::string::npos);
  const auto stack_wrong = run({"embed", "--stack", "word_lm:" + path("clm.bin"), "--input", path("in.txt")});
  EXPECT_EQ(stack_wrong.code, 2);
  EXPECT_NE(stack_wrong.log.find("word_lm"), std::string::npos);
  write_file_bytes(path("junk.bin"), "not a checkpoint");
  EXPECT_NE(run({"embed", "--model", path("junk.bin"), "--input", path("in.txt")}).code, 0);
  const auto dims = run({"predict", "--model", path("tagger.bin"), "--input", path("train.bio"), "--stack",
                         "char_lm:" + path("clm.bin")});
  EXPECT_EQ(dims.code, 2);
  EXPECT_NE(dims.log.find("member 0 (char_lm) dim 16"), std::string::npos) << dims.log;
}

TEST_F(CliTest, EmbedHeaderAndDeterminism) {
  ASSERT_EQ(pretrain_word("elmo.bin", "256").code, 0);
  write_file_bytes(path("in.txt"), "chest pain and fever. No surgery.\n");
  const auto a = run({"embed", "--model", path("elmo.bin"), "--input", path("in.txt")});
  ASSERT_EQ(a.code, 0) << a.log;
  EXPECT_EQ(a.out.rfind("# dim=512 stack=word_lm:" + path("elmo.bin") + ";mixing=mean\n", 0), 0u) << a.out.substr(0, 200);
  const auto b = run({"embed", "--model", path("elmo.bin"), "--input", path("in.txt")});
  EXPECT_EQ(a.out, b.out);
  // Header, 5 + 3 token lines and one blank separator.
  std::size_t lines = 0;
  for (char ch : a.out) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 5u + 1u + 3u);
  const std::size_t tab = a.out.find('\t');
  const std::string first = a.out.substr(tab + 1, a.out.find('\n', tab) - tab - 1);
  std::istringstream values(first);
  std::size_t count = 0;
  for (double v; values >> v;) ++count;
  EXPECT_EQ(count, 512u);
}

TEST_F(CliTest, StatsAndFilter) {
  const auto r = run({"stats", "--train", path("train.bio"), "--format", "records"});
  ASSERT_EQ(r.code, 0);
  const auto data = parse_bio(read_file_bytes(path("train.bio"))).sentences;
  const std::vector<SplitStats> splits = {{"train", corpus_stats(data)}};
  EXPECT_EQ(r.out, render_stats_records(splits));
  EXPECT_EQ(run({"stats"}).code, 2);

  write_file_bytes(path("docs.txt"), "a case report of gout\nunrelated genome text\nclinical report: fever\n");
  const auto f = run({"filter", "--input", path("docs.txt")});
  ASSERT_EQ(f.code, 0);
  EXPECT_EQ(f.out, "a case report of gout\nclinical report: fever\n");
  EXPECT_NE(f.log.find("kept 2 of 3 documents"), std::string::npos);
}
