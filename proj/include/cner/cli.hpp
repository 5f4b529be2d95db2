#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cner/char_lm.hpp"
#include "cner/config.hpp"
#include "cner/container.hpp"
#include "cner/corpus_stats.hpp"
#include "cner/embeddings.hpp"
#include "cner/eval.hpp"
#include "cner/tagger.hpp"
#include "cner/text_corpus.hpp"
#include "cner/word_lm.hpp"

namespace cner::cli {

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

namespace detail {

// Out-of-range hyperparameters are configuration errors.
template <class Config>
void checked(const Config& config) {
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline std::vector<KeySpec> char_lm_keys() {
  const CharLMConfig d;
  return {
      {"char_lm.hidden_size", std::to_string(d.hidden_size), "LSTM hidden size"},
      {"char_lm.sequence_length", std::to_string(d.sequence_length), "truncated-backprop window"},
      {"char_lm.batch_size", std::to_string(d.batch_size), "parallel stream rows"},
      {"char_lm.char_embed_dim", std::to_string(d.char_embed_dim), "character embedding size"},
      {"char_lm.lr", format_double(d.lr), "initial learning rate"},
      {"char_lm.anneal_factor", format_double(d.anneal_factor), "lr divisor on plateau"},
      {"char_lm.patience", std::to_string(d.patience), "epochs without improvement before annealing"},
      {"char_lm.clip_norm", format_double(d.clip_norm), "global gradient norm clip"},
      {"char_lm.min_lr", format_double(d.min_lr), "stop once lr falls below"},
      {"char_lm.max_epochs", std::to_string(d.max_epochs), "epoch limit"},
      {"char_lm.min_count", std::to_string(d.min_count), "minimum character count for the vocabulary"},
  };
}

inline CharLMConfig char_lm_config(const RunConfig& c) {
  CharLMConfig out;
  out.hidden_size = c.get_size("char_lm.hidden_size");
  out.sequence_length = c.get_size("char_lm.sequence_length");
  out.batch_size = c.get_size("char_lm.batch_size");
  out.char_embed_dim = c.get_size("char_lm.char_embed_dim");
  out.lr = c.get_double("char_lm.lr");
  out.anneal_factor = c.get_double("char_lm.anneal_factor");
  out.patience = static_cast<int>(c.get_int("char_lm.patience"));
  out.clip_norm = c.get_double("char_lm.clip_norm");
  out.min_lr = c.get_double("char_lm.min_lr");
  out.max_epochs = c.get_size("char_lm.max_epochs");
  out.min_count = c.get_size("char_lm.min_count");
  checked(out);
  return out;
}

inline std::vector<KeySpec> word_lm_keys() {
  const WordLMConfig d;
  return {
      {"word_lm.hidden_size", std::to_string(d.hidden_size), "LSTM hidden size"},
      {"word_lm.projection_dim", std::to_string(d.projection_dim), "LSTM projection and token vector size"},
      {"word_lm.layers", std::to_string(d.layers), "LSTM layers per direction"},
      {"word_lm.max_word_chars", std::to_string(d.max_word_chars), "characters kept per token"},
      {"word_lm.char_embed_dim", std::to_string(d.char_embed_dim), "character embedding size"},
      {"word_lm.cnn_filters", format_filters(d.cnn_filters), "width:count list"},
      {"word_lm.highway_layers", std::to_string(d.highway_layers), "highway layers after pooling"},
      {"word_lm.vocab_size", std::to_string(d.vocab_size), "softmax vocabulary size"},
      {"word_lm.softmax", d.softmax, "softmax kind"},
      {"word_lm.lr", format_double(d.lr), "initial learning rate"},
      {"word_lm.anneal_factor", format_double(d.anneal_factor), "lr divisor on plateau"},
      {"word_lm.patience", std::to_string(d.patience), "epochs without improvement before annealing"},
      {"word_lm.clip_norm", format_double(d.clip_norm), "global gradient norm clip"},
      {"word_lm.min_lr", format_double(d.min_lr), "stop once lr falls below"},
      {"word_lm.batch_size", std::to_string(d.batch_size), "sentences per update"},
      {"word_lm.max_epochs", std::to_string(d.max_epochs), "epoch limit"},
      {"word_lm.min_count", std::to_string(d.min_count), "minimum character count for the vocabulary"},
  };
}

inline WordLMConfig word_lm_config(const RunConfig& c) {
  WordLMConfig out;
  out.hidden_size = c.get_size("word_lm.hidden_size");
  out.projection_dim = c.get_size("word_lm.projection_dim");
  out.layers = c.get_size("word_lm.layers");
  out.max_word_chars = c.get_size("word_lm.max_word_chars");
  out.char_embed_dim = c.get_size("word_lm.char_embed_dim");
  try {
    out.cnn_filters = parse_filters(c.get("word_lm.cnn_filters"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  out.highway_layers = static_cast<std::size_t>(c.get_int("word_lm.highway_layers"));
  out.vocab_size = c.get_size("word_lm.vocab_size");
  out.softmax = c.get("word_lm.softmax");
  out.lr = c.get_double("word_lm.lr");
  out.anneal_factor = c.get_double("word_lm.anneal_factor");
  out.patience = static_cast<int>(c.get_int("word_lm.patience"));
  out.clip_norm = c.get_double("word_lm.clip_norm");
  out.min_lr = c.get_double("word_lm.min_lr");
  out.batch_size = c.get_size("word_lm.batch_size");
  out.max_epochs = c.get_size("word_lm.max_epochs");
  out.min_count = c.get_size("word_lm.min_count");
  checked(out);
  return out;
}

inline std::vector<KeySpec> tagger_keys() {
  const TaggerConfig d;
  return {
      {"tagger.hidden_size", std::to_string(d.hidden_size), "encoder hidden size per direction"},
      {"tagger.lr", format_double(d.lr), "initial learning rate"},
      {"tagger.anneal_factor", format_double(d.anneal_factor), "lr divisor on plateau"},
      {"tagger.batch_size", std::to_string(d.batch_size), "sentences per update"},
      {"tagger.max_epochs", std::to_string(d.max_epochs), "epoch limit"},
      {"tagger.patience", std::to_string(d.patience), "epochs without improvement before annealing"},
      {"tagger.clip_norm", format_double(d.clip_norm), "global gradient norm clip"},
      {"tagger.min_lr", format_double(d.min_lr), "stop once lr falls below"},
      {"tagger.dropout", format_double(d.dropout), "feature dropout during training"},
  };
}

inline TaggerConfig tagger_config(const RunConfig& c) {
  TaggerConfig out;
  out.hidden_size = c.get_size("tagger.hidden_size");
  out.lr = c.get_double("tagger.lr");
  out.anneal_factor = c.get_double("tagger.anneal_factor");
  out.batch_size = c.get_size("tagger.batch_size");
  out.max_epochs = c.get_size("tagger.max_epochs");
  out.patience = static_cast<int>(c.get_int("tagger.patience"));
  out.clip_norm = c.get_double("tagger.clip_norm");
  out.min_lr = c.get_double("tagger.min_lr");
  out.dropout = c.get_double("tagger.dropout");
  out.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  checked(out);
  return out;
}

inline std::vector<KeySpec> join(std::vector<KeySpec> a, const std::vector<KeySpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline const std::string& existing_file(const RunConfig& c, const std::string& key) {
  const std::string& path = c.require(key);
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("file for '" + key + "' not found: " + path);
  return path;
}

inline std::vector<Sentence> read_corpus(const std::string& path, const std::string& format, bool filter) {
  const std::string bytes = read_file_bytes(path);
  std::vector<Sentence> out;
  if (format == "bio") {
    for (auto& ls : parse_bio(bytes).sentences) out.push_back(std::move(ls.sentence));
    return out;
  }
  if (format != "text") throw ConfigError("corpus_format must be text or bio, got '" + format + "'");
  if (!filter) return tokenize(bytes);
  const auto docs = split_line_documents(bytes);
  for (const auto& doc : filter_case_reports(docs, default_case_report_keywords())) {
    for (auto& s : tokenize(doc.text)) out.push_back(std::move(s));
  }
  return out;
}

/// Sentences to label or embed. BIO input keeps its gold tags.
inline std::vector<LabeledSentence> read_input(const std::string& path, const std::string& format) {
  const std::string bytes = read_file_bytes(path);
  if (format == "bio") return parse_bio(bytes).sentences;
  if (format != "text") throw ConfigError("input_format must be text or bio, got '" + format + "'");
  std::vector<LabeledSentence> out;
  for (auto& s : tokenize(bytes)) out.push_back(LabeledSentence{std::move(s), {}});
  return out;
}

/// Two-column BIO, or predict output whose last column holds the tags.
inline std::vector<LabeledSentence> read_tagged(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  std::string two;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) eol = bytes.size();
    std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    const std::size_t first = line.find('\t');
    const std::size_t last = line.rfind('\t');
    if (first != std::string::npos && first != last) line = line.substr(0, first) + line.substr(last);
    two += line + "\n";
  }
  return parse_bio(two).sentences;
}

/// Checks member files exist and hold the right model kind before loading.
inline void validate_stack(const StackSpec& spec) {
  for (std::size_t i = 0; i < spec.members.size(); ++i) {
    const auto& m = spec.members[i];
    if (!std::filesystem::is_regular_file(m.path)) {
      throw ConfigError("stack member " + std::to_string(i) + " (" + m.kind + "): file not found: " + m.path);
    }
    if (m.kind == "static") continue;
    try {
      load_container(m.path).expect_kind(m.kind);
    } catch (const ContainerError& e) {
      throw ConfigError("stack member " + std::to_string(i) + " (" + m.kind + "): " + e.what());
    }
  }
}

inline EmbedderStack open_stack(const std::string& text) {
  StackSpec spec;
  try {
    spec = StackSpec::parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  validate_stack(spec);
  return load_stack(spec);
}

inline std::string describe_stack(const EmbedderStack& stack) {
  std::string out;
  for (std::size_t i = 0; i < stack.size(); ++i) {
    if (i) out += ", ";
    out += "member " + std::to_string(i) + " (" + stack.member(i).kind() + ") dim " +
           std::to_string(stack.member(i).dim());
  }
  return out;
}

inline TaggerModel open_tagger(const std::string& path) {
  return TaggerModel::from_container(load_container(path));
}

inline EmbedderStack tagger_stack(const TaggerModel& model, const RunConfig& c) {
  const EmbedderStack stack = open_stack(c.has("stack") ? c.get("stack") : model.stack_spec());
  if (stack.total_dim() != model.input_dim()) {
    throw ConfigError("embedder stack yields " + std::to_string(stack.total_dim()) + " dims (" +
                      describe_stack(stack) + "), tagger expects " + std::to_string(model.input_dim()));
  }
  return stack;
}

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : path_(path), fallback_(fallback) {}
  std::ostream& stream() { return path_.empty() ? fallback_ : buffer_; }
  void finish() {
    if (!path_.empty()) write_file_bytes(path_, buffer_.str());
  }

 private:
  std::string path_;
  std::ostream& fallback_;
  std::ostringstream buffer_;
};

inline std::string vector_text(std::span<const float> v) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, i ? " %.6g" : "%.6g", static_cast<double>(v[i]));
    out += buf;
  }
  return out;
}

inline std::vector<std::string> split_keywords(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t bar = text.find('|', pos);
    if (bar == std::string::npos) bar = text.size();
    if (bar > pos) out.push_back(text.substr(pos, bar - pos));
    pos = bar + 1;
  }
  if (out.empty()) throw ConfigError("keywords must name at least one phrase");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each receives the resolved config; primary results go to `out`
// or the configured output file, progress and the config echo to `log`.

struct Command {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
  int (*run)(const RunConfig&, std::ostream& out, std::ostream& log);
};

inline int cmd_pretrain_char(const RunConfig& c, std::ostream& out, std::ostream& log) {
  const auto corpus = detail::read_corpus(detail::existing_file(c, "corpus"), c.get("corpus_format"),
                                          c.get_bool("case_report_filter"));
  std::vector<Sentence> dev;
  if (c.has("dev")) dev = detail::read_corpus(detail::existing_file(c, "dev"), c.get("corpus_format"), false);
  const CharLMConfig config = detail::char_lm_config(c);
  Rng rng(static_cast<std::uint64_t>(c.get_int("seed")));
  const auto result = train_char_lm(corpus, config, rng, dev, {c.require("output"), &log});
  save_container(c.get("output"), result.model.to_container());
  out << "wrote " << c.get("output") << " kind=char_lm epochs=" << result.epochs.size() << "\n";
  return kOk;
}

inline int cmd_pretrain_word(const RunConfig& c, std::ostream& out, std::ostream& log) {
  const auto corpus = detail::read_corpus(detail::existing_file(c, "corpus"), c.get("corpus_format"),
                                          c.get_bool("case_report_filter"));
  std::vector<Sentence> dev;
  if (c.has("dev")) dev = detail::read_corpus(detail::existing_file(c, "dev"), c.get("corpus_format"), false);
  const WordLMConfig config = detail::word_lm_config(c);
  Rng rng(static_cast<std::uint64_t>(c.get_int("seed")));
  const auto result = train_word_lm(corpus, config, rng, dev, {c.require("output"), &log});
  save_container(c.get("output"), result.model.to_container());
  out << "wrote " << c.get("output") << " kind=word_lm epochs=" << result.epochs.size() << "\n";
  return kOk;
}

inline int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& log) {
  const auto train = parse_bio(read_file_bytes(detail::existing_file(c, "train"))).sentences;
  std::vector<LabeledSentence> dev;
  if (c.has("dev")) dev = parse_bio(read_file_bytes(detail::existing_file(c, "dev"))).sentences;
  const TaggerConfig config = detail::tagger_config(c);
  const std::string& output = c.require("output");
  const EmbedderStack stack = detail::open_stack(c.require("stack"));
  if (train.empty()) throw ConfigError("training file holds no sentences");
  const auto result = train_tagger(train, dev, stack, config, {output, &log});
  save_container(output, result.model.to_container());
  out << "wrote " << output << " kind=tagger epochs=" << result.epochs.size() << "\n";
  return kOk;
}

inline int cmd_predict(const RunConfig& c, std::ostream& out, std::ostream&) {
  const TaggerModel model = detail::open_tagger(detail::existing_file(c, "model"));
  const auto input = detail::read_input(detail::existing_file(c, "input"), c.get("input_format"));
  const std::string format = c.get("format");
  if (format != "bio" && format != "spans") throw ConfigError("format must be bio or spans, got '" + format + "'");
  const EmbedderStack stack = detail::tagger_stack(model, c);
  detail::Output sink(c.get("output"), out);
  std::ostream& os = sink.stream();
  for (std::size_t s = 0; s < input.size(); ++s) {
    const auto& ls = input[s];
    const Prediction p = predict(model, stack, ls.sentence);
    if (format == "spans") {
      for (const auto& span : p.spans) {
        os << "sentence=" << s << " type=" << span.entity_type << " start=" << span.start << " end=" << span.end
           << "\n";
      }
      continue;
    }
    for (std::size_t k = 0; k < ls.sentence.tokens.size(); ++k) {
      os << ls.sentence.tokens[k].text;
      if (!ls.tags.empty()) os << '\t' << ls.tags[k];
      os << '\t' << p.tags[k] << '\n';
    }
    os << '\n';
  }
  sink.finish();
  return kOk;
}

inline int cmd_eval(const RunConfig& c, std::ostream& out, std::ostream&) {
  const auto gold = parse_bio(read_file_bytes(detail::existing_file(c, "gold"))).sentences;
  std::vector<std::vector<std::string>> pred;
  if (c.has("pred") == c.has("model")) throw ConfigError("give exactly one of 'pred' or 'model'");
  if (c.has("pred")) {
    const auto tagged = detail::read_tagged(detail::existing_file(c, "pred"));
    for (const auto& ls : tagged) pred.push_back(ls.tags);
  } else {
    const TaggerModel model = detail::open_tagger(detail::existing_file(c, "model"));
    const EmbedderStack stack = detail::tagger_stack(model, c);
    for (const auto& ls : gold) pred.push_back(predict(model, stack, ls.sentence).tags);
  }
  const std::string format = c.get("format");
  if (format != "text" && format != "records") throw ConfigError("format must be text or records, got '" + format + "'");
  const EvalReport report = micro_f1(gold, pred);
  out << (format == "text" ? render_report(report) : render_report_records(report));
  return kOk;
}

inline int cmd_embed(const RunConfig& c, std::ostream& out, std::ostream&) {
  if (c.has("model") == c.has("stack")) throw ConfigError("give exactly one of 'model' or 'stack'");
  std::string spec;
  if (c.has("model")) {
    const std::string& path = detail::existing_file(c, "model");
    const std::string kind = load_container(path).kind();
    if (kind == "char_lm") {
      spec = "char_lm:" + path;
    } else if (kind == "word_lm") {
      spec = "word_lm:" + path + ";mixing=" + c.get("mixing");
    } else {
      throw KindMismatchError("expected a model of kind 'char_lm' or 'word_lm', got '" + (kind.empty() ? "?" : kind) +
                              "'");
    }
  } else {
    spec = c.get("stack");
  }
  const EmbedderStack stack = detail::open_stack(spec);
  const auto input = detail::read_input(detail::existing_file(c, "input"), c.get("input_format"));
  detail::Output sink(c.get("output"), out);
  std::ostream& os = sink.stream();
  os << "# dim=" << stack.total_dim() << " stack=" << stack.spec() << "\n";
  for (std::size_t s = 0; s < input.size(); ++s) {
    if (s) os << "\n";
    const auto& sentence = input[s].sentence;
    const auto vectors = stack_embed(stack, sentence);
    for (std::size_t k = 0; k < sentence.tokens.size(); ++k) {
      os << sentence.tokens[k].text << '\t' << detail::vector_text(vectors.row(k)) << '\n';
    }
  }
  sink.finish();
  return kOk;
}

inline int cmd_stats(const RunConfig& c, std::ostream& out, std::ostream&) {
  std::vector<SplitStats> splits;
  for (const char* split : {"train", "dev", "test"}) {
    if (!c.has(split)) continue;
    const auto data = parse_bio(read_file_bytes(detail::existing_file(c, split))).sentences;
    splits.push_back(SplitStats{split, corpus_stats(data)});
  }
  if (splits.empty()) throw ConfigError("give at least one of 'train', 'dev', 'test'");
  const std::string format = c.get("format");
  if (format == "text") {
    out << render_stats(c.get("name"), splits);
  } else if (format == "records") {
    out << render_stats_records(splits);
  } else {
    throw ConfigError("format must be text or records, got '" + format + "'");
  }
  return kOk;
}

inline int cmd_filter(const RunConfig& c, std::ostream& out, std::ostream& log) {
  const auto docs = split_line_documents(read_file_bytes(detail::existing_file(c, "input")));
  const auto keywords = detail::split_keywords(c.get("keywords"));
  const auto kept = filter_case_reports(docs, keywords);
  detail::Output sink(c.get("output"), out);
  for (const auto& d : kept) sink.stream() << d.text << "\n";
  sink.finish();
  log << "kept " << kept.size() << " of " << docs.size() << " documents\n";
  return kOk;
}

inline std::vector<Command> commands() {
  using detail::join;
  const std::vector<KeySpec> seed = {{"seed", "1", "random seed"}};
  const std::vector<KeySpec> corpus = {
      {"corpus", "", "training corpus"},
      {"dev", "", "held-out corpus"},
      {"output", "", "checkpoint path"},
      {"corpus_format", "text", "text or bio"},
      {"case_report_filter", "false", "keep only line documents mentioning case reports"},
  };
  return {
      {"pretrain-char", "train the character-level language model",
       join(join(seed, corpus), detail::char_lm_keys()), cmd_pretrain_char},
      {"pretrain-word", "train the word-level language model", join(join(seed, corpus), detail::word_lm_keys()),
       cmd_pretrain_word},
      {"train", "train the sequence tagger",
       join(join(seed,
                 {{"train", "", "training BIO file"},
                  {"dev", "", "development BIO file"},
                  {"stack", "", "embedder stack, kind:path[;opt=value],..."},
                  {"output", "", "checkpoint path"}}),
            detail::tagger_keys()),
       cmd_train},
      {"predict", "tag sentences with a trained tagger",
       {{"model", "", "tagger checkpoint"},
        {"input", "", "input file"},
        {"input_format", "bio", "bio or text"},
        {"format", "bio", "bio or spans"},
        {"stack", "", "override the stack stored in the checkpoint"},
        {"output", "", "output file (default stdout)"}},
       cmd_predict},
      {"eval", "score predictions against gold BIO",
       {{"gold", "", "gold BIO file"},
        {"pred", "", "predicted tags (BIO or predict output)"},
        {"model", "", "tagger checkpoint to predict with"},
        {"stack", "", "override the stack stored in the checkpoint"},
        {"format", "text", "text or records"}},
       cmd_eval},
      {"embed", "write per-token vectors",
       {{"model", "", "char_lm or word_lm checkpoint"},
        {"stack", "", "embedder stack, kind:path[;opt=value],..."},
        {"mixing", "mean", "word-LM layer mixing: mean, top or w0/w1/..."},
        {"input", "", "input file"},
        {"input_format", "text", "text or bio"},
        {"output", "", "output file (default stdout)"}},
       cmd_embed},
      {"stats", "corpus statistics tables",
       {{"name", "dataset", "dataset name"},
        {"train", "", "training BIO file"},
        {"dev", "", "development BIO file"},
        {"test", "", "test BIO file"},
        {"format", "text", "text or records"}},
       cmd_stats},
      {"filter", "select case-report documents, one per line",
       {{"input", "", "line-document file"},
        {"output", "", "output file (default stdout)"},
        {"keywords", "case report|clinical report", "'|'-separated phrases"}},
       cmd_filter},
  };
}

/// Entry point without argv[0]. Returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  const auto table = commands();
  CLI::App app{"Clinical named-entity recognition toolkit", "cner"};
  app.require_subcommand(1);
  std::vector<std::string> config_paths(table.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::string help = table[i].help + "\n\nkeys (--key value or `key = value` in the config file):";
    for (const auto& k : table[i].keys) {
      help += "\n  " + k.key + (k.default_value.empty() ? "" : " [" + k.default_value + "]") + "  " + k.help;
    }
    auto* sub = app.add_subcommand(table[i].name, help);
    sub->add_option("--config", config_paths[i], "key = value config file");
    sub->allow_extras();
    subs.push_back(sub);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    log << "error: " << e.what() << "\n";
    return kUsageError;
  }

  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      RunConfig config(table[i].keys);
      if (!config_paths[i].empty()) config.merge_file(config_paths[i]);
      config.merge_flags(subs[i]->remaining());
      log << "command " << table[i].name << "\n" << config.render();
      return table[i].run(config, out, log);
    } catch (const ConfigError& e) {
      log << "error: " << e.what() << "\n";
      return kUsageError;
    } catch (const KindMismatchError& e) {
      log << "error: " << e.what() << "\n";
      return kUsageError;
    } catch (const std::exception& e) {
      log << "error: " << e.what() << "\n";
      return kRuntimeError;
    }
  }
  return kUsageError;
}

}  // namespace cner::cli
