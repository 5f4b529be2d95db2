#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cner/eval.hpp"
#include "cner/text_corpus.hpp"

namespace cner {

struct CorpusStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t entity_types = 0;
  std::map<std::string, std::size_t> per_type;

  bool operator==(const CorpusStats&) const = default;
};

inline CorpusStats corpus_stats(std::span<const LabeledSentence> dataset) {
  CorpusStats stats;
  for (const auto& ls : dataset) {
    ++stats.sentences;
    stats.tokens += ls.sentence.tokens.size();
    for (const auto& span : spans_from_bio(ls.tags)) ++stats.per_type[span.entity_type];
  }
  stats.entity_types = stats.per_type.size();
  return stats;
}

/// A named split of one dataset ("Train", "Dev", "Test").
struct SplitStats {
  std::string split;
  CorpusStats stats;
};

namespace detail {

inline std::string with_thousands(std::size_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  const std::size_t n = digits.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i && (n - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

inline std::string render_table(const std::string& title, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& r : rows) {
    if (widths.size() < r.size()) widths.resize(r.size(), 0);
    for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], r[c].size());
  }
  std::string out = title + "\n";
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) line += "  ";
      line += c == 0 ? pad_right(r[c], widths[c]) : pad_left(r[c], widths[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace detail

/// Sentence, token and entity-type tables, one row for the dataset and one
/// column per split, followed by per-type entity counts.
inline std::string render_stats(const std::string& dataset_name, std::span<const SplitStats> splits) {
  std::vector<std::string> header{"Dataset Name"};
  std::vector<std::string> sentences{dataset_name};
  std::vector<std::string> tokens{dataset_name};
  std::set<std::string> all_types;
  for (const auto& s : splits) {
    header.push_back(s.split);
    sentences.push_back(detail::with_thousands(s.stats.sentences));
    tokens.push_back(detail::with_thousands(s.stats.tokens));
    for (const auto& entry : s.stats.per_type) all_types.insert(entry.first);
  }
  std::string out;
  out += detail::render_table("Number of sentences", {header, sentences});
  out += "\n";
  out += detail::render_table("Number of tokens", {header, tokens});
  out += "\n";
  out += detail::render_table("Number of entity types",
                              {{"Dataset Name", "# of Entity Types"},
                               {dataset_name, std::to_string(all_types.size())}});
  out += "\n";
  std::vector<std::vector<std::string>> per_type;
  std::vector<std::string> type_header{"Entity type"};
  for (const auto& s : splits) type_header.push_back(s.split);
  per_type.push_back(type_header);
  for (const auto& type : all_types) {
    std::vector<std::string> row{type};
    for (const auto& s : splits) {
      const auto it = s.stats.per_type.find(type);
      row.push_back(detail::with_thousands(it == s.stats.per_type.end() ? 0 : it->second));
    }
    per_type.push_back(row);
  }
  out += detail::render_table("Entity counts", per_type);
  return out;
}

inline std::string render_stats_records(std::span<const SplitStats> splits) {
  std::string out;
  for (const auto& s : splits) {
    out += "split=" + s.split + " sentences=" + std::to_string(s.stats.sentences) +
           " tokens=" + std::to_string(s.stats.tokens) +
           " entity_types=" + std::to_string(s.stats.entity_types) + "\n";
    for (const auto& [type, count] : s.stats.per_type) {
      out += "split=" + s.split + " type=" + type + " count=" + std::to_string(count) + "\n";
    }
  }
  return out;
}

}  // namespace cner
