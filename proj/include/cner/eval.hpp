#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdio>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "cner/text_corpus.hpp"

namespace cner {

/// An entity mention over token indices, `end` inclusive.
struct Span {
  std::string entity_type;
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const Span& other) const {
    return std::tie(start, end, entity_type) <=> std::tie(other.start, other.end, other.entity_type);
  }
  bool operator==(const Span&) const = default;
};

class InvalidBioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Each maximal B-X (I-X)* run becomes one span. Sequences that are not valid
/// BIO are rejected; run them through bio_normalize first.
inline std::vector<Span> spans_from_bio(std::span<const std::string> tags) {
  std::vector<Span> spans;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto parts = parse_tag(tags[i]);
    if (!parts) throw InvalidBioError("malformed BIO tag '" + tags[i] + "'");
    switch (parts->prefix) {
      case TagPrefix::kOutside:
        break;
      case TagPrefix::kBegin:
        spans.push_back(Span{std::string(parts->type), i, i});
        break;
      case TagPrefix::kInside:
        if (i == 0 || spans.empty() || spans.back().end + 1 != i ||
            spans.back().entity_type != parts->type) {
          throw InvalidBioError("tag '" + tags[i] + "' at position " + std::to_string(i) +
                                " does not continue a span; apply bio_normalize first");
        }
        spans.back().end = i;
        break;
    }
  }
  return spans;
}

struct PrfCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision();
    const double r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }

  PrfCounts& operator+=(const PrfCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const PrfCounts&) const = default;
};

struct EvalReport {
  std::map<std::string, PrfCounts> per_type;
  PrfCounts micro;

  bool operator==(const EvalReport&) const = default;
};

/// Adds one sentence's exact-match span comparison into `report`.
inline void accumulate_spans(EvalReport& report, std::span<const Span> gold, std::span<const Span> pred) {
  std::vector<Span> g(gold.begin(), gold.end());
  std::vector<Span> p(pred.begin(), pred.end());
  std::sort(g.begin(), g.end());
  std::sort(p.begin(), p.end());
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < g.size() || j < p.size()) {
    if (j == p.size() || (i < g.size() && g[i] < p[j])) {
      ++report.per_type[g[i].entity_type].fn;
      ++report.micro.fn;
      ++i;
    } else if (i == g.size() || p[j] < g[i]) {
      ++report.per_type[p[j].entity_type].fp;
      ++report.micro.fp;
      ++j;
    } else {
      ++report.per_type[g[i].entity_type].tp;
      ++report.micro.tp;
      ++i;
      ++j;
    }
  }
}

/// Exact (type, start, end) matching per sentence, counts pooled over the corpus.
inline EvalReport micro_f1(std::span<const LabeledSentence> gold,
                           std::span<const std::vector<std::string>> pred) {
  if (gold.size() != pred.size()) {
    throw std::invalid_argument("prediction count " + std::to_string(pred.size()) +
                                " does not match gold sentence count " + std::to_string(gold.size()));
  }
  EvalReport report;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].tags.size() != pred[s].size()) {
      throw std::invalid_argument("sentence " + std::to_string(s) + ": predicted " +
                                  std::to_string(pred[s].size()) + " tags for " +
                                  std::to_string(gold[s].tags.size()) + " tokens");
    }
    const auto g = spans_from_bio(gold[s].tags);
    const auto p = spans_from_bio(pred[s]);
    accumulate_spans(report, g, p);
  }
  return report;
}

namespace detail {

inline std::string fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

inline std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace detail

/// Aligned table: one row per type (sorted by name), then the micro row.
/// Precision, recall and F1 are percentages with two decimals.
inline std::string render_report(const EvalReport& report) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Entity type", "TP", "FP", "FN", "Precision", "Recall", "F1"});
  auto row = [](const std::string& name, const PrfCounts& c) {
    return std::vector<std::string>{name,
                                    std::to_string(c.tp),
                                    std::to_string(c.fp),
                                    std::to_string(c.fn),
                                    detail::fixed(100.0 * c.precision(), 2),
                                    detail::fixed(100.0 * c.recall(), 2),
                                    detail::fixed(100.0 * c.f1(), 2)};
  };
  for (const auto& [type, counts] : report.per_type) rows.push_back(row(type, counts));
  rows.push_back(row("micro", report.micro));

  std::vector<std::size_t> widths(rows.front().size(), 0);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], r[c].size());
  }
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out += "  ";
      out += c == 0 ? detail::pad_right(r[c], widths[c]) : detail::pad_left(r[c], widths[c]);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out.push_back('\n');
  }
  return out;
}

/// One `type=.. tp=.. fp=.. fn=.. p=.. r=.. f1=..` record per type, then `type=micro`.
inline std::string render_report_records(const EvalReport& report) {
  std::string out;
  auto record = [&](const std::string& name, const PrfCounts& c) {
    out += "type=" + name + " tp=" + std::to_string(c.tp) + " fp=" + std::to_string(c.fp) +
           " fn=" + std::to_string(c.fn) + " p=" + detail::fixed(c.precision(), 6) +
           " r=" + detail::fixed(c.recall(), 6) + " f1=" + detail::fixed(c.f1(), 6) + "\n";
  };
  for (const auto& [type, counts] : report.per_type) record(type, counts);
  record("micro", report.micro);
  return out;
}

}  // namespace cner
