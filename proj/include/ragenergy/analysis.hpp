#pragma once

// Aggregation of run logs: energy statistics, stage shares, token/energy
// correlation and answer-quality indices, emitted as JSON, CSV and SVG.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ragenergy/csv.hpp"
#include "ragenergy/error.hpp"
#include "ragenergy/pipeline.hpp"

namespace ragenergy {

// ---------------------------------------------------------------------------
// Statistics

namespace detail {
inline void require_nonempty(std::span<const double> xs, const char* what) {
  if (xs.empty()) throw Error(Errc::statistics, std::string(what) + " of an empty sample");
}
}  // namespace detail

inline double mean(std::span<const double> xs) {
  detail::require_nonempty(xs, "mean");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double median(std::span<const double> xs) {
  detail::require_nonempty(xs, "median");
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

/// Mean absolute deviation about the median: mean(|x - median(x)|).
inline double mad_about_median(std::span<const double> xs) {
  const double m = median(xs);
  double s = 0;
  for (double x : xs) s += std::fabs(x - m);
  return s / static_cast<double>(xs.size());
}

inline double mad(std::span<const double> xs) { return mad_about_median(xs); }

/// mean(|x - mean(x)|)
inline double mad_about_mean(std::span<const double> xs) {
  const double m = mean(xs);
  double s = 0;
  for (double x : xs) s += std::fabs(x - m);
  return s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1); undefined below two observations.
inline std::optional<double> sample_sd(std::span<const double> xs) {
  detail::require_nonempty(xs, "standard deviation");
  if (xs.size() < 2) return std::nullopt;
  const double m = mean(xs);
  double ss = 0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

struct Correlation {
  std::optional<double> value;
  std::string reason;  // why value is null
};

inline Correlation pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(Errc::statistics, "correlation of samples with different sizes");
  if (xs.size() < 3) return {std::nullopt, "fewer than three points"};
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return {std::nullopt, "zero variance"};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), ""};
}

/// 1-based ranks; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline Correlation spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(Errc::statistics, "correlation of samples with different sizes");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Stage shares

struct StageShares {
  double retrieval = 0;
  double inference = 0;
  double hallucination = 0;
};

/// Mean stage energy over mean total energy across the given records.
inline StageShares stage_shares(std::span<const EnergyBreakdown> energies) {
  if (energies.empty()) throw Error(Errc::undefined_shares, "stage shares of an empty sample");
  double r = 0, i = 0, h = 0, t = 0;
  for (const auto& e : energies) {
    r += e.retrieval_kwh;
    i += e.inference_kwh;
    h += e.hallucination_kwh;
    t += e.total_kwh;
  }
  if (!(t > 0)) throw Error(Errc::undefined_shares, "stage shares undefined: total energy is zero");
  return {r / t, i / t, h / t};
}

// ---------------------------------------------------------------------------
// Annotations

struct AnnotationRecord {
  std::string question_id;
  std::string pipeline;
  bool excluded = false;
  std::string statement;
  bool is_factual_claim = false;
  std::optional<bool> is_correct;  // present iff is_factual_claim
  bool has_source = false;
};

struct QualityIndices {
  std::optional<double> factual;  // correct / factual claims
  double embellishment = 0;       // unsourced / all statements
  std::size_t statements = 0;
  std::size_t factual_claims = 0;
};

/// Indices for one answer from its non-excluded statements.
inline QualityIndices quality_indices(std::span<const AnnotationRecord> statements) {
  QualityIndices q;
  std::size_t correct = 0, unsourced = 0;
  for (const auto& s : statements) {
    if (s.excluded) continue;
    ++q.statements;
    if (!s.has_source) ++unsourced;
    if (s.is_factual_claim) {
      ++q.factual_claims;
      if (s.is_correct.value_or(false)) ++correct;
    }
  }
  if (q.statements == 0) throw Error(Errc::statistics, "quality indices of an answer with no statements");
  if (q.factual_claims > 0) q.factual = static_cast<double>(correct) / static_cast<double>(q.factual_claims);
  q.embellishment = static_cast<double>(unsourced) / static_cast<double>(q.statements);
  return q;
}

namespace detail {

inline std::optional<bool> parse_flag(const std::string& raw, const std::string& where, const char* column) {
  const auto v = lower_ascii(trim(raw));
  if (v.empty()) return std::nullopt;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::validation, where + ": column '" + column + "' has non-boolean value '" + raw + "'");
}

inline AnnotationRecord checked_annotation(AnnotationRecord a, const std::string& where) {
  if (a.question_id.empty()) throw Error(Errc::validation, where + ": empty question_id");
  if (a.pipeline.empty()) throw Error(Errc::validation, where + ": empty pipeline");
  if (a.excluded) return a;
  if (a.is_factual_claim && !a.is_correct) {
    throw Error(Errc::validation, where + ": is_correct is required for a factual claim");
  }
  if (!a.is_factual_claim && a.is_correct) {
    throw Error(Errc::validation, where + ": is_correct must be empty when is_factual_claim is false");
  }
  return a;
}

}  // namespace detail

/// CSV columns: question_id, pipeline, excluded, statement, is_factual_claim,
/// is_correct, has_source. A ".json" path holds an array of objects with the
/// same keys.
inline std::vector<AnnotationRecord> load_annotations(const std::string& path) {
  const auto content = csv::read_file(path);
  std::vector<AnnotationRecord> out;
  const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  if (is_json) {
    const auto j = nlohmann::json::parse(content, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw Error(Errc::validation, path + ": expected a JSON array of annotations");
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& o = j[i];
      const auto where = path + " item " + std::to_string(i);
      try {
        AnnotationRecord a;
        a.question_id = o.at("question_id").get<std::string>();
        a.pipeline = o.at("pipeline").get<std::string>();
        a.excluded = o.value("excluded", false);
        a.statement = o.value("statement", std::string());
        if (!a.excluded) {
          a.is_factual_claim = o.at("is_factual_claim").get<bool>();
          if (o.contains("is_correct") && !o["is_correct"].is_null()) a.is_correct = o["is_correct"].get<bool>();
          a.has_source = o.at("has_source").get<bool>();
        }
        out.push_back(detail::checked_annotation(std::move(a), where));
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::validation, where + ": " + e.what());
      }
    }
    return out;
  }
  csv::Table table(csv::parse(content));
  for (const char* col : {"question_id", "pipeline", "is_factual_claim", "has_source"}) {
    if (table.size() > 0 && !table.has(col)) throw Error(Errc::validation, path + ": missing column '" + col + "'");
  }
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto where = path + " row " + std::to_string(r + 2);
    auto cell = [&](const char* c) { return table.has(c) ? table.get(r, c) : std::string(); };
    AnnotationRecord a;
    a.question_id = cell("question_id");
    a.pipeline = cell("pipeline");
    a.excluded = detail::parse_flag(cell("excluded"), where, "excluded").value_or(false);
    a.statement = cell("statement");
    if (a.excluded) {
      out.push_back(detail::checked_annotation(std::move(a), where));
      continue;
    }
    auto factual = detail::parse_flag(cell("is_factual_claim"), where, "is_factual_claim");
    auto source = detail::parse_flag(cell("has_source"), where, "has_source");
    if (!factual || !source) throw Error(Errc::validation, where + ": is_factual_claim and has_source are required");
    a.is_factual_claim = *factual;
    a.is_correct = detail::parse_flag(cell("is_correct"), where, "is_correct");
    a.has_source = *source;
    out.push_back(detail::checked_annotation(std::move(a), where));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct MeanSd {
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> sd;
};

inline MeanSd mean_sd(std::span<const double> xs) {
  if (xs.empty()) return {};
  return {xs.size(), mean(xs), sample_sd(xs)};
}

struct PipelineReport {
  std::string pipeline;
  std::size_t runs = 0;      // records in the log
  std::size_t n = 0;         // successful records used in the statistics
  std::size_t excluded = 0;  // error records
  std::size_t degraded = 0;
  std::optional<double> median_kwh, mean_kwh, mad_median_kwh, mad_mean_kwh, min_kwh, max_kwh;
  EnergyBreakdown mean_stage_kwh;
  std::optional<StageShares> shares;
  std::string shares_reason;
  std::optional<double> median_answer_tokens;
  Correlation pearson_tokens_energy;
  Correlation spearman_tokens_energy;
  std::vector<std::pair<double, double>> points;  // (answer tokens, total kWh)
  std::size_t annotated_answers = 0;
  MeanSd factual;
  MeanSd embellishment;
};

struct AggregateReport {
  std::vector<PipelineReport> pipelines;  // in order of first appearance in the log
};

inline AggregateReport build_report(const std::vector<RunRecord>& log,
                                    const std::optional<std::vector<AnnotationRecord>>& annotations = std::nullopt) {
  AggregateReport report;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<const RunRecord*>> groups;
  for (const auto& r : log) {
    auto [it, inserted] = index.try_emplace(r.pipeline, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(&r);
  }
  std::map<std::pair<std::string, std::string>, std::vector<AnnotationRecord>> by_answer;
  if (annotations) {
    for (const auto& a : *annotations) by_answer[{a.pipeline, a.question_id}].push_back(a);
  }

  std::vector<std::string> names(groups.size());
  for (const auto& [name, gi] : index) names[gi] = name;

  for (std::size_t g = 0; g < groups.size(); ++g) {
    PipelineReport p;
    p.pipeline = names[g];
    p.runs = groups[g].size();
    std::vector<double> energy, tokens;
    std::vector<EnergyBreakdown> breakdowns;
    for (const auto* r : groups[g]) {
      if (!r->successful()) {
        ++p.excluded;
        continue;
      }
      if (r->status() == StageStatus::degraded) ++p.degraded;
      energy.push_back(r->energy.total_kwh);
      tokens.push_back(static_cast<double>(r->answer_tokens()));
      breakdowns.push_back(r->energy);
      p.points.emplace_back(tokens.back(), energy.back());
    }
    p.n = energy.size();
    if (!energy.empty()) {
      p.median_kwh = median(energy);
      p.mean_kwh = mean(energy);
      p.mad_median_kwh = mad_about_median(energy);
      p.mad_mean_kwh = mad_about_mean(energy);
      p.min_kwh = *std::min_element(energy.begin(), energy.end());
      p.max_kwh = *std::max_element(energy.begin(), energy.end());
      p.median_answer_tokens = median(tokens);
      const double n = static_cast<double>(breakdowns.size());
      for (const auto& b : breakdowns) {
        p.mean_stage_kwh.retrieval_kwh += b.retrieval_kwh / n;
        p.mean_stage_kwh.inference_kwh += b.inference_kwh / n;
        p.mean_stage_kwh.hallucination_kwh += b.hallucination_kwh / n;
        p.mean_stage_kwh.total_kwh += b.total_kwh / n;
      }
      try {
        p.shares = stage_shares(breakdowns);
      } catch (const Error& e) {
        p.shares_reason = e.what();
      }
      p.pearson_tokens_energy = pearson(tokens, energy);
      p.spearman_tokens_energy = spearman(tokens, energy);
    } else {
      p.shares_reason = "no successful runs";
      p.pearson_tokens_energy.reason = p.spearman_tokens_energy.reason = "no successful runs";
    }

    if (annotations) {
      std::vector<double> factual, embellishment;
      std::set<std::string> seen;
      for (const auto* r : groups[g]) {
        if (!r->successful() || !seen.insert(r->question_id).second) continue;
        auto it = by_answer.find({p.pipeline, r->question_id});
        if (it == by_answer.end()) continue;
        const bool all_excluded =
            std::all_of(it->second.begin(), it->second.end(), [](const AnnotationRecord& a) { return a.excluded; });
        if (all_excluded) continue;
        const auto q = quality_indices(it->second);
        ++p.annotated_answers;
        if (q.factual) factual.push_back(*q.factual);
        embellishment.push_back(q.embellishment);
      }
      p.factual = mean_sd(factual);
      p.embellishment = mean_sd(embellishment);
    }
    report.pipelines.push_back(std::move(p));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

/// Shortest representation that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json corr_json(const Correlation& c) {
  nlohmann::ordered_json j;
  j["value"] = opt_json(c.value);
  if (!c.value) j["reason"] = c.reason;
  return j;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt_fixed(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

inline std::string fmt_sig(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1"};

class Svg {
 public:
  Svg(int width, int height, const std::string& title) : w_(width), h_(height) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_ << "\" viewBox=\"0 0 "
        << w_ << ' ' << h_ << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(w_ / 2.0, 20, title, "middle", 14);
  }
  void rect(double x, double y, double w, double h, const char* fill) {
    os_ << "<rect x=\"" << fmt_fixed(x) << "\" y=\"" << fmt_fixed(y) << "\" width=\"" << fmt_fixed(w)
        << "\" height=\"" << fmt_fixed(h) << "\" fill=\"" << fill << "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2) {
    os_ << "<line x1=\"" << fmt_fixed(x1) << "\" y1=\"" << fmt_fixed(y1) << "\" x2=\"" << fmt_fixed(x2) << "\" y2=\""
        << fmt_fixed(y2) << "\" stroke=\"black\"/>\n";
  }
  void circle(double x, double y, double r, const char* fill) {
    os_ << "<circle cx=\"" << fmt_fixed(x) << "\" cy=\"" << fmt_fixed(y) << "\" r=\"" << fmt_fixed(r) << "\" fill=\""
        << fill << "\" fill-opacity=\"0.7\"/>\n";
  }
  void text(double x, double y, std::string_view s, const char* anchor = "start", int size = 12) {
    os_ << "<text x=\"" << fmt_fixed(x) << "\" y=\"" << fmt_fixed(y) << "\" text-anchor=\"" << anchor
        << "\" font-size=\"" << size << "\">" << xml_escape(s) << "</text>\n";
  }
  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }
  [[nodiscard]] int width() const { return w_; }
  [[nodiscard]] int height() const { return h_; }

 private:
  int w_, h_;
  std::ostringstream os_;
};

struct Bar {
  std::string label;
  double value;
};

inline std::string bar_chart(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars) {
  Svg svg(640, 400, title);
  const double left = 80, right = 620, top = 40, bottom = 340;
  double vmax = 0;
  for (const auto& b : bars) vmax = std::max(vmax, b.value);
  if (!(vmax > 0)) vmax = 1;
  svg.line(left, bottom, right, bottom);
  svg.line(left, top, left, bottom);
  svg.text(left - 6, top + 4, fmt_sig(vmax), "end");
  svg.text(left - 6, bottom + 4, "0", "end");
  svg.text(16, (top + bottom) / 2, y_label, "start");
  const double slot = bars.empty() ? 0 : (right - left) / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = (bottom - top) * std::max(0.0, bars[i].value) / vmax;
    const double x = left + slot * static_cast<double>(i) + slot * 0.15;
    svg.rect(x, bottom - h, slot * 0.7, h, kPalette[i % 7]);
    svg.text(x + slot * 0.35, bottom + 16, bars[i].label, "middle");
    svg.text(x + slot * 0.35, bottom - h - 4, fmt_sig(bars[i].value), "middle", 10);
  }
  return svg.finish();
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

inline std::string scatter_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                                 const std::vector<Series>& series) {
  Svg svg(640, 420, title);
  const double left = 80, right = 500, top = 40, bottom = 360;
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool any = false;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      if (!any) {
        xmin = xmax = x;
        ymin = ymax = y;
        any = true;
      }
      xmin = std::min(xmin, x), xmax = std::max(xmax, x), ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  svg.line(left, bottom, right, bottom);
  svg.line(left, top, left, bottom);
  svg.text((left + right) / 2, bottom + 36, x_label, "middle");
  svg.text(8, top - 8, y_label);
  svg.text(left, bottom + 16, fmt_sig(xmin), "middle");
  svg.text(right, bottom + 16, fmt_sig(xmax), "middle");
  svg.text(left - 6, bottom, fmt_sig(ymin), "end");
  svg.text(left - 6, top + 4, fmt_sig(ymax), "end");
  for (std::size_t i = 0; i < series.size(); ++i) {
    for (auto [x, y] : series[i].points) {
      svg.circle(left + (x - xmin) / (xmax - xmin) * (right - left), bottom - (y - ymin) / (ymax - ymin) * (bottom - top),
                 3.5, kPalette[i % 7]);
    }
    svg.rect(515, top + 20.0 * static_cast<double>(i), 12, 12, kPalette[i % 7]);
    svg.text(533, top + 20.0 * static_cast<double>(i) + 10, series[i].label);
  }
  return svg.finish();
}

inline std::string shares_chart(const AggregateReport& report) {
  Svg svg(640, 400, "Energy share by stage");
  const double left = 80, right = 500, top = 40, bottom = 340;
  svg.line(left, bottom, right, bottom);
  svg.line(left, top, left, bottom);
  svg.text(left - 6, top + 4, "100%", "end");
  svg.text(left - 6, bottom + 4, "0%", "end");
  const char* names[] = {"retrieval", "inference", "hallucination check"};
  for (int k = 0; k < 3; ++k) {
    svg.rect(515, top + 20.0 * k, 12, 12, kPalette[k]);
    svg.text(533, top + 20.0 * k + 10, names[k]);
  }
  const auto& ps = report.pipelines;
  const double slot = ps.empty() ? 0 : (right - left) / static_cast<double>(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double x = left + slot * static_cast<double>(i) + slot * 0.15;
    svg.text(x + slot * 0.35, bottom + 16, ps[i].pipeline, "middle");
    if (!ps[i].shares) continue;
    const double parts[] = {ps[i].shares->retrieval, ps[i].shares->inference, ps[i].shares->hallucination};
    double y = bottom;
    for (int k = 0; k < 3; ++k) {
      const double h = (bottom - top) * parts[k];
      svg.rect(x, y - h, slot * 0.7, h, kPalette[k]);
      y -= h;
    }
  }
  return svg.finish();
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error(Errc::io, "write to '" + path.string() + "' failed");
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const AggregateReport& report) {
  using detail::opt_json;
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["pipelines"] = nlohmann::ordered_json::array();
  for (const auto& p : report.pipelines) {
    nlohmann::ordered_json o;
    o["pipeline"] = p.pipeline;
    o["runs"] = p.runs;
    o["n"] = p.n;
    o["excluded"] = p.excluded;
    o["degraded"] = p.degraded;
    o["energy_kwh"] = {{"median", opt_json(p.median_kwh)},       {"mean", opt_json(p.mean_kwh)},
                       {"mad_median", opt_json(p.mad_median_kwh)}, {"mad_mean", opt_json(p.mad_mean_kwh)},
                       {"min", opt_json(p.min_kwh)},             {"max", opt_json(p.max_kwh)}};
    o["mean_stage_kwh"] = {{"retrieval", p.mean_stage_kwh.retrieval_kwh},
                           {"inference", p.mean_stage_kwh.inference_kwh},
                           {"hallucination_check", p.mean_stage_kwh.hallucination_kwh},
                           {"total", p.mean_stage_kwh.total_kwh}};
    if (p.shares) {
      o["stage_shares"] = {{"retrieval", p.shares->retrieval},
                           {"inference", p.shares->inference},
                           {"hallucination_check", p.shares->hallucination}};
    } else {
      o["stage_shares"] = {{"value", nullptr}, {"reason", p.shares_reason}};
    }
    o["median_answer_tokens"] = opt_json(p.median_answer_tokens);
    o["tokens_vs_energy"] = {{"pearson", detail::corr_json(p.pearson_tokens_energy)},
                             {"spearman", detail::corr_json(p.spearman_tokens_energy)}};
    o["annotated_answers"] = p.annotated_answers;
    o["factual_index"] = {{"n", p.factual.n}, {"mean", opt_json(p.factual.mean)}, {"sd", opt_json(p.factual.sd)}};
    o["embellishment_index"] = {
        {"n", p.embellishment.n}, {"mean", opt_json(p.embellishment.mean)}, {"sd", opt_json(p.embellishment.sd)}};
    j["pipelines"].push_back(std::move(o));
  }
  return j;
}

inline std::string to_csv(const AggregateReport& report) {
  using detail::fmt_opt;
  std::string out =
      "pipeline,runs,n,excluded,degraded,median_kwh,mean_kwh,mad_median_kwh,mad_mean_kwh,min_kwh,max_kwh,"
      "mean_retrieval_kwh,mean_inference_kwh,mean_hallucination_kwh,share_retrieval,share_inference,"
      "share_hallucination,median_answer_tokens,pearson,spearman,annotated_answers,factual_mean,factual_sd,"
      "embellishment_mean,embellishment_sd\n";
  for (const auto& p : report.pipelines) {
    std::vector<std::string> cells = {
        csv::quote(p.pipeline),
        std::to_string(p.runs),
        std::to_string(p.n),
        std::to_string(p.excluded),
        std::to_string(p.degraded),
        fmt_opt(p.median_kwh),
        fmt_opt(p.mean_kwh),
        fmt_opt(p.mad_median_kwh),
        fmt_opt(p.mad_mean_kwh),
        fmt_opt(p.min_kwh),
        fmt_opt(p.max_kwh),
        detail::fmt_double(p.mean_stage_kwh.retrieval_kwh),
        detail::fmt_double(p.mean_stage_kwh.inference_kwh),
        detail::fmt_double(p.mean_stage_kwh.hallucination_kwh),
        p.shares ? detail::fmt_double(p.shares->retrieval) : "",
        p.shares ? detail::fmt_double(p.shares->inference) : "",
        p.shares ? detail::fmt_double(p.shares->hallucination) : "",
        fmt_opt(p.median_answer_tokens),
        fmt_opt(p.pearson_tokens_energy.value),
        fmt_opt(p.spearman_tokens_energy.value),
        std::to_string(p.annotated_answers),
        fmt_opt(p.factual.mean),
        fmt_opt(p.factual.sd),
        fmt_opt(p.embellishment.mean),
        fmt_opt(p.embellishment.sd),
    };
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  }
  return out;
}

/// SVG figures keyed by file name.
inline std::map<std::string, std::string> to_svgs(const AggregateReport& report) {
  std::map<std::string, std::string> out;
  std::vector<detail::Bar> medians, factual, embellishment;
  std::vector<detail::Series> tokens, quality;
  bool annotated = false;
  for (const auto& p : report.pipelines) {
    medians.push_back({p.pipeline, p.median_kwh.value_or(0) * 1000.0});
    tokens.push_back({p.pipeline, p.points});
    factual.push_back({p.pipeline, p.factual.mean.value_or(0)});
    embellishment.push_back({p.pipeline, p.embellishment.mean.value_or(0)});
    if (p.annotated_answers > 0) annotated = true;
    if (p.median_kwh && p.factual.mean) quality.push_back({p.pipeline, {{*p.median_kwh * 1000.0, *p.factual.mean}}});
  }
  out["median_energy.svg"] = detail::bar_chart("Median energy per query", "Wh", medians);
  out["stage_shares.svg"] = detail::shares_chart(report);
  out["tokens_vs_energy.svg"] = detail::scatter_chart("Answer tokens vs energy", "answer tokens", "kWh", tokens);
  if (annotated) {
    out["factual_index.svg"] = detail::bar_chart("Factual index (mean)", "share", factual);
    out["embellishment_index.svg"] = detail::bar_chart("Embellishment index (mean)", "share", embellishment);
    out["energy_vs_quality.svg"] =
        detail::scatter_chart("Median energy vs factual index", "median energy (Wh)", "factual index", quality);
  }
  return out;
}

/// Writes the requested formats ("json", "csv", "svg") into `dir` and
/// returns the written paths.
inline std::vector<std::string> emit(const AggregateReport& report, const std::set<std::string>& formats,
                                     const std::string& dir) {
  for (const auto& f : formats) {
    if (f != "json" && f != "csv" && f != "svg") {
      throw Error(Errc::configuration, "unknown report format '" + f + "' (expected json, csv or svg)");
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create output directory '" + dir + "': " + ec.message());
  const std::filesystem::path base(dir);
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& content) {
    detail::write_text(base / name, content);
    written.push_back((base / name).string());
  };
  if (formats.count("json")) put("summary.json", to_json(report).dump(2) + "\n");
  if (formats.count("csv")) put("summary.csv", to_csv(report));
  if (formats.count("svg")) {
    for (const auto& [name, content] : to_svgs(report)) put(name, content);
  }
  return written;
}

}  // namespace ragenergy
