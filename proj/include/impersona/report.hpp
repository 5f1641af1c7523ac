// Copyright 2026 The Impersona Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Report tables (CSV) and static plots (SVG) built from stored records only.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "impersona/errors.hpp"
#include "impersona/reasoning.hpp"
#include "impersona/stats.hpp"
#include "impersona/text.hpp"
#include "impersona/vision.hpp"

namespace impersona::report {

// Shortest representation that parses back to the same double.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw ReportError("CSV row has the wrong number of fields");
    rows_.push_back(std::move(row));
  }

  std::size_t size() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += text::csv_escape(r[i]);
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReportError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw ReportError("write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// SVG

namespace svg {

inline std::string fmt(double v) { return text::format_fixed(v, 2); }

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return p;
}

struct Point {
  double x = 0;
  double y = 0;
  std::optional<double> lo;
  std::optional<double> hi;
};

struct Series {
  std::string name;
  std::vector<Point> points;
};

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double kLeft = 70, kRight = 180, kTop = 40, kBottom = 50, kWidth = 720, kHeight = 420;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

inline std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string axes(const Frame& f, const std::string& title, const std::string& xlabel,
                        const std::string& ylabel) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(Frame::kWidth) + "\" height=\"" +
       fmt(Frame::kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(Frame::kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(title) + "</text>\n";
  const double left = Frame::kLeft, right = Frame::kWidth - Frame::kRight;
  const double top = Frame::kTop, bottom = Frame::kHeight - Frame::kBottom;
  s += "<path d=\"M" + fmt(left) + " " + fmt(top) + " V" + fmt(bottom) + " H" + fmt(right) +
       "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
    const double xv = f.x0 + (f.x1 - f.x0) * k / 4.0;
    s += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(f.py(yv) + 4) + "\" text-anchor=\"end\">" +
         text::format_fixed(yv, 2) + "</text>\n";
    s += "<text x=\"" + fmt(f.px(xv)) + "\" y=\"" + fmt(bottom + 16) + "\" text-anchor=\"middle\">" +
         text::format_fixed(xv, 1) + "</text>\n";
  }
  s += "<text x=\"" + fmt((left + right) / 2) + "\" y=\"" + fmt(Frame::kHeight - 12) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text transform=\"translate(18 " + fmt((top + bottom) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(ylabel) + "</text>\n";
  return s;
}

inline std::string legend(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = Frame::kTop + 16.0 * static_cast<double>(i);
    const double x = Frame::kWidth - Frame::kRight + 14;
    s += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"10\" height=\"10\" fill=\"" +
         palette()[i % palette().size()] + "\"/>\n";
    s += "<text x=\"" + fmt(x + 14) + "\" y=\"" + fmt(y + 9) + "\">" + escape(names[i]) + "</text>\n";
  }
  return s;
}

// Lines with optional vertical error bars; `connect` = false draws markers
// only.
inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series, bool connect = true,
                              std::optional<double> reference = std::nullopt) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      xlo = std::min(xlo, p.x);
      xhi = std::max(xhi, p.x);
      ylo = std::min({ylo, p.y, p.lo.value_or(p.y)});
      yhi = std::max({yhi, p.y, p.hi.value_or(p.y)});
    }
  if (reference) {
    ylo = std::min(ylo, *reference);
    yhi = std::max(yhi, *reference);
  }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  const auto [y0, y1] = padded(ylo, yhi);
  const auto [x0, x1] = padded(xlo, xhi);
  const Frame f{x0, x1, y0, y1};
  std::string out = axes(f, title, xlabel, ylabel);
  if (reference)
    out += "<line x1=\"" + fmt(f.px(x0)) + "\" x2=\"" + fmt(f.px(x1)) + "\" y1=\"" + fmt(f.py(*reference)) +
           "\" y2=\"" + fmt(f.py(*reference)) + "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& color = palette()[i % palette().size()];
    names.push_back(series[i].name);
    std::string d;
    for (const auto& p : series[i].points) {
      d += (d.empty() ? "M" : " L") + fmt(f.px(p.x)) + " " + fmt(f.py(p.y));
      if (p.lo && p.hi)
        out += "<line x1=\"" + fmt(f.px(p.x)) + "\" x2=\"" + fmt(f.px(p.x)) + "\" y1=\"" + fmt(f.py(*p.lo)) +
               "\" y2=\"" + fmt(f.py(*p.hi)) + "\" stroke=\"" + color + "\"/>\n";
      out += "<circle cx=\"" + fmt(f.px(p.x)) + "\" cy=\"" + fmt(f.py(p.y)) + "\" r=\"3\" fill=\"" + color +
             "\"/>\n";
    }
    if (connect && !d.empty())
      out += "<path d=\"" + d + "\" stroke=\"" + color + "\" fill=\"none\" stroke-width=\"1.5\"/>\n";
  }
  out += legend(names) + "</svg>\n";
  return out;
}

struct Bar {
  std::string group;
  std::string series;
  double value = 0;
  std::optional<double> lo;
  std::optional<double> hi;
};

// Grouped bars with error bars, groups and series in first-seen order.
inline std::string bar_chart(const std::string& title, const std::string& ylabel, const std::vector<Bar>& bars,
                             std::optional<double> reference = std::nullopt) {
  std::vector<std::string> groups, series;
  double ylo = 0, yhi = 0;
  for (const auto& b : bars) {
    if (std::find(groups.begin(), groups.end(), b.group) == groups.end()) groups.push_back(b.group);
    if (std::find(series.begin(), series.end(), b.series) == series.end()) series.push_back(b.series);
    ylo = std::min({ylo, b.value, b.lo.value_or(b.value)});
    yhi = std::max({yhi, b.value, b.hi.value_or(b.value)});
  }
  if (reference) yhi = std::max(yhi, *reference);
  if (!(yhi > ylo)) yhi = ylo + 1;
  const Frame f{0.0, static_cast<double>(std::max<std::size_t>(groups.size(), 1)), ylo, yhi * 1.05};
  std::string out;
  {
    // Category axis: group labels instead of numeric x ticks.
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(Frame::kWidth) + "\" height=\"" +
           fmt(Frame::kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + fmt(Frame::kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
           escape(title) + "</text>\n";
    out += "<path d=\"M" + fmt(Frame::kLeft) + " " + fmt(Frame::kTop) + " V" + fmt(f.py(f.y0)) + " H" +
           fmt(Frame::kWidth - Frame::kRight) + "\" stroke=\"black\" fill=\"none\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
      out += "<text x=\"" + fmt(Frame::kLeft - 6) + "\" y=\"" + fmt(f.py(yv) + 4) + "\" text-anchor=\"end\">" +
             text::format_fixed(yv, 2) + "</text>\n";
    }
    out += "<text transform=\"translate(18 " + fmt(Frame::kHeight / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
           escape(ylabel) + "</text>\n";
    for (std::size_t g = 0; g < groups.size(); ++g)
      out += "<text x=\"" + fmt(f.px(g + 0.5)) + "\" y=\"" + fmt(f.py(f.y0) + 16) + "\" text-anchor=\"middle\">" +
             escape(groups[g]) + "</text>\n";
  }
  if (reference)
    out += "<line x1=\"" + fmt(f.px(0)) + "\" x2=\"" + fmt(f.px(f.x1)) + "\" y1=\"" + fmt(f.py(*reference)) +
           "\" y2=\"" + fmt(f.py(*reference)) + "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  const double slot = 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (const auto& b : bars) {
    const auto g = static_cast<double>(std::find(groups.begin(), groups.end(), b.group) - groups.begin());
    const auto si = static_cast<std::size_t>(std::find(series.begin(), series.end(), b.series) - series.begin());
    const double xa = g + 0.1 + slot * static_cast<double>(si);
    const auto& color = palette()[si % palette().size()];
    const double top = f.py(std::max(b.value, 0.0)), base = f.py(std::min(b.value, 0.0));
    out += "<rect x=\"" + fmt(f.px(xa)) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(f.px(xa + slot) - f.px(xa)) +
           "\" height=\"" + fmt(base - top) + "\" fill=\"" + color + "\"/>\n";
    if (b.lo && b.hi) {
      const double xm = f.px(xa + slot / 2);
      out += "<line x1=\"" + fmt(xm) + "\" x2=\"" + fmt(xm) + "\" y1=\"" + fmt(f.py(*b.lo)) + "\" y2=\"" +
             fmt(f.py(*b.hi)) + "\" stroke=\"black\"/>\n";
    }
  }
  out += legend(series) + "</svg>\n";
  return out;
}

}  // namespace svg

// ---------------------------------------------------------------------------
// Bandit

inline std::optional<int> persona_age(std::string_view persona_id) {
  if (!persona_id.starts_with("age:")) return std::nullopt;
  try {
    return text::parse_int(persona_id.substr(4));
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct BanditFitRow {
  std::string persona_id;
  std::string template_id;
  std::size_t n_games = 0;
  std::optional<stats::ProbitFit> fit;
  std::string error;
};

struct BanditReport {
  std::vector<BanditFitRow> fits;
  std::optional<stats::AgeEffects> age_effects;
  std::string age_effects_error;
};

// Writes reward_curves.csv, probit_fits.csv, age_effects.csv and their plots.
inline BanditReport write_bandit_report(std::span<const GameRecord> games, const BanditConfig& cfg,
                                        const std::filesystem::path& dir) {
  if (games.empty()) throw ReportError("no games to report");
  std::map<std::string, std::vector<const GameRecord*>> by_persona;
  std::map<std::pair<std::string, std::string>, std::vector<const GameRecord*>> by_cell;
  for (const auto& g : games) {
    if (g.failure) continue;
    by_persona[g.persona_id].push_back(&g);
    by_cell[{g.persona_id, g.template_id}].push_back(&g);
  }
  // Age personas in age order, then the rest by id.
  std::vector<std::string> personas;
  for (const auto& [p, _] : by_persona) personas.push_back(p);
  std::stable_sort(personas.begin(), personas.end(), [](const std::string& a, const std::string& b) {
    const auto aa = persona_age(a), ab = persona_age(b);
    if (aa && ab) return *aa < *ab;
    return aa.has_value() && !ab.has_value();
  });

  CsvTable curves({"persona_id", "trial", "mean_reward", "ci_lo", "ci_hi", "n_games"});
  std::vector<svg::Series> curve_series;
  for (const auto& p : personas) {
    svg::Series s{p, {}};
    for (int t = 1; t <= cfg.n_trials; ++t) {
      std::vector<double> r;
      for (const auto* g : by_persona[p])
        if (static_cast<int>(g->trials.size()) >= t) r.push_back(g->trials[t - 1].reward);
      if (r.empty()) continue;
      const auto ci = r.size() >= 2 ? stats::mean_ci95(r) : stats::MeanCI{r[0], r[0], r[0]};
      curves.add({p, std::to_string(t), num(ci.mean), num(ci.lo), num(ci.hi), std::to_string(r.size())});
      s.points.push_back({static_cast<double>(t), ci.mean, ci.lo, ci.hi});
    }
    curve_series.push_back(std::move(s));
  }

  BanditReport rep;
  CsvTable fits({"persona_id", "template_id", "age", "n_games", "n_choices", "b1", "se_b1", "b2", "se_b2",
                 "log_likelihood", "converged", "error"});
  std::vector<std::pair<int, stats::ProbitFit>> aged;
  for (const auto& p : personas) {
    for (const auto& [cell, members] : by_cell) {
      if (cell.first != p) continue;
      BanditFitRow row{cell.first, cell.second, members.size(), {}, {}};
      std::vector<stats::ProbitFeatures> data;
      for (const auto* g : members) {
        auto f = stats::probit_features(*g, cfg);
        data.insert(data.end(), f.begin(), f.end());
      }
      try {
        row.fit = stats::fit_probit(data);
      } catch (const Error& e) {
        row.error = e.what();
      }
      const auto age = persona_age(p);
      const auto& fit = row.fit;
      fits.add({p, cell.second, age ? std::to_string(*age) : "", std::to_string(members.size()),
                std::to_string(data.size()), fit ? num(fit->b1()) : "", fit ? num(fit->std_errors[0]) : "",
                fit ? num(fit->b2()) : "", fit ? num(fit->std_errors[1]) : "",
                fit ? num(fit->log_likelihood) : "", fit ? (fit->converged ? "true" : "false") : "false",
                row.error});
      if (age && fit && fit->converged) aged.emplace_back(*age, *fit);
      rep.fits.push_back(std::move(row));
    }
  }

  CsvTable effects({"coefficient", "term", "estimate", "std_error", "t", "p_value", "r_squared", "n_fits",
                    "n_ages"});
  if (!aged.empty()) {
    try {
      stats::AgeRange range{std::numeric_limits<int>::min(), std::numeric_limits<int>::max()};
      rep.age_effects = stats::age_effect_analysis(aged, range);
      for (const auto& [label, reg] : {std::pair{"b1", &rep.age_effects->exploitation},
                                       std::pair{"b2", &rep.age_effects->exploration}})
        for (std::size_t i = 0; i < reg->names.size(); ++i)
          effects.add({label, reg->names[i], num(reg->coefficients[i]), num(reg->std_errors[i]),
                       num(reg->t_stats[i]), num(reg->p_values[i]), num(reg->r_squared),
                       std::to_string(rep.age_effects->n_fits), std::to_string(rep.age_effects->n_ages)});
    } catch (const Error& e) {
      rep.age_effects_error = e.what();
    }
  }

  write_text(dir / "reward_curves.csv", curves.str());
  write_text(dir / "probit_fits.csv", fits.str());
  write_text(dir / "age_effects.csv", effects.str());
  write_text(dir / "reward_curves.svg",
             svg::line_chart("Average reward per trial", "trial", "reward", curve_series));
  std::vector<svg::Series> beta_series = {{"b1 (value)", {}}, {"b2 (uncertainty)", {}}};
  for (const auto& [age, fit] : aged) {
    beta_series[0].points.push_back({static_cast<double>(age), fit.b1(), fit.b1() - 1.96 * fit.std_errors[0],
                                     fit.b1() + 1.96 * fit.std_errors[0]});
    beta_series[1].points.push_back({static_cast<double>(age), fit.b2(), fit.b2() - 1.96 * fit.std_errors[1],
                                     fit.b2() + 1.96 * fit.std_errors[1]});
  }
  write_text(dir / "betas_vs_age.svg",
             svg::line_chart("Probit coefficients by persona age", "age (years)", "coefficient", beta_series,
                             false, 0.0));
  return rep;
}

// ---------------------------------------------------------------------------
// MMLU

inline reasoning::CategoryReport write_mmlu_report(std::span<const reasoning::TaskResult> results,
                                                   const ExpertTaxonomy& taxonomy,
                                                   const std::filesystem::path& dir) {
  const auto rep = reasoning::aggregate_categories(results, taxonomy);
  CsvTable tasks({"task_id", "domain", "category", "mean", "ci_lo", "ci_hi", "n"});
  for (const auto& t : rep.tasks)
    for (const auto& [cat, s] : t.categories)
      tasks.add({t.task_id, std::string(to_string(t.domain)), std::string(reasoning::to_string(cat)),
                 num(s.mean), num(s.ci_lo), num(s.ci_hi), std::to_string(s.n)});
  CsvTable domains({"domain", "n_tasks", "category", "mean", "ci_lo", "ci_hi", "n"});
  std::vector<svg::Bar> bars;
  for (const auto& d : rep.domains)
    for (const auto& [cat, s] : d.categories) {
      domains.add({std::string(to_string(d.domain)), std::to_string(d.n_tasks),
                   std::string(reasoning::to_string(cat)), num(s.mean), num(s.ci_lo), num(s.ci_hi),
                   std::to_string(s.n)});
      bars.push_back({std::string(to_string(d.domain)), std::string(reasoning::to_string(cat)), s.mean, s.ci_lo,
                      s.ci_hi});
    }
  write_text(dir / "mmlu_tasks.csv", tasks.str());
  write_text(dir / "mmlu_domains.csv", domains.str());
  write_text(dir / "mmlu_categories.svg",
             svg::bar_chart("Accuracy by expert category", "accuracy", bars, rep.random_baseline));
  return rep;
}

// ---------------------------------------------------------------------------
// Vision

inline const std::vector<vision::PersonaPair>& default_bias_pairs() {
  static const std::vector<vision::PersonaPair> p = {{"gender:man", "gender:woman"},
                                                     {"race:black", "race:white"},
                                                     {"expert:ornithologist", "expert:car_mechanic"}};
  return p;
}

inline std::vector<vision::BiasRow> write_vision_report(std::span<const vision::ClassificationRun> runs,
                                                        std::span<const vision::PersonaPair> pairs,
                                                        const std::filesystem::path& dir) {
  if (runs.empty()) throw ReportError("no classification runs to report");
  std::map<std::pair<std::string, std::string>, std::vector<double>> acc;
  for (const auto& r : runs) acc[{r.dataset_id, r.persona_id}].push_back(r.accuracy);
  CsvTable table({"dataset_id", "persona_id", "n_runs", "mean", "ci_lo", "ci_hi"});
  std::vector<svg::Bar> bars;
  for (const auto& [key, v] : acc) {
    const auto ci = v.size() >= 2 ? stats::mean_ci95(v) : stats::MeanCI{v[0], v[0], v[0]};
    table.add({key.first, key.second, std::to_string(v.size()), num(ci.mean), num(ci.lo), num(ci.hi)});
    bars.push_back({key.first, key.second, ci.mean, ci.lo, ci.hi});
  }
  const auto rows = vision::bias_report(runs, pairs);
  CsvTable bias({"dataset_id", "persona_a", "persona_b", "n_runs", "mean_a", "ci_lo_a", "ci_hi_a", "mean_b",
                 "ci_lo_b", "ci_hi_b", "correct_a", "incorrect_a", "correct_b", "incorrect_b", "chi_square",
                 "p_value"});
  for (const auto& r : rows)
    bias.add({r.dataset_id, r.persona_a, r.persona_b, std::to_string(r.n_runs), num(r.accuracy_a.mean),
              num(r.accuracy_a.lo), num(r.accuracy_a.hi), num(r.accuracy_b.mean), num(r.accuracy_b.lo),
              num(r.accuracy_b.hi), num(r.counts[0][0]), num(r.counts[0][1]), num(r.counts[1][0]),
              num(r.counts[1][1]), num(r.chi_square.statistic), num(r.chi_square.p_value)});
  write_text(dir / "vision_accuracy.csv", table.str());
  write_text(dir / "vision_bias.csv", bias.str());
  write_text(dir / "vision_accuracy.svg", svg::bar_chart("Zero-shot accuracy by persona", "accuracy", bars));
  return rows;
}

}  // namespace impersona::report
