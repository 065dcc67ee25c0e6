#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iml/analysis.hpp"
#include "iml/csv.hpp"
#include "iml/text.hpp"

namespace iml {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y), x ascending
};

/// Minimal deterministic SVG line chart: fixed canvas, axes with range
/// labels, one polyline per series, legend on the right.
inline std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                         const std::string& y_label,
                                         const std::vector<Series>& series,
                                         const std::string& provenance) {
  static const char* palette[] = {"#4363d8", "#e6194b", "#3cb44b", "#f58231", "#911eb4",
                                  "#46f0f0", "#f032e6", "#808000", "#000075", "#9a6324"};
  const double W = 820, H = 460, L = 70, R = 620, T = 50, B = 400;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (series.empty() || xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (R - L); };
  auto sy = [&](double y) { return B - (y - ymin) / (ymax - ymin) * (B - T); };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_double(W) +
         "\" height=\"" + format_double(H) + "\">\n";
  out += "<!-- " + provenance + " -->\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + format_double((L + R) / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">" +
         title + "</text>\n";
  // axes
  out += "<line x1=\"" + format_double(L) + "\" y1=\"" + format_double(B) + "\" x2=\"" +
         format_double(R) + "\" y2=\"" + format_double(B) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + format_double(L) + "\" y1=\"" + format_double(T) + "\" x2=\"" +
         format_double(L) + "\" y2=\"" + format_double(B) + "\" stroke=\"black\"/>\n";
  auto text_at = [&](double x, double y, const std::string& s, const char* anchor) {
    return "<text x=\"" + format_double(x) + "\" y=\"" + format_double(y) + "\" text-anchor=\"" +
           anchor + "\" font-size=\"11\" font-family=\"sans-serif\">" + s + "</text>\n";
  };
  out += text_at(L, B + 16, format_double(xmin), "middle");
  out += text_at(R, B + 16, format_double(xmax), "middle");
  out += text_at(L - 6, B + 4, format_double(ymin), "end");
  out += text_at(L - 6, T + 4, format_double(ymax), "end");
  out += text_at((L + R) / 2, B + 32, x_label, "middle");
  out += text_at(L - 6, T - 12, y_label, "end");

  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = palette[i % 10];
    std::string pts;
    for (auto [x, y] : series[i].points) {
      if (!pts.empty()) pts += " ";
      pts += format_double(sx(x)) + "," + format_double(sy(y));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
    double ly = T + 16 * static_cast<double>(i);
    out += "<line x1=\"" + format_double(R + 12) + "\" y1=\"" + format_double(ly) + "\" x2=\"" +
           format_double(R + 32) + "\" y2=\"" + format_double(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    out += text_at(R + 38, ly + 4, series[i].name, "start");
  }
  out += "</svg>\n";
  return out;
}

/// One metric row tagged with its seed, as parsed back from metrics files.
struct SeedMetricRow {
  uint64_t seed = 0;
  std::string stage;
  int epoch = 0;
  std::string subset;
  std::string family;
  std::string metric;
  double value = 0.0;
  int64_t n = 0;
};

/// Seed-aggregated tables and charts. Writes summary.csv (mean and 95% CI
/// per stage/epoch/subset/family/metric across seeds) plus one SVG chart
/// per (metric, family): epochs on x (stage1 then stage2 shifted after it),
/// one line per subset. Re-emitting over the same rows is byte-identical.
inline void emit_report(const std::vector<SeedMetricRow>& rows, const std::string& out_dir,
                        const std::string& provenance) {
  CsvWriter summary(out_dir + "/summary.csv", provenance,
                    {"stage", "epoch", "subset", "question_family", "metric", "mean", "ci95",
                     "n_seeds"});
  // group by (stage, epoch, subset, family, metric) -> per-seed values
  std::map<std::tuple<std::string, int, std::string, std::string, std::string>,
           std::vector<double>>
      groups;
  std::map<std::string, int> stage_max_epoch;
  for (const auto& r : rows) {
    groups[{r.stage, r.epoch, r.subset, r.family, r.metric}].push_back(r.value);
    stage_max_epoch[r.stage] = std::max(stage_max_epoch[r.stage], r.epoch);
  }
  for (const auto& [key, values] : groups) {
    SeedStats s = seed_stats(values);
    summary.row({std::get<0>(key), std::to_string(std::get<1>(key)), std::get<2>(key),
                 std::get<3>(key), std::get<4>(key), format_double(s.mean),
                 format_double(s.ci95), std::to_string(s.n)});
  }
  summary.close();

  // stage order: stage1 then stage2 (or whatever single stage exists),
  // epochs concatenated on a single axis.
  std::vector<std::string> stage_order;
  for (const auto& [stage, maxe] : stage_max_epoch) stage_order.push_back(stage);
  std::sort(stage_order.begin(), stage_order.end());
  std::map<std::string, double> stage_offset;
  double off = 0;
  for (const auto& s : stage_order) {
    stage_offset[s] = off;
    off += static_cast<double>(stage_max_epoch[s]);
  }

  // one chart per (metric, family); series per subset of seed means
  std::set<std::pair<std::string, std::string>> chart_keys;
  for (const auto& [key, values] : groups)
    chart_keys.insert({std::get<4>(key), std::get<3>(key)});
  for (const auto& [metric, family] : chart_keys) {
    std::map<std::string, Series> by_subset;
    for (const auto& [key, values] : groups) {
      if (std::get<4>(key) != metric || std::get<3>(key) != family) continue;
      SeedStats s = seed_stats(values);
      Series& series = by_subset[std::get<2>(key)];
      series.name = std::get<2>(key);
      series.points.emplace_back(stage_offset[std::get<0>(key)] + std::get<1>(key), s.mean);
    }
    std::vector<Series> series;
    for (auto& [name, s] : by_subset) {
      std::sort(s.points.begin(), s.points.end());
      series.push_back(std::move(s));
    }
    std::string fname = metric + "_" + family;
    for (auto& c : fname)
      if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    std::ofstream out(out_dir + "/" + fname + ".svg", std::ios::binary);
    check(out.good(), "emit_report: cannot write chart in " + out_dir);
    out << render_line_chart_svg(metric + " / " + family, "epoch", metric, series, provenance);
  }
}

}  // namespace iml
