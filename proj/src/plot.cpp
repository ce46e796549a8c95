#include "attnas/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "attnas/error.hpp"

namespace attnas {

namespace {

std::string escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

}  // namespace

std::string render_line_chart(std::span<const PlotSeries> series, const std::string& title,
                              const std::string& x_label, const std::string& y_label) {
  constexpr double W = 720, H = 440, L = 70, R = 180, T = 40, B = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(W) + "\" height=\"" + coord(H) +
                    "\" viewBox=\"0 0 " + coord(W) + " " + coord(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + coord(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
  svg += "<g class=\"axes\" stroke=\"#333\" fill=\"none\">\n";
  svg += "<line x1=\"" + coord(L) + "\" y1=\"" + coord(H - B) + "\" x2=\"" + coord(W - R) + "\" y2=\"" + coord(H - B) + "\"/>\n";
  svg += "<line x1=\"" + coord(L) + "\" y1=\"" + coord(T) + "\" x2=\"" + coord(L) + "\" y2=\"" + coord(H - B) + "\"/>\n";
  svg += "</g>\n<g class=\"ticks\" fill=\"#333\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    svg += "<text x=\"" + coord(px(xv)) + "\" y=\"" + coord(H - B + 16) + "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    svg += "<text x=\"" + coord(L - 6) + "\" y=\"" + coord(py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
  }
  svg += "</g>\n";
  svg += "<text x=\"" + coord((L + W - R) / 2) + "\" y=\"" + coord(H - 12) + "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  svg += "<text transform=\"translate(18 " + coord((T + H - B) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(y_label) + "</text>\n";

  std::size_t k = 0;
  std::string legend = "<g class=\"legend\">\n";
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (const auto& [x, y] : s.points) pts += coord(px(x)) + "," + coord(py(y)) + " ";
    if (!pts.empty()) pts.pop_back();
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts +
           "\"><title>" + escape(s.name) + "</title></polyline>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(k);
    legend += "<line x1=\"" + coord(W - R + 15) + "\" y1=\"" + coord(ly) + "\" x2=\"" + coord(W - R + 40) + "\" y2=\"" +
              coord(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    legend += "<text x=\"" + coord(W - R + 46) + "\" y=\"" + coord(ly + 4) + "\">" + escape(s.name) + "</text>\n";
    ++k;
  }
  svg += legend + "</g>\n</svg>\n";
  return svg;
}

std::vector<PlotSeries> history_series(std::span<const HistoryRow> rows, const std::string& metric) {
  if (metric != "loss" && metric != "acc") throw ConfigError("plot metric must be 'loss' or 'acc'");
  std::vector<PlotSeries> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    const std::string key = r.phase + "/" + r.split;
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back({key, {}});
    }
    const double v = metric == "loss" ? r.loss : r.acc;
    if (!std::isnan(v)) out[it->second].points.emplace_back(static_cast<double>(r.epoch), v);
  }
  std::erase_if(out, [](const PlotSeries& s) { return s.points.empty(); });
  return out;
}

std::vector<PlotSeries> metrics_series(std::span<const MetricsRow> rows) {
  std::vector<PlotSeries> out{{"train_loss", {}}, {"test_top1", {}}, {"test_top5", {}}};
  for (const auto& r : rows) {
    const double e = static_cast<double>(r.epoch);
    if (!std::isnan(r.train_loss)) out[0].points.emplace_back(e, r.train_loss);
    if (!std::isnan(r.test_top1)) out[1].points.emplace_back(e, r.test_top1);
    if (!std::isnan(r.test_top5)) out[2].points.emplace_back(e, r.test_top5);
  }
  std::erase_if(out, [](const PlotSeries& s) { return s.points.empty(); });
  return out;
}

std::string plot_csv(const std::string& csv, const std::string& metric) {
  if (csv.rfind("phase,", 0) == 0) {
    const auto rows = history_from_csv(csv);
    const auto series = history_series(rows, metric);
    return render_line_chart(series, "Search history", "epoch", metric);
  }
  if (csv.rfind("epoch,", 0) == 0) {
    const auto rows = metrics_from_csv(csv);
    const auto series = metrics_series(rows);
    return render_line_chart(series, "Training metrics", "epoch", "value");
  }
  throw ParseError("unrecognised CSV header; expected a search history or training metrics file");
}

}  // namespace attnas
