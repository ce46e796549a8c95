#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnas/data.hpp"

namespace attnas {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Self-contained SVG: axes with ticks, one polyline per non-empty series and
/// a legend.
std::string render_line_chart(std::span<const PlotSeries> series, const std::string& title,
                              const std::string& x_label, const std::string& y_label);

/// One series per (phase, split); metric is "loss" or "acc". NaN values are
/// dropped and series left empty are omitted.
std::vector<PlotSeries> history_series(std::span<const HistoryRow> rows, const std::string& metric);
/// train_loss, test_top1 and test_top5 columns as separate series.
std::vector<PlotSeries> metrics_series(std::span<const MetricsRow> rows);

/// Accepts either a search history CSV or a training metrics CSV.
std::string plot_csv(const std::string& csv, const std::string& metric);

}  // namespace attnas
