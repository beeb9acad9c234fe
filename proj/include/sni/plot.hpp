#pragma once

// Metric curves as a standalone SVG: one panel per metric column, each a
// polyline of value against images_seen.

#include <string>
#include <vector>

namespace sni {

struct MetricTable {
  std::vector<std::string> columns;              // excluding images_seen
  std::vector<double> images_seen;
  std::vector<std::vector<double>> values;        // per column; NaN = missing
};

/// Parses a metrics CSV whose first column is images_seen. Empty cells
/// become NaN. Throws ArgumentError when there is no data row.
MetricTable parse_metrics_csv(const std::string& text);

struct PlotResult {
  std::string svg;
  std::vector<std::string> plotted;
  std::vector<std::string> warnings;  // one per skipped column
};

/// `wanted` lists the columns to draw (empty = all present). Columns that
/// are absent or hold no finite value are skipped with a warning.
PlotResult plot_metrics(const MetricTable& table, const std::vector<std::string>& wanted = {});

struct Point {
  double x = 0.0;
  double y = 0.0;
};
/// Points of every <polyline> in document order (used to check rendering).
std::vector<std::vector<Point>> svg_polylines(const std::string& svg);

}  // namespace sni
