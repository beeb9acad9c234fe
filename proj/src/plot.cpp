#include "sni/plot.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <regex>
#include <sstream>

#include "sni/error.hpp"

namespace sni {

namespace {

constexpr double kPanelW = 480.0;
constexpr double kPanelH = 200.0;
constexpr double kMargin = 48.0;
constexpr double kGap = 24.0;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string label(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

MetricTable parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  MetricTable t;
  if (!std::getline(in, line)) throw ArgumentError("metrics CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.empty() || header.front() != "images_seen") {
    throw ArgumentError("metrics CSV must start with an images_seen column");
  }
  t.columns.assign(header.begin() + 1, header.end());
  t.values.resize(t.columns.size());
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    try {
      t.images_seen.push_back(std::stod(cells.at(0)));
    } catch (const std::exception&) {
      throw ArgumentError("metrics CSV row has no numeric images_seen: " + line);
    }
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (c + 1 < cells.size() && !cells[c + 1].empty()) {
        try {
          v = std::stod(cells[c + 1]);
        } catch (const std::exception&) {
          throw ArgumentError("metrics CSV cell '" + cells[c + 1] + "' is not a number");
        }
      }
      t.values[c].push_back(v);
    }
  }
  if (t.images_seen.empty()) throw ArgumentError("metrics CSV has no data rows");
  return t;
}

PlotResult plot_metrics(const MetricTable& table, const std::vector<std::string>& wanted) {
  PlotResult r;
  std::vector<std::string> names = wanted.empty() ? table.columns : wanted;
  std::vector<std::size_t> cols;
  for (const auto& name : names) {
    const auto it = std::find(table.columns.begin(), table.columns.end(), name);
    if (it == table.columns.end()) {
      r.warnings.push_back("column '" + name + "' not in CSV, skipped");
      continue;
    }
    const auto c = static_cast<std::size_t>(it - table.columns.begin());
    if (std::none_of(table.values[c].begin(), table.values[c].end(), [](double v) { return std::isfinite(v); })) {
      r.warnings.push_back("column '" + name + "' has no values, skipped");
      continue;
    }
    cols.push_back(c);
    r.plotted.push_back(name);
  }
  const double width = kPanelW + 2 * kMargin;
  const double height = std::max<std::size_t>(cols.size(), 1) * (kPanelH + kGap + kMargin) + kMargin;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const auto [xmin_it, xmax_it] = std::minmax_element(table.images_seen.begin(), table.images_seen.end());
  const double xmin = *xmin_it, xmax = *xmax_it;
  for (std::size_t p = 0; p < cols.size(); ++p) {
    const auto& vals = table.values[cols[p]];
    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    for (double v : vals)
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    const double top = kMargin + p * (kPanelH + kGap + kMargin);
    const double left = kMargin;
    auto px = [&](double x) { return xmax > xmin ? left + (x - xmin) / (xmax - xmin) * kPanelW : left + kPanelW / 2; };
    auto py = [&](double y) { return ymax > ymin ? top + kPanelH - (y - ymin) / (ymax - ymin) * kPanelH : top + kPanelH / 2; };
    svg << "<g id=\"panel-" << r.plotted[p] << "\">\n";
    svg << "<text x=\"" << num(left) << "\" y=\"" << num(top - 8) << "\" font-weight=\"bold\">" << r.plotted[p]
        << "</text>\n";
    svg << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(kPanelW) << "\" height=\""
        << num(kPanelH) << "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg << "<text x=\"" << num(left - 4) << "\" y=\"" << num(top + 10) << "\" text-anchor=\"end\">" << label(ymax)
        << "</text>\n";
    svg << "<text x=\"" << num(left - 4) << "\" y=\"" << num(top + kPanelH) << "\" text-anchor=\"end\">"
        << label(ymin) << "</text>\n";
    svg << "<text x=\"" << num(left) << "\" y=\"" << num(top + kPanelH + 14) << "\">" << label(xmin) << "</text>\n";
    svg << "<text x=\"" << num(left + kPanelW) << "\" y=\"" << num(top + kPanelH + 14)
        << "\" text-anchor=\"end\">" << label(xmax) << " images</text>\n";
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (!std::isfinite(vals[i])) continue;
      svg << (first ? "" : " ") << num(px(table.images_seen[i])) << "," << num(py(vals[i]));
      first = false;
    }
    svg << "\"/>\n</g>\n";
  }
  svg << "</svg>\n";
  r.svg = svg.str();
  return r;
}

std::vector<std::vector<Point>> svg_polylines(const std::string& svg) {
  static const std::regex poly_re(R"re(<polyline[^>]*points="([^"]*)")re");
  std::vector<std::vector<Point>> out;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly_re); it != std::sregex_iterator(); ++it) {
    std::vector<Point> pts;
    std::istringstream ps((*it)[1].str());
    std::string pair;
    while (ps >> pair) {
      const auto comma = pair.find(',');
      pts.push_back({std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1))});
    }
    out.push_back(std::move(pts));
  }
  return out;
}

}  // namespace sni
