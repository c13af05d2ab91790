#pragma once

#include <span>
#include <string>
#include <vector>

// Static SVG charts for the analysis outputs.
namespace ncl::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // NaN points are skipped
};

enum class Style { kLines, kBars };

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  Style style = Style::kLines;
  std::vector<Series> series;
};

std::string render_svg(const Chart& chart);
std::string table_svg(const std::string& title, std::span<const std::string> header,
                      std::span<const std::vector<std::string>> rows);

}  // namespace ncl::plot
