#include "ncl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ncl/error.hpp"

namespace ncl::plot {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

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
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12) {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
         "\" text-anchor=\"" + anchor + "\" font-family=\"sans-serif\">" + escape(s) + "</text>\n";
}

}  // namespace

std::string render_svg(const Chart& chart) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = 0.0, ymax = -INFINITY;
  for (const auto& s : chart.series) {
    require(s.x.size() == s.y.size(), ErrorCode::kShapeMismatch, "series '" + s.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!(xmax > xmin)) {
    xmin = std::isfinite(xmin) ? xmin - 0.5 : 0.0;
    xmax = xmin + 1.0;
  }
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  ymax += 0.05 * (ymax - ymin);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                    num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += text(kWidth / 2, 22, chart.title, "middle", 14);
  svg += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = ymin + (ymax - ymin) * t / 4.0, xv = xmin + (xmax - xmin) * t / 4.0;
    svg += "<line x1=\"" + num(kLeft) + "\" x2=\"" + num(kLeft + pw) + "\" y1=\"" + num(py(yv)) + "\" y2=\"" +
           num(py(yv)) + "\" stroke=\"#ddd\"/>\n";
    svg += text(kLeft - 6, py(yv) + 4, tick(yv), "end", 10);
    svg += text(px(xv), kTop + ph + 16, tick(xv), "middle", 10);
  }
  svg += text(kLeft + pw / 2, kHeight - 12, chart.x_label);
  svg += "<text x=\"16\" y=\"" + num(kTop + ph / 2) + "\" font-size=\"12\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" transform=\"rotate(-90 16 " + num(kTop + ph / 2) + ")\">" +
         escape(chart.y_label) + "</text>\n";

  const std::size_t ns = chart.series.size();
  for (std::size_t si = 0; si < ns; ++si) {
    const auto& s = chart.series[si];
    const char* colour = kPalette[si % std::size(kPalette)];
    if (chart.style == Style::kBars) {
      // Bars of each series share a slot around every x; width from x spacing.
      double step = xmax - xmin;
      for (std::size_t i = 1; i < s.x.size(); ++i) step = std::min(step, std::abs(s.x[i] - s.x[i - 1]));
      const double slot = step / (xmax - xmin) * pw * 0.9;
      const double bw = slot / double(std::max<std::size_t>(ns, 1));
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (std::isnan(s.y[i])) continue;
        const double x0 = px(s.x[i]) - slot / 2 + bw * double(si);
        const double y0 = py(std::max(s.y[i], 0.0)), y1 = py(std::min(s.y[i], 0.0));
        svg += "<rect x=\"" + num(x0) + "\" y=\"" + num(y0) + "\" width=\"" + num(bw) + "\" height=\"" +
               num(y1 - y0) + "\" fill=\"" + colour + "\" fill-opacity=\"0.75\"/>\n";
      }
    } else {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (std::isnan(s.y[i])) continue;
        pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
        svg += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) + "\" r=\"2.5\" fill=\"" + colour +
               "\"/>\n";
      }
      svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1.5\"/>\n";
    }
    const double ly = kTop + 14 + 18 * double(si);
    svg += "<rect x=\"" + num(kLeft + pw + 12) + "\" y=\"" + num(ly - 9) + "\" width=\"12\" height=\"10\" fill=\"" +
           colour + "\"/>\n";
    svg += text(kLeft + pw + 30, ly, s.name, "start", 11);
  }
  svg += "</svg>\n";
  return svg;
}

std::string table_svg(const std::string& title, std::span<const std::string> header,
                      std::span<const std::vector<std::string>> rows) {
  const double col_w = 110, row_h = 22;
  const double width = 20 + col_w * double(std::max<std::size_t>(header.size(), 1));
  const double height = 50 + row_h * double(rows.size() + 1);
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                    num(height) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += text(width / 2, 22, title, "middle", 14);
  auto draw_row = [&](std::span<const std::string> cells, double y, bool bold) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::string t = text(10 + col_w * (double(c) + 0.5), y, cells[c], "middle", 11);
      if (bold) t.insert(t.find("font-family"), "font-weight=\"bold\" ");
      svg += t;
    }
  };
  draw_row(header, 50, true);
  svg += "<line x1=\"10\" x2=\"" + num(width - 10) + "\" y1=\"56\" y2=\"56\" stroke=\"#333\"/>\n";
  for (std::size_t r = 0; r < rows.size(); ++r) draw_row(rows[r], 50 + row_h * double(r + 1), false);
  svg += "</svg>\n";
  return svg;
}

}  // namespace ncl::plot
