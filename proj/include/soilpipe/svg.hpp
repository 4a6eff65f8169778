#pragma once

// Minimal SVG writers for importance bar charts and correlation heatmaps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "soilpipe/core/matrix.hpp"
#include "soilpipe/core/text.hpp"

namespace soilpipe {

using Rgb = std::array<int, 3>;

/// Diverging ramp: -1 blue, 0 white, +1 red, linear in between. NaN is grey.
inline Rgb correlation_color(double r) {
  if (std::isnan(r)) return {192, 192, 192};
  r = std::clamp(r, -1.0, 1.0);
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(r))));
  return r >= 0.0 ? Rgb{255, fade, fade} : Rgb{fade, fade, 255};
}

inline std::string hex_color(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

inline std::string xml_escape(std::string_view s) {
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

struct Bar {
  std::string label;
  double value = 0.0;
};

/// Horizontal bars, longest first as given.
inline std::string bar_chart_svg(const std::string& title, const std::vector<Bar>& bars) {
  constexpr int label_w = 220, plot_w = 420, bar_h = 18, gap = 4, top = 40;
  const int height = top + static_cast<int>(bars.size()) * (bar_h + gap) + 20;
  double max_v = 0.0;
  for (const auto& b : bars) max_v = std::max(max_v, b.value);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << label_w + plot_w + 90 << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const int y = top + static_cast<int>(i) * (bar_h + gap);
    const double w = max_v > 0.0 ? std::max(0.0, bars[i].value) / max_v * plot_w : 0.0;
    out << "<text x=\"" << label_w - 6 << "\" y=\"" << y + bar_h - 4 << "\" text-anchor=\"end\">"
        << xml_escape(bars[i].label) << "</text>\n";
    out << "<rect class=\"bar\" x=\"" << label_w << "\" y=\"" << y << "\" width=\"" << format_fixed(w, 2)
        << "\" height=\"" << bar_h << "\" fill=\"#4a7ab5\"/>\n";
    out << "<text x=\"" << format_fixed(label_w + w + 4, 2) << "\" y=\"" << y + bar_h - 4 << "\">"
        << format_fixed(bars[i].value, 4) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

/// Square heatmap; labels are drawn when there are at most 60 of them.
inline std::string heatmap_svg(const std::string& title, const std::vector<std::string>& labels, const Matrix& r) {
  const std::size_t n = labels.size();
  const bool show_labels = n <= 60;
  const int cell = n <= 30 ? 18 : (n <= 120 ? 8 : 2);
  const int margin = show_labels ? 160 : 20;
  const int top = 30 + margin;
  const int size = static_cast<int>(n) * cell;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << margin + size + 20 << "\" height=\""
      << top + size + 20 << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  out << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      out << "<rect x=\"" << margin + static_cast<int>(j) * cell << "\" y=\"" << top + static_cast<int>(i) * cell
          << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << hex_color(correlation_color(r(i, j)))
          << "\"/>\n";
    if (show_labels) {
      const int mid = static_cast<int>(i) * cell + cell / 2 + 3;
      out << "<text x=\"" << margin - 4 << "\" y=\"" << top + mid << "\" text-anchor=\"end\">"
          << xml_escape(labels[i]) << "</text>\n";
      out << "<text transform=\"translate(" << margin + mid << "," << top - 4
          << ") rotate(-90)\">" << xml_escape(labels[i]) << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace soilpipe
