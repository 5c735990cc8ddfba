#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "epiglab/cli.hpp"

namespace epiglab::cli {

namespace {

constexpr double kWidth = 800;
constexpr double kHeight = 500;
constexpr double kLeft = 70, kRight = 150, kTop = 30, kBottom = 60;

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string learning_curve_svg(const std::map<std::string, CurveSummary>& curves) {
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& [name, curve] : curves) {
    for (const auto& p : curve) {
      const double se = std::isfinite(p.stderr_accuracy) ? p.stderr_accuracy : 0.0;
      x_lo = std::min(x_lo, static_cast<double>(p.train_size));
      x_hi = std::max(x_hi, static_cast<double>(p.train_size));
      y_lo = std::min(y_lo, p.mean_accuracy - se);
      y_hi = std::max(y_hi, p.mean_accuracy + se);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  if (x_hi <= x_lo) x_hi = x_lo + 1;
  y_lo = std::max(0.0, std::floor(y_lo * 20) / 20);
  y_hi = std::min(1.0, std::ceil(y_hi * 20) / 20);
  if (y_hi <= y_lo) y_hi = y_lo + 0.05;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto sy = [&](double y) { return kTop + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" viewBox=\"0 0 800 500\">\n"
      << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n"
      << "<g font-family=\"sans-serif\" font-size=\"12\">\n";

  for (int t = 0; t <= 5; ++t) {
    const double y = y_lo + (y_hi - y_lo) * t / 5.0;
    const double x = x_lo + (x_hi - x_lo) * t / 5.0;
    svg << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(sy(y)) << "\" x2=\"" << fmt(kLeft + plot_w) << "\" y2=\""
        << fmt(sy(y)) << "\" stroke=\"#e0e0e0\"/>\n"
        << "<text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(sy(y) + 4) << "\" text-anchor=\"end\">" << fmt(y)
        << "</text>\n"
        << "<text x=\"" << fmt(sx(x)) << "\" y=\"" << fmt(kTop + plot_h + 18)
        << "\" text-anchor=\"middle\">" << std::lround(x) << "</text>\n";
  }
  svg << "<rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\"" << fmt(plot_w) << "\" height=\""
      << fmt(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"" << fmt(kLeft + plot_w / 2) << "\" y=\"" << fmt(kHeight - 15)
      << "\" text-anchor=\"middle\">labelled examples</text>\n"
      << "<text transform=\"translate(18," << fmt(kTop + plot_h / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">test accuracy</text>\n";

  std::size_t colour = 0;
  for (const auto& [name, curve] : curves) {
    const char* c = kPalette[colour % kPalette.size()];
    if (!curve.empty()) {
      svg << "<polygon fill=\"" << c << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& p : curve) {
        const double se = std::isfinite(p.stderr_accuracy) ? p.stderr_accuracy : 0.0;
        svg << fmt(sx(static_cast<double>(p.train_size))) << ',' << fmt(sy(p.mean_accuracy + se)) << ' ';
      }
      for (auto it = curve.rbegin(); it != curve.rend(); ++it) {
        const double se = std::isfinite(it->stderr_accuracy) ? it->stderr_accuracy : 0.0;
        svg << fmt(sx(static_cast<double>(it->train_size))) << ',' << fmt(sy(it->mean_accuracy - se)) << ' ';
      }
      svg << "\"/>\n<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
      for (const auto& p : curve) {
        svg << fmt(sx(static_cast<double>(p.train_size))) << ',' << fmt(sy(p.mean_accuracy)) << ' ';
      }
      svg << "\"/>\n";
    }
    const double ly = kTop + 10 + 20.0 * static_cast<double>(colour);
    svg << "<line x1=\"" << fmt(kLeft + plot_w + 15) << "\" y1=\"" << fmt(ly) << "\" x2=\""
        << fmt(kLeft + plot_w + 40) << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << fmt(kLeft + plot_w + 46) << "\" y=\"" << fmt(ly + 4) << "\">" << escape(name)
        << "</text>\n";
    ++colour;
  }
  svg << "</g>\n</svg>\n";
  return svg.str();
}

}  // namespace epiglab::cli
