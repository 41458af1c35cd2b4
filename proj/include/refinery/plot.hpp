#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "refinery/eval.hpp"
#include "refinery/serialize.hpp"

// CSV and static SVG renderings of the training curves and of the
// generalization-gap report. Output is a pure function of the inputs, so
// regenerating plots from the same metrics produces identical bytes.

namespace refinery {

namespace plot_detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Mapper {
  double x0, x1, y0, y1; // data ranges
  double px0, px1, py0, py1; // pixel ranges (y flipped)
  double x(double v) const {
    if (x1 == x0) return (px0 + px1) / 2;
    return px0 + (v - x0) / (x1 - x0) * (px1 - px0);
  }
  double y(double v) const {
    if (y1 == y0) return (py0 + py1) / 2;
    return py0 - (v - y0) / (y1 - y0) * (py0 - py1);
  }
};

inline void svg_header(std::ostringstream& os, int w, int h,
                       const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
     << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
}

inline void axes(std::ostringstream& os, const Mapper& m,
                 const std::string& xlabel, const std::string& ylabel) {
  os << "<line x1=\"" << m.px0 << "\" y1=\"" << m.py0 << "\" x2=\"" << m.px1
     << "\" y2=\"" << m.py0 << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << m.px0 << "\" y1=\"" << m.py0 << "\" x2=\"" << m.px0
     << "\" y2=\"" << m.py1 << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (m.px0 + m.px1) / 2 << "\" y=\"" << m.py0 + 32
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
     << xlabel << "</text>\n";
  os << "<text x=\"12\" y=\"" << (m.py0 + m.py1) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
        "transform=\"rotate(-90 12 " << (m.py0 + m.py1) / 2 << ")\">"
     << ylabel << "</text>\n";
  // simple min/max ticks
  os << "<text x=\"" << m.px0 << "\" y=\"" << m.py0 + 16
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
     << fmt(m.x0) << "</text>\n";
  os << "<text x=\"" << m.px1 << "\" y=\"" << m.py0 + 16
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
     << fmt(m.x1) << "</text>\n";
  os << "<text x=\"" << m.px0 - 6 << "\" y=\"" << m.py0 + 4
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
     << fmt(m.y0) << "</text>\n";
  os << "<text x=\"" << m.px0 - 6 << "\" y=\"" << m.py1 + 4
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
     << fmt(m.y1) << "</text>\n";
}

inline void polyline(std::ostringstream& os, const Mapper& m,
                     const std::vector<double>& xs, const std::vector<double>& ys,
                     const std::string& color) {
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i)
    os << fmt(m.x(xs[i])) << "," << fmt(m.y(ys[i])) << " ";
  os << "\"/>\n";
}

} // namespace plot_detail

inline std::string curves_csv(const MetricsRecord& rec) {
  std::ostringstream os;
  os << "epoch,train_loss,train_top1,val_top1,val_top5\n";
  for (const EpochMetrics& e : rec.epochs)
    os << e.epoch << "," << plot_detail::fmt(e.train_loss) << ","
       << plot_detail::fmt(e.train_top1) << "," << plot_detail::fmt(e.val_top1)
       << "," << plot_detail::fmt(e.val_top5) << "\n";
  return os.str();
}

/// Train/val top-1 accuracy per epoch; the gap between the two lines is the
/// overfitting diagnostic the chain is meant to shrink.
inline std::string curves_svg(const MetricsRecord& rec) {
  using namespace plot_detail;
  const int w = 560, h = 360;
  std::ostringstream os;
  svg_header(os, w, h, "stage " + std::to_string(rec.stage) +
                           " train/val top-1 accuracy");
  std::vector<double> xs, train, val;
  for (const EpochMetrics& e : rec.epochs) {
    xs.push_back(e.epoch);
    train.push_back(e.train_top1);
    val.push_back(e.val_top1);
  }
  Mapper m{xs.empty() ? 0 : xs.front(), xs.empty() ? 1 : xs.back(), 0.0, 100.0,
           56, w - 20, h - 48, 36};
  axes(os, m, "epoch", "top-1 accuracy (%)");
  polyline(os, m, xs, train, "#c0392b");
  polyline(os, m, xs, val, "#2471a3");
  os << "<text x=\"" << w - 150 << "\" y=\"52\" font-family=\"sans-serif\" "
        "font-size=\"11\" fill=\"#c0392b\">train</text>\n";
  os << "<text x=\"" << w - 150 << "\" y=\"66\" font-family=\"sans-serif\" "
        "font-size=\"11\" fill=\"#2471a3\">val</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline std::string gap_csv(const GapReport& report) {
  std::ostringstream os;
  os << "bin,mean_train,mean_val,std_val\n";
  for (std::size_t b = 0; b < report.bins.size(); ++b)
    os << b << "," << plot_detail::fmt(report.bins[b].mean_train) << ","
       << plot_detail::fmt(report.bins[b].mean_val) << ","
       << plot_detail::fmt(report.bins[b].std_val) << "\n";
  return os.str();
}

/// Per-bin mean validation accuracy (with one-standard-deviation whiskers)
/// against mean training accuracy; the diagonal marks ideal generalization.
inline std::string gap_svg(const GapReport& report, int stage) {
  using namespace plot_detail;
  const int w = 460, h = 420;
  std::ostringstream os;
  svg_header(os, w, h, "stage " + std::to_string(stage) +
                           " per-category train vs val accuracy");
  Mapper m{0.0, 100.0, 0.0, 100.0, 56, w - 20, h - 48, 36};
  axes(os, m, "bin mean train accuracy (%)", "bin mean val accuracy (%)");
  os << "<line x1=\"" << fmt(m.x(0)) << "\" y1=\"" << fmt(m.y(0)) << "\" x2=\""
     << fmt(m.x(100)) << "\" y2=\"" << fmt(m.y(100))
     << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
  for (const GapBin& bin : report.bins) {
    const double x = m.x(bin.mean_train);
    const double y = m.y(bin.mean_val);
    const double ylo = m.y(std::max(0.0, bin.mean_val - bin.std_val));
    const double yhi = m.y(std::min(100.0, bin.mean_val + bin.std_val));
    os << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(ylo) << "\" x2=\""
       << fmt(x) << "\" y2=\"" << fmt(yhi) << "\" stroke=\"#2471a3\"/>\n";
    os << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y)
       << "\" r=\"3\" fill=\"#2471a3\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

} // namespace refinery
