#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bvib/error.hpp"
#include "bvib/eval/metrics.hpp"
#include "bvib/shapegen/mesh.hpp"

namespace bvib::harness::svg {

inline constexpr std::array<const char*, 6> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

// Plot frame with linear axes; maps data coordinates to pixels.
class Frame {
 public:
  Frame(double x0, double x1, double y0, double y1, int width = 640, int height = 440)
      : w_(width), h_(height), x0_(x0), x1_(x1), y0_(y0), y1_(y1) {
    if (!(x1_ > x0_)) x1_ = x0_ + 1.0;
    if (!(y1_ > y0_)) y1_ = y0_ + 1.0;
  }
  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (w_ - kLeft - kRight); }
  double py(double y) const { return h_ - kBottom - (y - y0_) / (y1_ - y0_) * (h_ - kTop - kBottom); }

  std::string open(const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w_) + "\" height=\"" +
                    std::to_string(h_) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(w_ / 2.0) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
    s += "<text x=\"" + num(w_ / 2.0) + "\" y=\"" + num(h_ - 8.0) + "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
    s += "<text x=\"14\" y=\"" + num(h_ / 2.0) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " + num(h_ / 2.0) +
         ")\">" + escape(ylabel) + "</text>\n";
    s += line(kLeft, h_ - kBottom, w_ - kRight, h_ - kBottom, "black");
    s += line(kLeft, kTop, kLeft, h_ - kBottom, "black");
    for (int t = 0; t <= 4; ++t) {
      const double y = y0_ + (y1_ - y0_) * t / 4.0;
      s += line(kLeft - 4, py(y), kLeft, py(y), "black");
      s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(y) + 4) + "\" text-anchor=\"end\">" + num(y) + "</text>\n";
    }
    return s;
  }

  std::string x_ticks() const {
    std::string s;
    for (int t = 0; t <= 4; ++t) {
      const double x = x0_ + (x1_ - x0_) * t / 4.0;
      s += line(px(x), h_ - kBottom, px(x), h_ - kBottom + 4, "black");
      s += "<text x=\"" + num(px(x)) + "\" y=\"" + num(h_ - kBottom + 16) + "\" text-anchor=\"middle\">" + num(x) + "</text>\n";
    }
    return s;
  }

  static std::string line(double x1, double y1, double x2, double y2, const char* color, double width = 1.0) {
    return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) + "\" stroke=\"" +
           color + "\" stroke-width=\"" + num(width) + "\"/>\n";
  }

  int width() const { return w_; }
  int height() const { return h_; }
  static constexpr double kLeft = 70, kRight = 20, kTop = 34, kBottom = 48;

 private:
  int w_, h_;
  double x0_, x1_, y0_, y1_;
};

inline std::pair<double, double> padded_range(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 1.0};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double pad = std::max(1e-12, 0.05 * (*hi - *lo));
  return {*lo - pad, *hi + pad};
}

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

// Quartile boxes with 1.5 IQR whiskers; points beyond the whiskers are drawn.
inline std::string box_plot(const std::string& title, const std::string& ylabel, const std::vector<BoxGroup>& groups) {
  if (groups.empty()) throw DomainError("box_plot: no groups");
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.values.begin(), g.values.end());
  const auto [lo, hi] = padded_range(all);
  const Frame f(0.0, static_cast<double>(groups.size()), lo, hi);
  std::string s = f.open(title, "", ylabel);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const double cx = f.px(static_cast<double>(i) + 0.5);
    const char* color = kPalette[i % kPalette.size()];
    s += "<text x=\"" + num(cx) + "\" y=\"" + num(f.height() - Frame::kBottom + 16) + "\" text-anchor=\"middle\">" +
         escape(g.label) + "</text>\n";
    if (g.values.empty()) continue;
    const double q1 = eval::quantile(g.values, 0.25), q2 = eval::quantile(g.values, 0.5), q3 = eval::quantile(g.values, 0.75);
    const double iqr = q3 - q1;
    double wlo = q1, whi = q3;
    for (double v : g.values) {
      if (v >= q1 - 1.5 * iqr) wlo = std::min(wlo, v);
      if (v <= q3 + 1.5 * iqr) whi = std::max(whi, v);
    }
    const double half = 0.25 * (f.px(1.0) - f.px(0.0));
    s += "<rect x=\"" + num(cx - half) + "\" y=\"" + num(f.py(q3)) + "\" width=\"" + num(2 * half) + "\" height=\"" +
         num(f.py(q1) - f.py(q3)) + "\" fill=\"" + color + "\" fill-opacity=\"0.35\" stroke=\"" + color + "\"/>\n";
    s += Frame::line(cx - half, f.py(q2), cx + half, f.py(q2), color, 2.0);
    s += Frame::line(cx, f.py(q3), cx, f.py(whi), color);
    s += Frame::line(cx, f.py(q1), cx, f.py(wlo), color);
    s += Frame::line(cx - half / 2, f.py(whi), cx + half / 2, f.py(whi), color);
    s += Frame::line(cx - half / 2, f.py(wlo), cx + half / 2, f.py(wlo), color);
    for (double v : g.values)
      if (v < wlo || v > whi)
        s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(f.py(v)) + "\" r=\"2.5\" fill=\"none\" stroke=\"" + color + "\"/>\n";
  }
  return s + "</svg>\n";
}

struct ScatterSeries {
  std::string label;  // shown in the legend, e.g. "run 0: r = 0.812"
  std::vector<double> x, y;
};

inline std::string scatter_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                const std::vector<ScatterSeries>& series) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("scatter_plot: x and y differ in length");
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const auto [x0, x1] = padded_range(xs);
  const auto [y0, y1] = padded_range(ys);
  const Frame f(x0, x1, y0, y1);
  std::string out = f.open(title, xlabel, ylabel) + f.x_ticks();
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % kPalette.size()];
    for (std::size_t i = 0; i < series[k].x.size(); ++i)
      out += "<circle cx=\"" + num(f.px(series[k].x[i])) + "\" cy=\"" + num(f.py(series[k].y[i])) + "\" r=\"3\" fill=\"" +
             color + "\" fill-opacity=\"0.6\"/>\n";
    out += "<text x=\"" + num(Frame::kLeft + 10) + "\" y=\"" + num(Frame::kTop + 14 + 16.0 * static_cast<double>(k)) +
           "\" fill=\"" + color + "\">" + escape(series[k].label) + "</text>\n";
  }
  return out + "</svg>\n";
}

// Viridis-like ramp sampled at five stops.
inline std::string ramp_color(double t) {
  static constexpr double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double u = t - i;
  char buf[8];
  int c[3];
  for (int k = 0; k < 3; ++k) c[k] = static_cast<int>(std::lround(stops[i][k] + u * (stops[i + 1][k] - stops[i][k])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

// Orthographic view along -z of a mesh coloured by a per-vertex scalar;
// faces are painted back to front.
inline std::string mesh_heatmap(const std::string& title, const shapegen::SurfaceMesh& mesh, const std::vector<double>& scalar) {
  if (scalar.size() != mesh.vertices.size()) throw ShapeError("mesh_heatmap: one scalar per vertex required");
  if (mesh.vertices.empty()) throw DomainError("mesh_heatmap: empty mesh");
  shapegen::Vec3 lo = mesh.vertices.front(), hi = lo;
  for (const auto& v : mesh.vertices) lo = lo.cwiseMin(v), hi = hi.cwiseMax(v);
  const double span = std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1e-12});
  const double smin = *std::min_element(scalar.begin(), scalar.end());
  const double smax = *std::max_element(scalar.begin(), scalar.end());
  const int size = 360;
  auto px = [&](const shapegen::Vec3& v) { return 20.0 + (v.x() - lo.x()) / span * (size - 40); };
  auto py = [&](const shapegen::Vec3& v) { return 40.0 + (hi.y() - v.y()) / span * (size - 40); };

  std::vector<std::size_t> order(mesh.faces.size());
  std::iota(order.begin(), order.end(), 0);
  auto depth = [&](std::size_t f) {
    const auto& t = mesh.faces[f];
    return mesh.vertices[t[0]].z() + mesh.vertices[t[1]].z() + mesh.vertices[t[2]].z();
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return depth(a) < depth(b); });

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(size) + "\" height=\"" +
                  std::to_string(size + 30) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(size / 2.0) + "\" y=\"20\" text-anchor=\"middle\">" + escape(title) + "</text>\n";
  for (std::size_t f : order) {
    const auto& t = mesh.faces[f];
    const double v = (scalar[static_cast<std::size_t>(t[0])] + scalar[static_cast<std::size_t>(t[1])] +
                      scalar[static_cast<std::size_t>(t[2])]) / 3.0;
    const double u = smax > smin ? (v - smin) / (smax - smin) : 0.5;
    s += "<polygon points=\"";
    for (int k = 0; k < 3; ++k) s += num(px(mesh.vertices[t[k]])) + "," + num(py(mesh.vertices[t[k]])) + (k < 2 ? " " : "");
    const std::string c = ramp_color(u);
    s += "\" fill=\"" + c + "\" stroke=\"" + c + "\"/>\n";
  }
  s += "<text x=\"20\" y=\"" + num(size + 20.0) + "\">min " + num(smin) + "</text>\n";
  s += "<text x=\"" + num(size - 20.0) + "\" y=\"" + num(size + 20.0) + "\" text-anchor=\"end\">max " + num(smax) + "</text>\n";
  return s + "</svg>\n";
}

}  // namespace bvib::harness::svg
