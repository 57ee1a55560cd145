#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "expose/bench.hpp"

namespace expose {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// RGB raster with data-space line drawing inside a plot frame.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});
  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1);
  void rect(int x0, int y0, int x1, int y1, Rgb c, bool filled);
  /// Digits, '.', '-', 'e' and '+' in a 5x7 bitmap font.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  const std::vector<std::uint8_t>& pixels() const { return data_; }

 private:
  int width_, height_;
  std::vector<std::uint8_t> data_;
};

/// Maps a data window onto a pixel rectangle of a canvas and draws axes and ticks.
class Axes {
 public:
  Axes(Canvas& canvas, int left, int top, int right, int bottom, double x0, double x1, double y0, double y1);
  void frame(int ticks = 4);
  void polyline(const std::vector<double>& xs, const std::vector<double>& ys, Rgb c, int thickness = 2);
  void bar(double xa, double xb, double y, Rgb c);
  void hline(double y, Rgb c);
  int px(double x) const;
  int py(double y) const;

 private:
  Canvas& c_;
  int l_, t_, r_, b_;
  double x0_, x1_, y0_, y1_;
};

/// Writes an 8-bit RGB PNG with Title and Description text chunks.
void write_png(const std::string& path, const Canvas& canvas, const std::string& title,
               const std::string& description = "");

void plot_roc(const BenchReport& report, const std::string& path);
/// Real and fake histograms of d1, d2 and A side by side.
void plot_score_histograms(const BenchReport& report, const std::string& path);
void plot_temporal(const BenchReport& report, const std::string& path, int max_clips = 4);
void plot_severity(const BenchReport& report, const std::string& path);

/// All four figures into dir; returns the written paths.
std::vector<std::string> write_plots(const BenchReport& report, const std::string& dir);

}  // namespace expose
