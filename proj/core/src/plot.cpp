#include "expose/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "expose/errors.hpp"

namespace expose {

namespace {

constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrey{200, 200, 200};
constexpr Rgb kReal{31, 119, 180};
constexpr Rgb kFake{214, 39, 40};
const Rgb kPalette[] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14}, {23, 190, 207}};

const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> f = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
  };
  return f;
}

// Enough decimals to tell neighbouring ticks apart.
std::string tick_label(double v, double step) {
  char buf[48];
  if (std::abs(v) < 1e-12 * std::max(1.0, step)) v = 0.0;
  if (std::abs(v) >= 1e6 || (step > 0 && step < 1e-7)) {
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
  }
  const int decimals = step > 0 ? std::clamp(static_cast<int>(std::ceil(-std::log10(step))) + 1, 0, 7) : 2;
  std::snprintf(buf, sizeof buf, "%.*f", decimals > 0 && step >= 1.0 ? 0 : decimals, v);
  return buf;
}

}  // namespace

Canvas::Canvas(int width, int height, Rgb bg) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw ConfigError("canvas must be at least 1x1");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = bg.r;
    data_[i + 1] = bg.g;
    data_[i + 2] = bg.b;
  }
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  data_[i] = c.r;
  data_[i + 1] = c.g;
  data_[i + 2] = c.b;
}

Rgb Canvas::get(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c, int thickness) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  const int h = thickness / 2;
  for (;;) {
    for (int a = -h; a < thickness - h; ++a)
      for (int b = -h; b < thickness - h; ++b) set(x0 + a, y0 + b, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::rect(int x0, int y0, int x1, int y1, Rgb c, bool filled) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  if (filled) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
    return;
  }
  line(x0, y0, x1, y0, c);
  line(x1, y0, x1, y1, c);
  line(x1, y1, x0, y1, c);
  line(x0, y1, x0, y0, c);
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  for (char ch : s) {
    auto it = font().find(ch);
    if (it != font().end())
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (it->second[row] & (0x10 >> col))
            for (int a = 0; a < scale; ++a)
              for (int b = 0; b < scale; ++b) set(x + col * scale + a, y + row * scale + b, c);
    x += 6 * scale;
  }
}

Axes::Axes(Canvas& canvas, int left, int top, int right, int bottom, double x0, double x1, double y0, double y1)
    : c_(canvas), l_(left), t_(top), r_(right), b_(bottom), x0_(x0), x1_(x1), y0_(y0), y1_(y1) {
  if (!(x1_ > x0_)) x1_ = x0_ + 1.0;
  if (!(y1_ > y0_)) y1_ = y0_ + 1.0;
}

int Axes::px(double x) const { return l_ + static_cast<int>(std::lround((x - x0_) / (x1_ - x0_) * (r_ - l_))); }
int Axes::py(double y) const { return b_ - static_cast<int>(std::lround((y - y0_) / (y1_ - y0_) * (b_ - t_))); }

void Axes::frame(int ticks) {
  for (int i = 0; i <= ticks; ++i) {
    const double fx = x0_ + (x1_ - x0_) * i / ticks, fy = y0_ + (y1_ - y0_) * i / ticks;
    c_.line(px(fx), t_, px(fx), b_, kGrey);
    c_.line(l_, py(fy), r_, py(fy), kGrey);
    const std::string lx = tick_label(fx, (x1_ - x0_) / ticks), ly = tick_label(fy, (y1_ - y0_) / ticks);
    c_.text(px(fx) - static_cast<int>(lx.size()) * 3, b_ + 6, lx, kBlack);
    c_.text(l_ - 6 * static_cast<int>(ly.size()) - 4, py(fy) - 3, ly, kBlack);
  }
  c_.rect(l_, t_, r_, b_, kBlack, false);
}

void Axes::polyline(const std::vector<double>& xs, const std::vector<double>& ys, Rgb c, int thickness) {
  for (std::size_t i = 1; i < xs.size() && i < ys.size(); ++i)
    c_.line(px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), c, thickness);
}

void Axes::bar(double xa, double xb, double y, Rgb c) { c_.rect(px(xa), py(0.0 > y0_ ? 0.0 : y0_), px(xb), py(y), c, true); }

void Axes::hline(double y, Rgb c) {
  for (int x = l_; x <= r_; x += 6) c_.line(x, py(y), std::min(x + 3, r_), py(y), c);
}

void write_png(const std::string& path, const Canvas& canvas, const std::string& title, const std::string& description) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, canvas.width(), canvas.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_text text[2];
  std::string k1 = "Title", k2 = "Description";
  text[0] = {};
  text[0].compression = PNG_TEXT_COMPRESSION_NONE;
  text[0].key = k1.data();
  text[0].text = const_cast<char*>(title.c_str());
  text[1] = text[0];
  text[1].key = k2.data();
  text[1].text = const_cast<char*>(description.c_str());
  png_set_text(png, info, text, description.empty() ? 1 : 2);
  png_write_info(png, info);
  const auto& px = canvas.pixels();
  for (int y = 0; y < canvas.height(); ++y)
    png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y) * canvas.width() * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// ---------------------------------------------------------------------------

namespace {

struct Split {
  std::vector<double> real, fake;
};

Split split_scores(const std::vector<ClipScore>& clips, double ClipScore::*field) {
  Split s;
  for (const auto& c : clips) (c.info.genuine ? s.real : s.fake).push_back(c.*field);
  return s;
}

void legend(Canvas& c, int x, int y, const std::vector<Rgb>& colors) {
  for (std::size_t i = 0; i < colors.size(); ++i) c.rect(x, y + 12 * static_cast<int>(i), x + 16, y + 12 * static_cast<int>(i) + 6, colors[i], true);
}

}  // namespace

void plot_roc(const BenchReport& report, const std::string& path) {
  Canvas c(420, 420);
  Axes ax(c, 50, 20, 400, 370, 0.0, 1.0, 0.0, 1.0);
  ax.frame(4);
  ax.polyline({0.0, 1.0}, {0.0, 1.0}, kGrey, 1);
  const std::pair<double ClipScore::*, Rgb> curves[] = {
      {&ClipScore::value, kPalette[0]}, {&ClipScore::d1, kPalette[2]}, {&ClipScore::d2, kPalette[1]}};
  for (const auto& [field, color] : curves) {
    const Split s = split_scores(report.clips, field);
    if (s.real.empty() || s.fake.empty()) continue;
    std::vector<double> xs, ys;
    for (const auto& p : roc_curve(s.real, s.fake)) {
      xs.push_back(p.fpr);
      ys.push_back(p.tpr);
    }
    ax.polyline(xs, ys, color, 2);
  }
  legend(c, 320, 300, {kPalette[0], kPalette[2], kPalette[1]});
  char desc[160];
  std::snprintf(desc, sizeof desc, "ROC; blue=A (AUC %.4f), green=d1 (AUC %.4f), red=d2 (AUC %.4f)", report.auc_ratio,
                report.auc_d1, report.auc_d2);
  write_png(path, c, "ROC curve", desc);
}

void plot_score_histograms(const BenchReport& report, const std::string& path) {
  Canvas c(1200, 360);
  const std::pair<double ClipScore::*, const char*> fields[] = {
      {&ClipScore::d1, "d1"}, {&ClipScore::d2, "d2"}, {&ClipScore::value, "A"}};
  constexpr int kBins = 20;
  for (int f = 0; f < 3; ++f) {
    const Split s = split_scores(report.clips, fields[f].first);
    std::vector<double> all = s.real;
    all.insert(all.end(), s.fake.begin(), s.fake.end());
    if (all.empty()) continue;
    const double lo = *std::min_element(all.begin(), all.end());
    double hi = *std::max_element(all.begin(), all.end());
    if (!(hi > lo)) hi = lo + 1.0;
    const double w = (hi - lo) / kBins;
    auto hist = [&](const std::vector<double>& v) {
      std::vector<double> h(kBins, 0.0);
      for (double x : v) h[std::min(kBins - 1, static_cast<int>((x - lo) / w))] += 1.0 / v.size();
      return h;
    };
    const auto hr = s.real.empty() ? std::vector<double>(kBins, 0.0) : hist(s.real);
    const auto hf = s.fake.empty() ? std::vector<double>(kBins, 0.0) : hist(s.fake);
    const double top = std::max(*std::max_element(hr.begin(), hr.end()), *std::max_element(hf.begin(), hf.end()));
    Axes ax(c, 60 + 400 * f, 20, 370 + 400 * f, 310, lo, hi, 0.0, top > 0 ? top * 1.1 : 1.0);
    ax.frame(4);
    for (int b = 0; b < kBins; ++b) {
      ax.bar(lo + b * w, lo + (b + 0.5) * w, hr[b], kReal);
      ax.bar(lo + (b + 0.5) * w, lo + (b + 1) * w, hf[b], kFake);
    }
  }
  write_png(path, c, "Score histograms", "panels d1, d2, A; blue=real, red=fake; y=fraction of clips");
}

void plot_temporal(const BenchReport& report, const std::string& path, int max_clips) {
  std::vector<const ClipScore*> picked;
  int real = 0, fake = 0;
  for (const auto& c : report.clips) {
    if (c.temporal.empty()) continue;
    if (c.info.genuine && real < (max_clips + 1) / 2) {
      picked.push_back(&c);
      ++real;
    } else if (!c.info.genuine && fake < max_clips / 2) {
      picked.push_back(&c);
      ++fake;
    }
  }
  double lo = 1.0, hi = 1.0;
  std::size_t len = 1;
  for (const auto* c : picked) {
    lo = std::min(lo, *std::min_element(c->temporal.begin(), c->temporal.end()));
    hi = std::max(hi, *std::max_element(c->temporal.begin(), c->temporal.end()));
    len = std::max(len, c->temporal.size());
  }
  Canvas canvas(720, 360);
  Axes ax(canvas, 60, 20, 700, 310, 0.0, static_cast<double>(len - 1), lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo));
  ax.frame(5);
  std::string desc = "per-frame score, window-smoothed; solid blue=real, red=fake; dashed=clip mean:";
  for (const auto* c : picked) {
    std::vector<double> xs(c->temporal.size());
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
    const Rgb color = c->info.genuine ? kReal : kFake;
    ax.polyline(xs, c->temporal, color, 2);
    double mean = 0.0;
    for (double v : c->temporal) mean += v;
    mean /= static_cast<double>(c->temporal.size());
    ax.hline(mean, color);
    desc += " " + c->info.id;
  }
  write_png(path, canvas, "Temporal scores", desc);
}

void plot_severity(const BenchReport& report, const std::string& path) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_kind;
  for (const auto& p : report.sweep) {
    auto& [xs, ys] = by_kind[p.kind];
    if (xs.empty()) {
      xs.push_back(0.0);
      ys.push_back(report.auc_ratio);
    }
    xs.push_back(p.severity);
    ys.push_back(p.auc);
  }
  Canvas c(520, 380);
  Axes ax(c, 60, 20, 500, 330, 0.0, static_cast<double>(kMaxSeverity), 0.0, 1.0);
  ax.frame(5);
  std::string desc = "AUC vs severity:";
  std::size_t i = 0;
  for (const auto& [kind, xy] : by_kind) {
    ax.polyline(xy.first, xy.second, kPalette[i % std::size(kPalette)], 2);
    desc += " " + kind + "=palette" + std::to_string(i);
    ++i;
  }
  write_png(path, c, "Severity sweep", desc);
}

std::vector<std::string> write_plots(const BenchReport& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create plot directory '" + dir + "': " + ec.message());
  const std::filesystem::path root(dir);
  std::vector<std::string> out = {(root / "roc.png").string(), (root / "histograms.png").string(),
                                  (root / "temporal.png").string()};
  plot_roc(report, out[0]);
  plot_score_histograms(report, out[1]);
  plot_temporal(report, out[2]);
  if (!report.sweep.empty()) {
    out.push_back((root / "severity.png").string());
    plot_severity(report, out.back());
  }
  return out;
}

}  // namespace expose
