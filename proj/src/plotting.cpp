#include "lokt/plotting.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace lokt::plot {
namespace {

const std::vector<cv::Scalar> kColors = {{180, 90, 30}, {40, 40, 200}, {40, 150, 40},
                                         {150, 40, 150}, {30, 140, 200}, {100, 100, 100}};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

struct Frame {
  int w = 720, h = 440, left = 70, right = 170, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  cv::Point map(double x, double y) const {
    const double px = left + (x - x0) / (x1 - x0) * (w - left - right);
    const double py = h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    return {static_cast<int>(std::lround(px)), static_cast<int>(std::lround(py))};
  }
};

cv::Mat axes(const Frame& f, const std::string& title, bool x_ticks) {
  cv::Mat img(f.h, f.w, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::rectangle(img, f.map(f.x0, f.y1), f.map(f.x1, f.y0), {0, 0, 0}, 1);
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    auto p = f.map(f.x0, yv);
    cv::line(img, p, {p.x - 5, p.y}, {0, 0, 0});
    cv::putText(img, fmt(yv), {5, p.y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0});
    if (x_ticks) {
      const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
      auto q = f.map(xv, f.y0);
      cv::line(img, q, {q.x, q.y + 5}, {0, 0, 0});
      cv::putText(img, fmt(xv), {q.x - 12, q.y + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0});
    }
  }
  cv::putText(img, title, {f.left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 0});
  return img;
}

void legend(cv::Mat& img, const Frame& f, const std::vector<Series>& series) {
  for (size_t i = 0; i < series.size(); ++i) {
    const int y = f.top + 15 + static_cast<int>(i) * 20;
    const int x = f.w - f.right + 10;
    cv::rectangle(img, {x, y - 8}, {x + 14, y + 2}, kColors[i % kColors.size()], cv::FILLED);
    cv::putText(img, series[i].label, {x + 20, y}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0});
  }
}

void write(const cv::Mat& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  cv::imwrite(path.string(), img);
}

}  // namespace

void save_image_grid(const torch::Tensor& images, const std::filesystem::path& path,
                     int64_t columns, int scale) {
  auto x = images.detach().to(torch::kFloat32).clamp(-1, 1).add(1).mul(127.5).round().to(torch::kUInt8);
  const auto n = x.size(0);
  const auto c = x.size(1);
  const auto h = x.size(2);
  const auto w = x.size(3);
  columns = std::max<int64_t>(1, std::min(columns, n));
  const auto rows = (n + columns - 1) / columns;
  const int pad = 1;
  cv::Mat grid(static_cast<int>(rows * (h + pad) + pad), static_cast<int>(columns * (w + pad) + pad),
               c == 3 ? CV_8UC3 : CV_8UC1, cv::Scalar::all(64));
  for (int64_t i = 0; i < n; ++i) {
    auto tile = x[i].permute({1, 2, 0}).contiguous();
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), c == 3 ? CV_8UC3 : CV_8UC1, tile.data_ptr());
    const int r = static_cast<int>(i / columns);
    const int col = static_cast<int>(i % columns);
    m.copyTo(grid(cv::Rect(pad + col * static_cast<int>(w + pad), pad + r * static_cast<int>(h + pad),
                           static_cast<int>(w), static_cast<int>(h))));
  }
  cv::Mat big;
  cv::resize(grid, big, {}, scale, scale, cv::INTER_NEAREST);
  write(big, path);
}

void save_line_plot(const std::vector<Series>& series, const std::string& title,
                    const std::filesystem::path& path) {
  Frame f;
  f.x0 = f.y0 = std::numeric_limits<double>::infinity();
  f.x1 = f.y1 = -std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        continue;
      }
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  }
  if (!std::isfinite(f.x0)) {
    f.x0 = f.y0 = 0;
    f.x1 = f.y1 = 1;
  }
  if (f.x1 <= f.x0) {
    f.x1 = f.x0 + 1;
  }
  if (f.y1 <= f.y0) {
    f.y1 = f.y0 + 1;
  }
  auto img = axes(f, title, true);
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    for (size_t i = 1; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i - 1]) && std::isfinite(s.y[i])) {
        cv::line(img, f.map(s.x[i - 1], s.y[i - 1]), f.map(s.x[i], s.y[i]),
                 kColors[k % kColors.size()], 1, cv::LINE_AA);
      }
    }
  }
  legend(img, f, series);
  write(img, path);
}

void save_bar_plot(const std::vector<std::string>& bin_labels, const std::vector<Series>& bars,
                   const std::string& title, const std::filesystem::path& path) {
  Frame f;
  f.x0 = 0;
  f.x1 = static_cast<double>(std::max<size_t>(1, bin_labels.size()));
  f.y0 = 0;
  f.y1 = 0;
  for (const auto& b : bars) {
    for (double v : b.y) {
      f.y1 = std::max(f.y1, v);
    }
  }
  if (f.y1 <= 0) {
    f.y1 = 1;
  }
  auto img = axes(f, title, false);
  const double width = 0.8 / static_cast<double>(std::max<size_t>(1, bars.size()));
  for (size_t k = 0; k < bars.size(); ++k) {
    for (size_t i = 0; i < bars[k].y.size(); ++i) {
      const double x = static_cast<double>(i) + 0.1 + width * static_cast<double>(k);
      cv::rectangle(img, f.map(x, bars[k].y[i]), f.map(x + width, 0.0),
                    kColors[k % kColors.size()], cv::FILLED);
    }
  }
  for (size_t i = 0; i < bin_labels.size(); ++i) {
    auto p = f.map(static_cast<double>(i) + 0.2, f.y0);
    cv::putText(img, bin_labels[i], {p.x, p.y + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.35, {0, 0, 0});
  }
  legend(img, f, bars);
  write(img, path);
}

}  // namespace lokt::plot
