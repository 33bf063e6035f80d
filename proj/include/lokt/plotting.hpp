#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace lokt::plot {

/// Tiles (B, C, H, W) images in [-1, 1] into a PNG, `columns` per row,
/// upscaled for legibility.
void save_image_grid(const torch::Tensor& images, const std::filesystem::path& path,
                     int64_t columns, int scale = 4);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Simple line chart with axes, tick labels and a legend.
void save_line_plot(const std::vector<Series>& series, const std::string& title,
                    const std::filesystem::path& path);

/// Bar chart of one or two histograms over the same bins.
void save_bar_plot(const std::vector<std::string>& bin_labels,
                   const std::vector<Series>& bars, const std::string& title,
                   const std::filesystem::path& path);

}  // namespace lokt::plot
