#pragma once

#include <filesystem>

#include <Eigen/Dense>

namespace byols::tools {

/// Values in [0, 1] as an RGB PNG, one cell_px square per entry, first row at the bottom.
void write_heatmap_png(const Eigen::MatrixXd& values, const std::filesystem::path& path, int cell_px = 16);

}  // namespace byols::tools
