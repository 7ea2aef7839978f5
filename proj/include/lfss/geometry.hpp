#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <vector>

#include "lfss/types.hpp"

namespace lfss {

/// One LiDAR sweep in the sensor frame; rows are (x, y, z, intensity).
struct PointCloud {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 4> points;

  Index size() const { return points.rows(); }
  Scalar range(Index i) const { return points.row(i).head<3>().norm(); }
};

/// Spherical projection geometry. Vertical field of view is given as two
/// magnitudes: fov_up above the horizon, fov_down below it.
struct ProjectionConfig {
  int width = 2048;
  int height = 64;
  Scalar fov_up = 3.0 * kDegree;
  Scalar fov_down = 25.0 * kDegree;

  static constexpr Scalar kDegree = 0.017453292519943295;  // pi / 180

  Scalar fov() const { return fov_up + fov_down; }
  void validate() const;
};

struct PixelCoord {
  int u = 0;  // column
  int v = 0;  // row
};

/// Range-view image: five h-by-w channels (x, y, z, intensity, range), a
/// validity mask, and the index of the point each valid pixel kept. Invalid
/// pixels carry all-zero channels and point_index -1.
struct RangeImage {
  ProjectionConfig cfg;
  std::array<Matrix, 5> channels;
  BoolGrid valid;
  IndexGrid point_index;
  Index valid_count = 0;       // M
  Index source_point_count = 0;

  int width() const { return cfg.width; }
  int height() const { return cfg.height; }

  /// Valid pixels in row-major order; row m of a LogitsMap corresponds to
  /// the m-th entry here.
  std::vector<PixelCoord> valid_pixels() const;

  /// Per-valid-pixel labels gathered through point_index, row-major order.
  std::vector<ClassId> gather_labels(std::span<const ClassId> point_labels) const;
};

/// Reads a packed little-endian float32 (x, y, z, intensity) scan file.
PointCloud read_scan(const std::filesystem::path& path);

/// Reads a packed little-endian uint32 label file; the low 16 bits are the
/// semantic id, the high 16 bits (instance id) are discarded.
std::vector<std::uint16_t> read_labels(const std::filesystem::path& path, Index expected_count);

/// As above, but every decoded id must appear in the configured id table.
std::vector<std::uint16_t> read_labels(const std::filesystem::path& path, Index expected_count,
                                       const std::set<std::uint16_t>& id_table);

void write_scan(const std::filesystem::path& path, const PointCloud& cloud);
void write_labels(const std::filesystem::path& path, std::span<const std::uint16_t> labels);

/// Image coordinates of one point: u = (1/2)(1 - atan2(y,x)/pi) w and
/// v = (1 - (asin(z/r) + fov_down)/fov) h, floored then clamped into the
/// grid. Requires r > 0.
PixelCoord project_point(Scalar x, Scalar y, Scalar z, const ProjectionConfig& cfg);

/// Projects a cloud to a range image. Pixel collisions keep the point with
/// the smallest range, ties broken by smallest point index, so the result
/// does not depend on evaluation order.
RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg);

/// Per-point labels read back from a per-pixel label grid through the same
/// projection arithmetic; total over points, including collision losers.
std::vector<ClassId> backproject(const LabelGrid& pixel_labels, const RangeImage& image,
                                 const PointCloud& cloud);

}  // namespace lfss
