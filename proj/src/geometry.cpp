#include "lfss/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace lfss {

static_assert(std::endian::native == std::endian::little,
              "scan/label decoding assumes a little-endian host");

void ProjectionConfig::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("projection: width and height must be >= 1");
  if (fov_up < 0) throw std::invalid_argument("projection: fov_up must be >= 0");
  if (fov_down <= 0) throw std::invalid_argument("projection: fov_down must be > 0");
}

std::vector<PixelCoord> RangeImage::valid_pixels() const {
  std::vector<PixelCoord> out;
  out.reserve(static_cast<std::size_t>(valid_count));
  for (int v = 0; v < height(); ++v) {
    for (int u = 0; u < width(); ++u) {
      if (valid(v, u)) out.push_back({u, v});
    }
  }
  return out;
}

std::vector<ClassId> RangeImage::gather_labels(std::span<const ClassId> point_labels) const {
  if (static_cast<Index>(point_labels.size()) != source_point_count) {
    throw std::invalid_argument("gather_labels: got " + std::to_string(point_labels.size()) +
                                " point labels for a cloud of " + std::to_string(source_point_count));
  }
  std::vector<ClassId> out;
  out.reserve(static_cast<std::size_t>(valid_count));
  for (int v = 0; v < height(); ++v) {
    for (int u = 0; u < width(); ++u) {
      if (valid(v, u)) out.push_back(point_labels[static_cast<std::size_t>(point_index(v, u))]);
    }
  }
  return out;
}

namespace {

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<char> bytes(static_cast<std::size_t>(size));
  if (size > 0 && !in.read(bytes.data(), size)) {
    throw std::runtime_error("failed to read file: " + path.string());
  }
  return bytes;
}

float float_at(const std::vector<char>& bytes, std::size_t offset) {
  float f;
  std::memcpy(&f, bytes.data() + offset, sizeof(float));
  return f;
}

}  // namespace

PointCloud read_scan(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 16 != 0) {
    throw std::runtime_error("truncated scan record in " + path.string() + ": " +
                             std::to_string(bytes.size()) + " bytes is not a multiple of 16");
  }
  const Index n = static_cast<Index>(bytes.size() / 16);
  PointCloud cloud;
  cloud.points.resize(n, 4);
  static const char* component[4] = {"x", "y", "z", "intensity"};
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < 4; ++c) {
      const float f = float_at(bytes, static_cast<std::size_t>(i * 16 + c * 4));
      if (!std::isfinite(f)) {
        throw std::runtime_error("non-finite " + std::string(component[c]) + " at point " +
                                 std::to_string(i) + " in " + path.string());
      }
      cloud.points(i, c) = static_cast<Scalar>(f);
    }
  }
  return cloud;
}

std::vector<std::uint16_t> read_labels(const std::filesystem::path& path, Index expected_count) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() != static_cast<std::size_t>(expected_count) * 4) {
    throw std::runtime_error("label file " + path.string() + " holds " + std::to_string(bytes.size() / 4) +
                             " entries (" + std::to_string(bytes.size()) + " bytes), expected " +
                             std::to_string(expected_count));
  }
  std::vector<std::uint16_t> out;
  out.reserve(static_cast<std::size_t>(expected_count));
  for (Index i = 0; i < expected_count; ++i) {
    std::uint32_t word;
    std::memcpy(&word, bytes.data() + i * 4, 4);
    out.push_back(static_cast<std::uint16_t>(word & 0xffffu));  // high 16 bits: instance id
  }
  return out;
}

std::vector<std::uint16_t> read_labels(const std::filesystem::path& path, Index expected_count,
                                       const std::set<std::uint16_t>& id_table) {
  auto labels = read_labels(path, expected_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!id_table.count(labels[i])) {
      throw std::runtime_error("unknown semantic id " + std::to_string(labels[i]) + " at point " +
                               std::to_string(i) + " in " + path.string());
    }
  }
  return labels;
}

void write_scan(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
  for (Index i = 0; i < cloud.size(); ++i) {
    for (Index c = 0; c < 4; ++c) {
      const float f = static_cast<float>(cloud.points(i, c));
      out.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
  if (!out) throw std::runtime_error("failed to write scan: " + path.string());
}

void write_labels(const std::filesystem::path& path, std::span<const std::uint16_t> labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
  for (std::uint16_t id : labels) {
    const std::uint32_t word = id;  // instance id zero
    out.write(reinterpret_cast<const char*>(&word), sizeof(word));
  }
  if (!out) throw std::runtime_error("failed to write labels: " + path.string());
}

PixelCoord project_point(Scalar x, Scalar y, Scalar z, const ProjectionConfig& cfg) {
  const Scalar r = std::sqrt(x * x + y * y + z * z);
  if (!(r > 0)) throw std::invalid_argument("project_point: range must be positive");
  const Scalar yaw = std::atan2(y, x);
  const Scalar pitch = std::asin(std::clamp(z / r, Scalar(-1), Scalar(1)));
  const Scalar uf =
      Scalar(0.5) * (Scalar(1) - yaw / std::numbers::pi_v<Scalar>) * static_cast<Scalar>(cfg.width);
  const Scalar vf = (Scalar(1) - (pitch + cfg.fov_down) / cfg.fov()) * static_cast<Scalar>(cfg.height);
  PixelCoord px;
  px.u = static_cast<int>(std::clamp<long long>(static_cast<long long>(std::floor(uf)), 0, cfg.width - 1));
  px.v = static_cast<int>(std::clamp<long long>(static_cast<long long>(std::floor(vf)), 0, cfg.height - 1));
  return px;
}

RangeImage project(const PointCloud& cloud, const ProjectionConfig& cfg) {
  cfg.validate();
  if (cloud.size() == 0) throw std::invalid_argument("project: empty point cloud");
  if (!cloud.points.allFinite()) throw std::invalid_argument("project: cloud contains non-finite values");

  RangeImage img;
  img.cfg = cfg;
  for (auto& ch : img.channels) ch = Matrix::Zero(cfg.height, cfg.width);
  img.valid = BoolGrid::Constant(cfg.height, cfg.width, false);
  img.point_index = IndexGrid::Constant(cfg.height, cfg.width, -1);
  img.source_point_count = cloud.size();

  for (Index i = 0; i < cloud.size(); ++i) {
    const Scalar x = cloud.points(i, 0), y = cloud.points(i, 1), z = cloud.points(i, 2);
    const Scalar r = std::sqrt(x * x + y * y + z * z);
    if (!(r > 0)) throw std::invalid_argument("project: point " + std::to_string(i) + " has zero range");
    const PixelCoord px = project_point(x, y, z, cfg);
    const Index prev = img.point_index(px.v, px.u);
    if (prev >= 0) {
      const Scalar prev_r = img.channels[4](px.v, px.u);
      // nearest range wins; equal ranges keep the smaller point index
      if (r > prev_r || (r == prev_r && i > prev)) continue;
    }
    img.channels[0](px.v, px.u) = x;
    img.channels[1](px.v, px.u) = y;
    img.channels[2](px.v, px.u) = z;
    img.channels[3](px.v, px.u) = cloud.points(i, 3);
    img.channels[4](px.v, px.u) = r;
    img.point_index(px.v, px.u) = i;
    img.valid(px.v, px.u) = true;
  }
  img.valid_count = static_cast<Index>(img.valid.count());
  return img;
}

std::vector<ClassId> backproject(const LabelGrid& pixel_labels, const RangeImage& image,
                                 const PointCloud& cloud) {
  if (pixel_labels.rows() != image.height() || pixel_labels.cols() != image.width()) {
    throw std::invalid_argument("backproject: label grid is " + std::to_string(pixel_labels.rows()) + "x" +
                                std::to_string(pixel_labels.cols()) + ", image is " +
                                std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
  std::vector<ClassId> out;
  out.reserve(static_cast<std::size_t>(cloud.size()));
  for (Index i = 0; i < cloud.size(); ++i) {
    const PixelCoord px = project_point(cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2), image.cfg);
    out.push_back(pixel_labels(px.v, px.u));
  }
  return out;
}

}  // namespace lfss
