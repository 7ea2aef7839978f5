#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace lfss {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Semantic class identifier. Raw dataset ids are mapped into this space by
/// the taxonomy; kIgnore marks elements excluded from losses and metrics.
using ClassId = std::int32_t;
inline constexpr ClassId kIgnore = -1;

using LabelGrid = Eigen::Matrix<ClassId, Eigen::Dynamic, Eigen::Dynamic>;
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using IndexGrid = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace lfss
