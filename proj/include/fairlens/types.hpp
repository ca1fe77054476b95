#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace fairlens {

// 0/1 outcome per row (observed labels or binarized predictions).
using BinaryVector = Eigen::ArrayXi;

// Group tag per row. `d` is the potentially disadvantaged group, `a` the rest.
enum class Group : std::uint8_t { a = 0, d = 1 };

using GroupAssignment = std::vector<Group>;

}  // namespace fairlens
