#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace refmarket {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RandomEngine = std::mt19937_64;

using NftId = std::uint64_t;

}  // namespace refmarket
