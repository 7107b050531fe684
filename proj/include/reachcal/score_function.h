#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "reachcal/random.h"

namespace reachcal {

// A nonconformity score over states at a time step. Rows of `states` are
// unnormalized queries; row r is identified by (domain, first_index + r),
// which randomized scores use to derive their noise streams.
class ScoreFunction {
 public:
  virtual ~ScoreFunction() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> score(const Eigen::MatrixXd& states, int k,
                                    Domain domain,
                                    std::uint64_t first_index) const = 0;
};

}  // namespace reachcal
