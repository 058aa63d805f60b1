#pragma once

#include <vector>

#include "ghd/types.hpp"

namespace ghd {

/// Static 3-d tree over a point set for nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(const Points& points);

  struct Hit {
    Eigen::Index index = -1;
    double squared_distance = 0.0;
  };

  Hit nearest(const Vec3& q) const;
  /// Squared nearest distance from each row of `queries`.
  Eigen::VectorXd nearest_squared_distances(const Points& queries) const;

  Eigen::Index size() const { return points_.rows(); }

 private:
  struct Node {
    Vec3 lo, hi;
    int begin = 0, end = 0;
    int left = -1, right = -1;
  };
  int build(int begin, int end);

  Points points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace ghd
