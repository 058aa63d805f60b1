#include "ghd/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace ghd {

namespace {
constexpr int kLeafSize = 8;

double box_distance2(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = std::max({lo(k) - q(k), 0.0, q(k) - hi(k)});
    d2 += d * d;
  }
  return d2;
}
}  // namespace

KdTree::KdTree(const Points& points) : points_(points) {
  if (points_.rows() == 0) throw ValidationError("KdTree: empty point set");
  order_.resize(static_cast<std::size_t>(points_.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * order_.size() / kLeafSize + 2);
  build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (int i = begin; i < end; ++i) {
    const Vec3 p = points_.row(order_[static_cast<std::size_t>(i)]).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  nodes_[static_cast<std::size_t>(id)].lo = lo;
  nodes_[static_cast<std::size_t>(id)].hi = hi;
  nodes_[static_cast<std::size_t>(id)].begin = begin;
  nodes_[static_cast<std::size_t>(id)].end = end;
  if (end - begin > kLeafSize) {
    int axis;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_(a, axis) < points_(b, axis); });
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
  }
  return id;
}

KdTree::Hit KdTree::nearest(const Vec3& q) const {
  Hit best{-1, std::numeric_limits<double>::infinity()};
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[static_cast<std::size_t>(stack[--top])];
    if (box_distance2(q, n.lo, n.hi) >= best.squared_distance) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int idx = order_[static_cast<std::size_t>(i)];
        const double d2 = (points_.row(idx).transpose() - q).squaredNorm();
        if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) best = {idx, d2};
      }
      continue;
    }
    const Node& l = nodes_[static_cast<std::size_t>(n.left)];
    const Node& r = nodes_[static_cast<std::size_t>(n.right)];
    const double dl = box_distance2(q, l.lo, l.hi), dr = box_distance2(q, r.lo, r.hi);
    // push the farther child first so the nearer one is explored next
    if (dl < dr) {
      stack[top++] = n.right;
      stack[top++] = n.left;
    } else {
      stack[top++] = n.left;
      stack[top++] = n.right;
    }
  }
  return best;
}

Eigen::VectorXd KdTree::nearest_squared_distances(const Points& queries) const {
  Eigen::VectorXd out(queries.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) out(i) = nearest(queries.row(i).transpose()).squared_distance;
  return out;
}

}  // namespace ghd
