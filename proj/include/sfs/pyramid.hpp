#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "sfs/errors.hpp"

namespace sfs {

// Pooled latent vectors produced by the cloud embedder, ordered deep to
// shallow: levels[0] is the head output, higher indices move toward the
// input.
struct EmbeddingPyramid {
  std::vector<Eigen::VectorXd> levels;

  int level_count() const { return static_cast<int>(levels.size()); }

  const Eigen::VectorXd& level(int l) const {
    if (l < 0 || l >= level_count())
      throw ContractViolation("pyramid level " + std::to_string(l) +
                              " out of range [0, " +
                              std::to_string(level_count()) + ")");
    return levels[static_cast<std::size_t>(l)];
  }
};

// Euclidean distance between the level-l vectors of two pyramids.
inline double latent_distance(const EmbeddingPyramid& a,
                              const EmbeddingPyramid& b, int level) {
  const Eigen::VectorXd& za = a.level(level);
  const Eigen::VectorXd& zb = b.level(level);
  if (za.size() != zb.size())
    throw ContractViolation("latent_distance: dimension mismatch at level " +
                            std::to_string(level));
  return (za - zb).norm();
}

}  // namespace sfs
