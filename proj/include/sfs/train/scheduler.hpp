#pragma once

#include <limits>

#include "sfs/errors.hpp"

namespace sfs {

// Reduce-on-plateau: after `patience` consecutive observations without
// improvement of the tracked metric, signals a trigger (the caller multiplies
// its learning rates) and restarts the count.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience)
      : factor_(factor), patience_(patience) {
    if (!(factor > 0.0 && factor < 1.0))
      throw ConfigError("scheduler: factor must be in (0, 1)");
    if (patience < 1) throw ConfigError("scheduler: patience must be >= 1");
  }

  struct Result {
    bool improved = false;
    bool triggered = false;
  };

  Result observe(double metric) {
    Result result;
    if (metric < best_) {
      best_ = metric;
      stale_ = 0;
      result.improved = true;
      return result;
    }
    if (++stale_ >= patience_) {
      stale_ = 0;
      result.triggered = true;
    }
    return result;
  }

  double factor() const { return factor_; }
  double best() const { return best_; }
  int epochs_since_improvement() const { return stale_; }

  // Checkpoint support.
  void restore(double best, int stale) {
    best_ = best;
    stale_ = stale;
  }

 private:
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

}  // namespace sfs
