#pragma once

// The full finite-difference verification suite: every differentiable
// operation plus the tiny-config end-to-end model. Shared by the `grad-check`
// CLI subcommand and the acceptance tests.

#include <string>
#include <vector>

#include "avse/gradcheck.hpp"

namespace avse {

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
};

// Op-level tolerance 1e-4, end-to-end model tolerance 1e-3, step 1e-5,
// non-smooth points avoided by margin.
GradSuiteReport run_gradient_suite(uint64_t seed);

}  // namespace avse
