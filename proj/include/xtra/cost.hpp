#pragma once

#include "xtra/error.hpp"

namespace xtra {

// Inputs to the training-cost scaling estimate. Counts, not rates; all >= 1.
struct CostInputs {
  double parameters = 1;
  double samples = 1;
  double epochs = 1;
  double views = 1;
  double tokens = 1;

  void validate() const {
    if (parameters < 1 || samples < 1 || epochs < 1 || views < 1 || tokens < 1) {
      throw ContractError("cost: all inputs must be >= 1");
    }
  }
};

// parameters * samples * epochs * views^2 * tokens^2, reported in units of
// 1e22. Computed in double; no rounding.
inline double estimate_cost(const CostInputs& in) {
  in.validate();
  return in.parameters * in.samples * in.epochs * in.views * in.views *
         in.tokens * in.tokens / 1e22;
}

}  // namespace xtra
