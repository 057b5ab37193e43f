#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lgr {

struct CheckLine {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central-difference checks of every primitive and of the composite
/// objectives (reconstruction, graph layer, upsampling, adversarial,
/// classification and segmentation losses) at small random points.
std::vector<CheckLine> gradient_suite(std::uint64_t seed = 1);

}  // namespace lgr
