#pragma once

#include <cstdint>

#include "mmfusion/gradcheck.hpp"
#include "mmfusion/fusion.hpp"

namespace mmf {

struct ToyGradcheckSetup {
  std::size_t frames = 8;
  std::size_t face_in = 12;
  std::size_t pose_in = 6;
  double step = 1e-5;
  double tolerance = 1e-4;
};

/// Full-model gradient check in 64-bit at toy dimensions: random inputs,
/// combined loss with the default weight table, every parameter element.
GradcheckReport topology_gradcheck(Topology topology, Task task, std::uint64_t seed,
                                   const ToyGradcheckSetup& setup = {});

}  // namespace mmf
