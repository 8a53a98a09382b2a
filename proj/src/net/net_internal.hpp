#pragma once

#include <string>
#include <vector>

#include "agcrf/net.hpp"

namespace agcrf::net {

/// Deconvolution geometry that multiplies the spatial size by a factor.
struct Upsample {
  int k, s, p;
};
/// factor 2: k4 s2 p1 (overlapping); otherwise non-overlapping k = s = factor.
Upsample upsample_for(int factor);

struct ParamInfo {
  enum Init { Uniform, Zero, CopyStream };
  std::string name;
  Shape shape;
  double fan_in;
  Init init;
  std::string source;  // CopyStream: draw from this name's stream instead
};

std::vector<ParamInfo> param_layout(const NetSpec& spec);

}  // namespace agcrf::net
