#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "agcrf/rng.hpp"
#include "agcrf/tensor.hpp"

namespace testsupport {

inline agcrf::Tensor random_tensor(agcrf::SplitMix64& rng, agcrf::Shape shape, double lo = -1.0, double hi = 1.0) {
  agcrf::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Fresh, empty scratch directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("agcrf_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testsupport
