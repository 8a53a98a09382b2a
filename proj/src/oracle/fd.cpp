#include <algorithm>
#include <cmath>
#include <vector>

#include "agcrf/oracle.hpp"

namespace agcrf::oracle {

double fd_partial(const ScalarFn& loss, std::vector<double>& x, std::size_t index, double step) {
  const double saved = x[index];
  x[index] = saved + step;
  const double up = loss(x);
  x[index] = saved - step;
  const double down = loss(x);
  x[index] = saved;
  return (up - down) / (2.0 * step);
}

std::vector<double> fd_gradient(const ScalarFn& loss, std::span<const double> x, double step) {
  std::vector<double> work(x.begin(), x.end());
  std::vector<double> g(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) g[i] = fd_partial(loss, work, i, step);
  return g;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace agcrf::oracle
