#include "labelshift/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace labelshift {

SimplexVector::SimplexVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw ArgumentError("SimplexVector: empty vector");
  double sum = 0.0;
  for (double& v : values_) {
    if (!std::isfinite(v)) throw ArgumentError("SimplexVector: non-finite entry");
    if (v < 0.0) {
      if (v < -1e-12) throw ArgumentError("SimplexVector: negative entry");
      v = 0.0;  // clamp rounding noise
    }
    sum += v;
  }
  const double dev = std::abs(sum - 1.0);
  if (dev > kRenormTolerance)
    throw ArgumentError("SimplexVector: entries sum to " + std::to_string(sum));
  if (dev > 0.0) {
    for (double& v : values_) v /= sum;
  }
}

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw ArgumentError("LogitVector: empty vector");
  for (double v : values_) {
    if (!std::isfinite(v)) throw ArgumentError("LogitVector: non-finite entry");
  }
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("log_sum_exp: empty input");
  double mx = v[0];
  for (double x : v) {
    if (!std::isfinite(x)) throw ArgumentError("log_sum_exp: non-finite entry");
    mx = std::max(mx, x);
  }
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

void softmax_inplace(std::span<const double> z, std::span<double> out) {
  const double lse = log_sum_exp(z);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::exp(z[i] - lse);
}

SimplexVector softmax(const LogitVector& z) {
  std::vector<double> p(z.size());
  softmax_inplace(z.values(), p);
  return SimplexVector(std::move(p));
}

SimplexVector project_to_simplex(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("project_to_simplex: empty input");
  for (double x : v) {
    if (!std::isfinite(x)) throw ArgumentError("project_to_simplex: non-finite entry");
  }
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  return SimplexVector(std::move(out));
}

std::size_t argmax_row(std::span<const double> row) {
  // Ties break toward the lowest class index.
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace labelshift
