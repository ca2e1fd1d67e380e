#include "pottsmg/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pottsmg/errors.hpp"
#include "pottsmg/kernels.hpp"

namespace pmg {

const LevelShape& Hierarchy::level(int j) const {
  if (j < 1 || j > levels()) {
    throw LevelError("level " + std::to_string(j) + " outside 1.." + std::to_string(levels()));
  }
  return levels_[j - 1];
}

Hierarchy build_hierarchy(int m, int n, int levels) {
  if (levels < 1) throw ConfigError("level count J must be >= 1, got " + std::to_string(levels));
  if (m < 1) throw ConfigError("row count m must be >= 1, got " + std::to_string(m));
  if (n < 1) throw ConfigError("column count n must be >= 1, got " + std::to_string(n));
  if (levels > 30) throw ConfigError("level count J=" + std::to_string(levels) + " is too large");
  const int factor = 1 << (levels - 1);
  if (m % factor != 0) {
    throw ConfigError("row count m=" + std::to_string(m) + " is not divisible by 2^(J-1)=" +
                      std::to_string(factor));
  }
  if (n % factor != 0) {
    throw ConfigError("column count n=" + std::to_string(n) + " is not divisible by 2^(J-1)=" +
                      std::to_string(factor));
  }
  std::vector<LevelShape> shapes;
  shapes.reserve(levels);
  for (int j = 1; j <= levels; ++j) {
    const int scale = 1 << (j - 1);
    shapes.push_back({m / scale, n / scale, static_cast<double>(scale)});
  }
  return Hierarchy(std::move(shapes));
}

Field::Field(int level, int rows, int cols, std::vector<double> v)
    : level(level), rows(rows), cols(cols), values(std::move(v)) {
  if (values.size() != static_cast<size_t>(rows) * cols) {
    throw ShapeError("field of " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                     std::to_string(values.size()) + " values");
  }
}

bool Field::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double Field::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double Field::min() const { return *std::min_element(values.begin(), values.end()); }
double Field::max() const { return *std::max_element(values.begin(), values.end()); }

namespace {

void check_on_level(const Hierarchy& hier, const Field& f) {
  const LevelShape& shape = hier.level(f.level);
  if (shape.rows != f.rows || shape.cols != f.cols) {
    throw ShapeError("field is " + std::to_string(f.rows) + "x" + std::to_string(f.cols) + " but level " +
                     std::to_string(f.level) + " is " + std::to_string(shape.rows) + "x" +
                     std::to_string(shape.cols));
  }
}

}  // namespace

Field upsample(const Hierarchy& hier, const Field& coarse) {
  if (coarse.level <= 1) throw LevelError("cannot upsample a level-1 field");
  check_on_level(hier, coarse);
  Field fine(coarse.level - 1, coarse.rows * 2, coarse.cols * 2);
  kernels::upsample_replicate(coarse.span(), {coarse.rows, coarse.cols}, fine.span());
  return fine;
}

Field downsample(const Hierarchy& hier, const Field& fine, PoolMode mode) {
  if (fine.level >= hier.levels()) {
    throw LevelError("cannot downsample a field at the coarsest level " + std::to_string(fine.level));
  }
  check_on_level(hier, fine);
  Field coarse(fine.level + 1, fine.rows / 2, fine.cols / 2);
  if (mode == PoolMode::Average) {
    kernels::avg_pool(fine.span(), {fine.rows, fine.cols}, coarse.span());
  } else {
    kernels::max_pool(fine.span(), {fine.rows, fine.cols}, coarse.span(), {});
  }
  return coarse;
}

}  // namespace pmg
