#pragma once

// Dyadic hierarchy of piecewise-constant grid function spaces.
//
// Level 1 is the finest grid (the image resolution); level j has
// m / 2^(j-1) x n / 2^(j-1) cells with step h_j = 2^(j-1) (base step 1).
// A Field stores one value per cell in row-major (row, col) order; the
// coefficient array is the function, no basis functions are materialized.

#include <span>
#include <vector>

namespace pmg {

struct LevelShape {
  int rows = 0;
  int cols = 0;
  double h = 1.0;

  int size() const { return rows * cols; }
  bool operator==(const LevelShape&) const = default;
};

class Hierarchy {
 public:
  Hierarchy() = default;
  explicit Hierarchy(std::vector<LevelShape> levels) : levels_(std::move(levels)) {}

  int levels() const { return static_cast<int>(levels_.size()); }
  // 1-based level index.
  const LevelShape& level(int j) const;

 private:
  std::vector<LevelShape> levels_;
};

// Throws ConfigError naming the offending dimension when m or n is not
// divisible by 2^(J-1).
Hierarchy build_hierarchy(int m, int n, int levels);

struct Field {
  int level = 1;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  Field() = default;
  Field(int level, int rows, int cols, double fill = 0.0)
      : level(level), rows(rows), cols(cols), values(static_cast<size_t>(rows) * cols, fill) {}
  Field(int level, int rows, int cols, std::vector<double> v);

  static Field like(const Field& f, double fill = 0.0) { return Field(f.level, f.rows, f.cols, fill); }

  int size() const { return rows * cols; }
  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }

  bool all_finite() const;
  double mean() const;
  double min() const;
  double max() const;
};

enum class PoolMode { Average, Max };

// Piecewise-constant prolongation: level j+1 -> level j.
Field upsample(const Hierarchy& hier, const Field& coarse);
// 2x2 block restriction: level j -> level j+1.
Field downsample(const Hierarchy& hier, const Field& fine, PoolMode mode);

}  // namespace pmg
