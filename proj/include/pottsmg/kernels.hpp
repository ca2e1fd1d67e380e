#pragma once

// Low-level array kernels shared by the Field API and the gradient tape.
//
// Convolution convention: out[p] += sum_q w[q] * in[p - q] for offsets
// q in [-r, r]^2, zero outside the domain. Kernel weights are stored
// row-major with w[(qr + r) * (2r + 1) + (qc + r)].
//
// Each kernel exists in three flavours:
//   reference::  naive loops kept as the test oracle,
//   (namespace)  the tap-major single-field kernels used in hot paths,
//   *_batch      OpenMP-parallel over independent fields of a batch.

#include <cstddef>
#include <span>

namespace pmg::kernels {

struct Grid {
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
};

constexpr int kernel_width(int radius) { return 2 * radius + 1; }
constexpr int kernel_taps(int radius) { return kernel_width(radius) * kernel_width(radius); }

// Returns r such that (2r+1)^2 == taps; throws ShapeError otherwise.
int radius_from_taps(std::size_t taps);

// out += w * in
void conv2d_accumulate(std::span<const double> in, Grid g, std::span<const double> w, int radius,
                       std::span<double> out);

// grad_in += w^T * grad_out (correlation with the same kernel).
void conv2d_adjoint_input(std::span<const double> grad_out, Grid g, std::span<const double> w,
                          int radius, std::span<double> grad_in);

// grad_w[q] += sum_p grad_out[p] * in[p - q]
void conv2d_adjoint_kernel(std::span<const double> grad_out, std::span<const double> in, Grid g,
                           int radius, std::span<double> grad_w);

// Fine grid g (even rows/cols) -> coarse grid g/2.
void avg_pool(std::span<const double> fine, Grid g, std::span<double> coarse);
// argmax receives the fine index of the winner; ties go to the first
// element in row-major order within the 2x2 block.
void max_pool(std::span<const double> fine, Grid g, std::span<double> coarse, std::span<int> argmax);
// Coarse grid g -> fine grid 2g, replicating each value into its block.
void upsample_replicate(std::span<const double> coarse, Grid g, std::span<double> fine);
// Adjoint of upsample_replicate: sums each fine block into its coarse cell.
void upsample_adjoint(std::span<const double> grad_fine, Grid g_coarse, std::span<double> grad_coarse);

// Batched convolution: `batch` independent fields laid out contiguously.
void conv2d_accumulate_batch(std::span<const double> in, int batch, Grid g, std::span<const double> w,
                             int radius, std::span<double> out);

namespace reference {

void conv2d(std::span<const double> in, Grid g, std::span<const double> w, int radius,
            std::span<double> out);
void conv2d_adjoint_input(std::span<const double> grad_out, Grid g, std::span<const double> w,
                          int radius, std::span<double> grad_in);
void conv2d_adjoint_kernel(std::span<const double> grad_out, std::span<const double> in, Grid g,
                           int radius, std::span<double> grad_w);
void conv2d_batch(std::span<const double> in, int batch, Grid g, std::span<const double> w, int radius,
                  std::span<double> out);

}  // namespace reference

}  // namespace pmg::kernels
