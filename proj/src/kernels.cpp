#include "pottsmg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pottsmg/errors.hpp"

namespace pmg::kernels {

int radius_from_taps(std::size_t taps) {
  const auto width = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
  if (width < 1 || width % 2 == 0 || static_cast<std::size_t>(width * width) != taps) {
    throw ShapeError("kernel with " + std::to_string(taps) + " weights is not (2r+1)x(2r+1)");
  }
  return (width - 1) / 2;
}

void conv2d_accumulate(std::span<const double> in, Grid g, std::span<const double> w, int radius,
                       std::span<double> out) {
  const int width = kernel_width(radius);
  for (int qr = -radius; qr <= radius; ++qr) {
    const int r0 = std::max(0, qr);
    const int r1 = std::min(g.rows, g.rows + qr);
    for (int qc = -radius; qc <= radius; ++qc) {
      const double wv = w[(qr + radius) * width + (qc + radius)];
      const int c0 = std::max(0, qc);
      const int c1 = std::min(g.cols, g.cols + qc);
      for (int r = r0; r < r1; ++r) {
        double* o = out.data() + static_cast<std::ptrdiff_t>(r) * g.cols;
        const double* x = in.data() + static_cast<std::ptrdiff_t>(r - qr) * g.cols - qc;
#pragma omp simd
        for (int c = c0; c < c1; ++c) o[c] += wv * x[c];
      }
    }
  }
}

void conv2d_adjoint_input(std::span<const double> grad_out, Grid g, std::span<const double> w,
                          int radius, std::span<double> grad_in) {
  const int width = kernel_width(radius);
  for (int qr = -radius; qr <= radius; ++qr) {
    const int r0 = std::max(0, qr);
    const int r1 = std::min(g.rows, g.rows + qr);
    for (int qc = -radius; qc <= radius; ++qc) {
      const double wv = w[(qr + radius) * width + (qc + radius)];
      const int c0 = std::max(0, qc);
      const int c1 = std::min(g.cols, g.cols + qc);
      for (int r = r0; r < r1; ++r) {
        const double* go = grad_out.data() + static_cast<std::ptrdiff_t>(r) * g.cols;
        double* gi = grad_in.data() + static_cast<std::ptrdiff_t>(r - qr) * g.cols - qc;
#pragma omp simd
        for (int c = c0; c < c1; ++c) gi[c] += wv * go[c];
      }
    }
  }
}

void conv2d_adjoint_kernel(std::span<const double> grad_out, std::span<const double> in, Grid g,
                           int radius, std::span<double> grad_w) {
  const int width = kernel_width(radius);
  for (int qr = -radius; qr <= radius; ++qr) {
    const int r0 = std::max(0, qr);
    const int r1 = std::min(g.rows, g.rows + qr);
    for (int qc = -radius; qc <= radius; ++qc) {
      const int c0 = std::max(0, qc);
      const int c1 = std::min(g.cols, g.cols + qc);
      double acc = 0.0;
      for (int r = r0; r < r1; ++r) {
        const double* go = grad_out.data() + static_cast<std::ptrdiff_t>(r) * g.cols;
        const double* x = in.data() + static_cast<std::ptrdiff_t>(r - qr) * g.cols - qc;
        double row = 0.0;
#pragma omp simd reduction(+ : row)
        for (int c = c0; c < c1; ++c) row += go[c] * x[c];
        acc += row;
      }
      grad_w[(qr + radius) * width + (qc + radius)] += acc;
    }
  }
}

void avg_pool(std::span<const double> fine, Grid g, std::span<double> coarse) {
  const int cr = g.rows / 2;
  const int cc = g.cols / 2;
  for (int r = 0; r < cr; ++r) {
    const double* a = fine.data() + static_cast<std::ptrdiff_t>(2 * r) * g.cols;
    const double* b = a + g.cols;
    for (int c = 0; c < cc; ++c) {
      coarse[r * cc + c] = 0.25 * ((a[2 * c] + a[2 * c + 1]) + (b[2 * c] + b[2 * c + 1]));
    }
  }
}

void max_pool(std::span<const double> fine, Grid g, std::span<double> coarse, std::span<int> argmax) {
  const int cr = g.rows / 2;
  const int cc = g.cols / 2;
  for (int r = 0; r < cr; ++r) {
    for (int c = 0; c < cc; ++c) {
      const int base = 2 * r * g.cols + 2 * c;
      const int candidates[4] = {base, base + 1, base + g.cols, base + g.cols + 1};
      int best = candidates[0];
      for (int i = 1; i < 4; ++i) {
        if (fine[candidates[i]] > fine[best]) best = candidates[i];
      }
      coarse[r * cc + c] = fine[best];
      if (!argmax.empty()) argmax[r * cc + c] = best;
    }
  }
}

void upsample_replicate(std::span<const double> coarse, Grid g, std::span<double> fine) {
  const int fc = 2 * g.cols;
  for (int r = 0; r < g.rows; ++r) {
    double* a = fine.data() + static_cast<std::ptrdiff_t>(2 * r) * fc;
    double* b = a + fc;
    for (int c = 0; c < g.cols; ++c) {
      const double v = coarse[r * g.cols + c];
      a[2 * c] = v;
      a[2 * c + 1] = v;
      b[2 * c] = v;
      b[2 * c + 1] = v;
    }
  }
}

void upsample_adjoint(std::span<const double> grad_fine, Grid g_coarse, std::span<double> grad_coarse) {
  const int fc = 2 * g_coarse.cols;
  for (int r = 0; r < g_coarse.rows; ++r) {
    const double* a = grad_fine.data() + static_cast<std::ptrdiff_t>(2 * r) * fc;
    const double* b = a + fc;
    for (int c = 0; c < g_coarse.cols; ++c) {
      grad_coarse[r * g_coarse.cols + c] += (a[2 * c] + a[2 * c + 1]) + (b[2 * c] + b[2 * c + 1]);
    }
  }
}

void conv2d_accumulate_batch(std::span<const double> in, int batch, Grid g, std::span<const double> w,
                             int radius, std::span<double> out) {
  const auto n = static_cast<std::size_t>(g.size());
#pragma omp parallel for schedule(static) if (batch > 1)
  for (int b = 0; b < batch; ++b) {
    conv2d_accumulate(in.subspan(b * n, n), g, w, radius, out.subspan(b * n, n));
  }
}

namespace reference {

void conv2d(std::span<const double> in, Grid g, std::span<const double> w, int radius,
            std::span<double> out) {
  const int width = kernel_width(radius);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      double acc = out[r * g.cols + c];
      for (int qr = -radius; qr <= radius; ++qr) {
        for (int qc = -radius; qc <= radius; ++qc) {
          const int sr = r - qr;
          const int sc = c - qc;
          if (sr < 0 || sr >= g.rows || sc < 0 || sc >= g.cols) continue;
          acc += w[(qr + radius) * width + (qc + radius)] * in[sr * g.cols + sc];
        }
      }
      out[r * g.cols + c] = acc;
    }
  }
}

void conv2d_adjoint_input(std::span<const double> grad_out, Grid g, std::span<const double> w,
                          int radius, std::span<double> grad_in) {
  const int width = kernel_width(radius);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      for (int qr = -radius; qr <= radius; ++qr) {
        for (int qc = -radius; qc <= radius; ++qc) {
          const int sr = r - qr;
          const int sc = c - qc;
          if (sr < 0 || sr >= g.rows || sc < 0 || sc >= g.cols) continue;
          grad_in[sr * g.cols + sc] += w[(qr + radius) * width + (qc + radius)] * grad_out[r * g.cols + c];
        }
      }
    }
  }
}

void conv2d_adjoint_kernel(std::span<const double> grad_out, std::span<const double> in, Grid g,
                           int radius, std::span<double> grad_w) {
  const int width = kernel_width(radius);
  for (int qr = -radius; qr <= radius; ++qr) {
    for (int qc = -radius; qc <= radius; ++qc) {
      double acc = 0.0;
      for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
          const int sr = r - qr;
          const int sc = c - qc;
          if (sr < 0 || sr >= g.rows || sc < 0 || sc >= g.cols) continue;
          acc += grad_out[r * g.cols + c] * in[sr * g.cols + sc];
        }
      }
      grad_w[(qr + radius) * width + (qc + radius)] += acc;
    }
  }
}

void conv2d_batch(std::span<const double> in, int batch, Grid g, std::span<const double> w, int radius,
                  std::span<double> out) {
  const auto n = static_cast<std::size_t>(g.size());
  for (int b = 0; b < batch; ++b) {
    conv2d(in.subspan(b * n, n), g, w, radius, out.subspan(b * n, n));
  }
}

}  // namespace reference

}  // namespace pmg::kernels
