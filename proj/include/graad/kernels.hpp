#pragma once

#include <cstddef>
#include <span>

namespace graad::kernels {

// out[m×n] = a[m×k] · b[k×n]. Each output element accumulates over k in
// ascending order starting from 0.0, so every variant below produces the
// same bits.
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);

// Rows of `out` are split across OpenMP threads; per-element order unchanged.
void matmul_parallel(std::span<const double> a, std::span<const double> b,
                     std::span<double> out, std::size_t m, std::size_t k, std::size_t n);

// Work (m·k·n) above which ops::matmul switches to the parallel kernel.
inline constexpr std::size_t kParallelMatmulWork = std::size_t{1} << 21;

}  // namespace graad::kernels
