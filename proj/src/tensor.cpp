#include "graad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "graad/error.hpp"
#include "graad/kernels.hpp"

namespace graad {
namespace {

std::size_t extent_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw Error(ErrorCode::kDimension,
                std::string(what) + ": expected a matrix, got shape " + t.shape_string());
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(extent_product(shape_), 0.0) {
  for (std::size_t e : shape_) {
    if (e == 0) throw Error(ErrorCode::kDimension, "tensor extents must be positive");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw Error(ErrorCode::kDimension, "tensor extents must be positive");
  }
  if (extent_product(shape_) != data_.size()) {
    throw Error(ErrorCode::kDimension, "shape " + shape_string() + " does not match " +
                                           std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorCode::kDimension, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::span<const double> Tensor::row(std::size_t r) const {
  return std::span<const double>(data_).subspan(r * cols(), cols());
}

std::span<double> Tensor::row(std::size_t r) {
  return std::span<double>(data_).subspan(r * cols(), cols());
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

void Tensor::add_in_place(const Tensor& other, double scale) {
  if (other.size() != size()) {
    throw Error(ErrorCode::kDimension,
                "accumulate " + other.shape_string() + " into " + shape_string());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul lhs");
  require_rank2(b, "matmul rhs");
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimension,
                "matmul: shapes " + a.shape_string() + " and " + b.shape_string() +
                    " are not aligned");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  if (m * k * n >= kernels::kParallelMatmulWork) {
    kernels::matmul_parallel(a.data(), b.data(), out.data(), m, k, n);
  } else {
    kernels::matmul_serial(a.data(), b.data(), out.data(), m, k, n);
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Tensor softmax_rows(const Tensor& a, const ColumnMask* mask) {
  require_rank2(a, "softmax_rows");
  const std::size_t cols = a.cols();
  if (mask != nullptr && mask->size() != cols) {
    throw Error(ErrorCode::kDimension, "softmax_rows: mask length " +
                                           std::to_string(mask->size()) + " vs " +
                                           std::to_string(cols) + " columns");
  }
  auto valid = [&](std::size_t c) { return mask == nullptr || (*mask)[c]; };
  Tensor out(a.shape());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double row_max = -INFINITY;
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!valid(c)) continue;
      any = true;
      row_max = std::max(row_max, a(r, c));
    }
    if (!any) throw Error(ErrorCode::kInvalidMask, "softmax_rows: every column is masked");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!valid(c)) continue;
      out(r, c) = std::exp(a(r, c) - row_max);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out(r, c) /= total;
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw Error(ErrorCode::kDimension, "layer_norm: gain/bias " + gain.shape_string() + "/" +
                                           bias.shape_string() + " vs width " +
                                           std::to_string(d));
  }
  if (!(eps > 0.0)) throw Error(ErrorCode::kPrecondition, "layer_norm: eps must be > 0");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      out(r, c) = (x(r, c) - mean) * inv_std * gain[c] + bias[c];
    }
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::kPrecondition, "finite_diff_grad: h must be > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace ops
}  // namespace graad
