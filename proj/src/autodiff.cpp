#include "graad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "graad/error.hpp"

namespace graad::ag {
namespace {

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw Error(ErrorCode::kUntrackedTensor, "variable has no tape");
  return *a.tape();
}

Tape& common_tape(Var a, Var b) {
  if (a.tape() != b.tape()) {
    throw Error(ErrorCode::kUntrackedTensor, "operands belong to different tapes");
  }
  return tape_of(a);
}

}  // namespace

const Tensor& Var::value() const { return tape_of(*this).value(*this); }

Var Tape::leaf(Tensor value) {
  owned_.push_back(std::move(value));
  nodes_.push_back({&owned_.back(), {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf_ref(const Tensor& value) {
  nodes_.push_back({&value, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  std::vector<std::size_t> idx;
  idx.reserve(inputs.size());
  for (Var v : inputs) {
    check_owned(v, "operand");
    idx.push_back(v.index());
  }
  owned_.push_back(std::move(value));
  nodes_.push_back({&owned_.back(), std::move(idx), std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v, const char* what) const {
  if (v.tape() != this || v.index() >= nodes_.size()) {
    throw Error(ErrorCode::kUntrackedTensor, std::string(what) + " is not recorded on this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "variable");
  return *nodes_[v.index()].value;
}

std::vector<Tensor> Tape::backward(Var output, std::span<const Var> wrt) const {
  check_owned(output, "output");
  for (Var w : wrt) check_owned(w, "gradient target");
  const Tensor& out_value = *nodes_[output.index()].value;
  if (out_value.size() != 1) {
    throw Error(ErrorCode::kDimension,
                "backward needs a scalar output, got " + out_value.shape_string());
  }

  std::vector<std::optional<Tensor>> adjoint(output.index() + 1);
  adjoint[output.index()] = Tensor(out_value.shape(), {1.0});

  std::vector<Tensor*> slots;
  for (std::size_t i = output.index() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!adjoint[i] || !node.backward) continue;
    slots.clear();
    for (std::size_t in : node.inputs) {
      if (!adjoint[in]) adjoint[in] = Tensor::zeros_like(*nodes_[in].value);
      slots.push_back(&*adjoint[in]);
    }
    node.backward(*adjoint[i], slots);
  }

  std::vector<Tensor> grads;
  grads.reserve(wrt.size());
  for (Var w : wrt) {
    if (w.index() < adjoint.size() && adjoint[w.index()]) {
      grads.push_back(*adjoint[w.index()]);
    } else {
      grads.push_back(Tensor::zeros_like(*nodes_[w.index()].value));
    }
  }
  return grads;
}

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  Tensor out = ops::matmul(a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  return tape.record(std::move(out), {a, b},
                     [&av, &bv](const Tensor& g, std::span<Tensor* const> grads) {
                       // dA = G·Bᵀ, dB = Aᵀ·G
                       grads[0]->add_in_place(ops::matmul(g, ops::transpose(bv)));
                       grads[1]->add_in_place(ops::matmul(ops::transpose(av), g));
                     });
}

Var transpose(Var a) {
  return tape_of(a).record(ops::transpose(a.value()), {a},
                           [](const Tensor& g, std::span<Tensor* const> grads) {
                             grads[0]->add_in_place(ops::transpose(g));
                           });
}

Var add(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw Error(ErrorCode::kDimension, "add: " + a.value().shape_string() + " vs " +
                                           b.value().shape_string());
  }
  Tensor out = a.value();
  out.add_in_place(b.value());
  return tape.record(std::move(out), {a, b},
                     [](const Tensor& g, std::span<Tensor* const> grads) {
                       grads[0]->add_in_place(g);
                       grads[1]->add_in_place(g);
                     });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = common_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.size() != xv.cols()) {
    throw Error(ErrorCode::kDimension, "add_bias: " + xv.shape_string() + " with bias " +
                                           bv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  }
  return tape.record(std::move(out), {x, bias},
                     [](const Tensor& g, std::span<Tensor* const> grads) {
                       grads[0]->add_in_place(g);
                       Tensor& db = *grads[1];
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         for (std::size_t c = 0; c < g.cols(); ++c) db[c] += g(r, c);
                       }
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw Error(ErrorCode::kDimension,
                "mul: " + av.shape_string() + " vs " + bv.shape_string());
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(std::move(out), {a, b},
                     [&av, &bv](const Tensor& g, std::span<Tensor* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*grads[0])[i] += g[i] * bv[i];
                         (*grads[1])[i] += g[i] * av[i];
                       }
                     });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return tape_of(a).record(std::move(out), {a},
                           [factor](const Tensor& g, std::span<Tensor* const> grads) {
                             grads[0]->add_in_place(g, factor);
                           });
}

Var relu(Var a) {
  const Tensor& av = a.value();
  Tensor out = av;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape_of(a).record(std::move(out), {a},
                           [&av](const Tensor& g, std::span<Tensor* const> grads) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               if (av[i] > 0.0) (*grads[0])[i] += g[i];
                             }
                           });
}

Var softmax_rows(Var a, const ColumnMask* mask) {
  Tensor out = ops::softmax_rows(a.value(), mask);
  return tape_of(a).record(out, {a}, [y = out](const Tensor& g, std::span<Tensor* const> grads) {
    Tensor& dx = *grads[0];
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = common_tape(x, gain);
  common_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  Tensor out = ops::layer_norm(xv, gv, bias.value(), eps);

  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
  }

  return tape.record(
      std::move(out), {x, gain, bias},
      [&gv, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tensor& g, std::span<Tensor* const> grads) {
        const std::size_t rows = g.rows(), width = g.cols();
        const double inv_d = 1.0 / static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t c = 0; c < width; ++c) {
            const double dxhat = g(r, c) * gv[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat(r, c);
            (*grads[1])[c] += g(r, c) * xhat(r, c);
            (*grads[2])[c] += g(r, c);
          }
          mean_dxhat *= inv_d;
          mean_dxhat_xhat *= inv_d;
          for (std::size_t c = 0; c < width; ++c) {
            const double dxhat = g(r, c) * gv[c];
            (*grads[0])(r, c) +=
                inv_std[r] * (dxhat - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
          }
        }
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || count == 0 || begin + count > av.rows()) {
    throw Error(ErrorCode::kDimension, "slice_rows out of range for " + av.shape_string());
  }
  const std::size_t w = av.cols();
  std::vector<double> data(av.data().begin() + static_cast<std::ptrdiff_t>(begin * w),
                           av.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * w));
  return tape_of(a).record(Tensor({count, w}, std::move(data)), {a},
                           [begin, w](const Tensor& g, std::span<Tensor* const> grads) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               (*grads[0])[begin * w + i] += g[i];
                             }
                           });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || count == 0 || begin + count > av.cols()) {
    throw Error(ErrorCode::kDimension, "slice_cols out of range for " + av.shape_string());
  }
  Tensor out({av.rows(), count});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, begin + c);
  }
  return tape_of(a).record(std::move(out), {a},
                           [begin](const Tensor& g, std::span<Tensor* const> grads) {
                             for (std::size_t r = 0; r < g.rows(); ++r) {
                               for (std::size_t c = 0; c < g.cols(); ++c) {
                                 (*grads[0])(r, begin + c) += g(r, c);
                               }
                             }
                           });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::kDimension, "concat_cols: no operands");
  Tape& tape = tape_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t width = 0;
  for (Var p : parts) {
    common_tape(parts[0], p);
    if (p.value().rank() != 2 || p.value().rows() != rows) {
      throw Error(ErrorCode::kDimension, "concat_cols: row mismatch");
    }
    width += p.value().cols();
  }
  Tensor out({rows, width});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    }
    offsets.push_back(off);
    off += pv.cols();
  }
  return tape.record(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [offsets](const Tensor& g, std::span<Tensor* const> grads) {
                       for (std::size_t p = 0; p < grads.size(); ++p) {
                         Tensor& dp = *grads[p];
                         for (std::size_t r = 0; r < dp.rows(); ++r) {
                           for (std::size_t c = 0; c < dp.cols(); ++c) {
                             dp(r, c) += g(r, offsets[p] + c);
                           }
                         }
                       }
                     });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2 || ids.empty()) {
    throw Error(ErrorCode::kDimension, "gather_rows: bad table or empty ids");
  }
  const std::size_t w = tv.cols();
  Tensor out({ids.size(), w});
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw Error(ErrorCode::kIndex, "gather_rows: id " + std::to_string(ids[i]) +
                                         " outside table of " + std::to_string(tv.rows()));
    }
    rows.push_back(static_cast<std::size_t>(ids[i]));
    std::copy_n(tv.row(rows.back()).begin(), w, out.row(i).begin());
  }
  return tape_of(table).record(std::move(out), {table},
                               [rows](const Tensor& g, std::span<Tensor* const> grads) {
                                 for (std::size_t i = 0; i < rows.size(); ++i) {
                                   auto dst = grads[0]->row(rows[i]);
                                   auto src = g.row(i);
                                   for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                                 }
                               });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return tape_of(a).record(Tensor({1}, {total}), {a},
                           [](const Tensor& g, std::span<Tensor* const> grads) {
                             for (double& v : grads[0]->data()) v += g[0];
                           });
}

Var pick(Var a, std::size_t flat_index) {
  if (flat_index >= a.value().size()) {
    throw Error(ErrorCode::kIndex, "pick: index " + std::to_string(flat_index) + " outside " +
                                       a.value().shape_string());
  }
  return tape_of(a).record(Tensor({1}, {a.value()[flat_index]}), {a},
                           [flat_index](const Tensor& g, std::span<Tensor* const> grads) {
                             (*grads[0])[flat_index] += g[0];
                           });
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (label >= z.size()) {
    throw Error(ErrorCode::kIndex, "cross_entropy: label " + std::to_string(label) +
                                       " outside " + std::to_string(z.size()) + " classes");
  }
  double zmax = -INFINITY;
  for (double v : z.data()) zmax = std::max(zmax, v);
  double total = 0.0;
  for (double v : z.data()) total += std::exp(v - zmax);
  const double log_norm = zmax + std::log(total);
  return tape_of(logits).record(
      Tensor({1}, {log_norm - z[label]}), {logits},
      [&z, log_norm, label](const Tensor& g, std::span<Tensor* const> grads) {
        for (std::size_t c = 0; c < z.size(); ++c) {
          const double p = std::exp(z[c] - log_norm);
          (*grads[0])[c] += g[0] * (p - (c == label ? 1.0 : 0.0));
        }
      });
}

}  // namespace graad::ag
