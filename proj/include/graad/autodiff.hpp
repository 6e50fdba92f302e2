#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "graad/tensor.hpp"

namespace graad::ag {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape is.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Records primitive operations in execution order. backward() walks the record
// in exact reverse; adjoints of values with several consumers are summed.
// A tape belongs to one thread.
class Tape {
 public:
  // Receives the adjoint of the op's result and one adjoint slot per input
  // (null for inputs that cannot influence the requested output).
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  // Records `value` without copying; it must outlive the tape.
  Var leaf_ref(const Tensor& value);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // d(output)/d(each wrt). `output` must hold exactly one element.
  std::vector<Tensor> backward(Var output, std::span<const Var> wrt) const;

 private:
  struct Node {
    const Tensor* value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  void check_owned(Var v, const char* what) const;

  std::deque<Tensor> owned_;
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
// x[n×d] + broadcast of bias (d values) onto every row.
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var softmax_rows(Var a, const ColumnMask* mask = nullptr);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const int> ids);
Var sum(Var a);
Var pick(Var a, std::size_t flat_index);
// -log softmax(logits)[label], logits holding C values.
Var cross_entropy(Var logits, std::size_t label);

}  // namespace graad::ag
