#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "macnet/errors.hpp"
#include "macnet/rng.hpp"

namespace macnet {

using Shape = std::vector<int>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Copies are shallow: they share the value
// buffer and, when present, the gradient buffer. A tensor participates in
// autodiff iff `grad` is non-null.
class Tensor {
 public:
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;

  Tensor() = default;
  explicit Tensor(Shape s, bool with_grad = false);
  Tensor(Shape s, std::vector<double> values, bool with_grad = false);

  static Tensor scalar(double v, bool with_grad = false);
  static Tensor vector(std::vector<double> values, bool with_grad = false);
  static Tensor zeros(Shape s, bool with_grad = false);

  bool defined() const { return data != nullptr; }
  bool requires_grad() const { return grad != nullptr; }
  int64_t numel() const { return numel_of(shape); }
  int dim(size_t axis) const { return shape.at(axis); }

  double& at(int64_t i) { return (*data)[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return (*data)[static_cast<size_t>(i)]; }
  double item() const;

  std::vector<double>& values() { return *data; }
  const std::vector<double>& values() const { return *data; }
  std::vector<double>& grads() { return *grad; }
  const std::vector<double>& grads() const { return *grad; }

  void ensure_grad();
  void zero_grad();
  // Deep copy of values only; result does not track gradients.
  Tensor clone_values() const;
};

// Wengert list. Ops append their backward rule as they execute; record order
// is a topological order by construction, and backward() replays it exactly
// once in reverse. At most one tape is active per thread at a time.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  static bool recording() { return active() != nullptr; }

  void record(std::function<void()> backward_rule);
  void run_backward();
  bool consumed() const { return consumed_; }
  size_t size() const { return rules_.size(); }

 private:
  std::vector<std::function<void()>> rules_;
  bool consumed_ = false;
};

using InitFn = std::function<void(Rng&, std::vector<double>&)>;

// Named trainable tensors with deterministic (name-sorted) iteration order.
// Initialization draws from the store's own seeded stream, so a fixed
// creation order gives bit-identical parameters.
class ParameterStore {
 public:
  explicit ParameterStore(uint64_t seed = 0) : rng_(seed) {}

  // Xavier-uniform weight matrix [rows, cols]; created on first use.
  Tensor& weight(const std::string& name, int rows, int cols);
  // Zero-initialized vector [n]; created on first use.
  Tensor& bias(const std::string& name, int n);
  Tensor& get_or_create(const std::string& name, const Shape& shape, const InitFn& init);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  size_t size() const { return params_.size(); }
  int64_t total_elements() const;

  void zero_grads();

  std::map<std::string, Tensor>::iterator begin() { return params_.begin(); }
  std::map<std::string, Tensor>::iterator end() { return params_.end(); }
  std::map<std::string, Tensor>::const_iterator begin() const { return params_.begin(); }
  std::map<std::string, Tensor>::const_iterator end() const { return params_.end(); }

  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  std::map<std::string, Tensor> params_;
  Rng rng_;
};

// ---- Forward ops (all record onto the active tape when one exists and an
// ---- input carries a gradient buffer) ----

// y = W x + b along the last axis of x; x is [n] or [rows, n].
// Pass an undefined Tensor as `b` for a bias-free map.
Tensor linear(const Tensor& W, const Tensor& b, const Tensor& x);
// Store-backed affine map: fetches/creates `name.W` [out_dim, n] and
// `name.b` [out_dim].
Tensor apply_linear(ParameterStore& store, const Tensor& x, const std::string& name, int out_dim);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor elu(const Tensor& x);
// [a] ++ [b] -> [a+b], or [L,a] ++ [L,b] -> [L,a+b].
Tensor concat_last_axis(const Tensor& a, const Tensor& b);
// weights [L] against rows [L, d] -> [d].
Tensor weighted_sum(const Tensor& weights, const Tensor& rows);
// rows [L, d] + v [d] broadcast over rows.
Tensor add_rows(const Tensor& rows, const Tensor& v);
// rows [L, d] * v [d] elementwise per row.
Tensor mul_rows(const Tensor& rows, const Tensor& v);
// scalar gate g[1] times vector.
Tensor scale_by(const Tensor& g, const Tensor& v);
// 1 - g for a scalar tensor.
Tensor one_minus(const Tensor& g);
// Contiguous slice [offset, offset+len) of a 1-D tensor.
Tensor slice(const Tensor& x, int offset, int len);
// Row r of a [L, d] matrix as a [d] vector.
Tensor take_row(const Tensor& mat, int r);
// Same buffers under a new shape (no copy, no tape entry); numel must match.
Tensor reshape(const Tensor& x, Shape new_shape);
// Stack k vectors of equal length d into [k, d].
Tensor stack_rows(const std::vector<Tensor>& rows);
// Sum of all elements -> scalar.
Tensor sum(const Tensor& x);

// Masked, max-stabilized softmax over a 1-D tensor. Masked-out positions are
// exactly zero; at least one position must be unmasked.
Tensor softmax_masked(const Tensor& logits, const std::vector<bool>& mask);

// Row `id` of `table` for each id; gradient flows back per row, except row
// `frozen_row` (pass -1 to train every row).
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, int frozen_row);

// Negative log softmax probability of `target`; numerically stabilized.
Tensor cross_entropy(const Tensor& logits, int target);

// Seeds d(loss)/d(loss) = 1 and replays the active tape in reverse. The tape
// is consumed; a second backward on it is a usage error.
void backward(const Tensor& loss);

// ---- Optimizer ----

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  int64_t t = 0;
};

// Global-norm gradient clipping followed by a bias-corrected Adam update
// (beta1 0.9, beta2 0.999, eps 1e-8). Grads are zeroed and t incremented.
// Returns the pre-clip global gradient norm.
double adam_step(ParameterStore& store, AdamState& state, double lr, double clip_norm);

// ---- Gradient checking ----

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
  };
  std::vector<Entry> per_param;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Central-difference check of every parameter against the analytic gradient
// of `forward` (a deterministic closure producing a scalar loss).
GradCheckReport grad_check(const std::function<Tensor()>& forward, ParameterStore& store,
                           double eps, double tol);

}  // namespace macnet
