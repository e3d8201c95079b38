#include "macnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace macnet {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dim in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, bool with_grad) : shape(std::move(s)) {
  data = std::make_shared<std::vector<double>>(static_cast<size_t>(numel_of(shape)), 0.0);
  if (with_grad) ensure_grad();
}

Tensor::Tensor(Shape s, std::vector<double> values, bool with_grad) : shape(std::move(s)) {
  if (static_cast<int64_t>(values.size()) != numel_of(shape))
    throw DimensionError("value count " + std::to_string(values.size()) + " does not fill shape " +
                         shape_str(shape));
  data = std::make_shared<std::vector<double>>(std::move(values));
  if (with_grad) ensure_grad();
}

Tensor Tensor::scalar(double v, bool with_grad) { return Tensor({1}, {v}, with_grad); }

Tensor Tensor::vector(std::vector<double> values, bool with_grad) {
  int n = static_cast<int>(values.size());
  return Tensor({n}, std::move(values), with_grad);
}

Tensor Tensor::zeros(Shape s, bool with_grad) { return Tensor(std::move(s), with_grad); }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape));
  return (*data)[0];
}

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::clone_values() const {
  Tensor out;
  out.shape = shape;
  out.data = std::make_shared<std::vector<double>>(*data);
  return out;
}

// ---- Tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;

void check_finite(const Tensor& t, const char* op) {
  for (double v : *t.data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// Output of an op: carries a grad buffer iff some input does and a tape is
// recording.
Tensor make_output(Shape shape, bool any_input_grad) {
  return Tensor(std::move(shape), any_input_grad && Tape::recording());
}

bool tracked(const Tensor& t) { return t.requires_grad(); }
}  // namespace

Tape::Tape() {
  if (g_active_tape) throw UsageError("a tape is already active on this thread");
  g_active_tape = this;
}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_rule) {
  rules_.push_back(std::move(backward_rule));
}

void Tape::run_backward() {
  if (consumed_) throw UsageError("tape already consumed by a previous backward");
  consumed_ = true;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
}

// ---- ParameterStore ----

Tensor& ParameterStore::get_or_create(const std::string& name, const Shape& shape,
                                      const InitFn& init) {
  auto it = params_.find(name);
  if (it != params_.end()) {
    if (it->second.shape != shape)
      throw DimensionError("parameter '" + name + "' registered as " +
                           shape_str(it->second.shape) + ", requested " + shape_str(shape));
    return it->second;
  }
  Tensor t(shape, true);
  init(rng_, *t.data);
  auto [pos, ok] = params_.emplace(name, std::move(t));
  (void)ok;
  return pos->second;
}

Tensor& ParameterStore::weight(const std::string& name, int rows, int cols) {
  return get_or_create(name, {rows, cols}, [rows, cols](Rng& rng, std::vector<double>& v) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& x : v) x = rng.uniform(-a, a);
  });
}

Tensor& ParameterStore::bias(const std::string& name, int n) {
  return get_or_create(name, {n}, [](Rng&, std::vector<double>&) {});
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

int64_t ParameterStore::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// ---- Ops ----

Tensor linear(const Tensor& W, const Tensor& b, const Tensor& x) {
  if (W.shape.size() != 2) throw DimensionError("linear: W must be 2-D, got " + shape_str(W.shape));
  const int m = W.shape[0];
  const int n = W.shape[1];
  const bool has_bias = b.defined();
  if (has_bias && (b.shape.size() != 1 || b.shape[0] != m))
    throw DimensionError("linear: bias " + shape_str(b.shape) + " does not match out dim " +
                         std::to_string(m));
  if (x.shape.empty() || x.shape.back() != n)
    throw DimensionError("linear: input " + shape_str(x.shape) + " does not match W " +
                         shape_str(W.shape));
  if (x.shape.size() > 2) throw DimensionError("linear: input rank > 2 unsupported");

  const int rows = x.shape.size() == 2 ? x.shape[0] : 1;
  Shape out_shape = x.shape.size() == 2 ? Shape{rows, m} : Shape{m};
  Tensor y = make_output(out_shape, tracked(W) || tracked(b) || tracked(x));

  const double* wp = W.data->data();
  const double* xp = x.data->data();
  double* yp = y.data->data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = xp + static_cast<size_t>(r) * n;
    double* yr = yp + static_cast<size_t>(r) * m;
    for (int i = 0; i < m; ++i) {
      const double* wr = wp + static_cast<size_t>(i) * n;
      double acc = has_bias ? (*b.data)[static_cast<size_t>(i)] : 0.0;
      for (int j = 0; j < n; ++j) acc += wr[j] * xr[j];
      yr[i] = acc;
    }
  }
  check_finite(y, "linear");

  if (y.requires_grad()) {
    Tape::active()->record([W, b, x, y, m, n, rows] {
      const double* gy = y.grad->data();
      const double* wp = W.data->data();
      const double* xp = x.data->data();
      for (int r = 0; r < rows; ++r) {
        const double* gyr = gy + static_cast<size_t>(r) * m;
        const double* xr = xp + static_cast<size_t>(r) * n;
        if (x.grad) {
          double* gx = x.grad->data() + static_cast<size_t>(r) * n;
          for (int i = 0; i < m; ++i) {
            const double g = gyr[i];
            if (g == 0.0) continue;
            const double* wr = wp + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gx[j] += g * wr[j];
          }
        }
        if (W.grad) {
          double* gw = W.grad->data();
          for (int i = 0; i < m; ++i) {
            const double g = gyr[i];
            if (g == 0.0) continue;
            double* gwr = gw + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gwr[j] += g * xr[j];
          }
        }
        if (b.defined() && b.grad) {
          double* gb = b.grad->data();
          for (int i = 0; i < m; ++i) gb[i] += gyr[i];
        }
      }
    });
  }
  return y;
}

Tensor apply_linear(ParameterStore& store, const Tensor& x, const std::string& name, int out_dim) {
  if (x.shape.empty()) throw DimensionError("apply_linear: undefined input");
  const int n = x.shape.back();
  Tensor& W = store.weight(name + ".W", out_dim, n);
  Tensor& b = store.bias(name + ".b", out_dim);
  return linear(W, b, x);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw DimensionError("add: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor y = make_output(a.shape, tracked(a) || tracked(b));
  const size_t n = a.data->size();
  for (size_t i = 0; i < n; ++i) (*y.data)[i] = (*a.data)[i] + (*b.data)[i];
  check_finite(y, "add");
  if (y.requires_grad()) {
    Tape::active()->record([a, b, y] {
      const size_t n = y.grad->size();
      for (size_t i = 0; i < n; ++i) {
        const double g = (*y.grad)[i];
        if (a.grad) (*a.grad)[i] += g;
        if (b.grad) (*b.grad)[i] += g;
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw DimensionError("mul: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor y = make_output(a.shape, tracked(a) || tracked(b));
  const size_t n = a.data->size();
  for (size_t i = 0; i < n; ++i) (*y.data)[i] = (*a.data)[i] * (*b.data)[i];
  check_finite(y, "mul");
  if (y.requires_grad()) {
    Tape::active()->record([a, b, y] {
      const size_t n = y.grad->size();
      for (size_t i = 0; i < n; ++i) {
        const double g = (*y.grad)[i];
        if (a.grad) (*a.grad)[i] += g * (*b.data)[i];
        if (b.grad) (*b.grad)[i] += g * (*a.data)[i];
      }
    });
  }
  return y;
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor y = make_output(x.shape, tracked(x));
  const size_t n = x.data->size();
  for (size_t i = 0; i < n; ++i) (*y.data)[i] = stable_sigmoid((*x.data)[i]);
  check_finite(y, "sigmoid");
  if (y.requires_grad()) {
    Tape::active()->record([x, y] {
      const size_t n = y.grad->size();
      for (size_t i = 0; i < n; ++i) {
        const double s = (*y.data)[i];
        if (x.grad) (*x.grad)[i] += (*y.grad)[i] * s * (1.0 - s);
      }
    });
  }
  return y;
}

Tensor tanh_op(const Tensor& x) {
  Tensor y = make_output(x.shape, tracked(x));
  const size_t n = x.data->size();
  for (size_t i = 0; i < n; ++i) (*y.data)[i] = std::tanh((*x.data)[i]);
  check_finite(y, "tanh");
  if (y.requires_grad()) {
    Tape::active()->record([x, y] {
      const size_t n = y.grad->size();
      for (size_t i = 0; i < n; ++i) {
        const double t = (*y.data)[i];
        if (x.grad) (*x.grad)[i] += (*y.grad)[i] * (1.0 - t * t);
      }
    });
  }
  return y;
}

Tensor elu(const Tensor& x) {
  Tensor y = make_output(x.shape, tracked(x));
  const size_t n = x.data->size();
  for (size_t i = 0; i < n; ++i) {
    const double v = (*x.data)[i];
    (*y.data)[i] = v > 0.0 ? v : std::expm1(v);
  }
  check_finite(y, "elu");
  if (y.requires_grad()) {
    Tape::active()->record([x, y] {
      const size_t n = y.grad->size();
      for (size_t i = 0; i < n; ++i) {
        const double v = (*x.data)[i];
        const double d = v > 0.0 ? 1.0 : std::exp(v);
        if (x.grad) (*x.grad)[i] += (*y.grad)[i] * d;
      }
    });
  }
  return y;
}

Tensor concat_last_axis(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != b.shape.size() || a.shape.empty() || a.shape.size() > 2)
    throw DimensionError("concat: ranks " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (a.shape.size() == 2 && a.shape[0] != b.shape[0])
    throw DimensionError("concat: row counts differ");
  const int rows = a.shape.size() == 2 ? a.shape[0] : 1;
  const int na = a.shape.back();
  const int nb = b.shape.back();
  Shape out_shape = a.shape.size() == 2 ? Shape{rows, na + nb} : Shape{na + nb};
  Tensor y = make_output(out_shape, tracked(a) || tracked(b));
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < na; ++j)
      (*y.data)[static_cast<size_t>(r) * (na + nb) + j] = (*a.data)[static_cast<size_t>(r) * na + j];
    for (int j = 0; j < nb; ++j)
      (*y.data)[static_cast<size_t>(r) * (na + nb) + na + j] =
          (*b.data)[static_cast<size_t>(r) * nb + j];
  }
  if (y.requires_grad()) {
    Tape::active()->record([a, b, y, rows, na, nb] {
      for (int r = 0; r < rows; ++r) {
        if (a.grad)
          for (int j = 0; j < na; ++j)
            (*a.grad)[static_cast<size_t>(r) * na + j] +=
                (*y.grad)[static_cast<size_t>(r) * (na + nb) + j];
        if (b.grad)
          for (int j = 0; j < nb; ++j)
            (*b.grad)[static_cast<size_t>(r) * nb + j] +=
                (*y.grad)[static_cast<size_t>(r) * (na + nb) + na + j];
      }
    });
  }
  return y;
}

Tensor weighted_sum(const Tensor& weights, const Tensor& rows) {
  if (weights.shape.size() != 1 || rows.shape.size() != 2 || weights.shape[0] != rows.shape[0])
    throw DimensionError("weighted_sum: weights " + shape_str(weights.shape) + " vs rows " +
                         shape_str(rows.shape));
  const int L = rows.shape[0];
  const int d = rows.shape[1];
  Tensor y = make_output({d}, tracked(weights) || tracked(rows));
  for (int v = 0; v < L; ++v) {
    const double w = (*weights.data)[v];
    if (w == 0.0) continue;
    const double* rp = rows.data->data() + static_cast<size_t>(v) * d;
    for (int j = 0; j < d; ++j) (*y.data)[j] += w * rp[j];
  }
  check_finite(y, "weighted_sum");
  if (y.requires_grad()) {
    Tape::active()->record([weights, rows, y, L, d] {
      const double* gy = y.grad->data();
      for (int v = 0; v < L; ++v) {
        const double* rp = rows.data->data() + static_cast<size_t>(v) * d;
        if (weights.grad) {
          double acc = 0.0;
          for (int j = 0; j < d; ++j) acc += gy[j] * rp[j];
          (*weights.grad)[v] += acc;
        }
        if (rows.grad) {
          const double w = (*weights.data)[v];
          double* gr = rows.grad->data() + static_cast<size_t>(v) * d;
          for (int j = 0; j < d; ++j) gr[j] += w * gy[j];
        }
      }
    });
  }
  return y;
}

Tensor add_rows(const Tensor& rows, const Tensor& v) {
  if (rows.shape.size() != 2 || v.shape.size() != 1 || rows.shape[1] != v.shape[0])
    throw DimensionError("add_rows: " + shape_str(rows.shape) + " vs " + shape_str(v.shape));
  const int L = rows.shape[0];
  const int d = rows.shape[1];
  Tensor y = make_output({L, d}, tracked(rows) || tracked(v));
  for (int r = 0; r < L; ++r)
    for (int j = 0; j < d; ++j)
      (*y.data)[static_cast<size_t>(r) * d + j] =
          (*rows.data)[static_cast<size_t>(r) * d + j] + (*v.data)[j];
  check_finite(y, "add_rows");
  if (y.requires_grad()) {
    Tape::active()->record([rows, v, y, L, d] {
      for (int r = 0; r < L; ++r)
        for (int j = 0; j < d; ++j) {
          const double g = (*y.grad)[static_cast<size_t>(r) * d + j];
          if (rows.grad) (*rows.grad)[static_cast<size_t>(r) * d + j] += g;
          if (v.grad) (*v.grad)[j] += g;
        }
    });
  }
  return y;
}

Tensor mul_rows(const Tensor& rows, const Tensor& v) {
  if (rows.shape.size() != 2 || v.shape.size() != 1 || rows.shape[1] != v.shape[0])
    throw DimensionError("mul_rows: " + shape_str(rows.shape) + " vs " + shape_str(v.shape));
  const int L = rows.shape[0];
  const int d = rows.shape[1];
  Tensor y = make_output({L, d}, tracked(rows) || tracked(v));
  for (int r = 0; r < L; ++r)
    for (int j = 0; j < d; ++j)
      (*y.data)[static_cast<size_t>(r) * d + j] =
          (*rows.data)[static_cast<size_t>(r) * d + j] * (*v.data)[j];
  check_finite(y, "mul_rows");
  if (y.requires_grad()) {
    Tape::active()->record([rows, v, y, L, d] {
      for (int r = 0; r < L; ++r)
        for (int j = 0; j < d; ++j) {
          const double g = (*y.grad)[static_cast<size_t>(r) * d + j];
          if (rows.grad) (*rows.grad)[static_cast<size_t>(r) * d + j] += g * (*v.data)[j];
          if (v.grad) (*v.grad)[j] += g * (*rows.data)[static_cast<size_t>(r) * d + j];
        }
    });
  }
  return y;
}

Tensor scale_by(const Tensor& g, const Tensor& v) {
  if (g.numel() != 1) throw DimensionError("scale_by: gate must be scalar");
  Tensor y = make_output(v.shape, tracked(g) || tracked(v));
  const double s = (*g.data)[0];
  const size_t n = v.data->size();
  for (size_t i = 0; i < n; ++i) (*y.data)[i] = s * (*v.data)[i];
  check_finite(y, "scale_by");
  if (y.requires_grad()) {
    Tape::active()->record([g, v, y] {
      const size_t n = y.grad->size();
      const double s = (*g.data)[0];
      double acc = 0.0;
      for (size_t i = 0; i < n; ++i) {
        const double gy = (*y.grad)[i];
        if (v.grad) (*v.grad)[i] += s * gy;
        acc += gy * (*v.data)[i];
      }
      if (g.grad) (*g.grad)[0] += acc;
    });
  }
  return y;
}

Tensor one_minus(const Tensor& g) {
  if (g.numel() != 1) throw DimensionError("one_minus: scalar expected");
  Tensor y = make_output(g.shape, tracked(g));
  (*y.data)[0] = 1.0 - (*g.data)[0];
  if (y.requires_grad()) {
    Tape::active()->record([g, y] {
      if (g.grad) (*g.grad)[0] -= (*y.grad)[0];
    });
  }
  return y;
}

Tensor slice(const Tensor& x, int offset, int len) {
  if (x.shape.size() != 1) throw DimensionError("slice: 1-D tensor expected");
  if (offset < 0 || len <= 0 || offset + len > x.shape[0])
    throw DimensionError("slice: range [" + std::to_string(offset) + "," +
                         std::to_string(offset + len) + ") out of " + shape_str(x.shape));
  Tensor y = make_output({len}, tracked(x));
  for (int i = 0; i < len; ++i) (*y.data)[i] = (*x.data)[offset + i];
  if (y.requires_grad()) {
    Tape::active()->record([x, y, offset, len] {
      if (!x.grad) return;
      for (int i = 0; i < len; ++i) (*x.grad)[offset + i] += (*y.grad)[i];
    });
  }
  return y;
}

Tensor take_row(const Tensor& mat, int r) {
  if (mat.shape.size() != 2) throw DimensionError("take_row: 2-D tensor expected");
  const int L = mat.shape[0];
  const int d = mat.shape[1];
  if (r < 0 || r >= L) throw DimensionError("take_row: row " + std::to_string(r) + " out of " + shape_str(mat.shape));
  Tensor y = make_output({d}, tracked(mat));
  const double* src = mat.data->data() + static_cast<size_t>(r) * d;
  std::copy(src, src + d, y.data->data());
  if (y.requires_grad()) {
    Tape::active()->record([mat, y, r, d] {
      if (!mat.grad) return;
      double* dst = mat.grad->data() + static_cast<size_t>(r) * d;
      for (int j = 0; j < d; ++j) dst[j] += (*y.grad)[static_cast<size_t>(j)];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape) + " -> " + shape_str(new_shape));
  Tensor y;
  y.shape = std::move(new_shape);
  y.data = x.data;
  y.grad = x.grad;
  return y;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: empty input");
  const int d = rows[0].shape.size() == 1 ? rows[0].shape[0] : -1;
  if (d < 0) throw DimensionError("stack_rows: 1-D rows expected");
  bool any = false;
  for (const auto& r : rows) {
    if (r.shape != Shape{d}) throw DimensionError("stack_rows: ragged rows");
    any = any || tracked(r);
  }
  const int k = static_cast<int>(rows.size());
  Tensor y = make_output({k, d}, any);
  for (int r = 0; r < k; ++r)
    for (int j = 0; j < d; ++j) (*y.data)[static_cast<size_t>(r) * d + j] = (*rows[r].data)[j];
  if (y.requires_grad()) {
    Tape::active()->record([rows, y, k, d] {
      for (int r = 0; r < k; ++r) {
        if (!rows[r].grad) continue;
        for (int j = 0; j < d; ++j)
          (*rows[r].grad)[j] += (*y.grad)[static_cast<size_t>(r) * d + j];
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  Tensor y = make_output({1}, tracked(x));
  double acc = 0.0;
  for (double v : *x.data) acc += v;
  (*y.data)[0] = acc;
  check_finite(y, "sum");
  if (y.requires_grad()) {
    Tape::active()->record([x, y] {
      if (!x.grad) return;
      const double g = (*y.grad)[0];
      for (auto& gx : *x.grad) gx += g;
    });
  }
  return y;
}

Tensor softmax_masked(const Tensor& logits, const std::vector<bool>& mask) {
  if (logits.shape.size() != 1) throw DimensionError("softmax_masked: 1-D logits expected");
  const int L = logits.shape[0];
  if (static_cast<int>(mask.size()) != L)
    throw DimensionError("softmax_masked: mask length " + std::to_string(mask.size()) +
                         " vs logits " + std::to_string(L));
  bool any_true = false;
  for (bool b : mask) any_true = any_true || b;
  if (!any_true) throw UsageError("softmax_masked: all positions masked out");

  Tensor y = make_output({L}, tracked(logits));
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < L; ++i)
    if (mask[i]) mx = std::max(mx, (*logits.data)[i]);
  double total = 0.0;
  for (int i = 0; i < L; ++i) {
    if (!mask[i]) continue;
    const double e = std::exp(std::min((*logits.data)[i] - mx, 0.0));
    (*y.data)[i] = e;
    total += e;
  }
  for (int i = 0; i < L; ++i)
    if (mask[i]) (*y.data)[i] /= total;
  check_finite(y, "softmax_masked");

  if (y.requires_grad()) {
    Tape::active()->record([logits, y, mask, L] {
      if (!logits.grad) return;
      // dx_i = y_i * (g_i - sum_j g_j y_j) over unmasked positions.
      double dot = 0.0;
      for (int i = 0; i < L; ++i)
        if (mask[i]) dot += (*y.grad)[i] * (*y.data)[i];
      for (int i = 0; i < L; ++i)
        if (mask[i]) (*logits.grad)[i] += (*y.data)[i] * ((*y.grad)[i] - dot);
    });
  }
  return y;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, int frozen_row) {
  if (table.shape.size() != 2) throw DimensionError("embedding_lookup: 2-D table expected");
  const int V = table.shape[0];
  const int e = table.shape[1];
  for (int id : ids) {
    if (id < 0 || id >= V)
      throw DimensionError("embedding_lookup: id " + std::to_string(id) + " out of vocab " +
                           std::to_string(V));
  }
  const int L = static_cast<int>(ids.size());
  if (L == 0) throw UsageError("embedding_lookup: empty id sequence");
  Tensor y = make_output({L, e}, tracked(table));
  for (int r = 0; r < L; ++r) {
    const double* src = table.data->data() + static_cast<size_t>(ids[r]) * e;
    double* dst = y.data->data() + static_cast<size_t>(r) * e;
    std::copy(src, src + e, dst);
  }
  if (y.requires_grad()) {
    Tape::active()->record([table, y, ids, frozen_row, L, e] {
      if (!table.grad) return;
      for (int r = 0; r < L; ++r) {
        if (ids[r] == frozen_row) continue;
        double* dst = table.grad->data() + static_cast<size_t>(ids[r]) * e;
        const double* src = y.grad->data() + static_cast<size_t>(r) * e;
        for (int j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, int target) {
  if (logits.shape.size() != 1) throw DimensionError("cross_entropy: 1-D logits expected");
  const int V = logits.shape[0];
  if (target < 0 || target >= V)
    throw DimensionError("cross_entropy: target " + std::to_string(target) + " out of " +
                         std::to_string(V));
  Tensor y = make_output({1}, tracked(logits));
  double mx = (*logits.data)[0];
  for (int i = 1; i < V; ++i) mx = std::max(mx, (*logits.data)[i]);
  double total = 0.0;
  for (int i = 0; i < V; ++i) total += std::exp((*logits.data)[i] - mx);
  const double log_z = mx + std::log(total);
  (*y.data)[0] = log_z - (*logits.data)[target];
  check_finite(y, "cross_entropy");
  if (y.requires_grad()) {
    Tape::active()->record([logits, y, target, V, mx, total] {
      if (!logits.grad) return;
      const double g = (*y.grad)[0];
      for (int i = 0; i < V; ++i) {
        const double p = std::exp((*logits.data)[i] - mx) / total;
        (*logits.grad)[i] += g * (p - (i == target ? 1.0 : 0.0));
      }
    });
  }
  return y;
}

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw UsageError("backward: no active tape");
  if (loss.numel() != 1) throw UsageError("backward: loss must be a scalar");
  if (t->consumed()) throw UsageError("backward: tape already consumed");
  if (loss.grad) (*loss.grad)[0] = 1.0;
  t->run_backward();
}

// ---- Adam ----

double adam_step(ParameterStore& store, AdamState& state, double lr, double clip_norm) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;

  double sq = 0.0;
  for (const auto& [name, p] : store) {
    if (!p.grad) throw UsageError("adam_step: parameter '" + name + "' has no gradient");
    for (double g : *p.grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));

  for (auto& [name, p] : store) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.data->size(), 0.0);
    if (v.empty()) v.assign(p.data->size(), 0.0);
    if (m.size() != p.data->size())
      throw UsageError("adam_step: moment shape drifted for '" + name + "'");
    for (size_t i = 0; i < p.data->size(); ++i) {
      const double g = (*p.grad)[i] * scale;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      (*p.data)[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      if (!std::isfinite((*p.data)[i]))
        throw NumericError("adam_step: parameter '" + name + "' became non-finite");
    }
    p.zero_grad();
  }
  return norm;
}

// ---- Gradient check ----

GradCheckReport grad_check(const std::function<Tensor()>& forward, ParameterStore& store,
                           double eps, double tol) {
  if (eps < 1e-6 || eps > 1e-3) throw UsageError("grad_check: eps must lie in [1e-6, 1e-3]");

  const double base1 = forward().item();
  const double base2 = forward().item();
  if (base1 != base2)
    throw UsageError("grad_check: forward closure is not deterministic (" + std::to_string(base1) +
                     " vs " + std::to_string(base2) + ")");

  store.zero_grads();
  std::map<std::string, std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = forward();
    backward(loss);
  }
  for (const auto& [name, p] : store) analytic[name] = *p.grad;
  store.zero_grads();

  GradCheckReport report;
  for (auto& [name, p] : store) {
    double worst = 0.0;
    auto& values = *p.data;
    const auto& a = analytic[name];
    for (size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double fp = forward().item();
      values[i] = saved - eps;
      const double fm = forward().item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max(std::abs(a[i]) + std::abs(numeric), 1e-3);
      worst = std::max(worst, std::abs(a[i] - numeric) / denom);
    }
    report.per_param.push_back({name, worst});
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace macnet
