#include "pipefold/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "pipefold/errors.hpp"

namespace pipefold {

namespace {

std::int64_t product(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("dimension sizes must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

void axpy(std::vector<float>& dst, const std::vector<float>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// c[m,n] += a[m,k] * b[k,n]
void mm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<std::size_t>(i) * k;
    float* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      const float* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<std::size_t>(i) * k;
    float* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + static_cast<std::size_t>(j) * k;
      float acc = 0.f;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<std::size_t>(i) * k;
    const float* bi = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      float* cp = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

void require_2d(const Tensor& t, const char* who) {
  if (t.shape().size() != 2)
    throw ShapeError(std::string(who) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

void Tensor::ensure() const {
  if (!s_) throw ValueError("operation on an undefined tensor");
}

Tensor Tensor::zeros(std::vector<int> shape) {
  auto s = std::make_shared<Storage>();
  const std::int64_t n = product(shape);
  s->shape = std::move(shape);
  s->data.assign(static_cast<std::size_t>(n), 0.f);
  return Tensor(std::move(s));
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.s_->data.begin(), t.s_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> values) {
  const std::int64_t n = product(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_data: " + shape_str(shape) + " needs " + std::to_string(n) +
                     " values, got " + std::to_string(values.size()));
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->data = std::move(values);
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

const std::vector<int>& Tensor::shape() const {
  ensure();
  return s_->shape;
}

int Tensor::dim(int axis) const {
  ensure();
  return s_->shape.at(static_cast<std::size_t>(axis));
}

std::int64_t Tensor::size() const {
  ensure();
  return static_cast<std::int64_t>(s_->data.size());
}

std::span<const float> Tensor::data() const {
  ensure();
  return s_->data;
}

std::span<float> Tensor::mutable_data() {
  ensure();
  return s_->data;
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  ensure();
  s_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  ensure();
  if (s_->grad.empty()) throw ValueError("tensor has no gradient");
  return s_->grad;
}

void Tensor::zero_grad() {
  ensure();
  s_->grad.clear();
}

float Tensor::item() const {
  ensure();
  if (size() != 1) throw ShapeError("item: expected a scalar, got " + shape_str(s_->shape));
  return s_->data[0];
}

Tensor Tensor::clone() const {
  ensure();
  auto s = std::make_shared<Storage>();
  s->shape = s_->shape;
  s->data = s_->data;
  s->requires_grad = s_->requires_grad;
  return Tensor(std::move(s));
}

bool Tensor::all_finite() const {
  ensure();
  for (float v : s_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- Tape ------------------------------------------------------------------

namespace {
std::atomic<std::uint64_t> g_tape_counter{1};
}

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

bool Tape::tracks(const Tensor& t) const {
  if (!t.s_) return false;
  return (t.s_->tape_id == id_ && t.s_->node >= 0) || t.s_->requires_grad;
}

int Tape::node_of(const Tensor& t) {
  if (!t.s_) return -1;
  if (t.s_->tape_id == id_ && t.s_->node >= 0) return t.s_->node;
  if (!t.s_->requires_grad) return -1;
  Node leaf;
  leaf.size = static_cast<std::int64_t>(t.s_->data.size());
  leaf.leaf = t.s_;
  nodes_.push_back(std::move(leaf));
  const int id = static_cast<int>(nodes_.size()) - 1;
  t.s_->tape_id = id_;
  t.s_->node = id;
  return id;
}

void Tape::record(std::vector<int> parents, BackwardFn back, Tensor& out) {
  (void)parents;  // parents are captured inside `back`; kept for clarity at call sites
  Node node;
  node.size = out.size();
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  out.s_->tape_id = id_;
  out.s_->node = static_cast<int>(nodes_.size()) - 1;
}

std::vector<float>& Tape::adjoint(int node) {
  if (node < 0 || node >= static_cast<int>(nodes_.size()))
    throw ValueError("adjoint: node id out of range");
  auto& buf = adjoints_[static_cast<std::size_t>(node)];
  if (buf.empty()) buf.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].size), 0.f);
  return buf;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar");
  if (!loss.s_ || loss.s_->tape_id != id_ || loss.s_->node < 0)
    throw ValueError("backward: loss was not recorded on this tape");

  adjoints_.assign(nodes_.size(), {});
  adjoint(loss.s_->node)[0] = 1.f;

  for (int i = loss.s_->node; i >= 0; --i) {
    auto& adj = adjoints_[static_cast<std::size_t>(i)];
    if (adj.empty()) continue;
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.back) node.back(*this, adj);
    if (node.leaf && node.leaf->requires_grad) {
      if (node.leaf->grad.empty()) node.leaf->grad.assign(node.leaf->data.size(), 0.f);
      for (std::size_t j = 0; j < adj.size(); ++j) node.leaf->grad[j] += adj[j];
    }
    adj.clear();
    adj.shrink_to_fit();
  }
  adjoints_.clear();
}

// ---- ops -------------------------------------------------------------------

namespace {

// Shared recording guard: returns true when the node should be recorded.
bool should_record(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (tape->tracks(*t)) return true;
  return false;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (k != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  mm_acc(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);

  if (should_record(tape, {&a, &b})) {
    const int pa = tape->node_of(a), pb = tape->node_of(b);
    tape->record({pa, pb},
                 [a, b, pa, pb, m, k, n](Tape& t, const std::vector<float>& g) {
                   if (pa >= 0) mm_nt_acc(g.data(), b.data().data(), t.adjoint(pa).data(), m, n, k);
                   if (pb >= 0) mm_tn_acc(a.data().data(), g.data(), t.adjoint(pb).data(), m, k, n);
                 },
                 out);
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (k != b.dim(1))
    throw ShapeError("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  mm_nt_acc(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);

  if (should_record(tape, {&a, &b})) {
    const int pa = tape->node_of(a), pb = tape->node_of(b);
    tape->record({pa, pb},
                 [a, b, pa, pb, m, k, n](Tape& t, const std::vector<float>& g) {
                   // dA += g * b; dB += g^T * a
                   if (pa >= 0) mm_acc(g.data(), b.data().data(), t.adjoint(pa).data(), m, n, k);
                   if (pb >= 0) mm_tn_acc(g.data(), a.data().data(), t.adjoint(pb).data(), m, n, k);
                 },
                 out);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  const auto* pb = b.data().data();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = pa[i] + pb[i];

  if (should_record(tape, {&a, &b})) {
    const int na = tape->node_of(a), nb = tape->node_of(b);
    tape->record({na, nb},
                 [na, nb](Tape& t, const std::vector<float>& g) {
                   if (na >= 0) axpy(t.adjoint(na), g);
                   if (nb >= 0) axpy(t.adjoint(nb), g);
                 },
                 out);
  }
  return out;
}

Tensor add_row(const Tensor& m, const Tensor& row, Tape* tape) {
  require_2d(m, "add_row");
  if (row.size() != m.dim(1))
    throw ShapeError("add_row: row length " + std::to_string(row.size()) +
                     " does not match " + shape_str(m.shape()));
  const int rows = m.dim(0), cols = m.dim(1);
  Tensor out = Tensor::zeros(m.shape());
  auto* o = out.mutable_data().data();
  const auto* pm = m.data().data();
  const auto* pr = row.data().data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) o[i * cols + j] = pm[i * cols + j] + pr[j];

  if (should_record(tape, {&m, &row})) {
    const int nm = tape->node_of(m), nr = tape->node_of(row);
    tape->record({nm, nr},
                 [nm, nr, rows, cols](Tape& t, const std::vector<float>& g) {
                   if (nm >= 0) axpy(t.adjoint(nm), g);
                   if (nr >= 0) {
                     auto& gr = t.adjoint(nr);
                     for (int i = 0; i < rows; ++i)
                       for (int j = 0; j < cols; ++j) gr[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * cols + j];
                   }
                 },
                 out);
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  const auto* pb = b.data().data();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = pa[i] * pb[i];

  if (should_record(tape, {&a, &b})) {
    const int na = tape->node_of(a), nb = tape->node_of(b);
    tape->record({na, nb},
                 [a, b, na, nb](Tape& t, const std::vector<float>& g) {
                   if (na >= 0) {
                     auto& ga = t.adjoint(na);
                     const auto* pb2 = b.data().data();
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb2[i];
                   }
                   if (nb >= 0) {
                     auto& gb = t.adjoint(nb);
                     const auto* pa2 = a.data().data();
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa2[i];
                   }
                 },
                 out);
  }
  return out;
}

Tensor affine(const Tensor& t, float scale, float shift, Tape* tape) {
  Tensor out = Tensor::zeros(t.shape());
  auto* o = out.mutable_data().data();
  const auto* p = t.data().data();
  for (std::int64_t i = 0; i < t.size(); ++i) o[i] = scale * p[i] + shift;

  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    tape->record({nt},
                 [nt, scale](Tape& tp, const std::vector<float>& g) {
                   if (nt >= 0) {
                     auto& gt = tp.adjoint(nt);
                     for (std::size_t i = 0; i < g.size(); ++i) gt[i] += scale * g[i];
                   }
                 },
                 out);
  }
  return out;
}

Tensor relu(const Tensor& t, Tape* tape) {
  Tensor out = Tensor::zeros(t.shape());
  auto* o = out.mutable_data().data();
  const auto* p = t.data().data();
  for (std::int64_t i = 0; i < t.size(); ++i) o[i] = p[i] > 0.f ? p[i] : 0.f;

  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    tape->record({nt},
                 [t, nt](Tape& tp, const std::vector<float>& g) {
                   if (nt < 0) return;
                   auto& gt = tp.adjoint(nt);
                   const auto* p2 = t.data().data();
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (p2[i] > 0.f) gt[i] += g[i];
                 },
                 out);
  }
  return out;
}

Tensor softmax_rows(const Tensor& t, Tape* tape) {
  require_2d(t, "softmax_rows");
  const int rows = t.dim(0), cols = t.dim(1);
  Tensor out = Tensor::zeros(t.shape());
  auto* o = out.mutable_data().data();
  const auto* p = t.data().data();
  for (int i = 0; i < rows; ++i) {
    const float* xi = p + static_cast<std::size_t>(i) * cols;
    float* yi = o + static_cast<std::size_t>(i) * cols;
    float mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      z += yi[j];
    }
    const float inv = static_cast<float>(1.0 / z);
    for (int j = 0; j < cols; ++j) yi[j] *= inv;
  }

  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    tape->record({nt},
                 [out, nt, rows, cols](Tape& tp, const std::vector<float>& g) {
                   if (nt < 0) return;
                   auto& gt = tp.adjoint(nt);
                   const auto* y = out.data().data();
                   for (int i = 0; i < rows; ++i) {
                     const float* yi = y + static_cast<std::size_t>(i) * cols;
                     const float* gi = g.data() + static_cast<std::size_t>(i) * cols;
                     float* ti = gt.data() + static_cast<std::size_t>(i) * cols;
                     double dot = 0.0;
                     for (int j = 0; j < cols; ++j) dot += static_cast<double>(yi[j]) * gi[j];
                     for (int j = 0; j < cols; ++j)
                       ti[j] += yi[j] * (gi[j] - static_cast<float>(dot));
                   }
                 },
                 out);
  }
  return out;
}

Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, float eps, Tape* tape) {
  require_2d(t, "layer_norm");
  if (eps <= 0.f) throw ValueError("layer_norm: eps must be positive");
  const int rows = t.dim(0), cols = t.dim(1);
  if (gamma.size() != cols || beta.size() != cols)
    throw ShapeError("layer_norm: gamma/beta length must match " + shape_str(t.shape()));

  Tensor out = Tensor::zeros(t.shape());
  std::vector<float> inv_std(static_cast<std::size_t>(rows));
  std::vector<float> means(static_cast<std::size_t>(rows));
  auto* o = out.mutable_data().data();
  const auto* p = t.data().data();
  const auto* pg = gamma.data().data();
  const auto* pb = beta.data().data();
  for (int i = 0; i < rows; ++i) {
    const float* xi = p + static_cast<std::size_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xi[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= cols;
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    means[static_cast<std::size_t>(i)] = static_cast<float>(mean);
    inv_std[static_cast<std::size_t>(i)] = inv;
    float* yi = o + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j)
      yi[j] = pg[j] * ((xi[j] - static_cast<float>(mean)) * inv) + pb[j];
  }

  if (should_record(tape, {&t, &gamma, &beta})) {
    const int nt = tape->node_of(t), ng = tape->node_of(gamma), nb = tape->node_of(beta);
    tape->record({nt, ng, nb},
                 [t, gamma, nt, ng, nb, rows, cols, means, inv_std](Tape& tp,
                                                                    const std::vector<float>& g) {
                   const auto* x = t.data().data();
                   const auto* pg2 = gamma.data().data();
                   for (int i = 0; i < rows; ++i) {
                     const float* xi = x + static_cast<std::size_t>(i) * cols;
                     const float* gi = g.data() + static_cast<std::size_t>(i) * cols;
                     const float mean = means[static_cast<std::size_t>(i)];
                     const float inv = inv_std[static_cast<std::size_t>(i)];
                     // dgamma/dbeta accumulate per row
                     if (ng >= 0 || nb >= 0) {
                       auto* gg = ng >= 0 ? tp.adjoint(ng).data() : nullptr;
                       auto* gb = nb >= 0 ? tp.adjoint(nb).data() : nullptr;
                       for (int j = 0; j < cols; ++j) {
                         const float xh = (xi[j] - mean) * inv;
                         if (gg) gg[j] += gi[j] * xh;
                         if (gb) gb[j] += gi[j];
                       }
                     }
                     if (nt >= 0) {
                       float* gt = tp.adjoint(nt).data() + static_cast<std::size_t>(i) * cols;
                       double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                       for (int j = 0; j < cols; ++j) {
                         const float xh = (xi[j] - mean) * inv;
                         const float dxh = gi[j] * pg2[j];
                         sum_dxh += dxh;
                         sum_dxh_xh += static_cast<double>(dxh) * xh;
                       }
                       const float m1 = static_cast<float>(sum_dxh / cols);
                       const float m2 = static_cast<float>(sum_dxh_xh / cols);
                       for (int j = 0; j < cols; ++j) {
                         const float xh = (xi[j] - mean) * inv;
                         const float dxh = gi[j] * pg2[j];
                         gt[j] += inv * (dxh - m1 - xh * m2);
                       }
                     }
                   }
                 },
                 out);
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids, Tape* tape) {
  require_2d(table, "embedding_rows");
  const int rows = table.dim(0), cols = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= rows)
      throw ValueError("embedding_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(rows) + " rows");
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw ValueError("embedding_rows: empty id list");
  Tensor out = Tensor::zeros({n, cols});
  auto* o = out.mutable_data().data();
  const auto* p = table.data().data();
  for (int i = 0; i < n; ++i)
    std::memcpy(o + static_cast<std::size_t>(i) * cols,
                p + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * cols,
                sizeof(float) * static_cast<std::size_t>(cols));

  if (should_record(tape, {&table})) {
    const int ntab = tape->node_of(table);
    tape->record({ntab},
                 [ntab, ids, cols](Tape& tp, const std::vector<float>& g) {
                   if (ntab < 0) return;
                   auto& gt = tp.adjoint(ntab);
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     float* row = gt.data() + static_cast<std::size_t>(ids[i]) * cols;
                     const float* gi = g.data() + i * cols;
                     for (int j = 0; j < cols; ++j) row[j] += gi[j];
                   }
                 },
                 out);
  }
  return out;
}

Tensor slice_rows(const Tensor& t, int begin, int count, Tape* tape) {
  require_2d(t, "slice_rows");
  const int rows = t.dim(0), cols = t.dim(1);
  if (begin < 0 || count <= 0 || begin + count > rows)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_str(t.shape()));
  Tensor out = Tensor::zeros({count, cols});
  std::memcpy(out.mutable_data().data(), t.data().data() + static_cast<std::size_t>(begin) * cols,
              sizeof(float) * static_cast<std::size_t>(count) * cols);

  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    tape->record({nt},
                 [nt, begin, cols](Tape& tp, const std::vector<float>& g) {
                   if (nt < 0) return;
                   auto& gt = tp.adjoint(nt);
                   float* dst = gt.data() + static_cast<std::size_t>(begin) * cols;
                   for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                 },
                 out);
  }
  return out;
}

Tensor slice_cols(const Tensor& t, int begin, int count, Tape* tape) {
  require_2d(t, "slice_cols");
  const int rows = t.dim(0), cols = t.dim(1);
  if (begin < 0 || count <= 0 || begin + count > cols)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_str(t.shape()));
  Tensor out = Tensor::zeros({rows, count});
  auto* o = out.mutable_data().data();
  const auto* p = t.data().data();
  for (int i = 0; i < rows; ++i)
    std::memcpy(o + static_cast<std::size_t>(i) * count,
                p + static_cast<std::size_t>(i) * cols + begin,
                sizeof(float) * static_cast<std::size_t>(count));

  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    tape->record({nt},
                 [nt, begin, count, rows, cols](Tape& tp, const std::vector<float>& g) {
                   if (nt < 0) return;
                   auto& gt = tp.adjoint(nt);
                   for (int i = 0; i < rows; ++i) {
                     float* dst = gt.data() + static_cast<std::size_t>(i) * cols + begin;
                     const float* src = g.data() + static_cast<std::size_t>(i) * count;
                     for (int j = 0; j < count; ++j) dst[j] += src[j];
                   }
                 },
                 out);
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
  if (parts.empty()) throw ValueError("concat_cols: no parts");
  const int rows = parts.front().dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != rows)
      throw ShapeError("concat_cols: row counts differ: " + shape_str(parts.front().shape()) +
                       " vs " + shape_str(p.shape()));
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({rows, total});
  auto* o = out.mutable_data().data();
  int offset = 0;
  for (const Tensor& p : parts) {
    const int c = p.dim(1);
    const auto* src = p.data().data();
    for (int i = 0; i < rows; ++i)
      std::memcpy(o + static_cast<std::size_t>(i) * total + offset,
                  src + static_cast<std::size_t>(i) * c, sizeof(float) * static_cast<std::size_t>(c));
    offset += c;
  }

  bool track = false;
  if (tape)
    for (const Tensor& p : parts) track = track || tape->tracks(p);
  if (track) {
    std::vector<int> ids;
    std::vector<int> widths;
    ids.reserve(parts.size());
    for (const Tensor& p : parts) {
      ids.push_back(tape->node_of(p));
      widths.push_back(p.dim(1));
    }
    tape->record(ids,
                 [ids, widths, rows, total](Tape& tp, const std::vector<float>& g) {
                   int offset2 = 0;
                   for (std::size_t k = 0; k < ids.size(); ++k) {
                     const int c = widths[k];
                     if (ids[k] >= 0) {
                       auto& gp = tp.adjoint(ids[k]);
                       for (int i = 0; i < rows; ++i) {
                         const float* src = g.data() + static_cast<std::size_t>(i) * total + offset2;
                         float* dst = gp.data() + static_cast<std::size_t>(i) * c;
                         for (int j = 0; j < c; ++j) dst[j] += src[j];
                       }
                     }
                     offset2 += c;
                   }
                 },
                 out);
  }
  return out;
}

Tensor pad_rows(const Tensor& t, int total_rows, Tape* tape) {
  require_2d(t, "pad_rows");
  const int rows = t.dim(0), cols = t.dim(1);
  if (total_rows < rows)
    throw ShapeError("pad_rows: target rows " + std::to_string(total_rows) + " below " +
                     shape_str(t.shape()));
  Tensor out = Tensor::zeros({total_rows, cols});
  std::memcpy(out.mutable_data().data(), t.data().data(),
              sizeof(float) * static_cast<std::size_t>(rows) * cols);

  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    tape->record({nt},
                 [nt, n](Tape& tp, const std::vector<float>& g) {
                   if (nt < 0) return;
                   auto& gt = tp.adjoint(nt);
                   for (std::size_t i = 0; i < n; ++i) gt[i] += g[i];
                 },
                 out);
  }
  return out;
}

Tensor reshape(const Tensor& t, std::vector<int> shape, Tape* tape) {
  const std::int64_t n = product(shape);
  if (n != t.size())
    throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape),
                                 std::vector<float>(t.data().begin(), t.data().end()));
  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    tape->record({nt},
                 [nt](Tape& tp, const std::vector<float>& g) {
                   if (nt >= 0) axpy(tp.adjoint(nt), g);
                 },
                 out);
  }
  return out;
}

Tensor sum(const Tensor& t, Tape* tape) {
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (should_record(tape, {&t})) {
    const int nt = tape->node_of(t);
    tape->record({nt},
                 [nt](Tape& tp, const std::vector<float>& g) {
                   if (nt < 0) return;
                   auto& gt = tp.adjoint(nt);
                   for (auto& v : gt) v += g[0];
                 },
                 out);
  }
  return out;
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v, Tape* tape) {
  if (u.size() != v.size())
    throw ShapeError("cosine_similarity: element counts differ: " + std::to_string(u.size()) +
                     " vs " + std::to_string(v.size()));
  const auto* pu = u.data().data();
  const auto* pv = v.data().data();
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::int64_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(pu[i]) * pv[i];
    nu += static_cast<double>(pu[i]) * pu[i];
    nv += static_cast<double>(pv[i]) * pv[i];
  }
  const double norm_u = std::sqrt(nu), norm_v = std::sqrt(nv);
  if (norm_u < 1e-12 || norm_v < 1e-12)
    throw DegenerateVectorError("cosine_similarity: vector norm below 1e-12");
  const double cos = dot / (norm_u * norm_v);
  Tensor out = Tensor::scalar(static_cast<float>(cos));

  if (should_record(tape, {&u, &v})) {
    const int nu_id = tape->node_of(u), nv_id = tape->node_of(v);
    tape->record({nu_id, nv_id},
                 [u, v, nu_id, nv_id, norm_u, norm_v, cos](Tape& tp, const std::vector<float>& g) {
                   const float go = g[0];
                   const auto* pu2 = u.data().data();
                   const auto* pv2 = v.data().data();
                   if (nu_id >= 0) {
                     auto& gu = tp.adjoint(nu_id);
                     const double a = 1.0 / (norm_u * norm_v);
                     const double b = cos / (norm_u * norm_u);
                     for (std::size_t i = 0; i < gu.size(); ++i)
                       gu[i] += go * static_cast<float>(a * pv2[i] - b * pu2[i]);
                   }
                   if (nv_id >= 0) {
                     auto& gv = tp.adjoint(nv_id);
                     const double a = 1.0 / (norm_u * norm_v);
                     const double b = cos / (norm_v * norm_v);
                     for (std::size_t i = 0; i < gv.size(); ++i)
                       gv[i] += go * static_cast<float>(a * pu2[i] - b * pv2[i]);
                   }
                 },
                 out);
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id,
                     Tape* tape) {
  require_2d(logits, "cross_entropy");
  const int rows = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(logits.shape()));
  int kept = 0;
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || t >= vocab)
      throw ValueError("cross_entropy: target " + std::to_string(t) + " outside vocab of size " +
                       std::to_string(vocab));
    ++kept;
  }
  if (kept == 0) throw EmptyBatchError("cross_entropy: all positions ignored");

  // log-sum-exp with max subtraction; keep softmax probabilities for backward
  std::vector<float> probs(static_cast<std::size_t>(rows) * vocab, 0.f);
  const auto* p = logits.data().data();
  double loss = 0.0;
  for (int i = 0; i < rows; ++i) {
    if (targets[static_cast<std::size_t>(i)] == ignore_id) continue;
    const float* xi = p + static_cast<std::size_t>(i) * vocab;
    float mx = xi[0];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(xi[j]) - mx);
    const double logz = std::log(z) + mx;
    loss += logz - xi[targets[static_cast<std::size_t>(i)]];
    float* pi = probs.data() + static_cast<std::size_t>(i) * vocab;
    for (int j = 0; j < vocab; ++j)
      pi[j] = static_cast<float>(std::exp(static_cast<double>(xi[j]) - logz));
  }
  loss /= kept;
  Tensor out = Tensor::scalar(static_cast<float>(loss));

  if (should_record(tape, {&logits})) {
    const int nl = tape->node_of(logits);
    tape->record({nl},
                 [nl, targets, ignore_id, rows, vocab, kept,
                  probs = std::move(probs)](Tape& tp, const std::vector<float>& g) {
                   if (nl < 0) return;
                   auto& gl = tp.adjoint(nl);
                   const float scale = g[0] / static_cast<float>(kept);
                   for (int i = 0; i < rows; ++i) {
                     const int t = targets[static_cast<std::size_t>(i)];
                     if (t == ignore_id) continue;
                     const float* pi = probs.data() + static_cast<std::size_t>(i) * vocab;
                     float* gi = gl.data() + static_cast<std::size_t>(i) * vocab;
                     for (int j = 0; j < vocab; ++j) gi[j] += scale * pi[j];
                     gi[t] -= scale;
                   }
                 },
                 out);
  }
  return out;
}

}  // namespace pipefold
