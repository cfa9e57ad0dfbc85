#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pipefold {

class Tape;

// Dense row-major float32 tensor. Copies share storage; clone() deep-copies.
// A tensor may carry a gradient buffer (populated by Tape::backward for
// tensors with requires_grad) and a handle onto the tape of the forward pass
// that produced it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor from_data(std::vector<int> shape, std::vector<float> values);
  static Tensor scalar(float value);

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<int>& shape() const;
  int dim(int axis) const;
  std::int64_t size() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();

  // Scalar fetch; throws ShapeError unless size() == 1.
  float item() const;

  // Deep copy detached from any tape, without gradient. requires_grad is
  // preserved so cloned parameters stay trainable.
  Tensor clone() const;

  bool all_finite() const;

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty means absent
    bool requires_grad = false;
    std::uint64_t tape_id = 0;
    int node = -1;
  };

  explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}
  void ensure() const;

  std::shared_ptr<Storage> s_;
  friend class Tape;
};

// Reverse-mode tape. Ops record nodes in execution order, which is already
// topological; backward() walks the list once in reverse. The tape is
// rebuilt per forward pass and is confined to one thread together with the
// tensors recorded on it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<float>&)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Populates grad on every requires_grad leaf reachable from loss.
  // loss must be a scalar recorded on this tape.
  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

  // Recording interface used by the op implementations.
  bool tracks(const Tensor& t) const;
  int node_of(const Tensor& t);  // registers a leaf on demand; -1 for constants
  void record(std::vector<int> parents, BackwardFn back, Tensor& out);
  std::vector<float>& adjoint(int node);

 private:
  struct Node {
    std::int64_t size = 0;
    BackwardFn back;                          // empty for leaves
    std::shared_ptr<Tensor::Storage> leaf;    // grad target, null unless leaf
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<float>> adjoints_;
};

// ---- differentiable ops ---------------------------------------------------
// Every op computes eagerly and records a node when `tape` is non-null and
// an input is tracked. With tape == nullptr they are pure functions.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// a [m,k] times b^T where b is [n,k]; avoids materializing transposes in
// attention score computation.
Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add_row(const Tensor& m, const Tensor& row, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor affine(const Tensor& t, float scale, float shift, Tape* tape = nullptr);
Tensor relu(const Tensor& t, Tape* tape = nullptr);
Tensor softmax_rows(const Tensor& t, Tape* tape = nullptr);
Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta,
                  float eps, Tape* tape = nullptr);
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids,
                      Tape* tape = nullptr);
Tensor slice_rows(const Tensor& t, int begin, int count, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& t, int begin, int count, Tape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr);
// Appends zero rows up to total_rows.
Tensor pad_rows(const Tensor& t, int total_rows, Tape* tape = nullptr);
Tensor reshape(const Tensor& t, std::vector<int> shape, Tape* tape = nullptr);
Tensor sum(const Tensor& t, Tape* tape = nullptr);
// Flattened cosine similarity; throws DegenerateVectorError when either
// norm is below 1e-12.
Tensor cosine_similarity(const Tensor& u, const Tensor& v, Tape* tape = nullptr);
// Mean negative log-softmax of targets over positions whose target is not
// ignore_id. logits is [T,V], targets has length T.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_id, Tape* tape = nullptr);

std::string shape_str(const std::vector<int>& shape);

}  // namespace pipefold
