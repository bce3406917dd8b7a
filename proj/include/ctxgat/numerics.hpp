#pragma once

// Dense row-major float64 tensors, a parameter store, and a recorded
// computation tape with reverse-mode gradients.
//
// Every value on the tape is a 2-D matrix; rank-1 tensors are carried as
// 1 x n rows. Ops are free functions taking Var handles; each op records a
// closure that propagates the output gradient to its inputs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ctxgat {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty when absent

  Tensor() = default;
  Tensor(Shape s, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape s, bool requires_grad = false);

  std::size_t numel() const { return data.size(); }
  // Matrix view: rank-1 tensors are one row.
  std::size_t rows() const;
  std::size_t cols() const;
  bool has_grad() const { return !grad.empty(); }
};

// splitmix64-based generator; the stream is fully specified so parameter
// initialization and shuffles reproduce bit-exactly everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

 private:
  std::uint64_t state_;
};

std::uint64_t hash_name(std::string_view s);

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn from a stream keyed by
  // (seed, name) so creation order does not affect values.
  Tensor& add_uniform(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor& add_constant(const std::string& name, Shape shape, double value);
  Tensor& add(const std::string& name, Tensor t);

  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;
  std::uint64_t seed() const { return seed_; }
  std::vector<std::string> names() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor, std::less<>> params_;
  std::uint64_t seed_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t numel() const { return rows() * cols(); }
  const std::vector<double>& value() const;
  double item() const;
  double at(std::size_t r, std::size_t c) const;
  Tensor tensor() const;
};

using ParamGrads = std::map<std::string, std::vector<double>, std::less<>>;

class Tape {
 public:
  // With record=false no closures are stored and backward() is unavailable;
  // used for evaluation and generation.
  explicit Tape(const ParamStore* params = nullptr, bool record = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);
  Var constant(const Tensor& t);
  Var scalar(double v) { return constant(1, 1, {v}); }
  // Leaf for a named parameter; repeated calls return the same node.
  Var param(std::string_view name);
  bool has_param(std::string_view name) const;

  void backward(Var root);
  // Gradients of every parameter leaf touched on this tape.
  ParamGrads param_grads() const;
  // Adds this tape's parameter gradients into ParamStore grad buffers.
  void accumulate_into(ParamStore& store, double scale = 1.0) const;

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  using Backward = std::function<void(Tape&, Var self)>;
  Var push(std::size_t rows, std::size_t cols, std::vector<double> value,
           std::span<const Var> inputs, Backward backward);
  Var push(std::size_t rows, std::size_t cols, std::vector<double> value,
           std::initializer_list<Var> inputs, Backward backward) {
    return push(rows, cols, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
  }
  const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Lazily zero-initialized gradient buffer.
  std::vector<double>& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    Backward backward;
    bool needs_grad = false;
  };

  const ParamStore* params_;
  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, std::uint32_t, std::less<>> param_ids_;
};

// Plain kernels on spans; the tape ops below reuse them.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> logits, std::size_t target);

// Tape ops. Shape mismatches throw ShapeError naming both shapes.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
// a (m x n) + row (1 x n) broadcast over rows.
Var add_row(Var a, Var row);
// Repeat a 1 x n row m times.
Var repeat_rows(Var row, std::size_t m);
Var gelu(Var a);
Var tanh(Var a);
// Row-wise softmax; with causal=true entry (i, j) is masked when j > i.
Var softmax_rows(Var a, bool causal = false);
Var softmax(Var logits);  // 1 x n
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
Var embedding(Var table, std::span<const int> ids);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t len);
Var slice_rows(Var a, std::size_t start, std::size_t len);
Var mean_rows(Var a);
Var sum(Var a);
Var sum(std::span<const Var> scalars);
// Sum over rows of -log softmax(row)[target]; returns 1 x 1.
Var nll_rows(Var logits, std::span<const int> targets);
Var cross_entropy(Var logits, std::size_t target);

// Compares reverse-mode gradients with central differences over every entry
// of every parameter. Returns max |g_ad - g_fd| / max(1, |g_fd|).
using LossFn = std::function<Var(Tape&)>;
double grad_check(const LossFn& loss, ParamStore& params, double step = 1e-4);

}  // namespace ctxgat
