#include "ctxgat/numerics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ctxgat {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return MapC(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
Map view(std::vector<double>& v, std::size_t r, std::size_t c) {
  return Map(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

std::string dims(Var v) { return shape_str({v.rows(), v.cols()}); }

[[noreturn]] void mismatch(std::string_view op, Var a, Var b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

void same_shape(std::string_view op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) mismatch(op, a, b);
}

void add_into(std::vector<double>& dst, const std::vector<double>& src, double k = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += k * src[i];
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape s, std::vector<double> values, bool rg)
    : shape(std::move(s)), data(std::move(values)), requires_grad(rg) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  if (requires_grad) grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(Shape s, bool rg) {
  auto n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0), rg);
}

std::size_t Tensor::rows() const {
  if (shape.size() <= 1) return 1;
  if (shape.size() == 2) return shape[0];
  throw ShapeError("tensor: rank " + std::to_string(shape.size()) + " has no matrix view");
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  return shape.back();
}

std::uint64_t Rng::next() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: empty range");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  t.requires_grad = true;
  t.grad.assign(t.data.size(), 0.0);
  return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::add_uniform(const std::string& name, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Rng rng(seed_ ^ hash_name(name));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return add(name, Tensor(std::move(shape), std::move(v)));
}

Tensor& ParamStore::add_constant(const std::string& name, Shape shape, double value) {
  std::vector<double> v(shape_numel(shape), value);
  return add(name, Tensor(std::move(shape), std::move(v)));
}

bool ParamStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

Tensor& ParamStore::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

// --- Var / Tape ---------------------------------------------------------

std::size_t Var::rows() const { return tape->rows(*this); }
std::size_t Var::cols() const { return tape->cols(*this); }
const std::vector<double>& Var::value() const { return tape->value(*this); }
double Var::item() const {
  if (numel() != 1) throw ShapeError("item: expected a 1x1 value, got " + dims(*this));
  return value()[0];
}
double Var::at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }
Tensor Var::tensor() const { return Tensor({rows(), cols()}, value()); }

Tape::Tape(const ParamStore* params, bool record) : params_(params), record_(record) {
  nodes_.reserve(256);
}

Var Tape::push(std::size_t rows, std::size_t cols, std::vector<double> value,
               std::span<const Var> inputs, Backward backward) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(value);
  if (record_) {
    for (Var in : inputs) n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (rows * cols != values.size())
    throw ShapeError("constant: shape " + shape_str({rows, cols}) + " does not hold " +
                     std::to_string(values.size()) + " values");
  return push(rows, cols, std::move(values), {}, nullptr);
}

Var Tape::constant(const Tensor& t) { return constant(t.rows(), t.cols(), t.data); }

Var Tape::param(std::string_view name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
  if (!params_) throw std::logic_error("tape has no parameter store");
  const Tensor& t = params_->at(name);
  Node n;
  n.rows = t.rows();
  n.cols = t.cols();
  n.value = t.data;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_ids_.emplace(std::string(name), id);
  return Var{this, id};
}

bool Tape::has_param(std::string_view name) const { return params_ && params_->contains(name); }

std::vector<double>& Tape::grad(Var v) {
  auto& n = nodes_[v.id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (root.numel() != 1) throw ShapeError("backward: root must be 1x1, got " + dims(root));
  grad(root)[0] += 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, Var{this, static_cast<std::uint32_t>(i)});
  }
}

ParamGrads Tape::param_grads() const {
  ParamGrads out;
  for (const auto& [name, id] : param_ids_) {
    const auto& n = nodes_[id];
    out[name] = n.grad.empty() ? std::vector<double>(n.value.size(), 0.0) : n.grad;
  }
  return out;
}

void Tape::accumulate_into(ParamStore& store, double k) const {
  for (const auto& [name, id] : param_ids_) {
    const auto& n = nodes_[id];
    if (n.grad.empty()) continue;
    auto& t = store.at(name);
    if (t.grad.size() != n.grad.size()) t.grad.assign(t.data.size(), 0.0);
    add_into(t.grad, n.grad, k);
  }
}

// --- plain kernels ------------------------------------------------------

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - m));
  for (auto& x : out) x /= z;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - m);
  const double lz = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

double cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size())
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                            " out of range for " + std::to_string(logits.size()) + " classes");
  return -log_softmax(logits)[target];
}

// --- ops ----------------------------------------------------------------

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) mismatch("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  view(out, m, n).noalias() = view(a.value(), m, k) * view(b.value(), k, n);
  return a.tape->push(m, n, std::move(out), {a, b}, [a, b, m, k, n](Tape& t, Var self) {
    const auto g = view(t.grad(self), m, n);
    if (t.needs_grad(a)) view(t.grad(a), m, k).noalias() += g * view(t.value(b), k, n).transpose();
    if (t.needs_grad(b)) view(t.grad(b), k, n).noalias() += view(t.value(a), m, k).transpose() * g;
  });
}

Var transpose(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  view(out, n, m) = view(a.value(), m, n).transpose();
  return a.tape->push(n, m, std::move(out), {a}, [a, m, n](Tape& t, Var self) {
    view(t.grad(a), m, n) += view(t.grad(self), n, m).transpose();
  });
}

Var add(Var a, Var b) {
  same_shape("add", a, b);
  std::vector<double> out = a.value();
  add_into(out, b.value());
  return a.tape->push(a.rows(), a.cols(), std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) add_into(t.grad(a), g);
    if (t.needs_grad(b)) add_into(t.grad(b), g);
  });
}

Var sub(Var a, Var b) {
  same_shape("sub", a, b);
  std::vector<double> out = a.value();
  add_into(out, b.value(), -1.0);
  return a.tape->push(a.rows(), a.cols(), std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) add_into(t.grad(a), g);
    if (t.needs_grad(b)) add_into(t.grad(b), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  same_shape("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->push(a.rows(), a.cols(), std::move(out), {a, b}, [a, b](Tape& t, Var self) {
    const auto g = t.grad(self);
    if (t.needs_grad(a)) {
      auto& ga = t.grad(a);
      const auto& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto& gb = t.grad(b);
      const auto& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double k) {
  std::vector<double> out = a.value();
  for (auto& x : out) x *= k;
  return a.tape->push(a.rows(), a.cols(), std::move(out), {a},
                      [a, k](Tape& t, Var self) { add_into(t.grad(a), t.grad(self), k); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) mismatch("add_row", a, row);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out = a.value();
  const auto& r = row.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return a.tape->push(m, n, std::move(out), {a, row}, [a, row, m, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    if (t.needs_grad(a)) add_into(t.grad(a), g);
    if (t.needs_grad(row)) {
      auto& gr = t.grad(row);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
    }
  });
}

Var repeat_rows(Var row, std::size_t m) {
  if (row.rows() != 1) throw ShapeError("repeat_rows: expected a row, got " + dims(row));
  const std::size_t n = row.cols();
  std::vector<double> out;
  out.reserve(m * n);
  for (std::size_t i = 0; i < m; ++i) out.insert(out.end(), row.value().begin(), row.value().end());
  return row.tape->push(m, n, std::move(out), {row}, [row, m, n](Tape& t, Var self) {
    const auto& g = t.grad(self);
    auto& gr = t.grad(row);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
  });
}

Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const auto& x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = c * (x[i] + 0.044715 * x[i] * x[i] * x[i]);
    out[i] = 0.5 * x[i] * (1.0 + std::tanh(u));
  }
  return a.tape->push(a.rows(), a.cols(), std::move(out), {a}, [a](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto& x = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x2 = x[i] * x[i];
      const double th = std::tanh(c * (x[i] + 0.044715 * x2 * x[i]));
      const double du = c * (1.0 + 3.0 * 0.044715 * x2);
      ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x[i] * (1.0 - th * th) * du);
    }
  });
}

Var tanh(Var a) {
  std::vector<double> out = a.value();
  for (auto& x : out) x = std::tanh(x);
  return a.tape->push(a.rows(), a.cols(), std::move(out), {a}, [a](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var softmax_rows(Var a, bool causal) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw std::invalid_argument("empty logits");
  const auto& x = a.value();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t width = causal ? std::min(n, i + 1) : n;
    const auto row = softmax(std::span<const double>(x.data() + i * n, width));
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return a.tape->push(m, n, std::move(out), {a}, [a, m, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var softmax(Var logits) {
  if (logits.rows() != 1) throw ShapeError("softmax: expected a row, got " + dims(logits));
  return softmax_rows(logits, false);
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  const std::size_t m = a.rows(), n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n) mismatch("layer_norm", a, gain);
  if (bias.rows() != 1 || bias.cols() != n) mismatch("layer_norm", a, bias);
  const auto& x = a.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[i * n + j] - mean) * (x[i * n + j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return a.tape->push(
      m, n, std::move(out), {a, gain, bias},
      [a, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, Var self) {
        const auto g = t.grad(self);
        const auto& gv = t.value(gain);
        if (t.needs_grad(gain) || t.needs_grad(bias)) {
          auto& gg = t.grad(gain);
          auto& gb = t.grad(bias);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              gg[j] += g[i * n + j] * xhat[i * n + j];
              gb[j] += g[i * n + j];
            }
        }
        if (!t.needs_grad(a)) return;
        auto& ga = t.grad(a);
        const double nn = static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = g[i * n + j] * gv[j];
            s1 += dh;
            s2 += dh * xhat[i * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = g[i * n + j] * gv[j];
            ga[i * n + j] += inv_std[i] * (dh - s1 / nn - xhat[i * n + j] * s2 / nn);
          }
        }
      });
}

Var embedding(Var table, std::span<const int> ids) {
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out;
  out.reserve(idv.size() * d);
  const auto& tv = table.value();
  for (int id : idv) {
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside table of " +
                              std::to_string(v) + " rows");
    out.insert(out.end(), tv.begin() + static_cast<std::ptrdiff_t>(id * d),
               tv.begin() + static_cast<std::ptrdiff_t>((id + 1) * d));
  }
  const std::size_t n = idv.size();
  return table.tape->push(n, d, std::move(out), {table},
                          [table, d, idv = std::move(idv)](Tape& t, Var self) {
                            const auto g = t.grad(self);
                            auto& gt = t.grad(table);
                            for (std::size_t i = 0; i < idv.size(); ++i)
                              for (std::size_t j = 0; j < d; ++j)
                                gt[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
                          });
}

Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(parts);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (Var p : parts) {
    if (p.rows() != m) mismatch("concat_cols", parts[0], p);
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(i * n + off));
    off += widths[k];
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->push(m, n, std::move(out), parts, [ins, widths, m, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (t.needs_grad(ins[k])) {
        auto& gk = t.grad(ins[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gk[i * widths[k] + j] += g[i * n + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::size_t> heights;
  for (Var p : parts) {
    if (p.cols() != n) mismatch("concat_rows", parts[0], p);
    heights.push_back(p.rows());
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (Var p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->push(m, n, std::move(out), parts, [ins, heights, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      const std::size_t len = heights[k] * n;
      if (t.needs_grad(ins[k])) {
        auto& gk = t.grad(ins[k]);
        for (std::size_t i = 0; i < len; ++i) gk[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
  const std::size_t m = a.rows(), n = a.cols();
  if (start + len > n)
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside " + dims(a));
  std::vector<double> out(m * len);
  const auto& x = a.value();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * n + start), len,
                out.begin() + static_cast<std::ptrdiff_t>(i * len));
  return a.tape->push(m, len, std::move(out), {a}, [a, m, n, start, len](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < len; ++j) ga[i * n + start + j] += g[i * len + j];
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t len) {
  const std::size_t m = a.rows(), n = a.cols();
  if (start + len > m)
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside " + dims(a));
  const auto& x = a.value();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(start * n),
                          x.begin() + static_cast<std::ptrdiff_t>((start + len) * n));
  return a.tape->push(len, n, std::move(out), {a}, [a, n, start](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[start * n + i] += g[i];
  });
}

Var mean_rows(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw ShapeError("mean_rows: no rows");
  std::vector<double> out(n, 0.0);
  const auto& x = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  for (auto& v : out) v /= static_cast<double>(m);
  return a.tape->push(1, n, std::move(out), {a}, [a, m, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto& ga = t.grad(a);
    const double k = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += k * g[j];
  });
}

Var sum(Var a) {
  const auto& x = a.value();
  const double s = std::accumulate(x.begin(), x.end(), 0.0);
  return a.tape->push(1, 1, {s}, {a}, [a](Tape& t, Var self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(a)) v += g;
  });
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("sum: no inputs");
  Var acc = scalars[0];
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
  return acc;
}

Var nll_rows(Var logits, std::span<const int> targets) {
  const std::size_t m = logits.rows(), k = logits.cols();
  if (targets.size() != m)
    throw ShapeError("nll_rows: " + std::to_string(targets.size()) + " targets for logits " +
                     dims(logits));
  std::vector<int> tv(targets.begin(), targets.end());
  const auto& x = logits.value();
  std::vector<double> probs(m * k);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tv[i] < 0 || static_cast<std::size_t>(tv[i]) >= k)
      throw std::out_of_range("nll_rows: target " + std::to_string(tv[i]) + " out of range for " +
                              std::to_string(k) + " classes");
    std::span<const double> row(x.data() + i * k, k);
    const auto lp = log_softmax(row);
    total -= lp[static_cast<std::size_t>(tv[i])];
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(lp[j]);
  }
  return logits.tape->push(1, 1, {total}, {logits},
                           [logits, k, tv = std::move(tv), probs = std::move(probs)](Tape& t, Var self) {
                             const double g = t.grad(self)[0];
                             auto& gl = t.grad(logits);
                             for (std::size_t i = 0; i < tv.size(); ++i) {
                               for (std::size_t j = 0; j < k; ++j) gl[i * k + j] += g * probs[i * k + j];
                               gl[i * k + static_cast<std::size_t>(tv[i])] -= g;
                             }
                           });
}

Var cross_entropy(Var logits, std::size_t target) {
  if (logits.rows() != 1) throw ShapeError("cross_entropy: expected a row, got " + dims(logits));
  if (target >= logits.cols())
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                            " out of range for " + std::to_string(logits.cols()) + " classes");
  const int t = static_cast<int>(target);
  return nll_rows(logits, std::span<const int>(&t, 1));
}

double grad_check(const LossFn& loss, ParamStore& params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  ParamGrads analytic;
  {
    Tape tape(&params, true);
    Var l = loss(tape);
    if (!std::isfinite(l.item())) throw std::runtime_error("grad_check: non-finite loss");
    tape.backward(l);
    analytic = tape.param_grads();
  }
  auto eval = [&] {
    Tape tape(&params, false);
    const double v = loss(tape).item();
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
    return v;
  };
  double worst = 0.0;
  for (auto& [name, tensor] : params) {
    auto it = analytic.find(name);
    for (std::size_t i = 0; i < tensor.data.size(); ++i) {
      const double orig = tensor.data[i];
      tensor.data[i] = orig + step;
      const double fp = eval();
      tensor.data[i] = orig - step;
      const double fm = eval();
      tensor.data[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = it == analytic.end() ? 0.0 : it->second[i];
      worst = std::max(worst, std::abs(ad - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace ctxgat
