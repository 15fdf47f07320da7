// Copyright 2026 The todpt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "todpt/autograd.hpp"

#include <cmath>
#include <numbers>

namespace todpt::ag {

double standard_normal(Rng& rng) {
  // Box-Muller; u1 in (0, 1].
  double u1 = 1.0 - uniform01(rng);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Parameter& ParameterStore::create(const std::string& name, Eigen::Index rows,
                                  Eigen::Index cols) {
  if (params_.count(name)) throw Error("parameter '" + name + "' already exists");
  Parameter& p = params_[name];
  p.name = name;
  p.value = Matrix::Zero(rows, cols);
  return p;
}

Parameter& ParameterStore::create_normal(const std::string& name, Eigen::Index rows,
                                         Eigen::Index cols, double stddev, Rng& rng) {
  Parameter& p = create(name, rows, cols);
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = stddev * standard_normal(rng);
  return p;
}

Parameter& ParameterStore::create_constant(const std::string& name, Eigen::Index rows,
                                           Eigen::Index cols, double value) {
  Parameter& p = create(name, rows, cols);
  p.value.setConstant(value);
  return p;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::erase_prefix(const std::string& prefix) {
  for (auto it = params_.begin(); it != params_.end();) {
    if (it->first.rfind(prefix, 0) == 0)
      it = params_.erase(it);
    else
      ++it;
  }
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParameterStore::all_finite() const {
  for (const auto& [_, p] : params_)
    if (!p.value.allFinite()) return false;
  return true;
}

const Matrix& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error("Var::scalar on a non-scalar node");
  return v(0, 0);
}

Var Graph::emplace(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(Matrix value) { return emplace(std::move(value), false); }

Var Graph::scalar_constant(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Graph::param(Parameter& p) {
  if (auto it = param_leaves_.find(&p); it != param_leaves_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.parameter = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size() - 1);
  param_leaves_.emplace(&p, id);
  return Var(this, id);
}

Matrix& Graph::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.parameter) {
    Parameter& p = *n.parameter;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      p.grad.setZero(p.value.rows(), p.value.cols());
    return p.grad;
  }
  if (n.grad.size() == 0) {
    const Matrix& v = n.external ? *n.external : n.value;
    n.grad.setZero(v.rows(), v.cols());
  }
  return n.grad;
}

void Graph::set_backward(Var v, std::function<void()> fn) {
  nodes_[static_cast<std::size_t>(v.id())].backward = std::move(fn);
}

void Graph::backward(Var root) {
  if (root.graph() != this) throw Error("backward: root belongs to another graph");
  if (root.value().size() != 1) throw Error("backward: root must be a scalar");
  if (!requires_grad(root.id())) return;
  grad(root.id())(0, 0) += 1.0;
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward();
  }
}

namespace {

Graph& same_graph(Var a, Var b) {
  if (a.graph() != b.graph() || a.graph() == nullptr)
    throw Error("operands belong to different graphs");
  return *a.graph();
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (a.cols() != b.rows()) throw Error("matmul: shape mismatch");
  Var out = g.emplace(a.value() * b.value(), g.requires_grad(a.id()) || g.requires_grad(b.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, b, out] {
      const Matrix& go = g.grad(out.id());
      if (g.requires_grad(a.id())) g.grad(a.id()).noalias() += go * b.value().transpose();
      if (g.requires_grad(b.id())) g.grad(b.id()).noalias() += a.value().transpose() * go;
    });
  }
  return out;
}

Var matmul_transposed(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (a.cols() != b.cols()) throw Error("matmul_transposed: shape mismatch");
  Var out = g.emplace(a.value() * b.value().transpose(),
                      g.requires_grad(a.id()) || g.requires_grad(b.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, b, out] {
      const Matrix& go = g.grad(out.id());
      if (g.requires_grad(a.id())) g.grad(a.id()).noalias() += go * b.value();
      if (g.requires_grad(b.id())) g.grad(b.id()).noalias() += go.transpose() * a.value();
    });
  }
  return out;
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("add: shape mismatch");
  Var out = g.emplace(a.value() + b.value(), g.requires_grad(a.id()) || g.requires_grad(b.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, b, out] {
      const Matrix& go = g.grad(out.id());
      if (g.requires_grad(a.id())) g.grad(a.id()) += go;
      if (g.requires_grad(b.id())) g.grad(b.id()) += go;
    });
  }
  return out;
}

Var add_row(Var a, Var r) {
  Graph& g = same_graph(a, r);
  if (r.rows() != 1 || r.cols() != a.cols()) throw Error("add_row: shape mismatch");
  Matrix v = a.value();
  v.rowwise() += r.value().row(0);
  Var out = g.emplace(std::move(v), g.requires_grad(a.id()) || g.requires_grad(r.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, r, out] {
      const Matrix& go = g.grad(out.id());
      if (g.requires_grad(a.id())) g.grad(a.id()) += go;
      if (g.requires_grad(r.id())) g.grad(r.id()) += go.colwise().sum();
    });
  }
  return out;
}

Var scale(Var a, double s) {
  Graph& g = *a.graph();
  Var out = g.emplace(a.value() * s, g.requires_grad(a.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, out, s] { g.grad(a.id()) += g.grad(out.id()) * s; });
  }
  return out;
}

Var gelu(Var a) {
  Graph& g = *a.graph();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double v = x.data()[i];
    y.data()[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  Var out = g.emplace(std::move(y), g.requires_grad(a.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, out] {
      const Matrix& x = a.value();
      const Matrix& go = g.grad(out.id());
      Matrix& ga = g.grad(a.id());
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        double v = x.data()[i];
        double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        ga.data()[i] += go.data()[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
    throw Error("layer_norm: parameter shape mismatch");
  Matrix xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = xv.row(i).mean();
    double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = xhat;
  y.array().rowwise() *= gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  bool rg = g.requires_grad(x.id()) || g.requires_grad(gamma.id()) || g.requires_grad(beta.id());
  Var out = g.emplace(std::move(y), rg);
  if (rg) {
    g.set_backward(out, [&g, x, gamma, beta, out, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)] {
      const Matrix& go = g.grad(out.id());
      if (g.requires_grad(gamma.id()))
        g.grad(gamma.id()) += (go.array() * xhat.array()).colwise().sum().matrix();
      if (g.requires_grad(beta.id())) g.grad(beta.id()) += go.colwise().sum();
      if (g.requires_grad(x.id())) {
        Matrix& gx = g.grad(x.id());
        const auto gam = gamma.value().row(0).array();
        for (Eigen::Index i = 0; i < go.rows(); ++i) {
          Eigen::ArrayXd dxhat = (go.row(i).array() * gam).transpose();
          Eigen::ArrayXd xh = xhat.row(i).array().transpose();
          double m1 = dxhat.mean();
          double m2 = (dxhat * xh).mean();
          gx.row(i).array() += (inv_std(i) * (dxhat - m1 - xh * m2)).transpose();
        }
      }
    });
  }
  return out;
}

Var softmax_rows(Var a) {
  Graph& g = *a.graph();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  Var out = g.emplace(std::move(y), g.requires_grad(a.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, out] {
      const Matrix& yv = out.value();
      const Matrix& go = g.grad(out.id());
      Matrix& ga = g.grad(a.id());
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        double dot = go.row(i).dot(yv.row(i));
        ga.row(i).array() += yv.row(i).array() * (go.row(i).array() - dot);
      }
    });
  }
  return out;
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Graph& g = *a.graph();
  if (start < 0 || count <= 0 || start + count > a.cols()) throw Error("slice_cols: out of range");
  Var out = g.emplace(a.value().middleCols(start, count), g.requires_grad(a.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, out, start, count] {
      g.grad(a.id()).middleCols(start, count) += g.grad(out.id());
    });
  }
  return out;
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  Graph& g = *parts[0].graph();
  Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    same_graph(parts[0], p);
    if (p.rows() != rows) throw Error("concat_cols: row mismatch");
    cols += p.cols();
    rg = rg || g.requires_grad(p.id());
  }
  Matrix v(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  Var out = g.emplace(std::move(v), rg);
  if (rg) {
    std::vector<Var> ps(parts.begin(), parts.end());
    g.set_backward(out, [&g, ps = std::move(ps), out] {
      const Matrix& go = g.grad(out.id());
      Eigen::Index c = 0;
      for (const Var& p : ps) {
        if (g.requires_grad(p.id())) g.grad(p.id()) += go.middleCols(c, p.cols());
        c += p.cols();
      }
    });
  }
  return out;
}

Var row(Var a, Eigen::Index index) {
  Graph& g = *a.graph();
  if (index < 0 || index >= a.rows()) throw Error("row: index out of range");
  Var out = g.emplace(a.value().row(index), g.requires_grad(a.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, out, index] { g.grad(a.id()).row(index) += g.grad(out.id()); });
  }
  return out;
}

Var gather_rows(Var table, std::span<const int> indices) {
  Graph& g = *table.graph();
  const Matrix& t = table.value();
  Matrix v(static_cast<Eigen::Index>(indices.size()), t.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= t.rows()) throw Error("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = t.row(indices[i]);
  }
  Var out = g.emplace(std::move(v), g.requires_grad(table.id()));
  if (g.requires_grad(out.id())) {
    std::vector<int> idx(indices.begin(), indices.end());
    g.set_backward(out, [&g, table, out, idx = std::move(idx)] {
      const Matrix& go = g.grad(out.id());
      Matrix& gt = g.grad(table.id());
      for (std::size_t i = 0; i < idx.size(); ++i)
        gt.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
    });
  }
  return out;
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw Error("stack_rows: no inputs");
  Graph& g = *rows[0].graph();
  Eigen::Index cols = rows[0].cols();
  bool rg = false;
  for (const Var& r : rows) {
    same_graph(rows[0], r);
    if (r.rows() != 1 || r.cols() != cols) throw Error("stack_rows: shape mismatch");
    rg = rg || g.requires_grad(r.id());
  }
  Matrix v(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = rows[i].value();
  Var out = g.emplace(std::move(v), rg);
  if (rg) {
    std::vector<Var> rs(rows.begin(), rows.end());
    g.set_backward(out, [&g, rs = std::move(rs), out] {
      const Matrix& go = g.grad(out.id());
      for (std::size_t i = 0; i < rs.size(); ++i)
        if (g.requires_grad(rs[i].id())) g.grad(rs[i].id()) += go.row(static_cast<Eigen::Index>(i));
    });
  }
  return out;
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw Error("sum: no inputs");
  Graph& g = *scalars[0].graph();
  double total = 0.0;
  bool rg = false;
  for (const Var& s : scalars) {
    same_graph(scalars[0], s);
    total += s.scalar();
    rg = rg || g.requires_grad(s.id());
  }
  Matrix v(1, 1);
  v(0, 0) = total;
  Var out = g.emplace(std::move(v), rg);
  if (rg) {
    std::vector<Var> ss(scalars.begin(), scalars.end());
    g.set_backward(out, [&g, ss = std::move(ss), out] {
      double go = g.grad(out.id())(0, 0);
      for (const Var& s : ss)
        if (g.requires_grad(s.id())) g.grad(s.id())(0, 0) += go;
    });
  }
  return out;
}

Var mean(std::span<const Var> scalars) {
  return scale(sum(scalars), 1.0 / static_cast<double>(scalars.size()));
}

double cosine_value(const RowVector& a, const RowVector& b) {
  double na = a.norm();
  double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DataError("cosine similarity of a zero-norm vector");
  return a.dot(b) / (na * nb);
}

Var cosine(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (a.rows() != 1 || b.rows() != 1 || a.cols() != b.cols())
    throw Error("cosine: expected two row vectors of equal width");
  RowVector av = a.value().row(0);
  RowVector bv = b.value().row(0);
  double na = av.norm();
  double nb = bv.norm();
  if (na == 0.0 || nb == 0.0) throw DataError("cosine similarity of a zero-norm vector");
  double s = av.dot(bv) / (na * nb);
  Matrix v(1, 1);
  v(0, 0) = s;
  Var out = g.emplace(std::move(v), g.requires_grad(a.id()) || g.requires_grad(b.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, a, b, out, na, nb, s] {
      double go = g.grad(out.id())(0, 0);
      const auto av = a.value().row(0);
      const auto bv = b.value().row(0);
      if (g.requires_grad(a.id()))
        g.grad(a.id()).row(0) += go * (bv / (na * nb) - s * av / (na * na));
      if (g.requires_grad(b.id()))
        g.grad(b.id()).row(0) += go * (av / (na * nb) - s * bv / (nb * nb));
    });
  }
  return out;
}

RowVector softmax(const RowVector& z) {
  RowVector p = (z.array() - z.maxCoeff()).exp().matrix();
  return p / p.sum();
}

double log_sum_exp(const RowVector& z) {
  double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

Var cross_entropy(Var logits, int target) {
  Graph& g = *logits.graph();
  if (logits.rows() != 1) throw Error("cross_entropy: expected a single row of logits");
  if (target < 0 || target >= logits.cols()) throw Error("cross_entropy: target out of range");
  RowVector z = logits.value().row(0);
  double loss = log_sum_exp(z) - z(target);
  Matrix v(1, 1);
  v(0, 0) = loss;
  Var out = g.emplace(std::move(v), g.requires_grad(logits.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, logits, out, target] {
      RowVector p = softmax(logits.value().row(0));
      p(target) -= 1.0;
      g.grad(logits.id()).row(0) += g.grad(out.id())(0, 0) * p;
    });
  }
  return out;
}

Var soft_cross_entropy(Var logits, const RowVector& target, double eps) {
  Graph& g = *logits.graph();
  if (logits.rows() != 1 || logits.cols() != target.size())
    throw Error("soft_cross_entropy: shape mismatch");
  RowVector p = softmax(logits.value().row(0));
  double loss = -(target.array() * (p.array() + eps).log()).sum();
  Matrix v(1, 1);
  v(0, 0) = loss;
  Var out = g.emplace(std::move(v), g.requires_grad(logits.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, logits, out, target, p, eps] {
      // dL/dp_i = -t_i / (p_i + eps); chain through the softmax Jacobian.
      RowVector dp = (-target.array() / (p.array() + eps)).matrix();
      double dot = dp.dot(p);
      RowVector dz = (p.array() * (dp.array() - dot)).matrix();
      g.grad(logits.id()).row(0) += g.grad(out.id())(0, 0) * dz;
    });
  }
  return out;
}

Var bce_with_logits(Var logits, const RowVector& targets) {
  Graph& g = *logits.graph();
  if (logits.rows() != 1 || logits.cols() != targets.size())
    throw Error("bce_with_logits: shape mismatch");
  RowVector z = logits.value().row(0);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    // softplus(z) - t*z, computed stably.
    double zi = z(i);
    double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    loss += softplus - targets(i) * zi;
  }
  Matrix v(1, 1);
  v(0, 0) = loss;
  Var out = g.emplace(std::move(v), g.requires_grad(logits.id()));
  if (g.requires_grad(out.id())) {
    g.set_backward(out, [&g, logits, out, targets] {
      RowVector z = logits.value().row(0);
      RowVector sig = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      g.grad(logits.id()).row(0) += g.grad(out.id())(0, 0) * (sig - targets);
    });
  }
  return out;
}

}  // namespace todpt::ag
