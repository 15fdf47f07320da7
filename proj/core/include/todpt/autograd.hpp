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

#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "todpt/common.hpp"

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Graph is a tape built during a forward pass; backward() walks it
// in reverse and accumulates gradients into the Parameters it touched.
namespace todpt::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // empty until the first backward pass touches it
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

double standard_normal(Rng& rng);

// Named parameters, iterated in lexicographic name order. References stay
// valid across insertions.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter& create_normal(const std::string& name, Eigen::Index rows,
                           Eigen::Index cols, double stddev, Rng& rng);
  Parameter& create_constant(const std::string& name, Eigen::Index rows,
                             Eigen::Index cols, double value);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  void erase_prefix(const std::string& prefix);

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  bool all_finite() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var scalar_constant(double v);
  // Leaf bound to a parameter. The value is referenced, not copied, so the
  // parameter must outlive the graph and stay unmodified until backward().
  Var param(Parameter& p);

  // Accumulates d(root)/d(parameter) into every trainable parameter reached.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Parameter* parameter = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };
  Var emplace(Matrix value, bool requires_grad);
  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  Matrix& grad(int id);
  void set_backward(Var v, std::function<void()> fn);

 private:
  std::vector<Node> nodes_;
  std::map<const Parameter*, int> param_leaves_;
};

// Ops. All operands must belong to the same graph.
Var matmul(Var a, Var b);
Var matmul_transposed(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1xC row over every row of a
Var scale(Var a, double s);
Var gelu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var a);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var row(Var a, Eigen::Index index);
Var gather_rows(Var table, std::span<const int> indices);
Var stack_rows(std::span<const Var> rows);
Var sum(std::span<const Var> scalars);
Var mean(std::span<const Var> scalars);

// Row-vector similarity, 1x1. Throws DataError when either norm is zero.
Var cosine(Var a, Var b);
double cosine_value(const RowVector& a, const RowVector& b);

// Losses over a 1xC row of logits. Each returns a 1x1 node.
Var cross_entropy(Var logits, int target);
Var soft_cross_entropy(Var logits, const RowVector& target, double eps);
Var bce_with_logits(Var logits, const RowVector& targets);

RowVector softmax(const RowVector& z);
double log_sum_exp(const RowVector& z);

}  // namespace todpt::ag
