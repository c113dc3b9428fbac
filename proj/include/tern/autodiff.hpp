#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tern/rng.hpp"
#include "tern/tensor.hpp"

namespace tern {

// A named trainable tensor. Gradients are accumulated by Graph::backward and
// cleared explicitly by the caller (ParamStore::zero_grads).
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string name_in, Tensor value_in)
      : name(std::move(name_in)), value(std::move(value_in)) {
    grad = Tensor::zeros(value.shape);
  }
};

// Owns a model's parameters. Names are unique hierarchical paths; creation
// order is fixed by construction and drives seeded initialization, so it is
// part of the determinism contract.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Tensor init);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  size_t size() const { return params_.size(); }
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Eager reverse-mode tape. Every op computes its value immediately and
// records a closure that routes the node's gradient to its parents. Reverse
// creation order is a valid topological order, so backward() is one sweep.
//
// A parameter gets one node per graph (memoized), so shared weights used by
// several subgraphs accumulate their gradient additively by construction.
class Graph {
 public:
  using NodeId = int;

  explicit Graph(Precision precision = Precision::f64, bool training = false,
                 Rng* dropout_rng = nullptr)
      : precision_(precision), training_(training), rng_(dropout_rng) {}

  NodeId constant(Tensor value);
  NodeId param(Parameter& p);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId a, double c);
  NodeId add_row(NodeId m, NodeId row);  // broadcast a 1 x c row over m's rows
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId relu(NodeId a);

  // Row-wise softmax with optional column masking. Masked columns get a
  // -1e9 additive offset before the max-subtracted softmax, which drives
  // their weight to exact zero. A row with no valid column -> ArgumentError.
  NodeId softmax_rows(NodeId a, const std::vector<uint8_t>* valid_cols = nullptr);

  NodeId layer_norm_rows(NodeId x, NodeId gain, NodeId bias, double eps);
  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId concat_rows(std::span<const NodeId> parts);
  NodeId select_row(NodeId m, int row);
  NodeId gather_rows(NodeId table, std::vector<int> ids);
  NodeId l2_normalize_rows(NodeId m);  // zero-norm row -> ArgumentError
  NodeId sum_all(NodeId a);            // -> 1 x 1

  // Inverted dropout. Identity when not in training mode or rate == 0.
  NodeId dropout(NodeId a, double rate);

  // Escape hatch for ops defined outside this class (e.g. ranking losses).
  // `backward` receives the graph and the node's own id; it reads grad(self)
  // and calls accumulate_grad on the parents.
  NodeId make_node(Tensor value, std::vector<NodeId> parents,
                   std::function<void(Graph&, NodeId)> backward);

  // Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse, then adds each
  // parameter node's gradient into its Parameter. `loss` must be scalar and
  // finite.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }
  void accumulate_grad(NodeId id, const Tensor& g);

  bool training() const { return training_; }
  Precision precision() const { return precision_; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> parents;
    std::function<void(Graph&, NodeId)> backward;
    Parameter* bound = nullptr;
  };

  NodeId push(Tensor value, std::vector<NodeId> parents,
              std::function<void(Graph&, NodeId)> backward, Parameter* bound = nullptr);
  const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> param_nodes_;
  Precision precision_;
  bool training_;
  Rng* rng_;
};

}  // namespace tern
