#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "tmpa/tensor.hpp"

namespace tmpa {

enum class OpKind {
  leaf,
  conv2d,
  matmul,
  bmm,
  transpose_last2,
  softmax,
  batch_norm,
  cross_entropy,
  l2_distance,
  pairwise_l2,
  relu,
  add,
  sub,
  mul,
  scale,
  add_const,
  sum,
  global_avg_pool,
  concat_batch,
  concat_channels,
  slice_batch,
  reshape,
  nchw_to_nlc,
  nlc_to_nchw,
  add_bias,
  group_mean,
  hinge_sum,
  wrt_loss,
};

// Handle to a node on a Tape. Cheap to copy; only meaningful together with
// the tape that produced it.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Records the forward computation in issue order (which is topological by
// construction) and replays it once, in reverse, on backward(). A tape and
// the values on it belong to one thread at a time.
class Tape {
 public:
  Value leaf(Tensor value, bool requires_grad = false);

  const Tensor& val(Value v) const { return node(v.id).value; }
  bool requires_grad(Value v) const { return node(v.id).requires_grad; }

  // Gradient of the last backward() target w.r.t. v. Only valid for nodes
  // with requires_grad after backward() ran.
  const Tensor& grad(Value v) const;

  void backward(Value loss);

  size_t num_nodes() const { return nodes_.size(); }
  // Number of recorded ops of a kind; tag filters further (conv2d: kernel size).
  int op_count(OpKind kind, int tag = -1) const;

  // --- used by op implementations ---
  Value record(OpKind kind, int tag, Tensor out, std::vector<int> parents,
               std::function<void(Tape&)> back);
  Tensor& grad_buf(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  const Tensor& value_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool node_requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

 private:
  struct Node {
    OpKind kind;
    int tag = 0;
    Tensor value;
    Tensor grad;  // allocated during backward for requires_grad nodes
    bool requires_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&)> backward;
  };

  const Node& node(int id) const {
    TMPA_CHECK(id >= 0 && id < static_cast<int>(nodes_.size()), "invalid tape handle");
    return nodes_[static_cast<size_t>(id)];
  }

  std::deque<Node> nodes_;
};

}  // namespace tmpa
