#include "tmpa/tape.hpp"

namespace tmpa {

Value Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::grad(Value v) const {
  const Node& n = node(v.id);
  TMPA_CHECK(n.requires_grad, "grad() queried on a node without requires_grad");
  TMPA_CHECK(!n.grad.empty(), "grad() queried before backward()");
  return n.grad;
}

Value Tape::record(OpKind kind, int tag, Tensor out, std::vector<int> parents,
                   std::function<void(Tape&)> back) {
  Node n;
  n.kind = kind;
  n.tag = tag;
  n.value = std::move(out);
  n.parents = std::move(parents);
  for (int p : n.parents) {
    if (node(p).requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(back);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Value loss) {
  Node& target = nodes_[static_cast<size_t>(loss.id)];
  TMPA_CHECK(target.value.size() == 1, "backward() target must be a scalar");
  // Allocate zero gradients for every node that participates.
  for (auto& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor(n.value.shape());
  }
  if (!target.requires_grad) return;  // nothing upstream of the loss requires grad
  target.grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.requires_grad && n.backward) n.backward(*this);
  }
}

int Tape::op_count(OpKind kind, int tag) const {
  int c = 0;
  for (const auto& n : nodes_) {
    if (n.kind == kind && (tag < 0 || n.tag == tag)) ++c;
  }
  return c;
}

}  // namespace tmpa
