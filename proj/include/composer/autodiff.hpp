#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "composer/tensor.hpp"

namespace composer {

/// Named parameters, each paired with a same-shape gradient accumulator.
/// Iteration order is sorted by id (std::map), which fixes checkpoint layout.
class ParamStore {
public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  Tensor& create(const std::string& id, Tensor init) {
    if (entries_.count(id)) throw UsageError("duplicate parameter id: " + id);
    Entry e;
    e.grad = Tensor::zeros(init.shape);
    e.value = std::move(init);
    return entries_.emplace(id, std::move(e)).first->second.value;
  }

  bool has(const std::string& id) const { return entries_.count(id) != 0; }

  Entry& entry(const std::string& id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw UsageError("unknown parameter id: " + id);
    return it->second;
  }
  const Entry& entry(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw UsageError("unknown parameter id: " + id);
    return it->second;
  }

  void zero_grads() {
    for (auto& [id, e] : entries_)
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& [id, e] : entries_) n += e.value.numel();
    return n;
  }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

private:
  std::map<std::string, Entry> entries_;
};

/// One gradient-ascent step: value += lr * grad, then gradients are zeroed.
/// Ascent (not descent) because the trainer maximizes reward.
void sgd_step(ParamStore& params, double lr);

using ValueId = int;

/// Record of a forward pass, replayable in reverse for adjoints.
/// Values of parameter leaves are non-owning views into the ParamStore, so
/// leasing a large weight matrix onto a tape costs nothing.
class Tape {
public:
  ValueId constant(Tensor v);
  ValueId param(ParamStore& ps, const std::string& id);  // memoized per (store,id)

  const Tensor& value(ValueId id) const { return nodes_[id].value(); }
  bool requires_grad(ValueId id) const { return nodes_[id].requires_grad; }

  /// Gradient of a node after backward(); zeros-shaped if the node was never reached.
  Tensor grad(ValueId id) const;

  /// Reverse sweep from a scalar root seeded with `seed`; accumulates (+=) into
  /// every leased ParamStore's gradients. May be called repeatedly; each call
  /// adds its full contribution again.
  void backward(ValueId root, double seed = 1.0);
  void backward(ValueId root, const Tensor& seed);

  /// Reverse sweep from several seeded nodes at once, without touching any
  /// ParamStore. Afterwards param_grads() exposes the per-parameter adjoints.
  void backward_collect(const std::vector<std::pair<ValueId, Tensor>>& seeds);

  struct ParamGrad {
    ParamStore* store;
    std::string id;
    const Tensor* grad;  // null if the parameter was not reached
  };
  std::vector<ParamGrad> param_grads();

  size_t size() const { return nodes_.size(); }

  // ---- op-implementation surface ----
  struct Node {
    Tensor owned;
    const Tensor* view = nullptr;  // set for param leaves
    Tensor grad;                   // empty until first needed
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> back;  // null for leaves
    ParamStore* store = nullptr;
    std::string param_id;

    const Tensor& value() const { return view ? *view : owned; }
  };

  ValueId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
  }
  Tensor& grad_ref(ValueId id);  // lazily allocates zeros

private:
  void clear_grads();
  void sweep(ValueId from);
  void flush_to_stores();

  std::vector<Node> nodes_;
  std::vector<ValueId> param_nodes_;
  std::map<std::pair<const ParamStore*, std::string>, ValueId> param_memo_;
};

// ---- primitive operations -------------------------------------------------
// All record onto the tape and propagate requires_grad from their inputs.

/// x[in] -> [out] or x[batch,in] -> [batch,out]: x.W + b.
ValueId affine(Tape& t, ValueId x, ValueId W, ValueId b);
/// Elementwise max(0, x); derivative at exactly 0 is 0.
ValueId relu(Tape& t, ValueId x);
ValueId tanh_op(Tape& t, ValueId x);
/// Row-wise (or whole-vector) softmax with max-subtraction.
ValueId softmax(Tape& t, ValueId logits);
/// Per-row log softmax probability of the true label; [k]+1 label -> [1], [b,k] -> [b].
ValueId log_likelihood(Tape& t, ValueId logits, const std::vector<int>& labels);
/// ln softmax(logits)[index] for a vector of logits; numerically log-space.
ValueId log_softmax_pick(Tape& t, ValueId logits, int index);
ValueId pick(Tape& t, ValueId vec, int index);
ValueId add(Tape& t, ValueId a, ValueId b);
ValueId mul(Tape& t, ValueId a, ValueId b);  // elementwise, same shape
ValueId exp_op(Tape& t, ValueId x);
/// Elementwise m*x + c.
ValueId affine_scalar(Tape& t, ValueId x, double m, double c);
ValueId sum_all(Tape& t, ValueId x);     // -> [1]
ValueId sum_squares(Tape& t, ValueId x); // -> [1]
ValueId add_stack(Tape& t, const std::vector<ValueId>& xs);   // same-shape sum
ValueId mean_stack(Tape& t, const std::vector<ValueId>& xs);  // same-shape mean
ValueId concat(Tape& t, const std::vector<ValueId>& xs);      // 1-D concat
ValueId pad_to(Tape& t, ValueId x, int width);                // zero-pad 1-D
/// Block-average pooling of a [rows*cols] vector down to [out_rows*out_cols].
ValueId avg_pool2d(Tape& t, ValueId x, int rows, int cols, int out_rows, int out_cols);

/// Max over parameters of |analytic - central difference| / (|analytic| + |fd| + 1e-12).
/// `loss(true)` must zero grads, run a taped forward+backward and return the loss;
/// `loss(false)` must return the loss without touching gradients.
double finite_diff_check(ParamStore& params, const std::function<double(bool)>& loss, double h);

}  // namespace composer
