#include "composer/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace composer {

void sgd_step(ParamStore& params, double lr) {
  if (!(lr > 0.0)) throw ConfigError("sgd_step: learning rate must be positive");
  for (auto& [id, e] : params.entries()) {
    for (size_t i = 0; i < e.value.data.size(); ++i) e.value.data[i] += lr * e.grad.data[i];
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }
}

ValueId Tape::constant(Tensor v) {
  Node n;
  n.owned = std::move(v);
  return push(std::move(n));
}

ValueId Tape::param(ParamStore& ps, const std::string& id) {
  auto key = std::make_pair(static_cast<const ParamStore*>(&ps), id);
  auto it = param_memo_.find(key);
  if (it != param_memo_.end()) return it->second;
  Node n;
  n.view = &ps.entry(id).value;
  n.requires_grad = true;
  n.store = &ps;
  n.param_id = id;
  ValueId vid = push(std::move(n));
  param_nodes_.push_back(vid);
  param_memo_.emplace(key, vid);
  return vid;
}

Tensor& Tape::grad_ref(ValueId id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value().shape);
  return n.grad;
}

Tensor Tape::grad(ValueId id) const {
  const Node& n = nodes_[id];
  if (n.grad.data.empty()) return Tensor::zeros(n.value().shape);
  return n.grad;
}

void Tape::clear_grads() {
  for (Node& n : nodes_)
    if (!n.grad.data.empty()) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
}

void Tape::sweep(ValueId from) {
  for (ValueId id = from; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.data.empty()) continue;
    if (n.back) n.back(*this, n);
  }
}

void Tape::flush_to_stores() {
  for (ValueId id : param_nodes_) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) continue;
    Tensor& g = n.store->entry(n.param_id).grad;
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
  }
}

void Tape::backward(ValueId root, double seed) { backward(root, Tensor::scalar(seed)); }

void Tape::backward(ValueId root, const Tensor& seed) {
  if (root < 0 || root >= static_cast<ValueId>(nodes_.size()))
    throw UsageError("backward: invalid root");
  if (!nodes_[root].value().same_shape(seed)) throw UsageError("backward: seed shape mismatch");
  clear_grads();
  Tensor& g = grad_ref(root);
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += seed.data[i];
  sweep(root);
  flush_to_stores();
}

void Tape::backward_collect(const std::vector<std::pair<ValueId, Tensor>>& seeds) {
  if (seeds.empty()) throw UsageError("backward_collect: no seeds");
  clear_grads();
  ValueId top = 0;
  for (const auto& [id, seed] : seeds) {
    if (id < 0 || id >= static_cast<ValueId>(nodes_.size()))
      throw UsageError("backward_collect: invalid seed node");
    if (!nodes_[id].value().same_shape(seed))
      throw UsageError("backward_collect: seed shape mismatch");
    Tensor& g = grad_ref(id);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += seed.data[i];
    top = std::max(top, id);
  }
  sweep(top);
}

std::vector<Tape::ParamGrad> Tape::param_grads() {
  std::vector<ParamGrad> out;
  out.reserve(param_nodes_.size());
  for (ValueId id : param_nodes_) {
    Node& n = nodes_[id];
    out.push_back({n.store, n.param_id, n.grad.data.empty() ? nullptr : &n.grad});
  }
  return out;
}

// ---- ops --------------------------------------------------------------------

namespace {
bool any_rg(const Tape& t, const std::vector<ValueId>& ids) {
  for (ValueId id : ids)
    if (t.requires_grad(id)) return true;
  return false;
}
}  // namespace

ValueId affine(Tape& t, ValueId x, ValueId W, ValueId b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(W);
  const Tensor& bv = t.value(b);
  if (wv.ndim() != 2 || bv.ndim() != 1 || bv.shape[0] != wv.shape[1])
    throw ConfigError("affine: W must be [in,out] and b [out]");
  const int in = wv.shape[0], out = wv.shape[1];
  const bool batched = xv.ndim() == 2;
  const int rows = batched ? xv.shape[0] : 1;
  const int xin = batched ? xv.shape[1] : (xv.ndim() == 1 ? xv.shape[0] : -1);
  if (xin != in) throw ConfigError("affine: x has width " + std::to_string(xin) +
                                   ", W expects " + std::to_string(in));

  Tensor outv = batched ? Tensor::zeros({rows, out}) : Tensor::zeros({out});
  for (int r = 0; r < rows; ++r) {
    const double* xr = xv.data.data() + static_cast<size_t>(r) * in;
    double* orow = outv.data.data() + static_cast<size_t>(r) * out;
    for (int o = 0; o < out; ++o) orow[o] = bv.data[o];
    for (int k = 0; k < in; ++k) {
      const double xk = xr[k];
      const double* wrow = wv.data.data() + static_cast<size_t>(k) * out;
      for (int o = 0; o < out; ++o) orow[o] += xk * wrow[o];
    }
  }

  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = any_rg(t, {x, W, b});
  if (n.requires_grad) {
    n.back = [x, W, b, in, out, rows](Tape& tp, Tape::Node& self) {
      const Tensor& go = self.grad;
      const Tensor& xv2 = tp.value(x);
      const Tensor& wv2 = tp.value(W);
      const bool need_x = tp.requires_grad(x);
      const bool need_w = tp.requires_grad(W);
      const bool need_b = tp.requires_grad(b);
      Tensor* gx = need_x ? &tp.grad_ref(x) : nullptr;
      Tensor* gw = need_w ? &tp.grad_ref(W) : nullptr;
      Tensor* gb = need_b ? &tp.grad_ref(b) : nullptr;
      for (int r = 0; r < rows; ++r) {
        const double* gor = go.data.data() + static_cast<size_t>(r) * out;
        const double* xr = xv2.data.data() + static_cast<size_t>(r) * in;
        if (gb)
          for (int o = 0; o < out; ++o) gb->data[o] += gor[o];
        if (gw) {
          for (int k = 0; k < in; ++k) {
            double* gwrow = gw->data.data() + static_cast<size_t>(k) * out;
            const double xk = xr[k];
            for (int o = 0; o < out; ++o) gwrow[o] += xk * gor[o];
          }
        }
        if (gx) {
          double* gxr = gx->data.data() + static_cast<size_t>(r) * in;
          for (int k = 0; k < in; ++k) {
            const double* wrow = wv2.data.data() + static_cast<size_t>(k) * out;
            double acc = 0.0;
            for (int o = 0; o < out; ++o) acc += gor[o] * wrow[o];
            gxr[k] += acc;
          }
        }
      }
    };
  }
  return t.push(std::move(n));
}

ValueId relu(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  Tensor outv = xv;
  for (double& v : outv.data) v = v > 0.0 ? v : 0.0;
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    n.back = [x](Tape& tp, Tape::Node& self) {
      const Tensor& xv2 = tp.value(x);
      Tensor& gx = tp.grad_ref(x);
      for (size_t i = 0; i < gx.data.size(); ++i)
        if (xv2.data[i] > 0.0) gx.data[i] += self.grad.data[i];
    };
  }
  return t.push(std::move(n));
}

ValueId tanh_op(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  Tensor outv = xv;
  for (double& v : outv.data) v = std::tanh(v);
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    n.back = [x](Tape& tp, Tape::Node& self) {
      Tensor& gx = tp.grad_ref(x);
      const Tensor& y = self.value();
      for (size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] += self.grad.data[i] * (1.0 - y.data[i] * y.data[i]);
    };
  }
  return t.push(std::move(n));
}

namespace {
void softmax_row(const double* in, double* out, int k) {
  double mx = in[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, in[i]);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  for (int i = 0; i < k; ++i) out[i] /= sum;
}
}  // namespace

ValueId softmax(Tape& t, ValueId logits) {
  const Tensor& xv = t.value(logits);
  const bool batched = xv.ndim() == 2;
  const int k = batched ? xv.shape[1] : xv.shape[0];
  const int rows = batched ? xv.shape[0] : 1;
  if (k < 1) throw ConfigError("softmax: needs k >= 1");
  Tensor outv = Tensor::zeros(xv.shape);
  for (int r = 0; r < rows; ++r)
    softmax_row(xv.data.data() + static_cast<size_t>(r) * k,
                outv.data.data() + static_cast<size_t>(r) * k, k);
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(logits);
  if (n.requires_grad) {
    n.back = [logits, rows, k](Tape& tp, Tape::Node& self) {
      Tensor& gx = tp.grad_ref(logits);
      const Tensor& p = self.value();
      for (int r = 0; r < rows; ++r) {
        const double* pr = p.data.data() + static_cast<size_t>(r) * k;
        const double* gr = self.grad.data.data() + static_cast<size_t>(r) * k;
        double dot = 0.0;
        for (int i = 0; i < k; ++i) dot += pr[i] * gr[i];
        double* gxr = gx.data.data() + static_cast<size_t>(r) * k;
        for (int i = 0; i < k; ++i) gxr[i] += pr[i] * (gr[i] - dot);
      }
    };
  }
  return t.push(std::move(n));
}

namespace {
// log softmax(logits)[label] for one row; fills probs (len k) as a side product.
double log_softmax_at(const double* logits, int k, int label, std::vector<double>& probs) {
  double mx = logits[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  probs.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < k; ++i) probs[i] /= sum;
  return logits[label] - mx - std::log(sum);
}
}  // namespace

ValueId log_likelihood(Tape& t, ValueId logits, const std::vector<int>& labels) {
  const Tensor& xv = t.value(logits);
  const bool batched = xv.ndim() == 2;
  const int k = batched ? xv.shape[1] : xv.shape[0];
  const int rows = batched ? xv.shape[0] : 1;
  if (static_cast<int>(labels.size()) != rows)
    throw UsageError("log_likelihood: one label per row required");
  for (int lab : labels)
    if (lab < 0 || lab >= k)
      throw DataError("log_likelihood: label " + std::to_string(lab) + " out of range [0," +
                      std::to_string(k) + ")");
  Tensor outv = batched ? Tensor::zeros({rows}) : Tensor::zeros({1});
  std::vector<double> scratch;
  for (int r = 0; r < rows; ++r)
    outv.data[r] = log_softmax_at(xv.data.data() + static_cast<size_t>(r) * k, k, labels[r], scratch);
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(logits);
  if (n.requires_grad) {
    auto labs = labels;
    n.back = [logits, rows, k, labs](Tape& tp, Tape::Node& self) {
      Tensor& gx = tp.grad_ref(logits);
      const Tensor& xv2 = tp.value(logits);
      std::vector<double> probs;
      for (int r = 0; r < rows; ++r) {
        log_softmax_at(xv2.data.data() + static_cast<size_t>(r) * k, k, labs[r], probs);
        const double go = self.grad.data[r];
        double* gxr = gx.data.data() + static_cast<size_t>(r) * k;
        for (int i = 0; i < k; ++i) gxr[i] += go * ((i == labs[r] ? 1.0 : 0.0) - probs[i]);
      }
    };
  }
  return t.push(std::move(n));
}

ValueId log_softmax_pick(Tape& t, ValueId logits, int index) {
  const Tensor& xv = t.value(logits);
  if (xv.ndim() != 1) throw UsageError("log_softmax_pick: expects a vector of logits");
  return log_likelihood(t, logits, {index});
}

ValueId pick(Tape& t, ValueId vec, int index) {
  const Tensor& xv = t.value(vec);
  if (xv.ndim() != 1 || index < 0 || index >= xv.shape[0])
    throw UsageError("pick: index out of range");
  Tape::Node n;
  n.owned = Tensor::scalar(xv.data[index]);
  n.requires_grad = t.requires_grad(vec);
  if (n.requires_grad) {
    n.back = [vec, index](Tape& tp, Tape::Node& self) {
      tp.grad_ref(vec).data[index] += self.grad.data[0];
    };
  }
  return t.push(std::move(n));
}

ValueId add(Tape& t, ValueId a, ValueId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw UsageError("add: shape mismatch");
  Tensor outv = av;
  for (size_t i = 0; i < outv.data.size(); ++i) outv.data[i] += bv.data[i];
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = any_rg(t, {a, b});
  if (n.requires_grad) {
    n.back = [a, b](Tape& tp, Tape::Node& self) {
      for (ValueId src : {a, b}) {
        if (!tp.requires_grad(src)) continue;
        Tensor& g = tp.grad_ref(src);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += self.grad.data[i];
      }
    };
  }
  return t.push(std::move(n));
}

ValueId mul(Tape& t, ValueId a, ValueId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw UsageError("mul: shape mismatch");
  Tensor outv = av;
  for (size_t i = 0; i < outv.data.size(); ++i) outv.data[i] *= bv.data[i];
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = any_rg(t, {a, b});
  if (n.requires_grad) {
    n.back = [a, b](Tape& tp, Tape::Node& self) {
      const Tensor& av2 = tp.value(a);
      const Tensor& bv2 = tp.value(b);
      if (tp.requires_grad(a)) {
        Tensor& ga = tp.grad_ref(a);
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self.grad.data[i] * bv2.data[i];
      }
      if (tp.requires_grad(b)) {
        Tensor& gb = tp.grad_ref(b);
        for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += self.grad.data[i] * av2.data[i];
      }
    };
  }
  return t.push(std::move(n));
}

ValueId exp_op(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  Tensor outv = xv;
  for (double& v : outv.data) v = std::exp(v);
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    n.back = [x](Tape& tp, Tape::Node& self) {
      Tensor& gx = tp.grad_ref(x);
      const Tensor& y = self.value();
      for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += self.grad.data[i] * y.data[i];
    };
  }
  return t.push(std::move(n));
}

ValueId affine_scalar(Tape& t, ValueId x, double m, double c) {
  const Tensor& xv = t.value(x);
  Tensor outv = xv;
  for (double& v : outv.data) v = m * v + c;
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    n.back = [x, m](Tape& tp, Tape::Node& self) {
      Tensor& gx = tp.grad_ref(x);
      for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += self.grad.data[i] * m;
    };
  }
  return t.push(std::move(n));
}

ValueId sum_all(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.data) s += v;
  Tape::Node n;
  n.owned = Tensor::scalar(s);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    n.back = [x](Tape& tp, Tape::Node& self) {
      Tensor& gx = tp.grad_ref(x);
      for (double& g : gx.data) g += self.grad.data[0];
    };
  }
  return t.push(std::move(n));
}

ValueId sum_squares(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.data) s += v * v;
  Tape::Node n;
  n.owned = Tensor::scalar(s);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    n.back = [x](Tape& tp, Tape::Node& self) {
      Tensor& gx = tp.grad_ref(x);
      const Tensor& xv2 = tp.value(x);
      for (size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] += 2.0 * xv2.data[i] * self.grad.data[0];
    };
  }
  return t.push(std::move(n));
}

namespace {
ValueId stack_reduce(Tape& t, const std::vector<ValueId>& xs, double scale) {
  if (xs.empty()) throw UsageError("stack reduce: empty input");
  const Tensor& first = t.value(xs[0]);
  Tensor outv = Tensor::zeros(first.shape);
  for (ValueId id : xs) {
    const Tensor& v = t.value(id);
    if (!v.same_shape(first)) throw UsageError("stack reduce: shape mismatch");
    for (size_t i = 0; i < outv.data.size(); ++i) outv.data[i] += v.data[i];
  }
  for (double& v : outv.data) v *= scale;
  bool rg = false;
  for (ValueId id : xs) rg = rg || t.requires_grad(id);
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = rg;
  if (rg) {
    auto inputs = xs;
    n.back = [inputs, scale](Tape& tp, Tape::Node& self) {
      for (ValueId src : inputs) {
        if (!tp.requires_grad(src)) continue;
        Tensor& g = tp.grad_ref(src);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += self.grad.data[i] * scale;
      }
    };
  }
  return t.push(std::move(n));
}
}  // namespace

ValueId add_stack(Tape& t, const std::vector<ValueId>& xs) { return stack_reduce(t, xs, 1.0); }

ValueId mean_stack(Tape& t, const std::vector<ValueId>& xs) {
  return stack_reduce(t, xs, 1.0 / static_cast<double>(xs.size()));
}

ValueId concat(Tape& t, const std::vector<ValueId>& xs) {
  if (xs.empty()) throw UsageError("concat: empty input");
  int total = 0;
  for (ValueId id : xs) {
    const Tensor& v = t.value(id);
    if (v.ndim() != 1) throw UsageError("concat: 1-D inputs only");
    total += v.shape[0];
  }
  Tensor outv = Tensor::zeros({total});
  int off = 0;
  for (ValueId id : xs) {
    const Tensor& v = t.value(id);
    std::copy(v.data.begin(), v.data.end(), outv.data.begin() + off);
    off += v.shape[0];
  }
  bool rg = false;
  for (ValueId id : xs) rg = rg || t.requires_grad(id);
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = rg;
  if (rg) {
    auto inputs = xs;
    n.back = [inputs](Tape& tp, Tape::Node& self) {
      int off2 = 0;
      for (ValueId src : inputs) {
        const int len = tp.value(src).shape[0];
        if (tp.requires_grad(src)) {
          Tensor& g = tp.grad_ref(src);
          for (int i = 0; i < len; ++i) g.data[i] += self.grad.data[off2 + i];
        }
        off2 += len;
      }
    };
  }
  return t.push(std::move(n));
}

ValueId pad_to(Tape& t, ValueId x, int width) {
  const Tensor& xv = t.value(x);
  if (xv.ndim() != 1 || xv.shape[0] > width) throw UsageError("pad_to: bad width");
  if (xv.shape[0] == width) return x;
  Tensor outv = Tensor::zeros({width});
  std::copy(xv.data.begin(), xv.data.end(), outv.data.begin());
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    const int len = xv.shape[0];
    n.back = [x, len](Tape& tp, Tape::Node& self) {
      Tensor& g = tp.grad_ref(x);
      for (int i = 0; i < len; ++i) g.data[i] += self.grad.data[i];
    };
  }
  return t.push(std::move(n));
}

ValueId avg_pool2d(Tape& t, ValueId x, int rows, int cols, int out_rows, int out_cols) {
  const Tensor& xv = t.value(x);
  if (xv.numel() != static_cast<int64_t>(rows) * cols)
    throw ConfigError("avg_pool2d: input size does not match rows*cols");
  if (out_rows <= 0 || out_cols <= 0 || rows % out_rows != 0 || cols % out_cols != 0)
    throw ConfigError("avg_pool2d: pool shape must evenly divide the input");
  const int br = rows / out_rows, bc = cols / out_cols;
  const double inv = 1.0 / (static_cast<double>(br) * bc);
  Tensor outv = Tensor::zeros({out_rows * out_cols});
  for (int pr = 0; pr < out_rows; ++pr)
    for (int pc = 0; pc < out_cols; ++pc) {
      double acc = 0.0;
      for (int r = pr * br; r < (pr + 1) * br; ++r)
        for (int c = pc * bc; c < (pc + 1) * bc; ++c)
          acc += xv.data[static_cast<size_t>(r) * cols + c];
      outv.data[static_cast<size_t>(pr) * out_cols + pc] = acc * inv;
    }
  Tape::Node n;
  n.owned = std::move(outv);
  n.requires_grad = t.requires_grad(x);
  if (n.requires_grad) {
    n.back = [x, cols, out_rows, out_cols, br, bc, inv](Tape& tp, Tape::Node& self) {
      Tensor& g = tp.grad_ref(x);
      for (int pr = 0; pr < out_rows; ++pr)
        for (int pc = 0; pc < out_cols; ++pc) {
          const double go = self.grad.data[static_cast<size_t>(pr) * out_cols + pc] * inv;
          for (int r = pr * br; r < (pr + 1) * br; ++r)
            for (int c = pc * bc; c < (pc + 1) * bc; ++c)
              g.data[static_cast<size_t>(r) * cols + c] += go;
        }
    };
  }
  return t.push(std::move(n));
}

double finite_diff_check(ParamStore& params, const std::function<double(bool)>& loss, double h) {
  params.zero_grads();
  loss(true);
  std::map<std::string, Tensor> analytic;
  for (const auto& [id, e] : params.entries()) analytic.emplace(id, e.grad);

  double max_rel = 0.0;
  for (auto& [id, e] : params.entries()) {
    for (size_t i = 0; i < e.value.data.size(); ++i) {
      const double saved = e.value.data[i];
      e.value.data[i] = saved + h;
      const double fp = loss(false);
      e.value.data[i] = saved - h;
      const double fm = loss(false);
      e.value.data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic.at(id).data[i];
      const double rel = std::fabs(an - fd) / (std::fabs(an) + std::fabs(fd) + 1e-12);
      max_rel = std::max(max_rel, rel);
    }
  }
  params.zero_grads();
  return max_rel;
}

}  // namespace composer
