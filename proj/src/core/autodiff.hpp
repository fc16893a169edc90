#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "core/tensor.hpp"

namespace rankseg {

// Reverse-mode autodiff over Tensor. Graphs are built define-by-run; leaves
// created with parameter() persist across steps and accumulate gradients
// until the optimizer clears them.
struct Node {
  Tensor val;
  Tensor grad;  // allocated on first backward touch
  bool needs_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backprop;  // adds into inputs' grads

  void ensure_grad() {
    if (!grad_ready) {
      grad = Tensor(val.dims());
      grad_ready = true;
    }
  }
  void zero_grad() {
    if (grad_ready) grad.fill(0.0);
  }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor t);
Var parameter(Tensor t);

// Disables gradient bookkeeping for the enclosed scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// x:[Cin,H,W], w:[Cout,Cin,kh,kw], b:[Cout] (pass nullptr for no bias).
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var instance_norm(Var x, Var gamma, Var beta, double eps);
Var leaky_relu(Var x, double slope);
// Per spatial location (h,w): y[:,h,w] = x[:,h,w] / (||x[:,h,w]|| + eps).
Var l2_normalize_columns(Var x, double eps);
Var resize_bilinear(Var x, int out_h, int out_w);
Var matmul(Var a, Var b);  // [m,k]x[k,n]
Var reshape(Var x, std::vector<int> dims);
// [P,H,W] -> [HW,H0,W0] with P = H0*W0; out(p,y0,x0) = in(y0*W0+x0, p/W, p%W).
Var swap_channel_spatial(Var x, int h0, int w0);
Var scale_channels(Var x, Var s);       // x:[C,H,W] * s:[C]
Var channel_spatial_max(Var x);         // [C,H,W] -> [C]
Var max_over_channels(Var x);           // [C,H,W] -> [1,H,W]
Var gather_pad_channels(Var x, std::vector<int> idx, int target_channels);
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(Var x, int from, int count);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double k);
Var add_n(const std::vector<Var>& xs);
Var mean_all(Var x);  // -> [1]
// Numerically stable mean BCE; target is a constant. Throws NumericError on
// non-finite logits.
Var bce_with_logits(Var logits, const Tensor& target);

// Topological reverse pass from a scalar root (seeds grad = 1).
void backward(const Var& root);

// Plain-tensor helpers shared with oracle-free call sites.
Tensor resize_bilinear_tensor(const Tensor& x, int out_h, int out_w);
Tensor resize_nearest_tensor(const Tensor& x, int out_h, int out_w);

}  // namespace rankseg
