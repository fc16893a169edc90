#include "core/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "core/errors.hpp"

namespace rankseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

bool g_grad_enabled = true;

Var make_node(Tensor val, std::vector<Var> inputs) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in && in->needs_grad) {
        n->needs_grad = true;
        break;
      }
    }
  }
  n->inputs = std::move(inputs);
  return n;
}

void check_dims(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("shape mismatch in ") + what);
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->needs_grad = false;
  return n;
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->needs_grad = true;
  return n;
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  check_dims(x->val.rank() == 3 && w->val.rank() == 4, "conv2d");
  const int cin = x->val.dim(0), h = x->val.dim(1), wd = x->val.dim(2);
  const int cout = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
  check_dims(w->val.dim(1) == cin, "conv2d channels");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  check_dims(oh > 0 && ow > 0, "conv2d output");
  const int K = cin * kh * kw, N = oh * ow;

  auto col = std::make_shared<Tensor>(std::vector<int>{K, N});
  double* cp = col->data();
  const double* xp = x->val.data();
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = cp + (static_cast<std::size_t>(ci) * kh * kw + ky * kw + kx) * N;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = xp + (static_cast<std::size_t>(ci) * h + iy) * wd;
          double* dst = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < wd) dst[ox] = src[ix];
          }
        }
      }
    }
  }

  Tensor out({cout, oh, ow});
  {
    CMapRM wm(w->val.data(), cout, K);
    CMapRM cm(col->data(), K, N);
    MapRM om(out.data(), cout, N);
    om.noalias() = wm * cm;
  }
  if (b) {
    double* op = out.data();
    for (int co = 0; co < cout; ++co) {
      const double bv = b->val[static_cast<std::size_t>(co)];
      for (int i = 0; i < N; ++i) op[static_cast<std::size_t>(co) * N + i] += bv;
    }
  }

  std::vector<Var> ins = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  Var node = make_node(std::move(out), std::move(ins));
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, col, cin, h, wd, cout, kh, kw, oh, ow, stride, pad]() {
      const int K = cin * kh * kw, N = oh * ow;
      Var x = self->inputs[0], w = self->inputs[1];
      Var b = self->inputs.size() > 2 ? self->inputs[2] : nullptr;
      CMapRM gy(self->grad.data(), cout, N);
      if (w->needs_grad) {
        w->ensure_grad();
        MapRM gw(w->grad.data(), cout, K);
        CMapRM cm(col->data(), K, N);
        gw.noalias() += gy * cm.transpose();
      }
      if (b && b->needs_grad) {
        b->ensure_grad();
        for (int co = 0; co < cout; ++co) {
          double s = 0.0;
          const double* g = self->grad.data() + static_cast<std::size_t>(co) * N;
          for (int i = 0; i < N; ++i) s += g[i];
          b->grad[static_cast<std::size_t>(co)] += s;
        }
      }
      if (x->needs_grad) {
        x->ensure_grad();
        Tensor gcol({K, N});
        {
          CMapRM wm(w->val.data(), cout, K);
          MapRM gc(gcol.data(), K, N);
          gc.noalias() = wm.transpose() * gy;
        }
        double* gx = x->grad.data();
        const double* gc = gcol.data();
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const double* row =
                  gc + (static_cast<std::size_t>(ci) * kh * kw + ky * kw + kx) * N;
              for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                double* dst = gx + (static_cast<std::size_t>(ci) * h + iy) * wd;
                const double* src = row + static_cast<std::size_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix >= 0 && ix < wd) dst[ix] += src[ox];
                }
              }
            }
          }
        }
      }
    };
  }
  return node;
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
  check_dims(x->val.rank() == 3, "instance_norm");
  const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  check_dims(gamma->val.size() == static_cast<std::size_t>(c) &&
                 beta->val.size() == static_cast<std::size_t>(c),
             "instance_norm affine");
  const int m = h * w;
  Tensor out({c, h, w});
  auto xhat = std::make_shared<Tensor>(std::vector<int>{c, h, w});
  auto inv_std = std::make_shared<Tensor>(std::vector<int>{c});
  for (int ci = 0; ci < c; ++ci) {
    const double* xp = x->val.data() + static_cast<std::size_t>(ci) * m;
    double mu = 0.0;
    for (int i = 0; i < m; ++i) mu += xp[i];
    mu /= m;
    double var = 0.0;
    for (int i = 0; i < m; ++i) {
      const double d = xp[i] - mu;
      var += d * d;
    }
    var /= m;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(ci)] = is;
    const double g = gamma->val[static_cast<std::size_t>(ci)];
    const double bv = beta->val[static_cast<std::size_t>(ci)];
    double* xh = xhat->data() + static_cast<std::size_t>(ci) * m;
    double* op = out.data() + static_cast<std::size_t>(ci) * m;
    for (int i = 0; i < m; ++i) {
      xh[i] = (xp[i] - mu) * is;
      op[i] = g * xh[i] + bv;
    }
  }
  Var node = make_node(std::move(out), {x, gamma, beta});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, xhat, inv_std, c, m]() {
      Var x = self->inputs[0], gamma = self->inputs[1], beta = self->inputs[2];
      for (int ci = 0; ci < c; ++ci) {
        const double* gy = self->grad.data() + static_cast<std::size_t>(ci) * m;
        const double* xh = xhat->data() + static_cast<std::size_t>(ci) * m;
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (int i = 0; i < m; ++i) {
          sum_gy += gy[i];
          sum_gy_xh += gy[i] * xh[i];
        }
        if (gamma->needs_grad) {
          gamma->ensure_grad();
          gamma->grad[static_cast<std::size_t>(ci)] += sum_gy_xh;
        }
        if (beta->needs_grad) {
          beta->ensure_grad();
          beta->grad[static_cast<std::size_t>(ci)] += sum_gy;
        }
        if (x->needs_grad) {
          x->ensure_grad();
          const double g = gamma->val[static_cast<std::size_t>(ci)];
          const double is = (*inv_std)[static_cast<std::size_t>(ci)];
          double* gx = x->grad.data() + static_cast<std::size_t>(ci) * m;
          const double k1 = sum_gy / m, k2 = sum_gy_xh / m;
          for (int i = 0; i < m; ++i) {
            gx[i] += g * is * (gy[i] - k1 - xh[i] * k2);
          }
        }
      }
    };
  }
  return node;
}

Var leaky_relu(Var x, double slope) {
  Tensor out(x->val.dims());
  const std::size_t n = x->val.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x->val[i];
    out[i] = v > 0.0 ? v : slope * v;
  }
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, slope]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      const std::size_t n = x->val.size();
      for (std::size_t i = 0; i < n; ++i) {
        x->grad[i] += self->grad[i] * (x->val[i] > 0.0 ? 1.0 : slope);
      }
    };
  }
  return node;
}

Var l2_normalize_columns(Var x, double eps) {
  check_dims(x->val.rank() == 3, "l2_normalize_columns");
  const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  const int hw = h * w;
  Tensor out({c, h, w});
  auto norms = std::make_shared<Tensor>(std::vector<int>{h, w});
  for (int p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      const double v = x->val[static_cast<std::size_t>(ci) * hw + p];
      s += v * v;
    }
    const double n = std::sqrt(s);
    (*norms)[static_cast<std::size_t>(p)] = n;
    const double inv = 1.0 / (n + eps);
    for (int ci = 0; ci < c; ++ci) {
      out[static_cast<std::size_t>(ci) * hw + p] =
          x->val[static_cast<std::size_t>(ci) * hw + p] * inv;
    }
  }
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, norms, c, hw, eps]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (int p = 0; p < hw; ++p) {
        const double n = (*norms)[static_cast<std::size_t>(p)];
        const double denom = n + eps;
        double dot = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          const std::size_t i = static_cast<std::size_t>(ci) * hw + p;
          dot += self->grad[i] * x->val[i];
        }
        const double inv_n = n > 0.0 ? 1.0 / n : 0.0;
        const double common = dot * inv_n / (denom * denom);
        for (int ci = 0; ci < c; ++ci) {
          const std::size_t i = static_cast<std::size_t>(ci) * hw + p;
          x->grad[i] += self->grad[i] / denom - x->val[i] * common;
        }
      }
    };
  }
  return node;
}

namespace {

struct LinMap {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1 - w1
};

LinMap bilinear_axis(int in, int out) {
  LinMap m;
  m.i0.resize(out);
  m.i1.resize(out);
  m.w1.resize(out);
  const double r = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * r - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > in - 1) s = in - 1;
    const int lo = static_cast<int>(std::floor(s));
    m.i0[o] = lo;
    m.i1[o] = std::min(lo + 1, in - 1);
    m.w1[o] = s - lo;
  }
  return m;
}

}  // namespace

Var resize_bilinear(Var x, int out_h, int out_w) {
  check_dims(x->val.rank() == 3, "resize_bilinear");
  const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  if (h == out_h && w == out_w) return x;
  auto my = std::make_shared<LinMap>(bilinear_axis(h, out_h));
  auto mx = std::make_shared<LinMap>(bilinear_axis(w, out_w));
  Tensor out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci) {
    const double* xp = x->val.data() + static_cast<std::size_t>(ci) * h * w;
    double* op = out.data() + static_cast<std::size_t>(ci) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = my->i0[oy], y1 = my->i1[oy];
      const double wy = my->w1[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = mx->i0[ox], x1 = mx->i1[ox];
        const double wx = mx->w1[ox];
        const double a = xp[y0 * w + x0], b = xp[y0 * w + x1];
        const double cc = xp[y1 * w + x0], d = xp[y1 * w + x1];
        op[oy * out_w + ox] =
            (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * cc + wx * d);
      }
    }
  }
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, my, mx, c, h, w, out_h, out_w]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (int ci = 0; ci < c; ++ci) {
        double* gx = x->grad.data() + static_cast<std::size_t>(ci) * h * w;
        const double* gy = self->grad.data() + static_cast<std::size_t>(ci) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int y0 = my->i0[oy], y1 = my->i1[oy];
          const double wy = my->w1[oy];
          for (int ox = 0; ox < out_w; ++ox) {
            const int x0 = mx->i0[ox], x1 = mx->i1[ox];
            const double wx = mx->w1[ox];
            const double g = gy[oy * out_w + ox];
            gx[y0 * w + x0] += g * (1 - wy) * (1 - wx);
            gx[y0 * w + x1] += g * (1 - wy) * wx;
            gx[y1 * w + x0] += g * wy * (1 - wx);
            gx[y1 * w + x1] += g * wy * wx;
          }
        }
      }
    };
  }
  return node;
}

Var matmul(Var a, Var b) {
  check_dims(a->val.rank() == 2 && b->val.rank() == 2 && a->val.dim(1) == b->val.dim(0),
             "matmul");
  const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
  Tensor out({m, n});
  {
    CMapRM am(a->val.data(), m, k);
    CMapRM bm(b->val.data(), k, n);
    MapRM om(out.data(), m, n);
    om.noalias() = am * bm;
  }
  Var node = make_node(std::move(out), {a, b});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, m, k, n]() {
      Var a = self->inputs[0], b = self->inputs[1];
      CMapRM gy(self->grad.data(), m, n);
      if (a->needs_grad) {
        a->ensure_grad();
        MapRM ga(a->grad.data(), m, k);
        CMapRM bm(b->val.data(), k, n);
        ga.noalias() += gy * bm.transpose();
      }
      if (b->needs_grad) {
        b->ensure_grad();
        MapRM gb(b->grad.data(), k, n);
        CMapRM am(a->val.data(), m, k);
        gb.noalias() += am.transpose() * gy;
      }
    };
  }
  return node;
}

Var reshape(Var x, std::vector<int> dims) {
  check_dims(Tensor::numel_of(dims) == x->val.size(), "reshape");
  Tensor out(dims);
  std::copy(x->val.data(), x->val.data() + x->val.size(), out.data());
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      const std::size_t n = x->val.size();
      for (std::size_t i = 0; i < n; ++i) x->grad[i] += self->grad[i];
    };
  }
  return node;
}

Var swap_channel_spatial(Var x, int h0, int w0) {
  check_dims(x->val.rank() == 3 && x->val.dim(0) == h0 * w0, "swap_channel_spatial");
  const int p_count = x->val.dim(1) * x->val.dim(2);
  const int h = x->val.dim(1), w = x->val.dim(2);
  Tensor out({p_count, h0, w0});
  for (int p = 0; p < p_count; ++p) {
    for (int y0 = 0; y0 < h0; ++y0) {
      for (int x0 = 0; x0 < w0; ++x0) {
        out.at3(p, y0, x0) = x->val.at3(y0 * w0 + x0, p / w, p % w);
      }
    }
  }
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, h0, w0, h, w, p_count]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (int p = 0; p < p_count; ++p) {
        for (int y0 = 0; y0 < h0; ++y0) {
          for (int x0 = 0; x0 < w0; ++x0) {
            x->grad.at3(y0 * w0 + x0, p / w, p % w) += self->grad.at3(p, y0, x0);
          }
        }
      }
    };
  }
  return node;
}

Var scale_channels(Var x, Var s) {
  check_dims(x->val.rank() == 3 && s->val.size() == static_cast<std::size_t>(x->val.dim(0)),
             "scale_channels");
  const int c = x->val.dim(0);
  const int hw = x->val.dim(1) * x->val.dim(2);
  Tensor out(x->val.dims());
  for (int ci = 0; ci < c; ++ci) {
    const double sv = s->val[static_cast<std::size_t>(ci)];
    const std::size_t base = static_cast<std::size_t>(ci) * hw;
    for (int i = 0; i < hw; ++i) out[base + i] = x->val[base + i] * sv;
  }
  Var node = make_node(std::move(out), {x, s});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, c, hw]() {
      Var x = self->inputs[0], s = self->inputs[1];
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t base = static_cast<std::size_t>(ci) * hw;
        if (x->needs_grad) {
          x->ensure_grad();
          const double sv = s->val[static_cast<std::size_t>(ci)];
          for (int i = 0; i < hw; ++i) x->grad[base + i] += self->grad[base + i] * sv;
        }
        if (s->needs_grad) {
          s->ensure_grad();
          double acc = 0.0;
          for (int i = 0; i < hw; ++i) acc += self->grad[base + i] * x->val[base + i];
          s->grad[static_cast<std::size_t>(ci)] += acc;
        }
      }
    };
  }
  return node;
}

Var channel_spatial_max(Var x) {
  check_dims(x->val.rank() == 3, "channel_spatial_max");
  const int c = x->val.dim(0);
  const int hw = x->val.dim(1) * x->val.dim(2);
  Tensor out({c});
  auto argmax = std::make_shared<std::vector<int>>(c);
  for (int ci = 0; ci < c; ++ci) {
    const std::size_t base = static_cast<std::size_t>(ci) * hw;
    int best = 0;
    double bv = x->val[base];
    for (int i = 1; i < hw; ++i) {
      if (x->val[base + i] > bv) {
        bv = x->val[base + i];
        best = i;
      }
    }
    out[static_cast<std::size_t>(ci)] = bv;
    (*argmax)[static_cast<std::size_t>(ci)] = best;
  }
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, argmax, c, hw]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (int ci = 0; ci < c; ++ci) {
        x->grad[static_cast<std::size_t>(ci) * hw + (*argmax)[static_cast<std::size_t>(ci)]] +=
            self->grad[static_cast<std::size_t>(ci)];
      }
    };
  }
  return node;
}

Var max_over_channels(Var x) {
  check_dims(x->val.rank() == 3, "max_over_channels");
  const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  const int hw = h * w;
  Tensor out({1, h, w});
  auto argmax = std::make_shared<std::vector<int>>(hw);
  for (int i = 0; i < hw; ++i) {
    int best = 0;
    double bv = x->val[static_cast<std::size_t>(i)];
    for (int ci = 1; ci < c; ++ci) {
      const double v = x->val[static_cast<std::size_t>(ci) * hw + i];
      if (v > bv) {
        bv = v;
        best = ci;
      }
    }
    out[static_cast<std::size_t>(i)] = bv;
    (*argmax)[static_cast<std::size_t>(i)] = best;
  }
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, argmax, hw]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      for (int i = 0; i < hw; ++i) {
        x->grad[static_cast<std::size_t>((*argmax)[static_cast<std::size_t>(i)]) * hw + i] +=
            self->grad[static_cast<std::size_t>(i)];
      }
    };
  }
  return node;
}

Var gather_pad_channels(Var x, std::vector<int> idx, int target_channels) {
  check_dims(x->val.rank() == 3, "gather_pad_channels");
  if (target_channels <= 0) throw ConfigError("gather_pad_channels: target must be positive");
  const int h = x->val.dim(1), w = x->val.dim(2);
  const int hw = h * w;
  const int nsel = static_cast<int>(idx.size());
  check_dims(nsel <= target_channels, "gather_pad_channels count");
  Tensor out({target_channels, h, w});
  for (int k = 0; k < nsel; ++k) {
    const std::size_t src = static_cast<std::size_t>(idx[static_cast<std::size_t>(k)]) * hw;
    const std::size_t dst = static_cast<std::size_t>(k) * hw;
    for (int i = 0; i < hw; ++i) out[dst + i] = x->val[src + i];
  }
  auto idx_keep = std::make_shared<std::vector<int>>(std::move(idx));
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, idx_keep, hw]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      const int nsel = static_cast<int>(idx_keep->size());
      for (int k = 0; k < nsel; ++k) {
        const std::size_t dst =
            static_cast<std::size_t>((*idx_keep)[static_cast<std::size_t>(k)]) * hw;
        const std::size_t src = static_cast<std::size_t>(k) * hw;
        for (int i = 0; i < hw; ++i) x->grad[dst + i] += self->grad[src + i];
      }
    };
  }
  return node;
}

Var concat_channels(const std::vector<Var>& xs) {
  check_dims(!xs.empty(), "concat_channels");
  const int h = xs[0]->val.dim(1), w = xs[0]->val.dim(2);
  int c = 0;
  for (const auto& x : xs) {
    check_dims(x->val.rank() == 3 && x->val.dim(1) == h && x->val.dim(2) == w,
               "concat_channels spatial");
    c += x->val.dim(0);
  }
  Tensor out({c, h, w});
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->val.data(), x->val.data() + x->val.size(), out.data() + off);
    off += x->val.size();
  }
  Var node = make_node(std::move(out), xs);
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self]() {
      std::size_t off = 0;
      for (auto& x : self->inputs) {
        const std::size_t n = x->val.size();
        if (x->needs_grad) {
          x->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) x->grad[i] += self->grad[off + i];
        }
        off += n;
      }
    };
  }
  return node;
}

Var slice_channels(Var x, int from, int count) {
  check_dims(x->val.rank() == 3 && from >= 0 && count > 0 && from + count <= x->val.dim(0),
             "slice_channels");
  const int h = x->val.dim(1), w = x->val.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out({count, h, w});
  std::copy(x->val.data() + from * hw, x->val.data() + (from + count) * hw, out.data());
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, from, hw]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      const std::size_t n = self->val.size();
      for (std::size_t i = 0; i < n; ++i) x->grad[from * hw + i] += self->grad[i];
    };
  }
  return node;
}

Var add(Var a, Var b) {
  check_dims(a->val.size() == b->val.size(), "add");
  Tensor out(a->val.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a->val[i] + b->val[i];
  Var node = make_node(std::move(out), {a, b});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self]() {
      for (auto& in : self->inputs) {
        if (!in->needs_grad) continue;
        in->ensure_grad();
        const std::size_t n = in->val.size();
        for (std::size_t i = 0; i < n; ++i) in->grad[i] += self->grad[i];
      }
    };
  }
  return node;
}

Var mul(Var a, Var b) {
  check_dims(a->val.size() == b->val.size(), "mul");
  Tensor out(a->val.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a->val[i] * b->val[i];
  Var node = make_node(std::move(out), {a, b});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self]() {
      Var a = self->inputs[0], b = self->inputs[1];
      const std::size_t n = self->val.size();
      if (a->needs_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += self->grad[i] * b->val[i];
      }
      if (b->needs_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) b->grad[i] += self->grad[i] * a->val[i];
      }
    };
  }
  return node;
}

Var scale(Var x, double k) {
  Tensor out(x->val.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = x->val[i] * k;
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, k]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      const std::size_t n = x->val.size();
      for (std::size_t i = 0; i < n; ++i) x->grad[i] += self->grad[i] * k;
    };
  }
  return node;
}

Var add_n(const std::vector<Var>& xs) {
  check_dims(!xs.empty(), "add_n");
  Tensor out(xs[0]->val.dims());
  for (const auto& x : xs) {
    check_dims(x->val.size() == out.size(), "add_n shapes");
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out[i] += x->val[i];
  }
  Var node = make_node(std::move(out), xs);
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self]() {
      for (auto& in : self->inputs) {
        if (!in->needs_grad) continue;
        in->ensure_grad();
        const std::size_t n = in->val.size();
        for (std::size_t i = 0; i < n; ++i) in->grad[i] += self->grad[i];
      }
    };
  }
  return node;
}

Var mean_all(Var x) {
  const std::size_t n = x->val.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x->val[i];
  Tensor out({1});
  out[0] = s / static_cast<double>(n);
  Var node = make_node(std::move(out), {x});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, n]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      const double g = self->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) x->grad[i] += g;
    };
  }
  return node;
}

Var bce_with_logits(Var logits, const Tensor& target) {
  check_dims(logits->val.size() == target.size(), "bce_with_logits");
  if (!logits->val.all_finite()) throw NumericError("bce_with_logits: non-finite logits");
  const std::size_t n = logits->val.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits->val[i], y = target[i];
    acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
  }
  Tensor out({1});
  out[0] = acc / static_cast<double>(n);
  auto tgt = std::make_shared<Tensor>(target);
  Var node = make_node(std::move(out), {logits});
  if (node->needs_grad) {
    Node* self = node.get();
    node->backprop = [self, tgt, n]() {
      Var x = self->inputs[0];
      if (!x->needs_grad) return;
      x->ensure_grad();
      const double g = self->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-x->val[i]));
        x->grad[i] += g * (sig - (*tgt)[i]);
      }
    };
  }
  return node;
}

void backward(const Var& root) {
  if (!root->needs_grad) throw ConfigError("backward: root does not require grad");
  if (root->val.size() != 1) throw ConfigError("backward: root must be scalar");

  // Iterative post-order DFS to topologically sort the subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->inputs.size()) {
      Node* next = node->inputs[child].get();
      ++child;
      if (next && next->needs_grad && !visited.count(next)) {
        visited.insert(next);
        stack.emplace_back(next, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    node->ensure_grad();
    if (node->backprop) node->backprop();
  }
}

Tensor resize_bilinear_tensor(const Tensor& x, int out_h, int out_w) {
  Var v = constant(x);
  return resize_bilinear(v, out_h, out_w)->val;
}

Tensor resize_nearest_tensor(const Tensor& x, int out_h, int out_w) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, out_h, out_w});
  for (int oy = 0; oy < out_h; ++oy) {
    int sy = static_cast<int>((oy + 0.5) * h / out_h);
    sy = std::min(sy, h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      int sx = static_cast<int>((ox + 0.5) * w / out_w);
      sx = std::min(sx, w - 1);
      for (int ci = 0; ci < c; ++ci) out.at3(ci, oy, ox) = x.at3(ci, sy, sx);
    }
  }
  return out;
}

}  // namespace rankseg
