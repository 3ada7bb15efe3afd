#include "nnc/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nnc/rng.hpp"

namespace nnc {

namespace ops {

namespace {

int out_extent(int in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

// im2col: rows index output positions (oy * W_out + ox), columns index
// (d1, d2, s) with d1 fastest — the same order as the kernel linearization,
// so a kernel column for output channel t is simply kernel.data() + Q * t.
void im2col(const double* x, int c, int h, int w, int k, int stride, int padding,
            int h_out, int w_out, double* col) {
  const int q_per_channel = k * k;
  const int q_total = q_per_channel * c;
  for (int oy = 0; oy < h_out; ++oy) {
    for (int ox = 0; ox < w_out; ++ox) {
      double* row = col + (static_cast<std::size_t>(oy) * w_out + ox) * q_total;
      for (int s = 0; s < c; ++s) {
        const double* xs = x + static_cast<std::size_t>(s) * h * w;
        for (int d2 = 0; d2 < k; ++d2) {
          const int iy = oy * stride + d2 - padding;
          for (int d1 = 0; d1 < k; ++d1) {
            const int ix = ox * stride + d1 - padding;
            row[s * q_per_channel + d2 * k + d1] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w)
                    ? xs[static_cast<std::size_t>(iy) * w + ix]
                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int c, int h, int w, int k, int stride, int padding,
            int h_out, int w_out, double* x) {
  const int q_per_channel = k * k;
  const int q_total = q_per_channel * c;
  for (int oy = 0; oy < h_out; ++oy) {
    for (int ox = 0; ox < w_out; ++ox) {
      const double* row = col + (static_cast<std::size_t>(oy) * w_out + ox) * q_total;
      for (int s = 0; s < c; ++s) {
        double* xs = x + static_cast<std::size_t>(s) * h * w;
        for (int d2 = 0; d2 < k; ++d2) {
          const int iy = oy * stride + d2 - padding;
          if (iy < 0 || iy >= h) continue;
          for (int d1 = 0; d1 < k; ++d1) {
            const int ix = ox * stride + d1 - padding;
            if (ix < 0 || ix >= w) continue;
            xs[static_cast<std::size_t>(iy) * w + ix] += row[s * q_per_channel + d2 * k + d1];
          }
        }
      }
    }
  }
}

}  // namespace

Blob conv_forward(const Blob& x, const Tensor& kernel, const std::vector<double>& bias,
                  int stride, int padding) {
  const int k = kernel.extent(1);
  const int s_ch = kernel.extent(3);
  const int t_ch = kernel.extent(4);
  if (x.c != s_ch) throw InvalidArgument("conv_forward: channel mismatch");
  const int h_out = out_extent(x.h, k, stride, padding);
  const int w_out = out_extent(x.w, k, stride, padding);
  const int positions = h_out * w_out;
  const int q = k * k * s_ch;

  Blob y(x.n, t_ch, h_out, w_out);
  std::vector<double> col(static_cast<std::size_t>(positions) * q);
  for (int in = 0; in < x.n; ++in) {
    im2col(x.sample(in), x.c, x.h, x.w, k, stride, padding, h_out, w_out, col.data());
    double* ys = y.sample(in);
    for (int t = 0; t < t_ch; ++t) {
      const double* kt = kernel.data() + static_cast<std::size_t>(q) * t;
      const double b = bias.empty() ? 0.0 : bias[t];
      double* yt = ys + static_cast<std::size_t>(t) * positions;
      for (int p = 0; p < positions; ++p) {
        const double* row = col.data() + static_cast<std::size_t>(p) * q;
        double acc = b;
        for (int i = 0; i < q; ++i) acc += row[i] * kt[i];
        yt[p] = acc;
      }
    }
  }
  return y;
}

void conv_backward(const Blob& x, const Tensor& kernel, int stride, int padding, const Blob& dy,
                   Blob* dx, Tensor* dkernel, std::vector<double>* dbias) {
  const int k = kernel.extent(1);
  const int s_ch = kernel.extent(3);
  const int t_ch = kernel.extent(4);
  const int h_out = dy.h;
  const int w_out = dy.w;
  const int positions = h_out * w_out;
  const int q = k * k * s_ch;

  if (dx) *dx = Blob(x.n, x.c, x.h, x.w);
  if (dkernel) *dkernel = Tensor(kernel.shape());
  if (dbias) dbias->assign(t_ch, 0.0);

  std::vector<double> col(static_cast<std::size_t>(positions) * q);
  std::vector<double> dcol(col.size());
  for (int in = 0; in < x.n; ++in) {
    im2col(x.sample(in), x.c, x.h, x.w, k, stride, padding, h_out, w_out, col.data());
    const double* dys = dy.sample(in);

    if (dbias) {
      for (int t = 0; t < t_ch; ++t) {
        const double* dyt = dys + static_cast<std::size_t>(t) * positions;
        double acc = 0.0;
        for (int p = 0; p < positions; ++p) acc += dyt[p];
        (*dbias)[t] += acc;
      }
    }
    if (dkernel) {
      for (int t = 0; t < t_ch; ++t) {
        const double* dyt = dys + static_cast<std::size_t>(t) * positions;
        double* dkt = dkernel->data() + static_cast<std::size_t>(q) * t;
        for (int p = 0; p < positions; ++p) {
          const double a = dyt[p];
          if (a == 0.0) continue;
          const double* row = col.data() + static_cast<std::size_t>(p) * q;
          for (int i = 0; i < q; ++i) dkt[i] += a * row[i];
        }
      }
    }
    if (dx) {
      std::fill(dcol.begin(), dcol.end(), 0.0);
      for (int t = 0; t < t_ch; ++t) {
        const double* dyt = dys + static_cast<std::size_t>(t) * positions;
        const double* kt = kernel.data() + static_cast<std::size_t>(q) * t;
        for (int p = 0; p < positions; ++p) {
          const double a = dyt[p];
          if (a == 0.0) continue;
          double* drow = dcol.data() + static_cast<std::size_t>(p) * q;
          for (int i = 0; i < q; ++i) drow[i] += a * kt[i];
        }
      }
      col2im(dcol.data(), x.c, x.h, x.w, k, stride, padding, h_out, w_out, dx->sample(in));
    }
  }
}

Blob fc_forward(const Blob& x, const Matrix& weight, const std::vector<double>& bias) {
  const int in_f = weight.cols();
  const int out_f = weight.rows();
  if (static_cast<std::int64_t>(x.c) * x.h * x.w != in_f)
    throw InvalidArgument("fc_forward: input volume mismatch");
  Blob y(x.n, out_f, 1, 1);
  for (int in = 0; in < x.n; ++in) {
    const double* xs = x.sample(in);
    double* ys = y.sample(in);
    if (!bias.empty())
      std::copy(bias.begin(), bias.end(), ys);
    for (int j = 0; j < in_f; ++j) {
      const double a = xs[j];
      if (a == 0.0) continue;
      const double* wj = weight.col(j);
      for (int o = 0; o < out_f; ++o) ys[o] += wj[o] * a;
    }
  }
  return y;
}

void fc_backward(const Blob& x, const Matrix& weight, const Blob& dy, Blob* dx, Matrix* dweight,
                 std::vector<double>* dbias) {
  const int in_f = weight.cols();
  const int out_f = weight.rows();
  if (dx) *dx = Blob(x.n, x.c, x.h, x.w);
  if (dweight) *dweight = Matrix(out_f, in_f);
  if (dbias) dbias->assign(out_f, 0.0);

  for (int in = 0; in < x.n; ++in) {
    const double* xs = x.sample(in);
    const double* dys = dy.sample(in);
    if (dbias)
      for (int o = 0; o < out_f; ++o) (*dbias)[o] += dys[o];
    if (dweight) {
      for (int j = 0; j < in_f; ++j) {
        const double a = xs[j];
        if (a == 0.0) continue;
        double* dwj = dweight->col(j);
        for (int o = 0; o < out_f; ++o) dwj[o] += dys[o] * a;
      }
    }
    if (dx) {
      double* dxs = dx->sample(in);
      for (int j = 0; j < in_f; ++j) {
        const double* wj = weight.col(j);
        double acc = 0.0;
        for (int o = 0; o < out_f; ++o) acc += wj[o] * dys[o];
        dxs[j] = acc;
      }
    }
  }
}

Blob relu_forward(const Blob& x) {
  Blob y = x;
  for (double& v : y.v) v = v > 0.0 ? v : 0.0;
  return y;
}

Blob relu_backward(const Blob& x, const Blob& dy) {
  Blob dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i)
    if (x.v[i] <= 0.0) dx.v[i] = 0.0;
  return dx;
}

Blob maxpool_forward(const Blob& x, int size, int stride, std::vector<std::int64_t>* argmax) {
  const int h_out = (x.h - size) / stride + 1;
  const int w_out = (x.w - size) / stride + 1;
  Blob y(x.n, x.c, h_out, w_out);
  if (argmax) argmax->assign(y.v.size(), 0);
  std::size_t oi = 0;
  for (int in = 0; in < x.n; ++in) {
    for (int ch = 0; ch < x.c; ++ch) {
      const double* plane =
          x.v.data() + (static_cast<std::size_t>(in) * x.c + ch) * x.h * x.w;
      for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = 0;
          for (int dy_ = 0; dy_ < size; ++dy_) {
            for (int dx_ = 0; dx_ < size; ++dx_) {
              const std::int64_t idx =
                  static_cast<std::int64_t>(oy * stride + dy_) * x.w + (ox * stride + dx_);
              if (plane[idx] > best) {  // first occurrence wins ties
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          y.v[oi] = best;
          if (argmax)
            (*argmax)[oi] =
                (static_cast<std::int64_t>(in) * x.c + ch) * x.h * x.w + best_idx;
        }
      }
    }
  }
  return y;
}

Blob maxpool_backward(const Blob& dy, const std::vector<std::int64_t>& argmax, int n, int c,
                      int h, int w) {
  Blob dx(n, c, h, w);
  for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[argmax[i]] += dy.v[i];
  return dx;
}

Blob batchnorm_forward_train(const Blob& x, BatchNorm& layer, bool update_running_stats,
                             BnCache* cache) {
  const int c = layer.channels();
  if (x.c != c) throw InvalidArgument("batchnorm: channel mismatch");
  const std::int64_t per_channel = static_cast<std::int64_t>(x.n) * x.h * x.w;
  const std::int64_t plane = x.plane();

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (int in = 0; in < x.n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      mean[ch] += acc;
    }
  for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(per_channel);
  for (int in = 0; in < x.n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean[ch];
        acc += d * d;
      }
      var[ch] += acc;
    }
  for (int ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(per_channel);

  if (update_running_stats) {
    constexpr double kMomentum = 0.1;
    for (int ch = 0; ch < c; ++ch) {
      layer.mean[ch] = (1.0 - kMomentum) * layer.mean[ch] + kMomentum * mean[ch];
      layer.variance[ch] = (1.0 - kMomentum) * layer.variance[ch] + kMomentum * var[ch];
    }
  }

  Blob y(x.n, x.c, x.h, x.w);
  if (cache) {
    cache->xhat = Blob(x.n, x.c, x.h, x.w);
    cache->inv_std.assign(c, 0.0);
  }
  std::vector<double> inv_std(c);
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + layer.epsilon);
  for (int in = 0; in < x.n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      double* py = y.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      double* ph = cache ? cache->xhat.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane
                         : nullptr;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xh = (p[i] - mean[ch]) * inv_std[ch];
        if (ph) ph[i] = xh;
        py[i] = layer.gamma[ch] * xh + layer.beta[ch];
      }
    }
  if (cache) cache->inv_std = inv_std;
  return y;
}

Blob batchnorm_forward_eval(const Blob& x, const BatchNorm& layer) {
  const int c = layer.channels();
  if (x.c != c) throw InvalidArgument("batchnorm: channel mismatch");
  const std::int64_t plane = x.plane();
  Blob y(x.n, x.c, x.h, x.w);
  for (int in = 0; in < x.n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      const double scale = layer.gamma[ch] / std::sqrt(layer.variance[ch] + layer.epsilon);
      const double shift = layer.beta[ch] - layer.mean[ch] * scale;
      const double* p = x.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      double* py = y.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) py[i] = p[i] * scale + shift;
    }
  return y;
}

Blob batchnorm_backward(const Blob& dy, const BnCache& cache, const BatchNorm& layer,
                        std::vector<double>* dgamma, std::vector<double>* dbeta) {
  const int c = layer.channels();
  const std::int64_t plane = dy.plane();
  const double m = static_cast<double>(static_cast<std::int64_t>(dy.n) * plane);

  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (int in = 0; in < dy.n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      const double* pdy = dy.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      const double* ph = cache.xhat.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      double a = 0.0, b = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) {
        a += pdy[i];
        b += pdy[i] * ph[i];
      }
      sum_dy[ch] += a;
      sum_dy_xhat[ch] += b;
    }
  if (dgamma) *dgamma = sum_dy_xhat;
  if (dbeta) *dbeta = sum_dy;

  Blob dx(dy.n, dy.c, dy.h, dy.w);
  for (int in = 0; in < dy.n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      const double* pdy = dy.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      const double* ph = cache.xhat.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      double* pdx = dx.v.data() + (static_cast<std::size_t>(in) * c + ch) * plane;
      const double g = layer.gamma[ch] * cache.inv_std[ch] / m;
      for (std::int64_t i = 0; i < plane; ++i)
        pdx[i] = g * (m * pdy[i] - sum_dy[ch] - ph[i] * sum_dy_xhat[ch]);
    }
  return dx;
}

Blob softmax_forward(const Blob& x) {
  Blob y(x.n, x.c, x.h, x.w);
  if (x.h != 1 || x.w != 1) throw InvalidArgument("softmax expects a flat class vector");
  for (int in = 0; in < x.n; ++in) {
    const double* xs = x.sample(in);
    double* ys = y.sample(in);
    double mx = xs[0];
    for (int k = 1; k < x.c; ++k) mx = std::max(mx, xs[k]);
    double z = 0.0;
    for (int k = 0; k < x.c; ++k) {
      ys[k] = std::exp(xs[k] - mx);
      z += ys[k];
    }
    for (int k = 0; k < x.c; ++k) ys[k] /= z;
  }
  return y;
}

}  // namespace ops

namespace {

using ops::BnCache;

struct LayerCache {
  Blob input;
  std::vector<std::int64_t> argmax;
  BnCache bn;
};

// Runs every layer except a trailing softmax (the loss fuses it). Returns the
// logits. `caches` may be null for plain inference.
Blob run_body(ModelGraph& model, const Blob& inputs, bool train_mode, bool update_bn_stats,
              std::vector<LayerCache>* caches) {
  const Shape3 in_shape = model.input_shape();
  if (inputs.c != in_shape.channels || inputs.h != in_shape.height ||
      inputs.w != in_shape.width)
    throw InvalidArgument("input shape does not match the model");
  if (inputs.n < 1) throw InvalidArgument("empty input batch");

  Blob act = inputs;
  auto& layers = model.layers();
  const std::size_t body_end =
      !layers.empty() && std::holds_alternative<Softmax>(layers.back().op) ? layers.size() - 1
                                                                           : layers.size();
  if (caches) caches->resize(body_end);

  for (std::size_t i = 0; i < body_end; ++i) {
    LayerCache* cache = caches ? &(*caches)[i] : nullptr;
    if (cache) cache->input = act;
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<std::remove_reference_t<decltype(l)>>;
          if constexpr (std::is_same_v<T, Conv>) {
            act = ops::conv_forward(act, l.kernel, l.bias, l.stride, l.padding);
          } else if constexpr (std::is_same_v<T, FC>) {
            act = ops::fc_forward(act, l.weight, l.bias);
          } else if constexpr (std::is_same_v<T, FactorizedConv>) {
            act = ops::conv_forward(act, l.first, {}, 1, 0);
            act = ops::conv_forward(act, l.middle, {}, l.stride, l.padding);
            act = ops::conv_forward(act, l.last, l.bias, 1, 0);
          } else if constexpr (std::is_same_v<T, FactorizedFC>) {
            act = ops::fc_forward(act, l.first, {});
            act = ops::fc_forward(act, l.last, l.bias);
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            act = train_mode
                      ? ops::batchnorm_forward_train(act, l, update_bn_stats,
                                                     cache ? &cache->bn : nullptr)
                      : ops::batchnorm_forward_eval(act, l);
          } else if constexpr (std::is_same_v<T, ReLU>) {
            act = ops::relu_forward(act);
          } else if constexpr (std::is_same_v<T, MaxPool>) {
            act = ops::maxpool_forward(act, l.size, l.stride,
                                       cache ? &cache->argmax : nullptr);
          } else if constexpr (std::is_same_v<T, Softmax>) {
            act = ops::softmax_forward(act);
          }
        },
        layers[i].op);
  }
  return act;
}

// Intermediate activations of factorized stacks are recomputed during the
// backward pass instead of being cached; the stacks are narrow, so the extra
// forward work is small.
void backprop(ModelGraph& model, const std::vector<LayerCache>& caches, const Blob& dlogits,
              GradientSet* out) {
  auto& layers = model.layers();
  Blob grad = dlogits;
  int param_cursor = static_cast<int>(out->grads.size());

  for (int i = static_cast<int>(caches.size()) - 1; i >= 0; --i) {
    const LayerCache& cache = caches[i];
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<std::remove_reference_t<decltype(l)>>;
          if constexpr (std::is_same_v<T, Conv>) {
            Blob dx;
            Tensor dk;
            std::vector<double> db;
            ops::conv_backward(cache.input, l.kernel, l.stride, l.padding, grad, &dx, &dk,
                               l.bias.empty() ? nullptr : &db);
            if (!l.bias.empty()) out->grads[--param_cursor] = std::move(db);
            out->grads[--param_cursor] = std::move(dk.values());
            grad = std::move(dx);
          } else if constexpr (std::is_same_v<T, FC>) {
            Blob dx;
            Matrix dw;
            std::vector<double> db;
            ops::fc_backward(cache.input, l.weight, grad, &dx, &dw,
                             l.bias.empty() ? nullptr : &db);
            if (!l.bias.empty()) out->grads[--param_cursor] = std::move(db);
            out->grads[--param_cursor] = std::move(dw.values());
            grad = std::move(dx);
          } else if constexpr (std::is_same_v<T, FactorizedConv>) {
            Blob a1 = ops::conv_forward(cache.input, l.first, {}, 1, 0);
            Blob a2 = ops::conv_forward(a1, l.middle, {}, l.stride, l.padding);
            Blob dx2, dx1, dx0;
            Tensor dk_last, dk_mid, dk_first;
            std::vector<double> db;
            ops::conv_backward(a2, l.last, 1, 0, grad, &dx2, &dk_last,
                               l.bias.empty() ? nullptr : &db);
            ops::conv_backward(a1, l.middle, l.stride, l.padding, dx2, &dx1, &dk_mid, nullptr);
            ops::conv_backward(cache.input, l.first, 1, 0, dx1, &dx0, &dk_first, nullptr);
            if (!l.bias.empty()) out->grads[--param_cursor] = std::move(db);
            out->grads[--param_cursor] = std::move(dk_last.values());
            out->grads[--param_cursor] = std::move(dk_mid.values());
            out->grads[--param_cursor] = std::move(dk_first.values());
            grad = std::move(dx0);
          } else if constexpr (std::is_same_v<T, FactorizedFC>) {
            Blob a1 = ops::fc_forward(cache.input, l.first, {});
            Blob dx1, dx0;
            Matrix dw_last, dw_first;
            std::vector<double> db;
            ops::fc_backward(a1, l.last, grad, &dx1, &dw_last,
                             l.bias.empty() ? nullptr : &db);
            ops::fc_backward(cache.input, l.first, dx1, &dx0, &dw_first, nullptr);
            if (!l.bias.empty()) out->grads[--param_cursor] = std::move(db);
            out->grads[--param_cursor] = std::move(dw_last.values());
            out->grads[--param_cursor] = std::move(dw_first.values());
            grad = std::move(dx0);
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            std::vector<double> dgamma, dbeta;
            Blob dx = ops::batchnorm_backward(grad, cache.bn, l, &dgamma, &dbeta);
            out->grads[--param_cursor] = std::move(dbeta);
            out->grads[--param_cursor] = std::move(dgamma);
            grad = std::move(dx);
          } else if constexpr (std::is_same_v<T, ReLU>) {
            grad = ops::relu_backward(cache.input, grad);
          } else if constexpr (std::is_same_v<T, MaxPool>) {
            grad = ops::maxpool_backward(grad, cache.argmax, cache.input.n, cache.input.c,
                                         cache.input.h, cache.input.w);
          }
        },
        layers[i].op);
  }
}

int count_param_arrays(const ModelGraph& model) {
  int n = 0;
  for (const auto& layer : model.layers()) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Conv>) n += l.bias.empty() ? 1 : 2;
          else if constexpr (std::is_same_v<T, FC>) n += l.bias.empty() ? 1 : 2;
          else if constexpr (std::is_same_v<T, FactorizedConv>) n += l.bias.empty() ? 3 : 4;
          else if constexpr (std::is_same_v<T, FactorizedFC>) n += l.bias.empty() ? 2 : 3;
          else if constexpr (std::is_same_v<T, BatchNorm>) n += 2;
        },
        layer.op);
  }
  return n;
}

Blob labels_to_dlogits(const Predictions& probs, const std::vector<int>& labels) {
  Blob d(probs.n, probs.classes, 1, 1);
  const double inv_n = 1.0 / probs.n;
  for (int i = 0; i < probs.n; ++i)
    for (int k = 0; k < probs.classes; ++k)
      d.at(i, k, 0, 0) = (probs.at(i, k) - (labels[i] == k ? 1.0 : 0.0)) * inv_n;
  return d;
}

double mean_cross_entropy(const Predictions& probs, const std::vector<int>& labels) {
  double loss = 0.0;
  for (int i = 0; i < probs.n; ++i) {
    const double p = std::max(probs.at(i, labels[i]), 1e-300);
    loss -= std::log(p);
  }
  return loss / probs.n;
}

Predictions probs_from_logits(const Blob& logits) {
  const Blob sm = ops::softmax_forward(logits);
  Predictions out;
  out.n = sm.n;
  out.classes = sm.c;
  out.probs = sm.v;
  return out;
}

}  // namespace

Predictions forward(const ModelGraph& model, const Blob& inputs) {
  ModelGraph& mutable_model = const_cast<ModelGraph&>(model);  // eval mode never mutates
  Blob logits = run_body(mutable_model, inputs, /*train=*/false, false, nullptr);
  if (logits.h != 1 || logits.w != 1)
    throw InvalidArgument("model does not reduce to a class vector");
  return probs_from_logits(logits);
}

namespace {

void require_labels(const Batch& batch, int num_classes, const char* who) {
  if (batch.labels.size() != static_cast<std::size_t>(batch.size()))
    throw InvalidArgument(std::string(who) + ": labels do not match batch size");
  for (int l : batch.labels)
    if (l < 0 || l >= num_classes)
      throw InvalidArgument(std::string(who) + ": label outside [0, num_classes)");
}

}  // namespace

double evaluate_accuracy(const ModelGraph& model, const Batch& test) {
  if (test.size() < 1) throw InvalidArgument("evaluate_accuracy: empty test split");
  require_labels(test, model.num_classes(), "evaluate_accuracy");

  // Chunked to bound the activation working set.
  const int chunk = 256;
  int correct = 0;
  for (int start = 0; start < test.size(); start += chunk) {
    const int n = std::min(chunk, test.size() - start);
    Blob part(n, test.inputs.c, test.inputs.h, test.inputs.w);
    std::copy(test.inputs.sample(start), test.inputs.sample(start) + part.size(),
              part.v.begin());
    const Predictions p = forward(model, part);
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      for (int k = 1; k < p.classes; ++k)
        if (p.at(i, k) > p.at(i, arg)) arg = k;
      if (arg == test.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / test.size();
}

double cross_entropy_loss(const ModelGraph& model, const Batch& batch) {
  const Predictions p = forward(model, batch.inputs);
  return mean_cross_entropy(p, batch.labels);
}

std::vector<ParamView> trainable_parameters(ModelGraph& model) {
  std::vector<ParamView> views;
  for (auto& layer : model.layers()) {
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<std::remove_reference_t<decltype(l)>>;
          if constexpr (std::is_same_v<T, Conv>) {
            views.push_back({l.kernel.data(), l.kernel.values().size()});
            if (!l.bias.empty()) views.push_back({l.bias.data(), l.bias.size()});
          } else if constexpr (std::is_same_v<T, FC>) {
            views.push_back({l.weight.data(), l.weight.values().size()});
            if (!l.bias.empty()) views.push_back({l.bias.data(), l.bias.size()});
          } else if constexpr (std::is_same_v<T, FactorizedConv>) {
            views.push_back({l.first.data(), l.first.values().size()});
            views.push_back({l.middle.data(), l.middle.values().size()});
            views.push_back({l.last.data(), l.last.values().size()});
            if (!l.bias.empty()) views.push_back({l.bias.data(), l.bias.size()});
          } else if constexpr (std::is_same_v<T, FactorizedFC>) {
            views.push_back({l.first.data(), l.first.values().size()});
            views.push_back({l.last.data(), l.last.values().size()});
            if (!l.bias.empty()) views.push_back({l.bias.data(), l.bias.size()});
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            views.push_back({l.gamma.data(), l.gamma.size()});
            views.push_back({l.beta.data(), l.beta.size()});
          }
        },
        layer.op);
  }
  return views;
}

GradientSet compute_gradients(ModelGraph& model, const Batch& batch, bool update_bn_stats) {
  require_labels(batch, model.num_classes(), "compute_gradients");
  std::vector<LayerCache> caches;
  Blob logits = run_body(model, batch.inputs, /*train=*/true, update_bn_stats, &caches);
  const Predictions probs = probs_from_logits(logits);

  GradientSet out;
  out.loss = mean_cross_entropy(probs, batch.labels);
  out.grads.resize(count_param_arrays(model));
  const Blob dlogits = labels_to_dlogits(probs, batch.labels);
  backprop(model, caches, dlogits, &out);
  return out;
}

FineTuneResult fine_tune(const ModelGraph& model, const Batch& train, const TrainConfig& cfg,
                         const Batch* eval_split) {
  if (cfg.epochs < 1) throw InvalidArgument("fine_tune: epochs must be >= 1");
  if (cfg.learning_rate < 0.0) throw InvalidArgument("fine_tune: negative learning rate");
  if (cfg.batch_size < 1) throw InvalidArgument("fine_tune: batch size must be >= 1");
  if (train.size() < 1) throw InvalidArgument("fine_tune: empty training split");

  FineTuneResult result;
  result.model = model;
  std::vector<ParamView> params = trainable_parameters(result.model);
  std::vector<std::vector<double>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].size, 0.0);

  ModelGraph last_finite = result.model;
  ModelGraph best_model = result.model;
  double best_loss = std::numeric_limits<double>::infinity();
  double best_eval_err = eval_split ? 1.0 - evaluate_accuracy(result.model, *eval_split)
                                    : std::numeric_limits<double>::infinity();

  const int max_epochs = cfg.early_stop && eval_split ? 3 * cfg.epochs : cfg.epochs;
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);

  Batch mini;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    Rng epoch_rng = rng.fork(static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::int64_t seen = 0;
    for (int start = 0; start < train.size(); start += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, train.size() - start);
      mini.inputs = Blob(n, train.inputs.c, train.inputs.h, train.inputs.w);
      mini.labels.resize(n);
      const std::int64_t sample_len =
          static_cast<std::int64_t>(train.inputs.c) * train.inputs.h * train.inputs.w;
      for (int i = 0; i < n; ++i) {
        const int src = order[start + i];
        std::copy(train.inputs.sample(src), train.inputs.sample(src) + sample_len,
                  mini.inputs.sample(i));
        mini.labels[i] = train.labels[src];
      }

      const GradientSet g = compute_gradients(result.model, mini, /*update_bn_stats=*/true);
      if (!std::isfinite(g.loss))
        throw TrainingDiverged("training loss became non-finite", std::move(last_finite));

      for (std::size_t p = 0; p < params.size(); ++p) {
        double* w = params[p].data;
        double* v = velocity[p].data();
        const double* gr = g.grads[p].data();
        for (std::size_t i = 0; i < params[p].size; ++i) {
          v[i] = cfg.momentum * v[i] - cfg.learning_rate * gr[i];
          w[i] += v[i];
        }
      }
      epoch_loss += g.loss * n;
      seen += n;
    }
    epoch_loss /= static_cast<double>(seen);
    result.epoch_losses.push_back(epoch_loss);
    result.epochs_run = epoch + 1;

    if (std::isfinite(epoch_loss)) last_finite = result.model;
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best_model = result.model;
    }

    if (cfg.early_stop && eval_split && epoch + 1 >= cfg.epochs) {
      const double err = 1.0 - evaluate_accuracy(result.model, *eval_split);
      if (err < best_eval_err) {
        best_eval_err = err;
      } else {
        break;
      }
    }
  }

  if (result.epoch_losses.back() > result.epoch_losses.front()) {
    result.loss_decreased = false;
    result.model = std::move(best_model);
  }
  return result;
}

}  // namespace nnc
