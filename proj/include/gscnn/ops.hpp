// SPDX-License-Identifier: Apache-2.0
//
// Network-level ops on C×H×W tensors: learned convolution, normalization,
// resampling, the fixed image filters, and the straight-through hard softmax.

#pragma once

#include <cmath>
#include <limits>

#include "gscnn/tensor.hpp"

namespace gscnn {

// ---------------------------------------------------------------------------
// small matmul: C[M×N] += A[M×K] * B[K×N]
// ---------------------------------------------------------------------------
template <typename S>
void matmul_acc(const S* A, const S* B, S* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const S* a = A + m * K;
    S* c = C + m * N;
    for (int64_t k = 0; k < K; ++k) {
      S av = a[k];
      if (av == S(0)) continue;
      const S* b = B + k * N;
      for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M×N] += A[M×K] * B^T where B is [N×K]
template <typename S>
void matmul_bt_acc(const S* A, const S* B, S* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const S* a = A + m * K;
    S* c = C + m * N;
    for (int64_t n = 0; n < N; ++n) {
      const S* b = B + n * K;
      S acc = S(0);
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[n] += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct Conv2dSpec {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

inline int conv_out_extent(int in, int k, int stride, int dilation, int padding) {
  return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
}

template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int dilation,
            int padding, int Ho, int Wo, S* cols) {
  // cols is [C*k*k × Ho*Wo], zero-padded samples are 0
  int64_t HW = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = cols + (int64_t(c) * k * k + ky * k + kx) * HW;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - padding + ky * dilation;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = S(0);
            continue;
          }
          const S* src = x + (int64_t(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - padding + kx * dilation;
            row[oy * Wo + ox] = (ix < 0 || ix >= W) ? S(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_acc(const S* cols, int C, int H, int W, int k, int stride, int dilation,
                int padding, int Ho, int Wo, S* dx) {
  int64_t HW = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = cols + (int64_t(c) * k * k + ky * k + kx) * HW;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - padding + ky * dilation;
          if (iy < 0 || iy >= H) continue;
          S* dst = dx + (int64_t(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - padding + kx * dilation;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

// Cross-correlation of input [Cin×H×W] with kernel [Cout×Cin×k×k], zero
// padding. Gradients flow to input, kernel and bias. The im2col buffer is
// rebuilt in the backward pass instead of being cached on the graph.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel,
                  const TensorT<S>* bias, const Conv2dSpec& spec) {
  const Shape& xs = input.shape();
  const Shape& ws = kernel.shape();
  if (xs.size() != 3) throw std::invalid_argument("conv2d: input must be C×H×W, got " + shape_str(xs));
  if (ws.size() != 4) throw std::invalid_argument("conv2d: kernel must be Cout×Cin×k×k, got " + shape_str(ws));
  if (ws[2] != ws[3]) throw std::invalid_argument("conv2d: kernel must be square, got " + shape_str(ws));
  if (ws[1] != xs[0])
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(ws[1]) +
                                " input channels, input has " + std::to_string(xs[0]));
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != ws[0]))
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias->shape()) +
                                " does not match " + std::to_string(ws[0]) + " output channels");
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0)
    throw std::invalid_argument("conv2d: invalid stride/dilation/padding");
  int C = xs[0], H = xs[1], W = xs[2];
  int Cout = ws[0], k = ws[2];
  int Ho = conv_out_extent(H, k, spec.stride, spec.dilation, spec.padding);
  int Wo = conv_out_extent(W, k, spec.stride, spec.dilation, spec.padding);
  if (Ho <= 0 || Wo <= 0)
    throw std::invalid_argument("conv2d: zero-sized output for input " + shape_str(xs) +
                                " kernel " + shape_str(ws));

  int64_t K = int64_t(C) * k * k;
  int64_t N = int64_t(Ho) * Wo;
  std::vector<S> cols(K * N);
  im2col(input.data().data(), C, H, W, k, spec.stride, spec.dilation, spec.padding,
         Ho, Wo, cols.data());

  auto xn = input.node();
  auto wn = kernel.node();
  std::shared_ptr<Node<S>> bn = bias ? bias->node() : nullptr;
  std::vector<TensorT<S>> parents{input, kernel};
  if (bias) parents.push_back(*bias);

  auto out = make_op<S>("conv2d", Shape{Cout, Ho, Wo}, parents,
                        [xn, wn, bn, C, H, W, k, spec, Ho, Wo, K, N, Cout](Node<S>& n) {
    std::vector<S> cols2(K * N);
    im2col(xn->value.data(), C, H, W, k, spec.stride, spec.dilation, spec.padding,
           Ho, Wo, cols2.data());
    if (wn->requires_grad) {
      wn->ensure_grad();
      // dW[Cout×K] += dOut[Cout×N] * cols^T[N×K]
      matmul_bt_acc(n.grad.data(), cols2.data(), wn->grad.data(), Cout, N, K);
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int co = 0; co < Cout; ++co) {
        S acc = S(0);
        for (int64_t j = 0; j < N; ++j) acc += n.grad[co * N + j];
        bn->grad[co] += acc;
      }
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      // dcols[K×N] = W^T[K×Cout] * dOut[Cout×N]
      std::vector<S> dcols(K * N, S(0));
      for (int co = 0; co < Cout; ++co) {
        const S* w = wn->value.data() + int64_t(co) * K;
        const S* g = n.grad.data() + int64_t(co) * N;
        for (int64_t q = 0; q < K; ++q) {
          S wv = w[q];
          if (wv == S(0)) continue;
          S* d = dcols.data() + q * N;
          for (int64_t j = 0; j < N; ++j) d[j] += wv * g[j];
        }
      }
      col2im_acc(dcols.data(), C, H, W, k, spec.stride, spec.dilation, spec.padding,
                 Ho, Wo, xn->grad.data());
    }
  });

  auto& o = out.data();
  std::fill(o.begin(), o.end(), S(0));
  matmul_acc(kernel.data().data(), cols.data(), o.data(), Cout, K, N);
  if (bias) {
    const auto& bv = bias->data();
    for (int co = 0; co < Cout; ++co)
      for (int64_t j = 0; j < N; ++j) o[co * N + j] += bv[co];
  }
  return out;
}

template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel,
                  const TensorT<S>& bias, const Conv2dSpec& spec) {
  return conv2d(input, kernel, &bias, spec);
}

// ---------------------------------------------------------------------------
// group normalization
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> group_norm(const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, int groups, S eps = S(1e-5)) {
  const Shape& xs = x.shape();
  if (xs.size() != 3) throw std::invalid_argument("group_norm: need C×H×W");
  int C = xs[0];
  if (C % groups != 0)
    throw std::invalid_argument("group_norm: " + std::to_string(C) +
                                " channels not divisible by " + std::to_string(groups) +
                                " groups");
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw std::invalid_argument("group_norm: gamma/beta must have one value per channel");
  int64_t hw = int64_t(xs[1]) * xs[2];
  int cpg = C / groups;
  int64_t gl = cpg * hw;  // elements per group

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();

  // saved statistics for backward
  auto mu = std::make_shared<std::vector<S>>(groups);
  auto istd = std::make_shared<std::vector<S>>(groups);

  auto out = make_op<S>("group_norm", xs, {x, gamma, beta},
                        [xn, gn, bn, mu, istd, groups, cpg, hw, gl](Node<S>& n) {
    for (int g = 0; g < groups; ++g) {
      const S* xv = xn->value.data() + g * gl;
      const S* dy = n.grad.data() + g * gl;
      S m = (*mu)[g], is = (*istd)[g];
      if (gn->requires_grad || bn->requires_grad) {
        gn->ensure_grad();
        bn->ensure_grad();
        for (int c = 0; c < cpg; ++c) {
          int ch = g * cpg + c;
          S dg = S(0), db = S(0);
          for (int64_t i = 0; i < hw; ++i) {
            S xhat = (xv[c * hw + i] - m) * is;
            dg += dy[c * hw + i] * xhat;
            db += dy[c * hw + i];
          }
          gn->grad[ch] += dg;
          bn->grad[ch] += db;
        }
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        // dxhat = dy * gamma_c; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        S sum_dxh = S(0), sum_dxh_xh = S(0);
        for (int c = 0; c < cpg; ++c) {
          S gv = gn->value[g * cpg + c];
          for (int64_t i = 0; i < hw; ++i) {
            S xhat = (xv[c * hw + i] - m) * is;
            S dxh = dy[c * hw + i] * gv;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat;
          }
        }
        S inv_gl = S(1) / static_cast<S>(gl);
        S m_dxh = sum_dxh * inv_gl;
        S m_dxh_xh = sum_dxh_xh * inv_gl;
        S* dx = xn->grad.data() + g * gl;
        for (int c = 0; c < cpg; ++c) {
          S gv = gn->value[g * cpg + c];
          for (int64_t i = 0; i < hw; ++i) {
            S xhat = (xv[c * hw + i] - m) * is;
            S dxh = dy[c * hw + i] * gv;
            dx[c * hw + i] += is * (dxh - m_dxh - xhat * m_dxh_xh);
          }
        }
      }
    }
  });

  auto& o = out.data();
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int g = 0; g < groups; ++g) {
    const S* xp = xv.data() + g * gl;
    S m = S(0);
    for (int64_t i = 0; i < gl; ++i) m += xp[i];
    m /= static_cast<S>(gl);
    S var = S(0);
    for (int64_t i = 0; i < gl; ++i) {
      S d = xp[i] - m;
      var += d * d;
    }
    var /= static_cast<S>(gl);
    S is = S(1) / std::sqrt(var + eps);
    (*mu)[g] = m;
    (*istd)[g] = is;
    for (int c = 0; c < cpg; ++c) {
      int ch = g * cpg + c;
      S* op = o.data() + (int64_t(ch)) * hw;
      const S* ip = xv.data() + (int64_t(ch)) * hw;
      for (int64_t i = 0; i < hw; ++i) op[i] = gv[ch] * ((ip[i] - m) * is) + bv[ch];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax over the channel axis
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> softmax_channels(const TensorT<S>& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[0] < 1)
    throw std::invalid_argument("softmax_channels: need K×H×W with K>=1");
  int K = xs[0];
  int64_t hw = int64_t(xs[1]) * xs[2];
  auto xn = x.node();
  auto out = make_op<S>("softmax_channels", xs, {x}, [xn, K, hw](Node<S>& n) {
    xn->ensure_grad();
    for (int64_t i = 0; i < hw; ++i) {
      S dot = S(0);
      for (int k = 0; k < K; ++k) dot += n.value[k * hw + i] * n.grad[k * hw + i];
      for (int k = 0; k < K; ++k)
        xn->grad[k * hw + i] += n.value[k * hw + i] * (n.grad[k * hw + i] - dot);
    }
  });
  auto& o = out.data();
  const auto& xv = x.data();
  for (int64_t i = 0; i < hw; ++i) {
    S mx = xv[i];
    for (int k = 1; k < K; ++k) mx = std::max(mx, xv[k * hw + i]);
    S denom = S(0);
    for (int k = 0; k < K; ++k) {
      S e = std::exp(xv[k * hw + i] - mx);
      o[k * hw + i] = e;
      denom += e;
    }
    for (int k = 0; k < K; ++k) o[k * hw + i] /= denom;
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear resampling (align-corners-false)
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> bilinear_resize(const TensorT<S>& x, int th, int tw) {
  const Shape& xs = x.shape();
  if (xs.size() != 3) throw std::invalid_argument("bilinear_resize: need C×H×W");
  if (th <= 0 || tw <= 0) throw std::invalid_argument("bilinear_resize: non-positive target size");
  int C = xs[0], H = xs[1], W = xs[2];

  // Precompute sampling taps per output row/column.
  struct Tap {
    int i0, i1;
    S w0, w1;
  };
  auto make_taps = [](int src, int dst) {
    std::vector<Tap> taps(dst);
    double sc = double(src) / dst;
    for (int i = 0; i < dst; ++i) {
      double p = (i + 0.5) * sc - 0.5;
      if (p < 0) p = 0;
      if (p > src - 1) p = src - 1;
      int i0 = static_cast<int>(std::floor(p));
      int i1 = std::min(i0 + 1, src - 1);
      S f = static_cast<S>(p - i0);
      taps[i] = {i0, i1, S(1) - f, f};
    }
    return taps;
  };
  auto ty = std::make_shared<std::vector<Tap>>(make_taps(H, th));
  auto tx = std::make_shared<std::vector<Tap>>(make_taps(W, tw));

  auto xn = x.node();
  auto out = make_op<S>("bilinear_resize", Shape{C, th, tw}, {x},
                        [xn, ty, tx, C, H, W, th, tw](Node<S>& n) {
    xn->ensure_grad();
    for (int c = 0; c < C; ++c) {
      S* dx = xn->grad.data() + int64_t(c) * H * W;
      const S* dy = n.grad.data() + int64_t(c) * th * tw;
      for (int y = 0; y < th; ++y) {
        const Tap& a = (*ty)[y];
        for (int xi = 0; xi < tw; ++xi) {
          const Tap& b = (*tx)[xi];
          S g = dy[y * tw + xi];
          dx[a.i0 * W + b.i0] += g * a.w0 * b.w0;
          dx[a.i0 * W + b.i1] += g * a.w0 * b.w1;
          dx[a.i1 * W + b.i0] += g * a.w1 * b.w0;
          dx[a.i1 * W + b.i1] += g * a.w1 * b.w1;
        }
      }
    }
  });
  auto& o = out.data();
  const auto& xv = x.data();
  for (int c = 0; c < C; ++c) {
    const S* src = xv.data() + int64_t(c) * H * W;
    S* dst = o.data() + int64_t(c) * th * tw;
    for (int y = 0; y < th; ++y) {
      const Tap& a = (*ty)[y];
      for (int xi = 0; xi < tw; ++xi) {
        const Tap& b = (*tx)[xi];
        dst[y * tw + xi] = a.w0 * (b.w0 * src[a.i0 * W + b.i0] + b.w1 * src[a.i0 * W + b.i1]) +
                           a.w1 * (b.w0 * src[a.i1 * W + b.i0] + b.w1 * src[a.i1 * W + b.i1]);
      }
    }
  }
  return out;
}

template <typename S>
TensorT<S> bilinear_upsample(const TensorT<S>& x, int th, int tw) {
  if (th < x.shape()[1] || tw < x.shape()[2])
    throw std::invalid_argument("bilinear_upsample: target " + std::to_string(th) + "x" +
                                std::to_string(tw) + " smaller than source " +
                                shape_str(x.shape()));
  return bilinear_resize(x, th, tw);
}

// ---------------------------------------------------------------------------
// fixed filters (reflect padding, exact adjoint in backward)
// ---------------------------------------------------------------------------

inline int reflect_index(int i, int n) {
  // symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// 1-D correlation along rows (axis=1) or columns (axis=0) of each channel,
// reflect padded. adjoint=true computes the transpose (scatter) map.
template <typename S>
void correlate1d(const S* in, S* out, int C, int H, int W, const std::vector<S>& k,
                 int axis, bool adjoint) {
  int r = static_cast<int>(k.size()) / 2;
  int64_t hw = int64_t(H) * W;
  if (!adjoint) {
    for (int c = 0; c < C; ++c) {
      const S* src = in + c * hw;
      S* dst = out + c * hw;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          S acc = S(0);
          for (int j = -r; j <= r; ++j) {
            int yy = axis == 0 ? reflect_index(y + j, H) : y;
            int xx = axis == 1 ? reflect_index(x + j, W) : x;
            acc += k[j + r] * src[yy * W + xx];
          }
          dst[y * W + x] = acc;
        }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      const S* src = in + c * hw;  // upstream gradient
      S* dst = out + c * hw;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          S g = src[y * W + x];
          for (int j = -r; j <= r; ++j) {
            int yy = axis == 0 ? reflect_index(y + j, H) : y;
            int xx = axis == 1 ? reflect_index(x + j, W) : x;
            dst[yy * W + xx] += k[j + r] * g;
          }
        }
    }
  }
}

template <typename S>
std::vector<S> gaussian_kernel_1d(S sigma) {
  int r = static_cast<int>(std::ceil(3.0 * static_cast<double>(sigma)));
  std::vector<S> k(2 * r + 1);
  S sum = S(0);
  for (int j = -r; j <= r; ++j) {
    S v = static_cast<S>(std::exp(-0.5 * double(j) * double(j) /
                                  (double(sigma) * double(sigma))));
    k[j + r] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian with reflect padding; the kernel is fixed (not learned)
// but gradients flow through the input.
template <typename S>
TensorT<S> gaussian_blur(const TensorT<S>& x, S sigma) {
  if (!(sigma > S(0))) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const Shape& xs = x.shape();
  if (xs.size() != 3) throw std::invalid_argument("gaussian_blur: need C×H×W");
  int C = xs[0], H = xs[1], W = xs[2];
  auto kern = std::make_shared<std::vector<S>>(gaussian_kernel_1d(sigma));

  auto xn = x.node();
  auto out = make_op<S>("gaussian_blur", xs, {x}, [xn, kern, C, H, W](Node<S>& n) {
    xn->ensure_grad();
    std::vector<S> tmp(n.grad.size(), S(0));
    // adjoint of (vertical ∘ horizontal) is adjoint-horizontal ∘ adjoint-vertical
    correlate1d(n.grad.data(), tmp.data(), C, H, W, *kern, 0, true);
    correlate1d(tmp.data(), xn->grad.data(), C, H, W, *kern, 1, true);
  });
  std::vector<S> tmp(x.numel());
  correlate1d(x.data().data(), tmp.data(), C, H, W, *kern, 1, false);
  std::fill(out.data().begin(), out.data().end(), S(0));
  correlate1d(tmp.data(), out.data().data(), C, H, W, *kern, 0, false);
  return out;
}

// Per-channel Sobel gradient magnitude sqrt(gx^2 + gy^2 + eps) with the
// 3×3 kernels scaled by 1/8 and reflect padding.
template <typename S>
TensorT<S> sobel_gradient_magnitude(const TensorT<S>& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 3) throw std::invalid_argument("sobel_gradient_magnitude: need C×H×W");
  int C = xs[0], H = xs[1], W = xs[2];
  if (H < 3 || W < 3)
    throw std::invalid_argument("sobel_gradient_magnitude: spatial extent must be >= 3, got " +
                                shape_str(xs));
  constexpr double kEps = 1e-12;
  // separable: sobel_x = smooth_y [1,2,1] ∘ diff_x [-1,0,1], all scaled by 1/8
  const std::vector<S> smooth{S(0.25), S(0.5), S(0.25)};
  const std::vector<S> diff{S(-0.5), S(0), S(0.5)};

  int64_t n = x.numel();
  auto gx = std::make_shared<std::vector<S>>(n);
  auto gy = std::make_shared<std::vector<S>>(n);
  {
    std::vector<S> tmp(n);
    correlate1d(x.data().data(), tmp.data(), C, H, W, smooth, 0, false);
    std::fill(gx->begin(), gx->end(), S(0));
    correlate1d(tmp.data(), gx->data(), C, H, W, diff, 1, false);
    correlate1d(x.data().data(), tmp.data(), C, H, W, smooth, 1, false);
    std::fill(gy->begin(), gy->end(), S(0));
    correlate1d(tmp.data(), gy->data(), C, H, W, diff, 0, false);
  }

  auto xn = x.node();
  auto out = make_op<S>("sobel_gradient_magnitude", xs, {x},
                        [xn, gx, gy, smooth, diff, C, H, W](Node<S>& n_) {
    xn->ensure_grad();
    int64_t n = n_.value.size();
    std::vector<S> dgx(n), dgy(n), tmp(n, S(0));
    for (int64_t i = 0; i < n; ++i) {
      S inv = n_.grad[i] / n_.value[i];
      dgx[i] = (*gx)[i] * inv;
      dgy[i] = (*gy)[i] * inv;
    }
    // adjoint of (diff_x ∘ smooth_y)
    correlate1d(dgx.data(), tmp.data(), C, H, W, diff, 1, true);
    correlate1d(tmp.data(), xn->grad.data(), C, H, W, smooth, 0, true);
    std::fill(tmp.begin(), tmp.end(), S(0));
    correlate1d(dgy.data(), tmp.data(), C, H, W, diff, 0, true);
    correlate1d(tmp.data(), xn->grad.data(), C, H, W, smooth, 1, true);
  });
  auto& o = out.data();
  for (int64_t i = 0; i < n; ++i)
    o[i] = static_cast<S>(std::sqrt(double((*gx)[i]) * double((*gx)[i]) +
                                    double((*gy)[i]) * double((*gy)[i]) + kEps));
  return out;
}

// ---------------------------------------------------------------------------
// straight-through hard softmax (Gumbel trick)
// ---------------------------------------------------------------------------

enum class ArgmaxMode {
  kHard,  // forward: exact one-hot argmax
  kSoft   // forward: the temperature softmax itself (gradient-check shadow)
};

// Forward is the exact one-hot of argmax(logits + g), g ~ Gumbel(0, I) when
// noise is on; ties break toward the lowest channel. Backward is the gradient
// of softmax((logits + g)/tau), i.e. the straight-through estimator.
template <typename S>
TensorT<S> gumbel_hard_softmax(const TensorT<S>& logits, S tau, bool noise,
                               uint64_t seed, ArgmaxMode mode = ArgmaxMode::kHard) {
  if (!(tau > S(0))) throw std::invalid_argument("gumbel_hard_softmax: tau must be positive");
  const Shape& xs = logits.shape();
  if (xs.size() != 3) throw std::invalid_argument("gumbel_hard_softmax: need K×H×W");
  int K = xs[0];
  int64_t hw = int64_t(xs[1]) * xs[2];
  const auto& lv = logits.data();

  std::vector<S> z(lv.begin(), lv.end());
  if (noise) {
    Rng rng(seed);
    for (auto& v : z) v += static_cast<S>(rng.gumbel());
  }
  // soft distribution at temperature tau, kept for the backward pass
  auto soft = std::make_shared<std::vector<S>>(lv.size());
  for (int64_t i = 0; i < hw; ++i) {
    S mx = z[i];
    for (int k = 1; k < K; ++k) mx = std::max(mx, z[k * hw + i]);
    S denom = S(0);
    for (int k = 0; k < K; ++k) {
      S e = std::exp((z[k * hw + i] - mx) / tau);
      (*soft)[k * hw + i] = e;
      denom += e;
    }
    for (int k = 0; k < K; ++k) (*soft)[k * hw + i] /= denom;
  }

  auto ln = logits.node();
  auto out = make_op<S>("gumbel_hard_softmax", xs, {logits}, [ln, soft, tau, K, hw](Node<S>& n) {
    ln->ensure_grad();
    for (int64_t i = 0; i < hw; ++i) {
      S dot = S(0);
      for (int k = 0; k < K; ++k) dot += (*soft)[k * hw + i] * n.grad[k * hw + i];
      for (int k = 0; k < K; ++k)
        ln->grad[k * hw + i] += (*soft)[k * hw + i] * (n.grad[k * hw + i] - dot) / tau;
    }
  });
  auto& o = out.data();
  if (mode == ArgmaxMode::kSoft) {
    std::copy(soft->begin(), soft->end(), o.begin());
  } else {
    std::fill(o.begin(), o.end(), S(0));
    for (int64_t i = 0; i < hw; ++i) {
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (z[k * hw + i] > z[best * hw + i]) best = k;
      o[best * hw + i] = S(1);
    }
  }
  return out;
}

}  // namespace gscnn
