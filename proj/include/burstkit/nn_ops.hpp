#pragma once

// Convolutional / normalization primitives over NCHW tensors.

#include <cstdint>
#include <limits>

#include "burstkit/tensor.hpp"

namespace burstkit {

namespace detail {

// col is (C*kh*kw) x (oh*ow), row-major.
template <typename S>
void im2col(const S* in, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
            std::size_t ow, S* col) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        S* dst = col + ((ch * kh + ky) * kw + kx) * (oh * ow);
        for (std::size_t oy = 0; oy < oh; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                              static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                static_cast<std::ptrdiff_t>(pad);
            S v = S(0);
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w)) {
              v = in[(ch * h + iy) * w + ix];
            }
            dst[oy * ow + ox] = v;
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
                std::size_t ow, S* in_grad) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const S* src = col + ((ch * kh + ky) * kw + kx) * (oh * ow);
        for (std::size_t oy = 0; oy < oh; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                              static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            in_grad[(ch * h + iy) * w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

// Serial gemm used inside per-sample conv work (the batch loop parallelizes).
template <typename S>
void gemm_nn_serial(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      S av = arow[kk];
      const S* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename S>
void gemm_nt_serial(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S acc = S(0);
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

template <typename S>
void gemm_tn_serial(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const S* arow = a + kk * m;
    const S* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      S av = arow[i];
      S* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// x: N x C x H x W, weight: O x C x kh x kw. No bias (a BatchNorm or bias add
// follows where needed).
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, std::size_t stride,
                 std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d shape mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                     shape_str(weight.shape()));
  }
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw ShapeError("conv2d input " + shape_str(x.shape()) + " smaller than kernel " +
                     shape_str(weight.shape()) + " with pad " + std::to_string(pad));
  }
  std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  std::size_t ck = c * kh * kw;
  std::vector<S> v(n * o * oh * ow, S(0));
  {
    const S* xv = x.value().data();
    const S* wv = weight.value().data();
    parallel_for(n, [&](std::size_t b0, std::size_t b1) {
      std::vector<S> col(ck * oh * ow);
      for (std::size_t b = b0; b < b1; ++b) {
        detail::im2col(xv + b * c * h * w, c, h, w, kh, kw, stride, pad, oh, ow, col.data());
        detail::gemm_nn_serial(wv, col.data(), v.data() + b * o * oh * ow, o, ck, oh * ow);
      }
    });
  }
  return detail::make_op<S>(
      {n, o, oh, ow}, std::move(v), {x, weight},
      [n, c, h, w, o, kh, kw, stride, pad, oh, ow, ck](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        // Per-sample partial weight gradients, reduced in sample order so the
        // result is identical for any thread count.
        std::vector<S> wpart;
        if (pw.requires_grad) wpart.assign(n * o * ck, S(0));
        const S* xv = px.value.data();
        const S* wv = pw.value.data();
        parallel_for(n, [&](std::size_t b0, std::size_t b1) {
          std::vector<S> col(ck * oh * ow);
          std::vector<S> dcol(ck * oh * ow);
          for (std::size_t b = b0; b < b1; ++b) {
            const S* g = self.grad.data() + b * o * oh * ow;
            detail::im2col(xv + b * c * h * w, c, h, w, kh, kw, stride, pad, oh, ow,
                           col.data());
            if (pw.requires_grad) {
              detail::gemm_nt_serial(g, col.data(), wpart.data() + b * o * ck, o, oh * ow, ck);
            }
            if (px.requires_grad) {
              std::fill(dcol.begin(), dcol.end(), S(0));
              detail::gemm_tn_serial(wv, g, dcol.data(), ck, o, oh * ow);
              detail::col2im_add(dcol.data(), c, h, w, kh, kw, stride, pad, oh, ow,
                                 px.grad.data() + b * c * h * w);
            }
          }
        });
        if (pw.requires_grad) {
          for (std::size_t b = 0; b < n; ++b) {
            const S* part = wpart.data() + b * o * ck;
            for (std::size_t i = 0; i < o * ck; ++i) pw.grad[i] += part[i];
          }
        }
      });
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, std::size_t k, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4) throw ShapeError("max_pool2d needs NCHW input, got " + shape_str(x.shape()));
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * pad < k || w + 2 * pad < k) {
    throw ShapeError("max_pool2d window " + std::to_string(k) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  std::size_t oh = (h + 2 * pad - k) / stride + 1;
  std::size_t ow = (w + 2 * pad - k) / stride + 1;
  std::vector<S> v(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(n * c * oh * ow);
  const auto& xv = x.value();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const S* plane = xv.data() + (b * c + ch) * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          S best = -std::numeric_limits<S>::infinity();
          std::uint32_t besti = 0;
          for (std::size_t ky = 0; ky < k; ++ky) {
            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                  static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              S val = plane[iy * w + ix];
              if (val > best) {
                best = val;
                besti = static_cast<std::uint32_t>(iy * w + ix);
              }
            }
          }
          std::size_t oi = ((b * c + ch) * oh + oy) * ow + ox;
          v[oi] = best;
          (*argmax)[oi] = besti;
        }
      }
    }
  }
  return detail::make_op<S>({n, c, oh, ow}, std::move(v), {x},
                            [n, c, h, w, oh, ow, argmax](detail::Node<S>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::size_t i = 0; i < self.size(); ++i) {
                                std::size_t plane = i / (oh * ow);
                                p.grad[plane * h * w + (*argmax)[i]] += self.grad[i];
                              }
                            });
}

// N x C x H x W -> N x C mean over the spatial map.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool needs NCHW input, got " +
                                      shape_str(x.shape()));
  std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<S> v(n * c);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < n * c; ++i) {
    S acc = S(0);
    const S* plane = xv.data() + i * hw;
    for (std::size_t j = 0; j < hw; ++j) acc += plane[j];
    v[i] = acc / static_cast<S>(hw);
  }
  return detail::make_op<S>({n, c}, std::move(v), {x}, [n, c, hw](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    S inv = S(1) / static_cast<S>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
      S g = self.grad[i] * inv;
      for (std::size_t j = 0; j < hw; ++j) p.grad[i * hw + j] += g;
    }
  });
}

// Spatial batch norm. Training mode normalizes with per-channel batch moments
// (population variance) and folds the batch into the running statistics with
// `momentum`; inference mode applies (x - mu) / sqrt(v + eps) * gamma + beta
// from the running buffers exactly. The running buffers are plain state, not
// graph nodes.
template <typename S>
Tensor<S> batch_norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       std::vector<S>& running_mean, std::vector<S>& running_var,
                       bool training, S momentum = S(0.1), S eps = S(1e-5)) {
  if (x.rank() != 4) throw ShapeError("batch_norm2d needs NCHW input, got " +
                                      shape_str(x.shape()));
  std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("batch_norm2d parameter size mismatch for " + std::to_string(c) +
                     " channels");
  }
  std::size_t m = n * hw;
  const auto& xv = x.value();
  std::vector<S> mean(c, S(0)), var(c, S(0));
  if (training) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const S* plane = xv.data() + (b * c + ch) * hw;
        S acc = S(0);
        for (std::size_t j = 0; j < hw; ++j) acc += plane[j];
        mean[ch] += acc;
      }
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<S>(m);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const S* plane = xv.data() + (b * c + ch) * hw;
        S acc = S(0);
        for (std::size_t j = 0; j < hw; ++j) {
          S d = plane[j] - mean[ch];
          acc += d * d;
        }
        var[ch] += acc;
      }
    for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= static_cast<S>(m);
    for (std::size_t ch = 0; ch < c; ++ch) {
      running_mean[ch] = (S(1) - momentum) * running_mean[ch] + momentum * mean[ch];
      running_var[ch] = (S(1) - momentum) * running_var[ch] + momentum * var[ch];
    }
  } else {
    mean = running_mean;
    var = running_var;
  }
  auto inv_std = std::make_shared<std::vector<S>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = S(1) / std::sqrt(var[ch] + eps);
  auto mean_p = std::make_shared<std::vector<S>>(std::move(mean));
  std::vector<S> v(x.size());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const S* plane = xv.data() + (b * c + ch) * hw;
      S* out = v.data() + (b * c + ch) * hw;
      S mu = (*mean_p)[ch], is = (*inv_std)[ch], ga = gv[ch], be = bv[ch];
      for (std::size_t j = 0; j < hw; ++j) out[j] = (plane[j] - mu) * is * ga + be;
    }
  return detail::make_op<S>(
      x.shape(), std::move(v), {x, gamma, beta},
      [n, c, hw, m, training, mean_p, inv_std](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& xv = px.value;
        // Per-channel sums of g and g*xhat.
        std::vector<S> sum_g(c, S(0)), sum_gx(c, S(0));
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const S* plane = xv.data() + (b * c + ch) * hw;
            const S* g = self.grad.data() + (b * c + ch) * hw;
            S mu = (*mean_p)[ch], is = (*inv_std)[ch];
            S a0 = S(0), a1 = S(0);
            for (std::size_t j = 0; j < hw; ++j) {
              a0 += g[j];
              a1 += g[j] * (plane[j] - mu) * is;
            }
            sum_g[ch] += a0;
            sum_gx[ch] += a1;
          }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) pb.grad[ch] += sum_g[ch];
        }
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) pg.grad[ch] += sum_gx[ch];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          const auto& gv = pg.value;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const S* plane = xv.data() + (b * c + ch) * hw;
              const S* g = self.grad.data() + (b * c + ch) * hw;
              S* gx = px.grad.data() + (b * c + ch) * hw;
              S mu = (*mean_p)[ch], is = (*inv_std)[ch], ga = gv[ch];
              if (training) {
                S mg = sum_g[ch] / static_cast<S>(m);
                S mgx = sum_gx[ch] / static_cast<S>(m);
                for (std::size_t j = 0; j < hw; ++j) {
                  S xhat = (plane[j] - mu) * is;
                  gx[j] += ga * is * (g[j] - mg - xhat * mgx);
                }
              } else {
                for (std::size_t j = 0; j < hw; ++j) gx[j] += ga * is * g[j];
              }
            }
        }
      });
}

// Inverted dropout: keep with probability 1-p and scale by 1/(1-p) so the
// expected activation is unchanged; identity at inference or when p == 0.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ValidationError("dropout probability must be in [0, 1), got " + fmt_g(p));
  }
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<S>>(x.size());
  S scale = S(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = rand_uniform(rng) >= p ? scale : S(0);
  }
  std::vector<S> v(x.size());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < x.size(); ++i) v[i] = xv[i] * (*mask)[i];
  return detail::make_op<S>(x.shape(), std::move(v), {x}, [mask](detail::Node<S>& self) {
    auto& p0 = *self.parents[0];
    if (!p0.requires_grad) return;
    p0.ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) p0.grad[i] += self.grad[i] * (*mask)[i];
  });
}

}  // namespace burstkit
