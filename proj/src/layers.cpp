#include "careseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace careseg {

namespace {

template <class T>
void check_conv_shapes(const Tensor5<T>& in, const Tensor5<T>& kernel, const std::vector<T>& bias) {
  if (kernel.c != in.c)
    throw ShapeMismatch("conv3d: kernel expects " + std::to_string(kernel.c) +
                        " input channels, got " + std::to_string(in.c));
  if (int64_t(bias.size()) != kernel.n) throw ShapeMismatch("conv3d: bias/kernel channel mismatch");
  if (kernel.dx % 2 == 0 || kernel.dy % 2 == 0 || kernel.dz % 2 == 0)
    throw ShapeMismatch("conv3d: kernel extents must be odd");
}

}  // namespace

template <class T>
void conv3d_forward(const Tensor5<T>& in, const Tensor5<T>& kernel, const std::vector<T>& bias,
                    Tensor5<T>& out) {
  check_conv_shapes(in, kernel, bias);
  const int64_t X = in.dx, Y = in.dy, Z = in.dz, Ci = in.c, Co = kernel.n, B = in.n;
  const int64_t kdx = kernel.dx, kdy = kernel.dy, kdz = kernel.dz;
  const int64_t rx = kdx / 2, ry = kdy / 2, rz = kdz / 2;
  if (!(out.n == B && out.c == Co && out.dx == X && out.dy == Y && out.dz == Z))
    out = Tensor5<T>(B, Co, X, Y, Z);

#pragma omp parallel
  {
    // up to 4 output-channel rows accumulated per pass so each loaded input
    // row is reused across the channel block
    std::vector<T> accbuf(size_t(4 * X));
#pragma omp for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t z = 0; z < Z; ++z)
        for (int64_t y = 0; y < Y; ++y)
          for (int64_t cob = 0; cob < Co; cob += 4) {
            const int nco = int(std::min<int64_t>(4, Co - cob));
            for (int i = 0; i < nco; ++i) {
              T* a = &accbuf[size_t(i) * X];
              const T bv = bias[size_t(cob + i)];
              for (int64_t x = 0; x < X; ++x) a[x] = bv;
            }
            for (int64_t ci = 0; ci < Ci; ++ci)
              for (int64_t kz = 0; kz < kdz; ++kz) {
                const int64_t sz = z + kz - rz;
                if (sz < 0 || sz >= Z) continue;
                for (int64_t ky = 0; ky < kdy; ++ky) {
                  const int64_t sy = y + ky - ry;
                  if (sy < 0 || sy >= Y) continue;
                  const T* __restrict srow = in.row(b, ci, sy, sz);
                  for (int i = 0; i < nco; ++i) {
                    const T* wrow = kernel.row(cob + i, ci, ky, kz);
                    T* __restrict a = &accbuf[size_t(i) * X];
                    if (kdx == 3) {
                      const T w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                      if (X == 1) {
                        a[0] += w1 * srow[0];
                      } else {
                        for (int64_t x = 1; x < X - 1; ++x)
                          a[x] += w0 * srow[x - 1] + w1 * srow[x] + w2 * srow[x + 1];
                        a[0] += w1 * srow[0] + w2 * srow[1];
                        a[X - 1] += w0 * srow[X - 2] + w1 * srow[X - 1];
                      }
                    } else {
                      for (int64_t kx = 0; kx < kdx; ++kx) {
                        const T w = wrow[kx];
                        const int64_t sh = kx - rx;
                        const int64_t x0 = std::max<int64_t>(0, -sh);
                        const int64_t x1 = std::min<int64_t>(X, X - sh);
                        const T* s = srow + sh;
                        for (int64_t x = x0; x < x1; ++x) a[x] += w * s[x];
                      }
                    }
                  }
                }
              }
            for (int i = 0; i < nco; ++i)
              std::memcpy(out.row(b, cob + i, y, z), &accbuf[size_t(i) * X], size_t(X) * sizeof(T));
          }
  }
}

template <class T>
void conv3d_backward(const Tensor5<T>& in, const Tensor5<T>& kernel, const Tensor5<T>& grad_out,
                     Tensor5<T>& grad_in, Tensor5<T>& grad_kernel, std::vector<T>& grad_bias) {
  check_conv_shapes(in, kernel, grad_bias.empty() ? std::vector<T>(size_t(kernel.n), T(0))
                                                  : grad_bias);
  const int64_t X = in.dx, Y = in.dy, Z = in.dz, Ci = in.c, Co = kernel.n, B = in.n;
  const int64_t kdx = kernel.dx, kdy = kernel.dy, kdz = kernel.dz;
  const int64_t rx = kdx / 2, ry = kdy / 2, rz = kdz / 2;

  // grad wrt input: correlate the upstream gradient with the channel-
  // transposed, spatially flipped kernel; reuses the tuned forward kernel.
  Tensor5<T> flipped(Ci, Co, kdx, kdy, kdz);
  for (int64_t co = 0; co < Co; ++co)
    for (int64_t ci = 0; ci < Ci; ++ci)
      for (int64_t kz = 0; kz < kdz; ++kz)
        for (int64_t ky = 0; ky < kdy; ++ky)
          for (int64_t kx = 0; kx < kdx; ++kx)
            flipped.at(ci, co, kx, ky, kz) =
                kernel.at(co, ci, kdx - 1 - kx, kdy - 1 - ky, kdz - 1 - kz);
  const std::vector<T> zero_bias(size_t(Ci), T(0));
  conv3d_forward(grad_out, flipped, zero_bias, grad_in);

  // grad wrt kernel: one dot product per (co, ci, tap)
  if (!grad_kernel.same_shape(kernel)) grad_kernel = Tensor5<T>(Co, Ci, kdx, kdy, kdz);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < Co; ++co)
    for (int64_t ci = 0; ci < Ci; ++ci) {
      std::vector<double> acc(size_t(kdx * kdy * kdz), 0.0);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t kz = 0; kz < kdz; ++kz) {
          const int64_t zlo = std::max<int64_t>(0, rz - kz);
          const int64_t zhi = std::min<int64_t>(Z, Z + rz - kz);
          for (int64_t z = zlo; z < zhi; ++z) {
            const int64_t sz = z + kz - rz;
            for (int64_t ky = 0; ky < kdy; ++ky) {
              const int64_t ylo = std::max<int64_t>(0, ry - ky);
              const int64_t yhi = std::min<int64_t>(Y, Y + ry - ky);
              for (int64_t y = ylo; y < yhi; ++y) {
                const int64_t sy = y + ky - ry;
                const T* __restrict grow = grad_out.row(b, co, y, z);
                const T* __restrict srow = in.row(b, ci, sy, sz);
                for (int64_t kx = 0; kx < kdx; ++kx) {
                  const int64_t sh = kx - rx;
                  const int64_t x0 = std::max<int64_t>(0, -sh);
                  const int64_t x1 = std::min<int64_t>(X, X - sh);
                  const T* s = srow + sh;
                  double dot = 0.0;
                  for (int64_t x = x0; x < x1; ++x) dot += double(grow[x]) * double(s[x]);
                  acc[size_t((kz * kdy + ky) * kdx + kx)] += dot;
                }
              }
            }
          }
        }
      for (int64_t kz = 0; kz < kdz; ++kz)
        for (int64_t ky = 0; ky < kdy; ++ky)
          for (int64_t kx = 0; kx < kdx; ++kx)
            grad_kernel.at(co, ci, kx, ky, kz) = T(acc[size_t((kz * kdy + ky) * kdx + kx)]);
    }

  // grad wrt bias
  grad_bias.assign(size_t(Co), T(0));
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < Co; ++co) {
    double acc = 0.0;
    for (int64_t b = 0; b < B; ++b) {
      const T* p = grad_out.row(b, co, 0, 0);
      const int64_t n = grad_out.spatial();
      for (int64_t i = 0; i < n; ++i) acc += double(p[i]);
    }
    grad_bias[size_t(co)] = T(acc);
  }
}

// ---- pointwise ----------------------------------------------------------------

template <class T>
void leaky_relu_forward(Tensor5<T>& x, T slope) {
  const int64_t n = x.size();
  T* p = x.data.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) p[i] = p[i] > T(0) ? p[i] : slope * p[i];
}

template <class T>
void leaky_relu_backward(const Tensor5<T>& pre, Tensor5<T>& grad, T slope) {
  if (!pre.same_shape(grad)) throw ShapeMismatch("leaky_relu_backward: shape mismatch");
  const int64_t n = grad.size();
  const T* xp = pre.data.data();
  T* g = grad.data.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    if (xp[i] <= T(0)) g[i] *= slope;
}

template <class T>
void dropout_forward(Tensor5<T>& x, T rate, bool training, Rng& rng, std::vector<T>& mask) {
  mask.clear();
  if (!training || rate <= T(0)) return;  // identity, empty mask
  const T keep_scale = T(1) / (T(1) - rate);
  const int64_t n = x.size();
  mask.resize(size_t(n));
  // mask draw stays serial so the consumed RNG sequence is reproducible
  for (int64_t i = 0; i < n; ++i) {
    const T m = rng.uniform() < double(rate) ? T(0) : keep_scale;
    mask[size_t(i)] = m;
    x.data[size_t(i)] *= m;
  }
}

template <class T>
void dropout_backward(Tensor5<T>& grad, const std::vector<T>& mask) {
  if (mask.empty()) return;
  if (mask.size() != grad.data.size()) throw ShapeMismatch("dropout_backward: mask size mismatch");
  const int64_t n = grad.size();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) grad.data[size_t(i)] *= mask[size_t(i)];
}

// ---- max pooling ----------------------------------------------------------------

template <class T>
Tensor5<T> maxpool3d_forward(const Tensor5<T>& x, std::vector<int64_t>& argmax) {
  if (x.dx % 2 || x.dy % 2 || x.dz % 2)
    throw OddSpatialDims("maxpool3d requires even spatial dims");
  const int64_t OX = x.dx / 2, OY = x.dy / 2, OZ = x.dz / 2;
  Tensor5<T> out(x.n, x.c, OX, OY, OZ);
  argmax.assign(size_t(out.size()), 0);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < x.n; ++b)
    for (int64_t c = 0; c < x.c; ++c)
      for (int64_t oz = 0; oz < OZ; ++oz)
        for (int64_t oy = 0; oy < OY; ++oy)
          for (int64_t ox = 0; ox < OX; ++ox) {
            T best{};
            int64_t best_idx = -1;
            for (int64_t dz = 0; dz < 2; ++dz)
              for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx) {
                  const int64_t idx = x.index(b, c, 2 * ox + dx, 2 * oy + dy, 2 * oz + dz);
                  const T v = x.data[size_t(idx)];
                  if (best_idx < 0 || v > best) {  // first maximal element wins
                    best = v;
                    best_idx = idx;
                  }
                }
            const int64_t o = out.index(b, c, ox, oy, oz);
            out.data[size_t(o)] = best;
            argmax[size_t(o)] = best_idx;
          }
  return out;
}

template <class T>
Tensor5<T> maxpool3d_backward(const Tensor5<T>& x, const Tensor5<T>& grad_out,
                              const std::vector<int64_t>& argmax) {
  Tensor5<T> grad_in(x.n, x.c, x.dx, x.dy, x.dz);
  const int64_t n = grad_out.size();
  // windows are disjoint, so each input element is written at most once
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    grad_in.data[size_t(argmax[size_t(i)])] = grad_out.data[size_t(i)];
  return grad_in;
}

// ---- trilinear upsampling -----------------------------------------------------

namespace {

struct LinTap {
  int64_t i0, i1;
  double f;  // weight of i1
};

std::vector<LinTap> upsample_taps(int64_t out_n, int64_t in_n) {
  std::vector<LinTap> taps(size_t(out_n));
  for (int64_t j = 0; j < out_n; ++j) {
    double u = (double(j) + 0.5) / 2.0 - 0.5;
    u = std::clamp(u, 0.0, double(in_n - 1));
    const int64_t i0 = int64_t(u);
    const int64_t i1 = std::min(i0 + 1, in_n - 1);
    taps[size_t(j)] = {i0, i1, u - double(i0)};
  }
  return taps;
}

}  // namespace

template <class T>
Tensor5<T> upsample2x_forward(const Tensor5<T>& x) {
  const int64_t OX = 2 * x.dx, OY = 2 * x.dy, OZ = 2 * x.dz;
  Tensor5<T> out(x.n, x.c, OX, OY, OZ);
  const auto tx = upsample_taps(OX, x.dx);
  const auto ty = upsample_taps(OY, x.dy);
  const auto tz = upsample_taps(OZ, x.dz);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < x.n; ++b)
    for (int64_t c = 0; c < x.c; ++c)
      for (int64_t z = 0; z < OZ; ++z) {
        const auto& wz = tz[size_t(z)];
        for (int64_t y = 0; y < OY; ++y) {
          const auto& wy = ty[size_t(y)];
          const T* r00 = x.row(b, c, wy.i0, wz.i0);
          const T* r10 = x.row(b, c, wy.i1, wz.i0);
          const T* r01 = x.row(b, c, wy.i0, wz.i1);
          const T* r11 = x.row(b, c, wy.i1, wz.i1);
          T* orow = out.row(b, c, y, z);
          for (int64_t xo = 0; xo < OX; ++xo) {
            const auto& wx = tx[size_t(xo)];
            const double fx = wx.f, fy = wy.f, fz = wz.f;
            const double c00 = double(r00[wx.i0]) + fx * (double(r00[wx.i1]) - double(r00[wx.i0]));
            const double c10 = double(r10[wx.i0]) + fx * (double(r10[wx.i1]) - double(r10[wx.i0]));
            const double c01 = double(r01[wx.i0]) + fx * (double(r01[wx.i1]) - double(r01[wx.i0]));
            const double c11 = double(r11[wx.i0]) + fx * (double(r11[wx.i1]) - double(r11[wx.i0]));
            const double c0 = c00 + fy * (c10 - c00);
            const double c1 = c01 + fy * (c11 - c01);
            orow[xo] = T(c0 + fz * (c1 - c0));
          }
        }
      }
  return out;
}

template <class T>
Tensor5<T> upsample2x_backward(const Tensor5<T>& grad_out, int64_t in_dx, int64_t in_dy,
                               int64_t in_dz) {
  Tensor5<T> grad_in(grad_out.n, grad_out.c, in_dx, in_dy, in_dz);
  const auto tx = upsample_taps(grad_out.dx, in_dx);
  const auto ty = upsample_taps(grad_out.dy, in_dy);
  const auto tz = upsample_taps(grad_out.dz, in_dz);

  // transpose: gather, per input element, the forward weights that read it
  auto contribs = [](const std::vector<LinTap>& taps, int64_t in_n) {
    std::vector<std::vector<std::pair<int64_t, double>>> c(size_t(in_n));
    for (int64_t j = 0; j < int64_t(taps.size()); ++j) {
      const auto& t = taps[size_t(j)];
      if (1.0 - t.f > 0.0) c[size_t(t.i0)].push_back({j, 1.0 - t.f});
      if (t.f > 0.0) c[size_t(t.i1)].push_back({j, t.f});
    }
    return c;
  };
  const auto cx = contribs(tx, in_dx);
  const auto cy = contribs(ty, in_dy);
  const auto cz = contribs(tz, in_dz);

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < grad_in.n; ++b)
    for (int64_t c = 0; c < grad_in.c; ++c)
      for (int64_t z = 0; z < in_dz; ++z)
        for (int64_t y = 0; y < in_dy; ++y)
          for (int64_t x = 0; x < in_dx; ++x) {
            double acc = 0.0;
            for (const auto& [jz, wz] : cz[size_t(z)])
              for (const auto& [jy, wy] : cy[size_t(y)]) {
                const T* grow = grad_out.row(b, c, jy, jz);
                for (const auto& [jx, wx] : cx[size_t(x)]) acc += wz * wy * wx * double(grow[jx]);
              }
            grad_in.at(b, c, x, y, z) = T(acc);
          }
  return grad_in;
}

// ---- concat ----------------------------------------------------------------------

template <class T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b) {
  if (a.n != b.n || a.dx != b.dx || a.dy != b.dy || a.dz != b.dz)
    throw ShapeMismatch("concat_channels: spatial/batch shape mismatch");
  Tensor5<T> out(a.n, a.c + b.c, a.dx, a.dy, a.dz);
  const int64_t sp = a.spatial();
  for (int64_t bn = 0; bn < a.n; ++bn) {
    std::memcpy(&out.data[size_t(out.index(bn, 0, 0, 0, 0))],
                &a.data[size_t(a.index(bn, 0, 0, 0, 0))], size_t(a.c * sp) * sizeof(T));
    std::memcpy(&out.data[size_t(out.index(bn, a.c, 0, 0, 0))],
                &b.data[size_t(b.index(bn, 0, 0, 0, 0))], size_t(b.c * sp) * sizeof(T));
  }
  return out;
}

template <class T>
void split_channels(const Tensor5<T>& grad_cat, Tensor5<T>& grad_a, Tensor5<T>& grad_b) {
  if (grad_cat.c != grad_a.c + grad_b.c) throw ShapeMismatch("split_channels: channel mismatch");
  const int64_t sp = grad_cat.spatial();
  for (int64_t bn = 0; bn < grad_cat.n; ++bn) {
    std::memcpy(&grad_a.data[size_t(grad_a.index(bn, 0, 0, 0, 0))],
                &grad_cat.data[size_t(grad_cat.index(bn, 0, 0, 0, 0))],
                size_t(grad_a.c * sp) * sizeof(T));
    std::memcpy(&grad_b.data[size_t(grad_b.index(bn, 0, 0, 0, 0))],
                &grad_cat.data[size_t(grad_cat.index(bn, grad_a.c, 0, 0, 0))],
                size_t(grad_b.c * sp) * sizeof(T));
  }
}

// ---- softmax ----------------------------------------------------------------------

template <class T>
Tensor5<T> softmax_channels_forward(const Tensor5<T>& logits) {
  Tensor5<T> out(logits.n, logits.c, logits.dx, logits.dy, logits.dz);
  const int64_t sp = logits.spatial();
  const int64_t K = logits.c;
  for (int64_t b = 0; b < logits.n; ++b) {
    const T* in = &logits.data[size_t(b * K * sp)];
    T* o = &out.data[size_t(b * K * sp)];
#pragma omp parallel for schedule(static)
    for (int64_t v = 0; v < sp; ++v) {
      T mx = in[v];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, in[size_t(k * sp + v)]);
      double sum = 0.0;
      for (int64_t k = 0; k < K; ++k) {
        const double e = std::exp(double(in[size_t(k * sp + v)] - mx));
        o[size_t(k * sp + v)] = T(e);
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int64_t k = 0; k < K; ++k) o[size_t(k * sp + v)] = T(double(o[size_t(k * sp + v)]) * inv);
    }
  }
  return out;
}

template <class T>
Tensor5<T> softmax_channels_backward(const Tensor5<T>& q, const Tensor5<T>& grad_probs) {
  if (!q.same_shape(grad_probs)) throw ShapeMismatch("softmax backward: shape mismatch");
  Tensor5<T> grad(q.n, q.c, q.dx, q.dy, q.dz);
  const int64_t sp = q.spatial();
  const int64_t K = q.c;
  for (int64_t b = 0; b < q.n; ++b) {
    const T* qp = &q.data[size_t(b * K * sp)];
    const T* gp = &grad_probs.data[size_t(b * K * sp)];
    T* o = &grad.data[size_t(b * K * sp)];
#pragma omp parallel for schedule(static)
    for (int64_t v = 0; v < sp; ++v) {
      double dot = 0.0;
      for (int64_t k = 0; k < K; ++k)
        dot += double(gp[size_t(k * sp + v)]) * double(qp[size_t(k * sp + v)]);
      for (int64_t k = 0; k < K; ++k)
        o[size_t(k * sp + v)] =
            T(double(qp[size_t(k * sp + v)]) * (double(gp[size_t(k * sp + v)]) - dot));
    }
  }
  return grad;
}

// ---- init ------------------------------------------------------------------------

template <class T>
void he_init(Tensor5<T>& kernel, int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / double(fan_in));
  for (auto& w : kernel.data) w = T(rng.normal(0.0, stddev));
}

// explicit instantiations: float for training, double for gradient checks
#define CARESEG_INSTANTIATE(T)                                                                 \
  template void conv3d_forward<T>(const Tensor5<T>&, const Tensor5<T>&, const std::vector<T>&, \
                                  Tensor5<T>&);                                                \
  template void conv3d_backward<T>(const Tensor5<T>&, const Tensor5<T>&, const Tensor5<T>&,    \
                                   Tensor5<T>&, Tensor5<T>&, std::vector<T>&);                 \
  template void leaky_relu_forward<T>(Tensor5<T>&, T);                                         \
  template void leaky_relu_backward<T>(const Tensor5<T>&, Tensor5<T>&, T);                     \
  template void dropout_forward<T>(Tensor5<T>&, T, bool, Rng&, std::vector<T>&);               \
  template void dropout_backward<T>(Tensor5<T>&, const std::vector<T>&);                       \
  template Tensor5<T> maxpool3d_forward<T>(const Tensor5<T>&, std::vector<int64_t>&);          \
  template Tensor5<T> maxpool3d_backward<T>(const Tensor5<T>&, const Tensor5<T>&,              \
                                            const std::vector<int64_t>&);                      \
  template Tensor5<T> upsample2x_forward<T>(const Tensor5<T>&);                                \
  template Tensor5<T> upsample2x_backward<T>(const Tensor5<T>&, int64_t, int64_t, int64_t);    \
  template Tensor5<T> concat_channels<T>(const Tensor5<T>&, const Tensor5<T>&);                \
  template void split_channels<T>(const Tensor5<T>&, Tensor5<T>&, Tensor5<T>&);                \
  template Tensor5<T> softmax_channels_forward<T>(const Tensor5<T>&);                          \
  template Tensor5<T> softmax_channels_backward<T>(const Tensor5<T>&, const Tensor5<T>&);      \
  template void he_init<T>(Tensor5<T>&, int64_t, Rng&);

CARESEG_INSTANTIATE(float)
CARESEG_INSTANTIATE(double)

#undef CARESEG_INSTANTIATE

}  // namespace careseg
