#pragma once

#include <cstdint>
#include <vector>

#include "careseg/errors.hpp"

namespace careseg {

// Dense 5D tensor (batch, channels, x, y, z), contiguous with x fastest so
// the innermost kernel loops run over unit-stride rows. Templated on the
// scalar type: training runs in float, gradient checks instantiate double.
template <class T>
struct Tensor5 {
  int64_t n = 0, c = 0, dx = 0, dy = 0, dz = 0;
  std::vector<T> data;

  Tensor5() = default;
  Tensor5(int64_t n_, int64_t c_, int64_t dx_, int64_t dy_, int64_t dz_, T fill = T(0))
      : n(n_), c(c_), dx(dx_), dy(dy_), dz(dz_),
        data(size_t(n_ * c_ * dx_ * dy_ * dz_), fill) {}

  int64_t size() const { return n * c * dx * dy * dz; }
  int64_t spatial() const { return dx * dy * dz; }

  int64_t index(int64_t b, int64_t ch, int64_t x, int64_t y, int64_t z) const {
    return x + dx * (y + dy * (z + dz * (ch + c * b)));
  }
  T& at(int64_t b, int64_t ch, int64_t x, int64_t y, int64_t z) {
    return data[size_t(index(b, ch, x, y, z))];
  }
  T at(int64_t b, int64_t ch, int64_t x, int64_t y, int64_t z) const {
    return data[size_t(index(b, ch, x, y, z))];
  }

  T* row(int64_t b, int64_t ch, int64_t y, int64_t z) { return &data[size_t(index(b, ch, 0, y, z))]; }
  const T* row(int64_t b, int64_t ch, int64_t y, int64_t z) const {
    return &data[size_t(index(b, ch, 0, y, z))];
  }

  bool same_shape(const Tensor5& o) const {
    return n == o.n && c == o.c && dx == o.dx && dy == o.dy && dz == o.dz;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  Tensor5<U> cast() const {
    Tensor5<U> out(n, c, dx, dy, dz);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

}  // namespace careseg
