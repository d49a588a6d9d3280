#include "stairpool/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>

#include "stairpool/error.hpp"

namespace stairpool {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using Dims3 = std::array<std::int64_t, 3>;

// Lifts 2-axis extents to (depth, height, width) with a unit depth axis.
Dims3 lift(const Extents& e, int spatial_dims, std::int64_t fill) {
  if (static_cast<int>(e.size()) != spatial_dims) {
    throw Error(Errc::ShapeMismatch, "expected " + std::to_string(spatial_dims) +
                                         " per-axis extents, got " + std::to_string(e.size()));
  }
  if (spatial_dims == 2) return {fill, e[0], e[1]};
  return {e[0], e[1], e[2]};
}

Dims3 spatial_of(const Geometry& g) { return {g.d, g.h, g.w}; }

Shape make_shape(std::int64_t n, std::int64_t c, const Dims3& s, int spatial_dims) {
  if (spatial_dims == 2) return {n, c, s[1], s[2]};
  return {n, c, s[0], s[1], s[2]};
}

struct ConvGeom {
  std::int64_t cin, cout;
  Dims3 in, k, pad, stride, out;
  std::int64_t kvol() const { return k[0] * k[1] * k[2]; }
  std::int64_t in_vol() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_vol() const { return out[0] * out[1] * out[2]; }
  bool pointwise() const {
    return kvol() == 1 && pad == Dims3{0, 0, 0} && stride == Dims3{1, 1, 1};
  }
};

// col is (cin * kvol, ld), row-major; this sample fills columns [0, out_vol).
void im2col(const double* x, const ConvGeom& g, double* col, std::int64_t ld) {
  const auto [od, oh, ow] = g.out;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.in_vol();
    for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
      for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
        for (std::int64_t kx = 0; kx < g.k[2]; ++kx, ++row) {
          double* dst = col + row * ld;
          for (std::int64_t oz = 0; oz < od; ++oz) {
            const std::int64_t iz = oz * g.stride[0] - g.pad[0] + kz;
            const bool zok = iz >= 0 && iz < g.in[0];
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
              double* d = dst + (oz * oh + oy) * ow;
              if (!zok || iy < 0 || iy >= g.in[1]) {
                std::fill(d, d + ow, 0.0);
                continue;
              }
              const double* src = xc + (iz * g.in[1] + iy) * g.in[2];
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t ix = ox * g.stride[2] - g.pad[2] + kx;
                d[ox] = (ix >= 0 && ix < g.in[2]) ? src[ix] : 0.0;
              }
            }
          }
        }
  }
}

// Adjoint of im2col: scatter-adds col back into dx.
void col2im(const double* col, const ConvGeom& g, double* dx, std::int64_t ld) {
  const auto [od, oh, ow] = g.out;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    double* xc = dx + c * g.in_vol();
    for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
      for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
        for (std::int64_t kx = 0; kx < g.k[2]; ++kx, ++row) {
          const double* srcrow = col + row * ld;
          for (std::int64_t oz = 0; oz < od; ++oz) {
            const std::int64_t iz = oz * g.stride[0] - g.pad[0] + kz;
            if (iz < 0 || iz >= g.in[0]) continue;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
              if (iy < 0 || iy >= g.in[1]) continue;
              const double* s = srcrow + (oz * oh + oy) * ow;
              double* d = xc + (iz * g.in[1] + iy) * g.in[2];
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t ix = ox * g.stride[2] - g.pad[2] + kx;
                if (ix >= 0 && ix < g.in[2]) d[ix] += s[ox];
              }
            }
          }
        }
  }
}

// Reusable per-thread buffers, so large column matrices are not page-faulted
// in on every call. Contents are unspecified on return.
double* scratch(int slot, std::int64_t n) {
  thread_local std::array<std::vector<double>, 5> buffers;
  auto& buf = buffers[static_cast<std::size_t>(slot)];
  if (static_cast<std::int64_t>(buf.size()) < n) buf.resize(static_cast<std::size_t>(n));
  return buf.data();
}

// Samples per GEMM: enough to keep deep, small layers efficient while the
// column matrix stays cache-friendly.
std::int64_t samples_per_chunk(std::int64_t rows, std::int64_t per_sample, std::int64_t batch) {
  constexpr std::int64_t kTarget = std::int64_t{1} << 19;
  return std::clamp<std::int64_t>(kTarget / std::max<std::int64_t>(rows * per_sample, 1), 1, batch);
}

// Columns for `batch` consecutive samples, (cin * kvol, batch * out_vol).
void fill_columns(const double* x, const ConvGeom& g, std::int64_t batch, double* col) {
  const std::int64_t P = g.out_vol();
  const std::int64_t NP = batch * P;
  for (std::int64_t n = 0; n < batch; ++n) {
    const double* xn = x + n * g.cin * g.in_vol();
    if (g.pointwise()) {
      for (std::int64_t c = 0; c < g.cin; ++c) std::copy_n(xn + c * P, P, col + c * NP + n * P);
    } else {
      im2col(xn, g, col + n * P, NP);
    }
  }
}

// (batch, rows, P) -> (rows, batch * P).
void gather_batch(const double* x, std::int64_t rows, std::int64_t P, std::int64_t batch, double* out) {
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t r = 0; r < rows; ++r) std::copy_n(x + (n * rows + r) * P, P, out + r * batch * P + n * P);
  }
}

void accumulate(double* dst, const double* src, std::size_t n) {
  if (!dst) return;
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

inline constexpr std::int64_t kTileDoubles = std::int64_t{1} << 17;

// Stride-1 convolution over a zero-padded copy of the input. Each sample's
// padded volume is laid out contiguously, so output position j of a chunk
// reads padded element j + offset(tap); columns that fall in padding are
// computed and discarded. Columns are processed in tiles that stay in L2
// across all taps.
struct ShiftedConv {
  ConvGeom g;
  Dims3 padded;
  std::int64_t vol;    // padded volume per sample
  std::int64_t chunk;  // samples per pass

  ShiftedConv(const ConvGeom& geom, std::int64_t batch) : g(geom) {
    for (int a = 0; a < 3; ++a) padded[a] = g.in[a] + 2 * g.pad[a];
    vol = padded[0] * padded[1] * padded[2];
    chunk = samples_per_chunk(std::max(g.cin, g.cout), vol, batch);
  }

  std::int64_t offset(std::int64_t k) const {
    const std::int64_t kx = k % g.k[2], ky = (k / g.k[2]) % g.k[1], kz = k / (g.k[1] * g.k[2]);
    return (kz * padded[1] + ky) * padded[2] + kx;
  }
  std::int64_t out_index(std::int64_t oz, std::int64_t oy, std::int64_t ox) const {
    return (oz * padded[1] + oy) * padded[2] + ox;
  }
  // Columns needed so that every valid output of nb samples is covered.
  std::int64_t span(std::int64_t nb) const {
    return (nb - 1) * vol + out_index(g.out[0] - 1, g.out[1] - 1, g.out[2] - 1) + 1;
  }

  // Column tile width keeping one tap's input and output tiles within L2.
  std::int64_t tile() const { return std::max<std::int64_t>(256, kTileDoubles / (g.cin + g.cout)); }

  // Columns [j0, j0 + n) of tap k's view of the padded input.
  Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> window(const double* xp, std::int64_t nb, std::int64_t k,
                                                            std::int64_t j0, std::int64_t n) const {
    return {xp + offset(k) + j0, g.cin, n, Eigen::OuterStride<>(nb * vol)};
  }
  Eigen::Map<RowMat, 0, Eigen::OuterStride<>> window_mut(double* xp, std::int64_t nb, std::int64_t k,
                                                         std::int64_t j0, std::int64_t n) const {
    return {xp + offset(k) + j0, g.cin, n, Eigen::OuterStride<>(nb * vol)};
  }

  // (cout, cin, kvol) -> (kvol, cout, cin).
  const double* pack_weight(const double* w, double* out) const {
    const std::int64_t kv = g.kvol(), cc = g.cout * g.cin;
    for (std::int64_t i = 0; i < cc; ++i) {
      for (std::int64_t k = 0; k < kv; ++k) out[k * cc + i] = w[i * kv + k];
    }
    return out;
  }
  void unpack_weight_grad(const double* packed, double* gw) const {
    const std::int64_t kv = g.kvol(), cc = g.cout * g.cin;
    for (std::int64_t i = 0; i < cc; ++i) {
      for (std::int64_t k = 0; k < kv; ++k) gw[i * kv + k] += packed[k * cc + i];
    }
  }

  // Writes one padded block: the box `box` of contiguous rows from src at
  // `origin`, zeros elsewhere. Only the first `limit` elements are touched.
  void place(const double* src, const Dims3& box, const Dims3& origin, double* dst, std::int64_t limit) const {
    auto zero = [&](std::int64_t from, std::int64_t to) {
      to = std::min(to, limit);
      if (from < to) std::fill(dst + from, dst + to, 0.0);
    };
    const std::int64_t plane = padded[1] * padded[2];
    for (std::int64_t z = 0; z < padded[0]; ++z) {
      const std::int64_t zi = z - origin[0];
      if (zi < 0 || zi >= box[0]) {
        zero(z * plane, (z + 1) * plane);
        continue;
      }
      for (std::int64_t yy = 0; yy < padded[1]; ++yy) {
        const std::int64_t row = z * plane + yy * padded[2];
        const std::int64_t yi = yy - origin[1];
        if (yi < 0 || yi >= box[1]) {
          zero(row, row + padded[2]);
          continue;
        }
        zero(row, row + origin[2]);
        const std::int64_t at = row + origin[2];
        std::copy_n(src + (zi * box[1] + yi) * box[2], std::max<std::int64_t>(0, std::min(box[2], limit - at)),
                    dst + at);
        zero(at + box[2], row + padded[2]);
      }
    }
  }

  // xp is (cin, nb * vol).
  void pad_input(const double* x, std::int64_t n0, std::int64_t nb, double* xp) const {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      for (std::int64_t n = 0; n < nb; ++n) {
        place(x + ((n0 + n) * g.cin + c) * g.in_vol(), g.in, g.pad, xp + c * nb * vol + n * vol, vol);
      }
    }
  }
  void crop_input_grad(const double* dxp, std::int64_t n0, std::int64_t nb, double* gx) const {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      for (std::int64_t n = 0; n < nb; ++n) {
        double* dst = gx + ((n0 + n) * g.cin + c) * g.in_vol();
        const double* src = dxp + c * nb * vol + n * vol;
        for (std::int64_t z = 0; z < g.in[0]; ++z) {
          for (std::int64_t yy = 0; yy < g.in[1]; ++yy) {
            accumulate(dst + (z * g.in[1] + yy) * g.in[2],
                       src + ((z + g.pad[0]) * padded[1] + yy + g.pad[1]) * padded[2] + g.pad[2],
                       static_cast<std::size_t>(g.in[2]));
          }
        }
      }
    }
  }

  // Y is (cout, L); valid columns are copied out with the bias added.
  void crop_output(const double* Y, std::int64_t L, std::int64_t n0, std::int64_t nb, const double* bias,
                   double* y) const {
    for (std::int64_t n = 0; n < nb; ++n) {
      for (std::int64_t co = 0; co < g.cout; ++co) {
        const double* src = Y + co * L + n * vol;
        double* dst = y + ((n0 + n) * g.cout + co) * g.out_vol();
        for (std::int64_t z = 0; z < g.out[0]; ++z) {
          for (std::int64_t yy = 0; yy < g.out[1]; ++yy) {
            const double* s = src + out_index(z, yy, 0);
            double* d = dst + (z * g.out[1] + yy) * g.out[2];
            for (std::int64_t xx = 0; xx < g.out[2]; ++xx) d[xx] = s[xx] + bias[co];
          }
        }
      }
    }
  }
  // Inverse layout of crop_output; padding columns are zero.
  void expand_grad(const double* gout, std::int64_t n0, std::int64_t nb, double* G, std::int64_t L) const {
    for (std::int64_t n = 0; n < nb; ++n) {
      for (std::int64_t co = 0; co < g.cout; ++co) {
        place(gout + ((n0 + n) * g.cout + co) * g.out_vol(), g.out, Dims3{0, 0, 0}, G + co * L + n * vol,
              L - n * vol);
      }
    }
  }
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                         shape_str(b.shape()));
  }
}

}  // namespace

Var max_pool(Tape& tape, Var xv, const Extents& kernel, const Extents& stride) {
  const Tensor& x = tape.value(xv);
  const Geometry g = Geometry::of(x.shape());
  if (kernel != stride) {
    throw Error(Errc::KernelStrideMismatch, "max_pool requires kernel == stride");
  }
  const Dims3 k = lift(kernel, g.spatial_dims, 1);
  const Dims3 in = spatial_of(g);
  for (int a = 0; a < 3; ++a) {
    if (k[a] < 1) throw Error(Errc::ShapeUnderflow, "pooling kernel entries must be >= 1");
    if (in[a] % k[a] != 0) {
      throw Error(Errc::NonDivisibleShape, "extent " + std::to_string(in[a]) +
                                               " not divisible by stride " + std::to_string(k[a]) +
                                               " in " + shape_str(x.shape()));
    }
  }
  const Dims3 out{in[0] / k[0], in[1] / k[1], in[2] / k[2]};
  Tensor y(make_shape(g.n, g.c, out, g.spatial_dims));
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.size()));

  const std::int64_t in_vol = g.spatial();
  const std::int64_t out_vol = out[0] * out[1] * out[2];
  const double* xd = x.data().data();
  for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
    const std::int64_t base = nc * in_vol;
    std::int64_t o = nc * out_vol;
    for (std::int64_t oz = 0; oz < out[0]; ++oz)
      for (std::int64_t oy = 0; oy < out[1]; ++oy)
        for (std::int64_t ox = 0; ox < out[2]; ++ox, ++o) {
          std::int64_t best = -1;
          double best_v = 0.0;
          for (std::int64_t kz = 0; kz < k[0]; ++kz)
            for (std::int64_t ky = 0; ky < k[1]; ++ky)
              for (std::int64_t kx = 0; kx < k[2]; ++kx) {
                const std::int64_t idx =
                    base + ((oz * k[0] + kz) * in[1] + (oy * k[1] + ky)) * in[2] + ox * k[2] + kx;
                if (best < 0 || xd[idx] > best_v) {
                  best = idx;
                  best_v = xd[idx];
                }
              }
          y[o] = best_v;
          argmax[static_cast<std::size_t>(o)] = best;
        }
  }

  const std::size_t xid = xv.id;
  return tape.record("max_pool", {xv}, std::move(y),
                     [xid, argmax = std::move(argmax)](Tape& t, const std::vector<double>& gout) {
                       double* gx = t.grad_target(xid);
                       if (!gx) return;
                       for (std::size_t o = 0; o < gout.size(); ++o) gx[argmax[o]] += gout[o];
                     });
}

Var conv(Tape& tape, Var xv, Var wv, Var bv, const Extents& padding, const Extents& stride_in) {
  const Tensor& x = tape.value(xv);
  const Tensor& w = tape.value(wv);
  const Tensor& b = tape.value(bv);
  const Geometry g = Geometry::of(x.shape());
  if (w.rank() != x.rank()) {
    throw Error(Errc::ShapeMismatch, "conv weight " + shape_str(w.shape()) + " vs input " +
                                         shape_str(x.shape()));
  }
  if (w.dim(1) != g.c) {
    throw Error(Errc::ChannelMismatch, "conv weight expects " + std::to_string(w.dim(1)) +
                                           " input channels, got " + std::to_string(g.c));
  }
  if (b.size() != w.dim(0)) {
    throw Error(Errc::ShapeMismatch, "conv bias length does not match output channels");
  }
  ConvGeom cg;
  cg.cin = g.c;
  cg.cout = w.dim(0);
  cg.in = spatial_of(g);
  Extents kext(w.shape().begin() + 2, w.shape().end());
  cg.k = lift(kext, g.spatial_dims, 1);
  for (int p : padding) {
    if (p < 0) throw Error(Errc::ShapeUnderflow, "negative padding");
  }
  cg.pad = lift(padding, g.spatial_dims, 0);
  cg.stride = stride_in.empty() ? Dims3{1, 1, 1} : lift(stride_in, g.spatial_dims, 1);
  for (int a = 0; a < 3; ++a) {
    if (cg.stride[a] < 1) throw Error(Errc::ShapeUnderflow, "stride must be >= 1");
    const std::int64_t span = cg.in[a] + 2 * cg.pad[a] - cg.k[a];
    if (span < 0) {
      throw Error(Errc::ShapeUnderflow, "conv output extent < 1 for input " + shape_str(x.shape()) +
                                            " and weight " + shape_str(w.shape()));
    }
    cg.out[a] = span / cg.stride[a] + 1;
  }

  Tensor y(make_shape(g.n, cg.cout, cg.out, g.spatial_dims));
  const std::size_t xid = xv.id, wid = wv.id, bid = bv.id;
  const std::int64_t batch = g.n;
  if (cg.stride == Dims3{1, 1, 1} && !cg.pointwise()) {
    const ShiftedConv sc(cg, batch);
    const std::int64_t kv = cg.kvol(), cc = cg.cout * cg.cin;
    const double* wt = sc.pack_weight(w.data().data(), scratch(3, kv * cc));
    for (std::int64_t n0 = 0; n0 < batch; n0 += sc.chunk) {
      const std::int64_t nb = std::min(sc.chunk, batch - n0);
      double* xp = scratch(0, cg.cin * nb * sc.vol);
      sc.pad_input(x.data().data(), n0, nb, xp);
      const std::int64_t L = sc.span(nb);
      MatMap Y(scratch(1, cg.cout * L), cg.cout, L);
      for (std::int64_t j0 = 0; j0 < L; j0 += sc.tile()) {
        const std::int64_t n = std::min(sc.tile(), L - j0);
        auto Yt = Y.middleCols(j0, n);
        Yt.noalias() = ConstMatMap(wt, cg.cout, cg.cin) * sc.window(xp, nb, 0, j0, n);
        for (std::int64_t k = 1; k < kv; ++k) {
          Yt.noalias() += ConstMatMap(wt + k * cc, cg.cout, cg.cin) * sc.window(xp, nb, k, j0, n);
        }
      }
      sc.crop_output(Y.data(), L, n0, nb, b.data().data(), y.data().data());
    }
    return tape.record(
        "conv", {xv, wv, bv}, std::move(y), [xid, wid, bid, cg, batch](Tape& t, const std::vector<double>& gout) {
          const Tensor& xt = t.value(Var{xid, &t});
          const Tensor& wt_ = t.value(Var{wid, &t});
          double* gx = t.grad_target(xid);
          double* gw = t.grad_target(wid);
          double* gb = t.grad_target(bid);
          const ShiftedConv sc(cg, batch);
          const std::int64_t kv = cg.kvol(), cc = cg.cout * cg.cin;
          const double* wt = sc.pack_weight(wt_.data().data(), scratch(3, kv * cc));
          double* gwp = gw ? scratch(4, kv * cc) : nullptr;
          if (gwp) std::fill(gwp, gwp + kv * cc, 0.0);
          for (std::int64_t n0 = 0; n0 < batch; n0 += sc.chunk) {
            const std::int64_t nb = std::min(sc.chunk, batch - n0);
            const std::int64_t L = sc.span(nb);
            MatMap G(scratch(1, cg.cout * L), cg.cout, L);
            sc.expand_grad(gout.data(), n0, nb, G.data(), L);
            if (gb) {
              for (std::int64_t co = 0; co < cg.cout; ++co) gb[co] += G.row(co).sum();
            }
            double* xp = gwp ? scratch(0, cg.cin * nb * sc.vol) : nullptr;
            if (xp) sc.pad_input(xt.data().data(), n0, nb, xp);
            double* dxp = gx ? scratch(2, cg.cin * nb * sc.vol) : nullptr;
            if (dxp) std::fill(dxp, dxp + cg.cin * nb * sc.vol, 0.0);
            for (std::int64_t j0 = 0; j0 < L; j0 += sc.tile()) {
              const std::int64_t n = std::min(sc.tile(), L - j0);
              for (std::int64_t k = 0; k < kv; ++k) {
                if (xp) {
                  MatMap(gwp + k * cc, cg.cout, cg.cin).noalias() +=
                      G.middleCols(j0, n) * sc.window(xp, nb, k, j0, n).transpose();
                }
                if (dxp) {
                  sc.window_mut(dxp, nb, k, j0, n).noalias() +=
                      ConstMatMap(wt + k * cc, cg.cout, cg.cin).transpose() * G.middleCols(j0, n);
                }
              }
            }
            if (dxp) sc.crop_input_grad(dxp, n0, nb, gx);
          }
          if (gwp) sc.unpack_weight_grad(gwp, gw);
        });
  }

  const std::int64_t K = cg.cin * cg.kvol();
  const std::int64_t P = cg.out_vol();
  const std::int64_t chunk = samples_per_chunk(K, P, g.n);
  ConstMatMap W(w.data().data(), cg.cout, K);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::int64_t nb = std::min(chunk, g.n - n0);
    const std::int64_t cols = nb * P;
    double* col = scratch(0, K * cols);
    fill_columns(x.data().data() + n0 * cg.cin * cg.in_vol(), cg, nb, col);
    MatMap Y(scratch(1, cg.cout * cols), cg.cout, cols);
    Y.noalias() = W * ConstMatMap(col, K, cols);
    for (std::int64_t n = 0; n < nb; ++n) {
      for (std::int64_t co = 0; co < cg.cout; ++co) {
        const double* src = Y.data() + co * cols + n * P;
        double* dst = y.data().data() + ((n0 + n) * cg.cout + co) * P;
        const double bias = b[co];
        for (std::int64_t p = 0; p < P; ++p) dst[p] = src[p] + bias;
      }
    }
  }

  return tape.record(
      "conv", {xv, wv, bv}, std::move(y),
      [xid, wid, bid, cg, batch, K, P, chunk](Tape& t, const std::vector<double>& gout) {
        const Tensor& xt = t.value(Var{xid, &t});
        const Tensor& wt = t.value(Var{wid, &t});
        double* gx = t.grad_target(xid);
        double* gw = t.grad_target(wid);
        double* gb = t.grad_target(bid);
        ConstMatMap W(wt.data().data(), cg.cout, K);
        for (std::int64_t n0 = 0; n0 < batch; n0 += chunk) {
          const std::int64_t nb = std::min(chunk, batch - n0);
          const std::int64_t cols = nb * P;
          MatMap G(scratch(1, cg.cout * cols), cg.cout, cols);
          for (std::int64_t n = 0; n < nb; ++n) {
            for (std::int64_t co = 0; co < cg.cout; ++co) {
              std::copy_n(gout.data() + ((n0 + n) * cg.cout + co) * P, P, G.data() + co * cols + n * P);
            }
          }
          if (gb) {
            for (std::int64_t co = 0; co < cg.cout; ++co) gb[co] += G.row(co).sum();
          }
          if (gw) {
            double* col = scratch(0, K * cols);
            fill_columns(xt.data().data() + n0 * cg.cin * cg.in_vol(), cg, nb, col);
            MatMap GW(gw, cg.cout, K);
            GW.noalias() += G * ConstMatMap(col, K, cols).transpose();
          }
          if (gx) {
            MatMap dcol(scratch(2, K * cols), K, cols);
            dcol.noalias() = W.transpose() * G;
            for (std::int64_t n = 0; n < nb; ++n) {
              double* gxn = gx + (n0 + n) * cg.cin * cg.in_vol();
              if (cg.pointwise()) {
                for (std::int64_t c = 0; c < K; ++c) {
                  accumulate(gxn + c * P, dcol.data() + c * cols + n * P, static_cast<std::size_t>(P));
                }
              } else {
                col2im(dcol.data() + n * P, cg, gxn, cols);
              }
            }
          }
        }
      });
}

Var transposed_conv(Tape& tape, Var xv, Var wv, Var bv, const Extents& stride) {
  const Tensor& x = tape.value(xv);
  const Tensor& w = tape.value(wv);
  const Tensor& b = tape.value(bv);
  const Geometry g = Geometry::of(x.shape());
  if (w.rank() != x.rank()) {
    throw Error(Errc::ShapeMismatch, "transposed_conv weight " + shape_str(w.shape()) +
                                         " vs input " + shape_str(x.shape()));
  }
  if (w.dim(0) != g.c) {
    throw Error(Errc::ChannelMismatch, "transposed_conv weight expects " +
                                           std::to_string(w.dim(0)) + " input channels, got " +
                                           std::to_string(g.c));
  }
  const std::int64_t cout = w.dim(1);
  if (b.size() != cout) {
    throw Error(Errc::ShapeMismatch, "transposed_conv bias length does not match output channels");
  }
  const Dims3 s = lift(stride, g.spatial_dims, 1);
  const Dims3 k = lift(Extents(w.shape().begin() + 2, w.shape().end()), g.spatial_dims, 1);
  for (int a = 0; a < 3; ++a) {
    if (s[a] < 1) throw Error(Errc::ShapeUnderflow, "stride must be >= 1");
  }
  if (k != s) throw Error(Errc::KernelStrideMismatch, "transposed_conv requires kernel == stride");

  const Dims3 in = spatial_of(g);
  const Dims3 out{in[0] * s[0], in[1] * s[1], in[2] * s[2]};
  const std::int64_t cin = g.c;
  const std::int64_t kvol = k[0] * k[1] * k[2];
  const std::int64_t P = g.spatial();
  const std::int64_t out_vol = out[0] * out[1] * out[2];
  Tensor y(make_shape(g.n, cout, out, g.spatial_dims));

  // Maps (co * kvol + kidx, p) to an output offset within one sample.
  std::vector<std::int64_t> scatter(static_cast<std::size_t>(cout * kvol * P));
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t kz = 0; kz < k[0]; ++kz)
      for (std::int64_t ky = 0; ky < k[1]; ++ky)
        for (std::int64_t kx = 0; kx < k[2]; ++kx) {
          const std::int64_t row = co * kvol + (kz * k[1] + ky) * k[2] + kx;
          std::int64_t p = 0;
          for (std::int64_t z = 0; z < in[0]; ++z)
            for (std::int64_t yy = 0; yy < in[1]; ++yy)
              for (std::int64_t xx = 0; xx < in[2]; ++xx, ++p) {
                scatter[static_cast<std::size_t>(row * P + p)] =
                    co * out_vol + ((z * s[0] + kz) * out[1] + yy * s[1] + ky) * out[2] + xx * s[2] + kx;
              }
        }

  const std::int64_t R = cout * kvol;
  const std::int64_t chunk = samples_per_chunk(std::max(cin, R), P, g.n);
  ConstMatMap W(w.data().data(), cin, R);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::int64_t nb = std::min(chunk, g.n - n0);
    const std::int64_t cols = nb * P;
    MatMap X(scratch(0, cin * cols), cin, cols);
    gather_batch(x.data().data() + n0 * cin * P, cin, P, nb, X.data());
    MatMap T(scratch(1, R * cols), R, cols);
    T.noalias() = W.transpose() * X;
    for (std::int64_t n = 0; n < nb; ++n) {
      double* yn = y.data().data() + (n0 + n) * cout * out_vol;
      for (std::int64_t r = 0; r < R; ++r) {
        const double bias = b[r / kvol];
        const double* td = T.data() + r * cols + n * P;
        const std::int64_t* sc = scatter.data() + r * P;
        for (std::int64_t p = 0; p < P; ++p) yn[sc[p]] = td[p] + bias;
      }
    }
  }

  const std::size_t xid = xv.id, wid = wv.id, bid = bv.id;
  const std::int64_t batch = g.n;
  return tape.record(
      "transposed_conv", {xv, wv, bv}, std::move(y),
      [xid, wid, bid, cin, R, kvol, P, out_vol, batch, chunk, scatter = std::move(scatter)](
          Tape& t, const std::vector<double>& gout) {
        const Tensor& xt = t.value(Var{xid, &t});
        const Tensor& wt = t.value(Var{wid, &t});
        double* gx = t.grad_target(xid);
        double* gw = t.grad_target(wid);
        double* gb = t.grad_target(bid);
        ConstMatMap W(wt.data().data(), cin, R);
        for (std::int64_t n0 = 0; n0 < batch; n0 += chunk) {
          const std::int64_t nb = std::min(chunk, batch - n0);
          const std::int64_t cols = nb * P;
          MatMap dT(scratch(1, R * cols), R, cols);
          for (std::int64_t n = 0; n < nb; ++n) {
            const double* gn = gout.data() + (n0 + n) * (R / kvol) * out_vol;
            for (std::int64_t r = 0; r < R; ++r) {
              double* dt = dT.data() + r * cols + n * P;
              const std::int64_t* sc = scatter.data() + r * P;
              for (std::int64_t p = 0; p < P; ++p) dt[p] = gn[sc[p]];
            }
          }
          if (gb) {
            for (std::int64_t r = 0; r < R; ++r) gb[r / kvol] += dT.row(r).sum();
          }
          if (gx) {
            MatMap GX(scratch(2, cin * cols), cin, cols);
            GX.noalias() = W * dT;
            for (std::int64_t n = 0; n < nb; ++n) {
              for (std::int64_t c = 0; c < cin; ++c) {
                accumulate(gx + ((n0 + n) * cin + c) * P, GX.data() + c * cols + n * P, static_cast<std::size_t>(P));
              }
            }
          }
          if (gw) {
            MatMap X(scratch(0, cin * cols), cin, cols);
            gather_batch(xt.data().data() + n0 * cin * P, cin, P, nb, X.data());
            MatMap GW(gw, cin, R);
            GW.noalias() += X * dT.transpose();
          }
        }
      });
}

Var relu(Tape& tape, Var xv) {
  const Tensor& x = tape.value(xv);
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  const std::size_t xid = xv.id;
  return tape.record("relu", {xv}, std::move(y), [xid](Tape& t, const std::vector<double>& gout) {
    double* gx = t.grad_target(xid);
    if (!gx) return;
    const Tensor& xt = t.value(Var{xid, &t});
    for (std::size_t i = 0; i < gout.size(); ++i) {
      if (xt[static_cast<std::int64_t>(i)] > 0.0) gx[i] += gout[i];
    }
  });
}

Var concat(Tape& tape, std::span<const Var> xs) {
  if (xs.empty()) throw Error(Errc::ShapeMismatch, "concat of zero tensors");
  const Shape& first = tape.value(xs[0]).shape();
  if (first.size() < 2) throw Error(Errc::ShapeMismatch, "concat needs a channel axis");
  std::int64_t channels = 0;
  std::vector<std::int64_t> cs;
  for (const Var& v : xs) {
    const Shape& s = tape.value(v).shape();
    bool ok = s.size() == first.size();
    for (std::size_t a = 0; ok && a < s.size(); ++a) ok = a == 1 || s[a] == first[a];
    if (!ok) {
      throw Error(Errc::ShapeMismatch, "concat " + shape_str(first) + " with " + shape_str(s));
    }
    cs.push_back(s[1]);
    channels += s[1];
  }
  Shape out_shape = first;
  out_shape[1] = channels;
  const std::int64_t outer = first[0];
  const std::int64_t inner = numel(first) / (first[0] * first[1]);
  Tensor y(out_shape);
  for (std::int64_t n = 0; n < outer; ++n) {
    std::int64_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Tensor& xi = tape.value(xs[i]);
      const std::int64_t len = cs[i] * inner;
      std::copy_n(xi.data().data() + n * len, len, y.data().data() + (n * channels + off) * inner);
      off += cs[i];
    }
  }
  std::vector<std::size_t> ids;
  for (const Var& v : xs) ids.push_back(v.id);
  return tape.record(
      "concat", std::vector<Var>(xs.begin(), xs.end()), std::move(y),
      [ids, cs, outer, inner, channels](Tape& t, const std::vector<double>& gout) {
        std::int64_t off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          double* gx = t.grad_target(ids[i]);
          const std::int64_t len = cs[i] * inner;
          if (gx) {
            for (std::int64_t n = 0; n < outer; ++n) {
              accumulate(gx + n * len, gout.data() + (n * channels + off) * inner,
                         static_cast<std::size_t>(len));
            }
          }
          off += cs[i];
        }
      });
}

Var slice_channels(Tape& tape, Var xv, std::int64_t begin, std::int64_t count) {
  const Tensor& x = tape.value(xv);
  if (x.rank() < 2 || begin < 0 || count < 1 || begin + count > x.dim(1)) {
    throw Error(Errc::ShapeMismatch, "channel slice [" + std::to_string(begin) + ", +" +
                                         std::to_string(count) + ") out of range for " +
                                         shape_str(x.shape()));
  }
  const std::int64_t outer = x.dim(0);
  const std::int64_t channels = x.dim(1);
  const std::int64_t inner = x.size() / (outer * channels);
  Shape s = x.shape();
  s[1] = count;
  Tensor y(s);
  for (std::int64_t n = 0; n < outer; ++n) {
    std::copy_n(x.data().data() + (n * channels + begin) * inner, count * inner,
                y.data().data() + n * count * inner);
  }
  const std::size_t xid = xv.id;
  return tape.record("slice_channels", {xv}, std::move(y),
                     [xid, outer, channels, inner, begin, count](Tape& t, const std::vector<double>& gout) {
                       double* gx = t.grad_target(xid);
                       if (!gx) return;
                       for (std::int64_t n = 0; n < outer; ++n) {
                         accumulate(gx + (n * channels + begin) * inner, gout.data() + n * count * inner,
                                    static_cast<std::size_t>(count * inner));
                       }
                     });
}

Var softmax_channels(Tape& tape, Var xv) {
  const Tensor& x = tape.value(xv);
  if (x.rank() < 2) throw Error(Errc::ShapeMismatch, "softmax needs a channel axis");
  const std::int64_t outer = x.dim(0);
  const std::int64_t channels = x.dim(1);
  const std::int64_t inner = x.size() / (outer * channels);
  Tensor y(x.shape());
  for (std::int64_t n = 0; n < outer; ++n) {
    const double* xn = x.data().data() + n * channels * inner;
    double* yn = y.data().data() + n * channels * inner;
    for (std::int64_t p = 0; p < inner; ++p) {
      double mx = xn[p];
      for (std::int64_t c = 1; c < channels; ++c) mx = std::max(mx, xn[c * inner + p]);
      double z = 0.0;
      for (std::int64_t c = 0; c < channels; ++c) {
        yn[c * inner + p] = std::exp(xn[c * inner + p] - mx);
        z += yn[c * inner + p];
      }
      for (std::int64_t c = 0; c < channels; ++c) yn[c * inner + p] /= z;
    }
  }
  const std::size_t xid = xv.id;
  // The rule reads the softmax output, which lands in the next slot.
  const std::size_t yid = tape.num_values();
  return tape.record("softmax_channels", {xv}, std::move(y),
                     [xid, yid, outer, channels, inner](Tape& t, const std::vector<double>& gout) {
    double* gx = t.grad_target(xid);
    if (!gx) return;
    const Tensor& yt = t.value(Var{yid, &t});
    for (std::int64_t n = 0; n < outer; ++n) {
      const double* yn = yt.data().data() + n * channels * inner;
      const double* gn = gout.data() + n * channels * inner;
      double* dn = gx + n * channels * inner;
      for (std::int64_t p = 0; p < inner; ++p) {
        double dot = 0.0;
        for (std::int64_t c = 0; c < channels; ++c) dot += yn[c * inner + p] * gn[c * inner + p];
        for (std::int64_t c = 0; c < channels; ++c) {
          dn[c * inner + p] += yn[c * inner + p] * (gn[c * inner + p] - dot);
        }
      }
    }
  });
}

Var add(Tape& tape, Var av, Var bv) {
  const Tensor& a = tape.value(av);
  const Tensor& b = tape.value(bv);
  require_same_shape(a, b, "add");
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  const std::size_t aid = av.id, bid = bv.id;
  return tape.record("add", {av, bv}, std::move(y), [aid, bid](Tape& t, const std::vector<double>& gout) {
    accumulate(t.grad_target(aid), gout.data(), gout.size());
    accumulate(t.grad_target(bid), gout.data(), gout.size());
  });
}

Var mul(Tape& tape, Var av, Var bv) {
  const Tensor& a = tape.value(av);
  const Tensor& b = tape.value(bv);
  require_same_shape(a, b, "mul");
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  const std::size_t aid = av.id, bid = bv.id;
  return tape.record("mul", {av, bv}, std::move(y), [aid, bid](Tape& t, const std::vector<double>& gout) {
    const Tensor& at = t.value(Var{aid, &t});
    const Tensor& bt = t.value(Var{bid, &t});
    if (double* ga = t.grad_target(aid)) {
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * bt[static_cast<std::int64_t>(i)];
    }
    if (double* gb = t.grad_target(bid)) {
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * at[static_cast<std::int64_t>(i)];
    }
  });
}

Var scale(Tape& tape, Var av, double k) {
  const Tensor& a = tape.value(av);
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) y[i] = a[i] * k;
  const std::size_t aid = av.id;
  return tape.record("scale", {av}, std::move(y), [aid, k](Tape& t, const std::vector<double>& gout) {
    if (double* ga = t.grad_target(aid)) {
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * k;
    }
  });
}

Var sum(Tape& tape, Var av) {
  const Tensor& a = tape.value(av);
  double s = 0.0;
  for (double v : a.data()) s += v;
  const std::size_t aid = av.id;
  return tape.record("sum", {av}, Tensor::scalar(s), [aid](Tape& t, const std::vector<double>& gout) {
    double* ga = t.grad_target(aid);
    if (!ga) return;
    const std::size_t n = t.value(Var{aid, &t}).storage().size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += gout[0];
  });
}

}  // namespace stairpool
