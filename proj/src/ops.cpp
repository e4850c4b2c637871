#include "wsiseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <tuple>

namespace wsiseg::ad {
namespace {

struct Dims4 {
  std::size_t b, c, h, w;
};

// Accepts [B,C,H,W] or [C,H,W] (B = 1).
Dims4 as_nchw(const Shape& s, const char* op) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  throw ShapeError(std::string(op) + ": expected rank 3 or 4 input, got " + shape_string(s));
}

Shape with_layout(const Shape& like, std::size_t b, std::size_t c, std::size_t h,
                  std::size_t w) {
  if (like.size() == 3) return {c, h, w};
  return {b, c, h, w};
}

// Output columns [lo, hi) whose input column ox*s + k - p lies inside [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t extent,
                                                std::size_t k, std::size_t s,
                                                std::size_t p) {
  const long long kk = static_cast<long long>(k), pp = static_cast<long long>(p);
  const long long ss = static_cast<long long>(s);
  long long lo = 0;
  if (pp > kk) lo = (pp - kk + ss - 1) / ss;
  const long long last = static_cast<long long>(extent) - 1 + pp - kk;
  long long hi = last < 0 ? 0 : last / ss + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out_extent));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Var relu(const Var& x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return x.tape().record(std::move(out), {x}, [](Node& n) {
    auto gx = n.input_grad(0);
    const Tensor& in = n.input_value(0);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (in[i] > 0.0) gx[i] += n.grad[i];
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride,
           std::size_t padding) {
  const Dims4 d = as_nchw(x.shape(), "conv2d");
  const Shape& ws = w.shape();
  if (ws.size() != 4) throw ShapeError("conv2d: kernel must be [Cout,Cin,kH,kW]");
  if (ws[1] != d.c)
    throw ShapeError("conv2d: input has " + std::to_string(d.c) + " channels, kernel expects " +
                     std::to_string(ws[1]));
  const std::size_t co_n = ws[0], kh = ws[2], kw = ws[3];
  if (b.shape() != Shape{co_n}) throw ShapeError("conv2d: bias must be [Cout]");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (kh > d.h + 2 * padding || kw > d.w + 2 * padding)
    throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t oh = (d.h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (d.w + 2 * padding - kw) / stride + 1;

  const double* X = x.value().data().data();
  const double* Wt = w.value().data().data();
  const double* Bs = b.value().data().data();
  Tensor out(with_layout(x.shape(), d.b, co_n, oh, ow));
  double* O = out.data().data();

  for (std::size_t bi = 0; bi < d.b; ++bi) {
    for (std::size_t co = 0; co < co_n; ++co) {
      double* o = O + (bi * co_n + co) * oh * ow;
      std::fill(o, o + oh * ow, Bs[co]);
      for (std::size_t ci = 0; ci < d.c; ++ci) {
        const double* in = X + (bi * d.c + ci) * d.h * d.w;
        const double* wk = Wt + (co * d.c + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto [ylo, yhi] = valid_range(oh, d.h, ky, stride, padding);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = wk[ky * kw + kx];
            const auto [xlo, xhi] = valid_range(ow, d.w, kx, stride, padding);
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const double* irow = in + (oy * stride + ky - padding) * d.w;
              double* orow = o + oy * ow;
              if (stride == 1) {
                for (std::size_t ox = xlo; ox < xhi; ++ox)
                  orow[ox] += wv * irow[ox + kx - padding];
              } else {
                for (std::size_t ox = xlo; ox < xhi; ++ox)
                  orow[ox] += wv * irow[ox * stride + kx - padding];
              }
            }
          }
        }
      }
    }
  }

  return x.tape().record(std::move(out), {x, w, b}, [=](Node& n) {
    auto gx = n.input_grad(0);
    auto gw = n.input_grad(1);
    auto gb = n.input_grad(2);
    const double* X = n.input_value(0).data().data();
    const double* Wt = n.input_value(1).data().data();
    const double* G = n.grad.data();
    for (std::size_t bi = 0; bi < d.b; ++bi) {
      for (std::size_t co = 0; co < co_n; ++co) {
        const double* g = G + (bi * co_n + co) * oh * ow;
        if (!gb.empty()) {
          double acc = 0.0;
          for (std::size_t i = 0; i < oh * ow; ++i) acc += g[i];
          gb[co] += acc;
        }
        for (std::size_t ci = 0; ci < d.c; ++ci) {
          const std::size_t plane = (bi * d.c + ci) * d.h * d.w;
          const double* in = X + plane;
          const std::size_t wbase = (co * d.c + ci) * kh * kw;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto [ylo, yhi] = valid_range(oh, d.h, ky, stride, padding);
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto [xlo, xhi] = valid_range(ow, d.w, kx, stride, padding);
              const double wv = Wt[wbase + ky * kw + kx];
              double acc = 0.0;
              for (std::size_t oy = ylo; oy < yhi; ++oy) {
                const std::size_t irow = (oy * stride + ky - padding) * d.w;
                const double* grow = g + oy * ow;
                if (!gx.empty()) {
                  double* dst = gx.data() + plane + irow;
                  for (std::size_t ox = xlo; ox < xhi; ++ox)
                    dst[ox * stride + kx - padding] += wv * grow[ox];
                }
                if (!gw.empty()) {
                  const double* src = in + irow;
                  for (std::size_t ox = xlo; ox < xhi; ++ox)
                    acc += grow[ox] * src[ox * stride + kx - padding];
                }
              }
              if (!gw.empty()) gw[wbase + ky * kw + kx] += acc;
            }
          }
        }
      }
    }
  });
}

Var maxpool2d(const Var& x, std::size_t k, std::size_t stride) {
  const Dims4 d = as_nchw(x.shape(), "maxpool2d");
  if (k == 0 || stride == 0) throw std::invalid_argument("maxpool2d: k and stride must be >= 1");
  if (k > d.h || k > d.w) throw ShapeError("maxpool2d: window larger than input");
  const std::size_t oh = (d.h - k) / stride + 1;
  const std::size_t ow = (d.w - k) / stride + 1;
  const double* X = x.value().data().data();
  Tensor out(with_layout(x.shape(), d.b, d.c, oh, ow));
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < d.b * d.c; ++p) {
    const std::size_t base = p * d.h * d.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * stride * d.w + ox * stride;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = base + (oy * stride + ky) * d.w + ox * stride + kx;
            if (X[idx] > X[best]) best = idx;
          }
        }
        out[o] = X[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  const std::size_t aux = argmax.size();
  return x.tape().record(
      std::move(out), {x},
      [argmax = std::move(argmax)](Node& n) {
        auto gx = n.input_grad(0);
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += n.grad[i];
      },
      aux);
}

Var nearest_upsample(const Var& x, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("nearest_upsample: factor must be >= 1");
  const Dims4 d = as_nchw(x.shape(), "nearest_upsample");
  const std::size_t oh = d.h * factor, ow = d.w * factor;
  const Tensor& in = x.value();
  Tensor out(with_layout(x.shape(), d.b, d.c, oh, ow));
  for (std::size_t p = 0; p < d.b * d.c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(p * oh + y) * ow + xx] = in[(p * d.h + y / factor) * d.w + xx / factor];
  return x.tape().record(std::move(out), {x}, [=](Node& n) {
    auto gx = n.input_grad(0);
    for (std::size_t p = 0; p < d.b * d.c; ++p)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          gx[(p * d.h + y / factor) * d.w + xx / factor] += n.grad[(p * oh + y) * ow + xx];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Dims4 da = as_nchw(a.shape(), "concat_channels");
  const Dims4 db = as_nchw(b.shape(), "concat_channels");
  if (a.shape().size() != b.shape().size() || da.b != db.b || da.h != db.h || da.w != db.w)
    throw ShapeError("concat_channels: spatial mismatch between " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  const std::size_t hw = da.h * da.w, c = da.c + db.c;
  Tensor out(with_layout(a.shape(), da.b, c, da.h, da.w));
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  for (std::size_t bi = 0; bi < da.b; ++bi) {
    std::copy_n(A.data().data() + bi * da.c * hw, da.c * hw, out.data().data() + bi * c * hw);
    std::copy_n(B.data().data() + bi * db.c * hw, db.c * hw,
                out.data().data() + (bi * c + da.c) * hw);
  }
  return a.tape().record(std::move(out), {a, b}, [=](Node& n) {
    auto ga = n.input_grad(0);
    auto gb = n.input_grad(1);
    for (std::size_t bi = 0; bi < da.b; ++bi) {
      const double* g = n.grad.data() + bi * c * hw;
      if (!ga.empty())
        for (std::size_t i = 0; i < da.c * hw; ++i) ga[bi * da.c * hw + i] += g[i];
      if (!gb.empty())
        for (std::size_t i = 0; i < db.c * hw; ++i) gb[bi * db.c * hw + i] += g[da.c * hw + i];
    }
  });
}

Var fully_connected(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x.shape();
  if (xs.size() != 1 && xs.size() != 2) throw ShapeError("fully_connected: x must be rank 1 or 2");
  const std::size_t batch = xs.size() == 2 ? xs[0] : 1;
  const std::size_t in_n = xs.back();
  if (w.shape().size() != 2 || w.dim(0) != in_n)
    throw ShapeError("fully_connected: x " + shape_string(xs) + " incompatible with W " +
                     shape_string(w.shape()));
  const std::size_t out_n = w.dim(1);
  if (b.shape() != Shape{out_n}) throw ShapeError("fully_connected: bias must be [Out]");
  const double* X = x.value().data().data();
  const double* W = w.value().data().data();
  const double* B = b.value().data().data();
  Tensor out(xs.size() == 2 ? Shape{batch, out_n} : Shape{out_n});
  for (std::size_t r = 0; r < batch; ++r) {
    double* o = out.data().data() + r * out_n;
    std::copy_n(B, out_n, o);
    for (std::size_t i = 0; i < in_n; ++i) {
      const double xv = X[r * in_n + i];
      const double* wrow = W + i * out_n;
      for (std::size_t j = 0; j < out_n; ++j) o[j] += xv * wrow[j];
    }
  }
  return x.tape().record(std::move(out), {x, w, b}, [=](Node& n) {
    auto gx = n.input_grad(0);
    auto gw = n.input_grad(1);
    auto gb = n.input_grad(2);
    const double* X = n.input_value(0).data().data();
    const double* W = n.input_value(1).data().data();
    for (std::size_t r = 0; r < batch; ++r) {
      const double* g = n.grad.data() + r * out_n;
      for (std::size_t i = 0; i < in_n; ++i) {
        const double* wrow = W + i * out_n;
        if (!gx.empty()) {
          double acc = 0.0;
          for (std::size_t j = 0; j < out_n; ++j) acc += g[j] * wrow[j];
          gx[r * in_n + i] += acc;
        }
        if (!gw.empty()) {
          const double xv = X[r * in_n + i];
          double* gwrow = gw.data() + i * out_n;
          for (std::size_t j = 0; j < out_n; ++j) gwrow[j] += xv * g[j];
        }
      }
      if (!gb.empty())
        for (std::size_t j = 0; j < out_n; ++j) gb[j] += g[j];
    }
  });
}

Var flatten(const Var& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("flatten: scalar input");
  const std::size_t rest = s.size() > 1 ? x.size() / s[0] : s[0];
  Tensor out = x.value().reshaped(s.size() > 1 ? Shape{s[0], rest} : Shape{1, rest});
  return x.tape().record(std::move(out), {x}, [](Node& n) {
    auto gx = n.input_grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return a.tape().record(std::move(out), {a, b}, [](Node& n) {
    auto ga = n.input_grad(0);
    auto gb = n.input_grad(1);
    const Tensor& A = n.input_value(0);
    const Tensor& B = n.input_value(1);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (!ga.empty()) ga[i] += n.grad[i] * B[i];
      if (!gb.empty()) gb[i] += n.grad[i] * A[i];
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return x.tape().record(Tensor(Shape{1}, acc), {x}, [](Node& n) {
    auto gx = n.input_grad(0);
    for (auto& g : gx) g += n.grad[0];
  });
}

Var inner_product(const Var& x, const Tensor& weights) {
  if (x.shape() != weights.shape())
    throw ShapeError("inner_product: weights " + shape_string(weights.shape()) +
                     " do not match " + shape_string(x.shape()));
  const Tensor& X = x.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) acc += weights[i] * X[i];
  return x.tape().record(
      Tensor(Shape{1}, acc), {x},
      [weights](Node& n) {
        auto gx = n.input_grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[0] * weights[i];
      },
      weights.size());
}

Var scatter_to_map(const Var& x, std::span<const CellIndex> cells, std::size_t maps,
                   std::size_t rows, std::size_t cols) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || xs[0] != cells.size())
    throw ShapeError("scatter_to_map: x " + shape_string(xs) + " does not match " +
                     std::to_string(cells.size()) + " cells");
  const std::size_t depth = xs[1];
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  std::vector<std::size_t> offset(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellIndex& c = cells[i];
    if (c.map >= maps || c.row >= rows || c.col >= cols)
      throw std::out_of_range("scatter_to_map: cell outside the map");
    if (!seen.emplace(c.map, c.row, c.col).second)
      throw std::invalid_argument("scatter_to_map: two rows target the same cell");
    offset[i] = (c.map * depth * rows + c.row) * cols + c.col;
  }
  const std::size_t plane = rows * cols;
  const Tensor& X = x.value();
  Tensor out(Shape{maps, depth, rows, cols});
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t k = 0; k < depth; ++k) out[offset[i] + k * plane] = X[i * depth + k];
  const std::size_t aux = offset.size();
  return x.tape().record(
      std::move(out), {x},
      [offset = std::move(offset), depth, plane](Node& n) {
        auto gx = n.input_grad(0);
        for (std::size_t i = 0; i < offset.size(); ++i)
          for (std::size_t k = 0; k < depth; ++k)
            gx[i * depth + k] += n.grad[offset[i] + k * plane];
      },
      aux);
}

Var map_to_cells(const Var& x) {
  const Dims4 d = as_nchw(x.shape(), "map_to_cells");
  const std::size_t hw = d.h * d.w;
  const Tensor& X = x.value();
  Tensor out(Shape{d.b * hw, d.c});
  for (std::size_t bi = 0; bi < d.b; ++bi)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t p = 0; p < hw; ++p)
        out[(bi * hw + p) * d.c + c] = X[(bi * d.c + c) * hw + p];
  return x.tape().record(std::move(out), {x}, [=](Node& n) {
    auto gx = n.input_grad(0);
    for (std::size_t bi = 0; bi < d.b; ++bi)
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t p = 0; p < hw; ++p)
          gx[(bi * d.c + c) * hw + p] += n.grad[(bi * hw + p) * d.c + c];
  });
}

Var masked_softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                                 std::span<const std::uint8_t> mask) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("masked_softmax_cross_entropy: logits must be [cells,K]");
  const std::size_t cells = s[0], k = s[1];
  if (labels.size() != cells || mask.size() != cells)
    throw ShapeError("masked_softmax_cross_entropy: labels/mask length mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!mask[i]) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::invalid_argument("masked_softmax_cross_entropy: label out of range at a masked-in cell");
    ++count;
  }
  if (count == 0) throw std::invalid_argument("no labeled cells");

  const Tensor& Z = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!mask[i]) continue;
    const double* z = Z.data().data() + i * k;
    const double m = *std::max_element(z, z + k);
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - m);
    total += m + std::log(se) - z[labels[i]];
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return logits.tape().record(
      Tensor(Shape{1}, total * inv), {logits},
      [lab = std::move(lab), msk = std::move(msk), k, inv](Node& n) {
        auto gz = n.input_grad(0);
        const Tensor& Z = n.input_value(0);
        const double scale = n.grad[0] * inv;
        for (std::size_t i = 0; i < msk.size(); ++i) {
          if (!msk[i]) continue;
          const double* z = Z.data().data() + i * k;
          const double m = *std::max_element(z, z + k);
          double se = 0.0;
          for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - m);
          for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(z[j] - m) / se;
            gz[i * k + j] += scale * (p - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
          }
        }
      },
      2 * cells);
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: expected [cells,K]");
  const std::size_t cells = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < cells; ++i) {
    const double* z = logits.data().data() + i * k;
    const double m = *std::max_element(z, z + k);
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - m);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = std::exp(z[j] - m) / se;
  }
  return out;
}

}  // namespace wsiseg::ad
