#include "byols/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "byols/error.hpp"

namespace byols::nn {

namespace {

Graph& graph_of(Var v) {
  require(v.graph != nullptr, "null variable");
  return *v.graph;
}

void check_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

int norm_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  require(a >= 0 && a < rank, "axis out of range");
  return a;
}

// Split a shape around `axis` into (outer, length, inner).
struct AxisSplit {
  Index outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.length = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void mix_mask(Graph& g, const Eigen::VectorXd& v) {
  std::uint64_t word = 0;
  int bits = 0;
  for (Index i = 0; i < v.size(); ++i) {
    word = (word << 1) | (v(i) > 0.0 ? 1u : 0u);
    if (++bits == 64) {
      g.mix_kink(word);
      word = 0;
      bits = 0;
    }
  }
  g.mix_kink(word ^ static_cast<std::uint64_t>(v.size()));
}

void mix_indices(Graph& g, const std::vector<Index>& idx) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Index i : idx) {
    h ^= static_cast<std::uint64_t>(i);
    h *= 0x100000001b3ULL;
  }
  g.mix_kink(h);
}

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd f, Deriv df) {
  Graph& g = graph_of(x);
  Tensor out(x.shape());
  out.data = x.value().data.unaryExpr(f);
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix, df](const Tensor& go) {
    const Tensor& in = g.value(ix);
    g.grad(ix).data.array() += go.data.array() * in.data.unaryExpr(df).array();
  });
}

Tensor permute_tensor(const Tensor& in, const std::vector<int>& perm) {
  const int r = in.rank();
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> in_stride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(i + 1)] * in.shape[static_cast<std::size_t>(i + 1)];
  std::vector<Index> stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = in.shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  Tensor out(out_shape);
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index src = 0;
  const Index n = out.size();
  for (Index k = 0; k < n; ++k) {
    out.data(k) = in.data(src);
    for (int d = r - 1; d >= 0; --d) {
      auto& c = counter[static_cast<std::size_t>(d)];
      src += stride[static_cast<std::size_t>(d)];
      if (++c < out_shape[static_cast<std::size_t>(d)]) break;
      src -= stride[static_cast<std::size_t>(d)] * c;
      c = 0;
    }
  }
  return out;
}

struct ConvGeometry {
  Index n, c, h, w, co, kh, kw, ho, wo, groups, cg, cog;
};

void im2col(const double* x, const ConvGeometry& g, const Conv2dOptions& o, double* cols) {
  const Index spatial = g.ho * g.wo;
  for (Index c = 0; c < g.cg; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * spatial;
        for (Index oh = 0; oh < g.ho; ++oh) {
          const Index ih = oh * o.stride_h - o.pad_h + ki;
          double* dst = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + ih) * g.w;
          for (Index ow = 0; ow < g.wo; ++ow) {
            const Index iw = ow * o.stride_w - o.pad_w + kj;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, const Conv2dOptions& o, double* dx) {
  const Index spatial = g.ho * g.wo;
  for (Index c = 0; c < g.cg; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * spatial;
        for (Index oh = 0; oh < g.ho; ++oh) {
          const Index ih = oh * o.stride_h - o.pad_h + ki;
          if (ih < 0 || ih >= g.h) continue;
          double* dst = dx + (c * g.h + ih) * g.w;
          for (Index ow = 0; ow < g.wo; ++ow) {
            const Index iw = ow * o.stride_w - o.pad_w + kj;
            if (iw >= 0 && iw < g.w) dst[iw] += row[oh * g.wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(Var a, Var b) {
  check_same(a.shape(), b.shape(), "add");
  Graph& g = graph_of(a);
  Tensor out(a.shape());
  out.data = a.value().data + b.value().data;
  const int ia = a.id, ib = b.id;
  return g.emit(std::move(out), {a, b}, [&g, ia, ib](const Tensor& go) {
    if (g.needs_grad(ia)) g.grad(ia).data += go.data;
    if (g.needs_grad(ib)) g.grad(ib).data += go.data;
  });
}

Var sub(Var a, Var b) {
  check_same(a.shape(), b.shape(), "sub");
  Graph& g = graph_of(a);
  Tensor out(a.shape());
  out.data = a.value().data - b.value().data;
  const int ia = a.id, ib = b.id;
  return g.emit(std::move(out), {a, b}, [&g, ia, ib](const Tensor& go) {
    if (g.needs_grad(ia)) g.grad(ia).data += go.data;
    if (g.needs_grad(ib)) g.grad(ib).data -= go.data;
  });
}

Var mul(Var a, Var b) {
  check_same(a.shape(), b.shape(), "mul");
  Graph& g = graph_of(a);
  Tensor out(a.shape());
  out.data = a.value().data.cwiseProduct(b.value().data);
  const int ia = a.id, ib = b.id;
  return g.emit(std::move(out), {a, b}, [&g, ia, ib](const Tensor& go) {
    if (g.needs_grad(ia)) g.grad(ia).data += go.data.cwiseProduct(g.value(ib).data);
    if (g.needs_grad(ib)) g.grad(ib).data += go.data.cwiseProduct(g.value(ia).data);
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out(a.shape());
  out.data = a.value().data * s;
  const int ia = a.id;
  return g.emit(std::move(out), {a}, [&g, ia, s](const Tensor& go) { g.grad(ia).data += s * go.data; });
}

Var relu(Var x) {
  Graph& g = graph_of(x);
  mix_mask(g, x.value().data);
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v) {
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) + v * pdf;
      });
}

Var sigmoid(Var x) {
  const auto f = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary(x, f, [f](double v) {
    const double s = f(v);
    return s * (1.0 - s);
  });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double v) {
                 const double t = std::tanh(v);
                 return 1.0 - t * t;
               });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  require(numel(shape) == x.value().size(), "reshape: element count mismatch " + shape_string(x.shape()) + " -> " + shape_string(shape));
  Tensor out(std::move(shape), x.value().data);
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix](const Tensor& go) { g.grad(ix).data += go.data; });
}

Var permute(Var x, const std::vector<int>& perm) {
  Graph& g = graph_of(x);
  require(static_cast<int>(perm.size()) == x.value().rank(), "permute: rank mismatch");
  std::vector<int> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  const int ix = x.id;
  return g.emit(permute_tensor(x.value(), perm), {x},
                [&g, ix, inverse](const Tensor& go) { g.grad(ix).data += permute_tensor(go, inverse).data; });
}

Var slice(Var x, int axis, Index start, Index length) {
  Graph& g = graph_of(x);
  const int a = norm_axis(axis, x.value().rank());
  const AxisSplit s = split_at(x.shape(), a);
  require(start >= 0 && length >= 0 && start + length <= s.length, "slice out of range");
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(a)] = length;
  Tensor out(shape);
  const Tensor& in = x.value();
  for (Index o = 0; o < s.outer; ++o) {
    out.data.segment(o * length * s.inner, length * s.inner) = in.data.segment((o * s.length + start) * s.inner, length * s.inner);
  }
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix, s, start, length](const Tensor& go) {
    Tensor& gx = g.grad(ix);
    for (Index o = 0; o < s.outer; ++o) {
      gx.data.segment((o * s.length + start) * s.inner, length * s.inner) += go.data.segment(o * length * s.inner, length * s.inner);
    }
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  require(!xs.empty(), "concat of nothing");
  Graph& g = graph_of(xs.front());
  const int a = norm_axis(axis, xs.front().value().rank());
  Shape shape = xs.front().shape();
  Index total = 0;
  std::vector<Index> lengths;
  for (const Var& v : xs) {
    Shape s = v.shape();
    require(s.size() == shape.size(), "concat: rank mismatch");
    lengths.push_back(s[static_cast<std::size_t>(a)]);
    total += s[static_cast<std::size_t>(a)];
    s[static_cast<std::size_t>(a)] = shape[static_cast<std::size_t>(a)];
    check_same(s, shape, "concat");
  }
  shape[static_cast<std::size_t>(a)] = total;
  const AxisSplit s = split_at(shape, a);
  Tensor out(shape);
  Index offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& in = xs[k].value();
    const Index len = lengths[k];
    for (Index o = 0; o < s.outer; ++o) {
      out.data.segment((o * total + offset) * s.inner, len * s.inner) = in.data.segment(o * len * s.inner, len * s.inner);
    }
    offset += len;
  }
  std::vector<int> ids;
  for (const Var& v : xs) ids.push_back(v.id);
  return g.emit(std::move(out), xs, [&g, ids, lengths, s, total](const Tensor& go) {
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Index len = lengths[k];
      if (g.needs_grad(ids[k])) {
        Tensor& gx = g.grad(ids[k]);
        for (Index o = 0; o < s.outer; ++o) {
          gx.data.segment(o * len * s.inner, len * s.inner) += go.data.segment((o * total + off) * s.inner, len * s.inner);
        }
      }
      off += len;
    }
  });
}

Var stack(const std::vector<Var>& xs, int axis) {
  require(!xs.empty(), "stack of nothing");
  const int rank = xs.front().value().rank() + 1;
  const int a = norm_axis(axis, rank);
  std::vector<Var> expanded;
  expanded.reserve(xs.size());
  for (const Var& v : xs) {
    Shape s = v.shape();
    s.insert(s.begin() + a, 1);
    expanded.push_back(reshape(v, s));
  }
  return concat(expanded, a);
}

Var linear(Var x, Var weight, Var bias) {
  Graph& g = graph_of(x);
  const Tensor& w = weight.value();
  require(w.rank() == 2, "linear: weight must be rank 2");
  const Index in = w.dim(1), outf = w.dim(0);
  require(x.value().dim(-1) == in, "linear: input has " + std::to_string(x.value().dim(-1)) + " features, expected " + std::to_string(in));
  Shape shape = x.shape();
  shape.back() = outf;
  Tensor out(shape);
  const ConstMatrixMap xm = x.value().matrix();
  MatrixMap om = out.matrix();
  om.noalias() = xm * w.matrix().transpose();
  if (bias.graph != nullptr) {
    require(bias.value().size() == outf, "linear: bias length mismatch");
    om.rowwise() += bias.value().data.transpose();
  }
  const int ix = x.id, iw = weight.id, ib = bias.graph ? bias.id : -1;
  std::vector<Var> parents{x, weight};
  if (ib >= 0) parents.push_back(bias);
  return g.emit(std::move(out), parents, [&g, ix, iw, ib](const Tensor& go) {
    const ConstMatrixMap gm = go.matrix();
    if (g.needs_grad(ix)) g.grad(ix).matrix().noalias() += gm * g.value(iw).matrix();
    if (g.needs_grad(iw)) g.grad(iw).matrix().noalias() += gm.transpose() * g.value(ix).matrix();
    if (ib >= 0 && g.needs_grad(ib)) g.grad(ib).data += gm.colwise().sum().transpose();
  });
}

Var batched_matmul(Var a, Var b, bool transpose_b) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0), "batched_matmul: expects [B, m, k] operands");
  const Index batch = av.dim(0), m = av.dim(1), k = av.dim(2);
  const Index n = transpose_b ? bv.dim(1) : bv.dim(2);
  require((transpose_b ? bv.dim(2) : bv.dim(1)) == k, "batched_matmul: inner dimension mismatch");
  Tensor out({batch, m, n});
  for (Index i = 0; i < batch; ++i) {
    ConstMatrixMap am(av.ptr() + i * m * k, m, k);
    MatrixMap om(out.ptr() + i * m * n, m, n);
    if (transpose_b) {
      om.noalias() = am * ConstMatrixMap(bv.ptr() + i * n * k, n, k).transpose();
    } else {
      om.noalias() = am * ConstMatrixMap(bv.ptr() + i * k * n, k, n);
    }
  }
  const int ia = a.id, ib = b.id;
  return g.emit(std::move(out), {a, b}, [&g, ia, ib, batch, m, k, n, transpose_b](const Tensor& go) {
    const Tensor& av2 = g.value(ia);
    const Tensor& bv2 = g.value(ib);
    for (Index i = 0; i < batch; ++i) {
      ConstMatrixMap gm(go.ptr() + i * m * n, m, n);
      ConstMatrixMap am(av2.ptr() + i * m * k, m, k);
      if (transpose_b) {
        ConstMatrixMap bm(bv2.ptr() + i * n * k, n, k);
        if (g.needs_grad(ia)) MatrixMap(g.grad(ia).ptr() + i * m * k, m, k).noalias() += gm * bm;
        if (g.needs_grad(ib)) MatrixMap(g.grad(ib).ptr() + i * n * k, n, k).noalias() += gm.transpose() * am;
      } else {
        ConstMatrixMap bm(bv2.ptr() + i * k * n, k, n);
        if (g.needs_grad(ia)) MatrixMap(g.grad(ia).ptr() + i * m * k, m, k).noalias() += gm * bm.transpose();
        if (g.needs_grad(ib)) MatrixMap(g.grad(ib).ptr() + i * k * n, k, n).noalias() += am.transpose() * gm;
      }
    }
  });
}

Var conv2d(Var x, Var weight, Var bias, const Conv2dOptions& opt) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require(xv.rank() == 4 && wv.rank() == 4, "conv2d expects [N, C, H, W] input and [Co, Ci, kh, kw] weight");
  ConvGeometry geo{};
  geo.n = xv.dim(0);
  geo.c = xv.dim(1);
  geo.h = xv.dim(2);
  geo.w = xv.dim(3);
  geo.co = wv.dim(0);
  geo.kh = wv.dim(2);
  geo.kw = wv.dim(3);
  geo.groups = opt.groups;
  require(geo.c % geo.groups == 0 && geo.co % geo.groups == 0, "conv2d: channels not divisible by groups");
  geo.cg = geo.c / geo.groups;
  geo.cog = geo.co / geo.groups;
  require(wv.dim(1) == geo.cg, "conv2d: weight expects " + std::to_string(wv.dim(1)) + " input channels per group, got " + std::to_string(geo.cg));
  geo.ho = (geo.h + 2 * opt.pad_h - geo.kh) / opt.stride_h + 1;
  geo.wo = (geo.w + 2 * opt.pad_w - geo.kw) / opt.stride_w + 1;
  require(geo.ho >= 1 && geo.wo >= 1, "input too short for encoder");
  const bool has_bias = bias.graph != nullptr;

  const Index spatial = geo.ho * geo.wo;
  const Index patch = geo.cg * geo.kh * geo.kw;
  Tensor out({geo.n, geo.co, geo.ho, geo.wo});
  RowMatrix cols(patch, spatial);
  const ConstMatrixMap wm(wv.ptr(), geo.co, patch);
  for (Index n = 0; n < geo.n; ++n) {
    for (Index gi = 0; gi < geo.groups; ++gi) {
      im2col(xv.ptr() + (n * geo.c + gi * geo.cg) * geo.h * geo.w, geo, opt, cols.data());
      MatrixMap om(out.ptr() + (n * geo.co + gi * geo.cog) * spatial, geo.cog, spatial);
      om.noalias() = wm.middleRows(gi * geo.cog, geo.cog) * cols;
      if (has_bias) om.colwise() += bias.value().data.segment(gi * geo.cog, geo.cog);
    }
  }
  const int ix = x.id, iw = weight.id, ib = has_bias ? bias.id : -1;
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return g.emit(std::move(out), parents, [&g, ix, iw, ib, geo, opt, spatial, patch](const Tensor& go) {
    const Tensor& xv2 = g.value(ix);
    const ConstMatrixMap wm2(g.value(iw).ptr(), geo.co, patch);
    const bool gx = g.needs_grad(ix), gw = g.needs_grad(iw), gb = ib >= 0 && g.needs_grad(ib);
    RowMatrix cols2(patch, spatial);
    RowMatrix dcols(patch, spatial);
    for (Index n = 0; n < geo.n; ++n) {
      for (Index gi = 0; gi < geo.groups; ++gi) {
        ConstMatrixMap gm(go.ptr() + (n * geo.co + gi * geo.cog) * spatial, geo.cog, spatial);
        if (gw) {
          im2col(xv2.ptr() + (n * geo.c + gi * geo.cg) * geo.h * geo.w, geo, opt, cols2.data());
          MatrixMap(g.grad(iw).ptr(), geo.co, patch).middleRows(gi * geo.cog, geo.cog).noalias() += gm * cols2.transpose();
        }
        if (gb) g.grad(ib).data.segment(gi * geo.cog, geo.cog) += gm.rowwise().sum();
        if (gx) {
          dcols.noalias() = wm2.middleRows(gi * geo.cog, geo.cog).transpose() * gm;
          col2im(dcols.data(), geo, opt, g.grad(ix).ptr() + (n * geo.c + gi * geo.cg) * geo.h * geo.w);
        }
      }
    }
  });
}

Var max_pool2d(Var x, const PoolOptions& o) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "max_pool2d expects [N, C, H, W]");
  const Index nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const Index ho = (h + 2 * o.pad_h - o.kernel_h) / o.stride_h + 1;
  const Index wo = (w + 2 * o.pad_w - o.kernel_w) / o.stride_w + 1;
  require(ho >= 1 && wo >= 1, "input too short for encoder");
  Tensor out({xv.dim(0), xv.dim(1), ho, wo});
  std::vector<Index> arg(static_cast<std::size_t>(out.size()));
  for (Index p = 0; p < nc; ++p) {
    const double* src = xv.ptr() + p * h * w;
    for (Index oh = 0; oh < ho; ++oh) {
      for (Index ow = 0; ow < wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        Index best_at = -1;
        for (Index ki = 0; ki < o.kernel_h; ++ki) {
          const Index ih = oh * o.stride_h - o.pad_h + ki;
          if (ih < 0 || ih >= h) continue;
          for (Index kj = 0; kj < o.kernel_w; ++kj) {
            const Index iw = ow * o.stride_w - o.pad_w + kj;
            if (iw < 0 || iw >= w) continue;
            if (src[ih * w + iw] > best) {
              best = src[ih * w + iw];
              best_at = ih * w + iw;
            }
          }
        }
        const Index k = (p * ho + oh) * wo + ow;
        out.data(k) = best;
        arg[static_cast<std::size_t>(k)] = p * h * w + best_at;
      }
    }
  }
  mix_indices(g, arg);
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix, arg](const Tensor& go) {
    Tensor& gx = g.grad(ix);
    for (std::size_t k = 0; k < arg.size(); ++k) gx.data(arg[k]) += go.data(static_cast<Index>(k));
  });
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training, double momentum,
               double eps) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require(xv.rank() >= 2, "batch_norm expects at least [N, C]");
  const Index n = xv.dim(0), c = xv.dim(1);
  const Index inner = xv.size() / (n * c);
  const Index count = n * inner;
  require(gamma.value().size() == c && beta.value().size() == c, "batch_norm: affine parameter size mismatch");

  Eigen::VectorXd mean(c), inv_std(c);
  if (training) {
    mean.setZero();
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(c);
    for (Index b = 0; b < n; ++b) {
      for (Index ch = 0; ch < c; ++ch) {
        mean(ch) += xv.data.segment((b * c + ch) * inner, inner).sum();
      }
    }
    mean /= static_cast<double>(count);
    for (Index b = 0; b < n; ++b) {
      for (Index ch = 0; ch < c; ++ch) {
        sq(ch) += (xv.data.segment((b * c + ch) * inner, inner).array() - mean(ch)).square().sum();
      }
    }
    const Eigen::VectorXd var = sq / static_cast<double>(count);
    inv_std = (var.array() + eps).rsqrt();
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    if (momentum > 0.0) {
      running_mean.data = (1.0 - momentum) * running_mean.data + momentum * mean;
      running_var.data = (1.0 - momentum) * running_var.data + momentum * unbias * var;
    }
  } else {
    mean = running_mean.data;
    inv_std = (running_var.data.array() + eps).rsqrt();
  }

  Tensor xhat(xv.shape);
  Tensor out(xv.shape);
  const Eigen::VectorXd& gv = gamma.value().data;
  const Eigen::VectorXd& bv = beta.value().data;
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index at = (b * c + ch) * inner;
      xhat.data.segment(at, inner) = (xv.data.segment(at, inner).array() - mean(ch)) * inv_std(ch);
      out.data.segment(at, inner) = (xhat.data.segment(at, inner).array() * gv(ch) + bv(ch)).matrix();
    }
  }
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return g.emit(std::move(out), {x, gamma, beta},
                [&g, ix, ig, ib, xhat = std::move(xhat), inv_std, n, c, inner, count, training](const Tensor& go) {
                  Eigen::VectorXd sum_dy = Eigen::VectorXd::Zero(c);
                  Eigen::VectorXd sum_dy_xhat = Eigen::VectorXd::Zero(c);
                  for (Index b = 0; b < n; ++b) {
                    for (Index ch = 0; ch < c; ++ch) {
                      const Index at = (b * c + ch) * inner;
                      sum_dy(ch) += go.data.segment(at, inner).sum();
                      sum_dy_xhat(ch) += go.data.segment(at, inner).dot(xhat.data.segment(at, inner));
                    }
                  }
                  if (g.needs_grad(ig)) g.grad(ig).data += sum_dy_xhat;
                  if (g.needs_grad(ib)) g.grad(ib).data += sum_dy;
                  if (!g.needs_grad(ix)) return;
                  const Eigen::VectorXd& gv2 = g.value(ig).data;
                  Tensor& gx = g.grad(ix);
                  const double m = static_cast<double>(count);
                  for (Index b = 0; b < n; ++b) {
                    for (Index ch = 0; ch < c; ++ch) {
                      const Index at = (b * c + ch) * inner;
                      const double k = gv2(ch) * inv_std(ch);
                      if (training) {
                        gx.data.segment(at, inner).array() +=
                            k * (go.data.segment(at, inner).array() - sum_dy(ch) / m -
                                 xhat.data.segment(at, inner).array() * (sum_dy_xhat(ch) / m));
                      } else {
                        gx.data.segment(at, inner).array() += k * go.data.segment(at, inner).array();
                      }
                    }
                  }
                });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const Index d = xv.dim(-1);
  require(gamma.value().size() == d && beta.value().size() == d, "layer_norm: affine parameter size mismatch");
  const ConstMatrixMap xm = xv.matrix();
  const Index rows = xm.rows();
  Tensor xhat(xv.shape);
  Tensor out(xv.shape);
  Eigen::VectorXd inv_std(rows);
  MatrixMap hm = xhat.matrix();
  MatrixMap om = out.matrix();
  const Eigen::RowVectorXd gv = gamma.value().data.transpose();
  const Eigen::RowVectorXd bv = beta.value().data.transpose();
  for (Index r = 0; r < rows; ++r) {
    const double mu = xm.row(r).mean();
    const double var = (xm.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    hm.row(r) = (xm.row(r).array() - mu) * inv_std(r);
    om.row(r) = hm.row(r).cwiseProduct(gv) + bv;
  }
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return g.emit(std::move(out), {x, gamma, beta}, [&g, ix, ig, ib, xhat = std::move(xhat), inv_std, d](const Tensor& go) {
    const ConstMatrixMap gm = go.matrix();
    const ConstMatrixMap hm2 = xhat.matrix();
    if (g.needs_grad(ig)) g.grad(ig).data += gm.cwiseProduct(hm2).colwise().sum().transpose();
    if (g.needs_grad(ib)) g.grad(ib).data += gm.colwise().sum().transpose();
    if (!g.needs_grad(ix)) return;
    const Eigen::RowVectorXd gv2 = g.value(ig).data.transpose();
    MatrixMap gx = g.grad(ix).matrix();
    const double dd = static_cast<double>(d);
    for (Index r = 0; r < gm.rows(); ++r) {
      const Eigen::RowVectorXd dxhat = gm.row(r).cwiseProduct(gv2);
      const double s1 = dxhat.sum();
      const double s2 = dxhat.dot(hm2.row(r));
      gx.row(r).array() += inv_std(r) * (dxhat.array() - s1 / dd - hm2.row(r).array() * (s2 / dd));
    }
  });
}

Var softmax(Var x) {
  Graph& g = graph_of(x);
  Tensor out(x.shape());
  const ConstMatrixMap xm = x.value().matrix();
  MatrixMap om = out.matrix();
  for (Index r = 0; r < xm.rows(); ++r) {
    const double mx = xm.row(r).maxCoeff();
    om.row(r) = (xm.row(r).array() - mx).exp();
    om.row(r) /= om.row(r).sum();
  }
  const int ix = x.id;
  const int self = static_cast<int>(g.size());
  return g.emit(std::move(out), {x}, [&g, ix, self](const Tensor& go) {
    const ConstMatrixMap y = g.value(self).matrix();
    const ConstMatrixMap gm = go.matrix();
    MatrixMap gx = g.grad(ix).matrix();
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = gm.row(r).dot(y.row(r));
      gx.row(r).array() += y.row(r).array() * (gm.row(r).array() - dot);
    }
  });
}

Var dropout(Var x, double p, std::uint64_t seed) {
  if (p <= 0.0) return x;
  Graph& g = graph_of(x);
  require(p < 1.0, "dropout probability must be < 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  Eigen::VectorXd mask(x.value().size());
  for (Index i = 0; i < mask.size(); ++i) mask(i) = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  Tensor out(x.shape());
  out.data = x.value().data.cwiseProduct(mask);
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix, mask](const Tensor& go) { g.grad(ix).data += go.data.cwiseProduct(mask); });
}

Var mean_axis(Var x, int axis) {
  Graph& g = graph_of(x);
  const int a = norm_axis(axis, x.value().rank());
  const AxisSplit s = split_at(x.shape(), a);
  require(s.length >= 1, "mean over an empty axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + a);
  Tensor out(shape, 0.0);
  const Tensor& in = x.value();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index l = 0; l < s.length; ++l) {
      out.data.segment(o * s.inner, s.inner) += in.data.segment((o * s.length + l) * s.inner, s.inner);
    }
  }
  out.data /= static_cast<double>(s.length);
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix, s](const Tensor& go) {
    Tensor& gx = g.grad(ix);
    const double k = 1.0 / static_cast<double>(s.length);
    for (Index o = 0; o < s.outer; ++o) {
      for (Index l = 0; l < s.length; ++l) {
        gx.data.segment((o * s.length + l) * s.inner, s.inner) += k * go.data.segment(o * s.inner, s.inner);
      }
    }
  });
}

Var max_axis(Var x, int axis) {
  Graph& g = graph_of(x);
  const int a = norm_axis(axis, x.value().rank());
  const AxisSplit s = split_at(x.shape(), a);
  require(s.length >= 1, "max over an empty axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + a);
  Tensor out(shape);
  std::vector<Index> arg(static_cast<std::size_t>(out.size()));
  const Tensor& in = x.value();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Index best = o * s.length * s.inner + i;
      for (Index l = 1; l < s.length; ++l) {
        const Index at = (o * s.length + l) * s.inner + i;
        if (in.data(at) > in.data(best)) best = at;
      }
      out.data(o * s.inner + i) = in.data(best);
      arg[static_cast<std::size_t>(o * s.inner + i)] = best;
    }
  }
  mix_indices(g, arg);
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix, arg](const Tensor& go) {
    Tensor& gx = g.grad(ix);
    for (std::size_t k = 0; k < arg.size(); ++k) gx.data(arg[k]) += go.data(static_cast<Index>(k));
  });
}

Var sum_all(Var x) {
  Graph& g = graph_of(x);
  Tensor out({1});
  out.data(0) = x.value().data.sum();
  const int ix = x.id;
  return g.emit(std::move(out), {x}, [&g, ix](const Tensor& go) { g.grad(ix).data.array() += go.data(0); });
}

Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size())); }

Var l2_normalize_rows(Var x, double eps) {
  Graph& g = graph_of(x);
  require(x.value().rank() == 2, "l2_normalize_rows expects [N, D]");
  const ConstMatrixMap xm = x.value().matrix();
  Eigen::VectorXd norms = (xm.rowwise().squaredNorm().array() + eps).sqrt();
  Tensor out(x.shape());
  out.matrix() = norms.cwiseInverse().asDiagonal() * xm;
  const int ix = x.id;
  const int self = static_cast<int>(g.size());
  return g.emit(std::move(out), {x}, [&g, ix, self, norms](const Tensor& go) {
    const ConstMatrixMap y = g.value(self).matrix();
    const ConstMatrixMap gm = go.matrix();
    MatrixMap gx = g.grad(ix).matrix();
    for (Index r = 0; r < y.rows(); ++r) {
      gx.row(r) += (gm.row(r) - y.row(r) * y.row(r).dot(gm.row(r))) / norms(r);
    }
  });
}

Var mse(Var a, Var b) {
  check_same(a.shape(), b.shape(), "mse");
  Graph& g = graph_of(a);
  const Eigen::VectorXd diff = a.value().data - b.value().data;
  Tensor out({1});
  const double m = static_cast<double>(diff.size());
  out.data(0) = diff.squaredNorm() / m;
  const int ia = a.id, ib = b.id;
  return g.emit(std::move(out), {a, b}, [&g, ia, ib, diff, m](const Tensor& go) {
    const double k = 2.0 * go.data(0) / m;
    if (g.needs_grad(ia)) g.grad(ia).data += k * diff;
    if (g.needs_grad(ib)) g.grad(ib).data -= k * diff;
  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  Graph& g = graph_of(logits);
  const ConstMatrixMap z = logits.value().matrix();
  require(logits.value().rank() == 2 && static_cast<Index>(labels.size()) == z.rows(), "cross_entropy: label count mismatch");
  RowMatrix prob(z.rows(), z.cols());
  double loss = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    require(y >= 0 && y < z.cols(), "cross_entropy: label out of range");
    const double mx = z.row(r).maxCoeff();
    prob.row(r) = (z.row(r).array() - mx).exp();
    const double total = prob.row(r).sum();
    prob.row(r) /= total;
    loss += std::log(total) + mx - z(r, y);
  }
  const double n = static_cast<double>(z.rows());
  Tensor out({1});
  out.data(0) = loss / n;
  const int iz = logits.id;
  return g.emit(std::move(out), {logits}, [&g, iz, prob = std::move(prob), labels, n](const Tensor& go) {
    MatrixMap gz = g.grad(iz).matrix();
    RowMatrix d = prob;
    for (Index r = 0; r < d.rows(); ++r) d(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    gz += (go.data(0) / n) * d;
  });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  Graph& g = graph_of(logits);
  require(targets.size() == logits.value().size(), "bce_with_logits: target size mismatch");
  const Eigen::ArrayXd z = logits.value().data.array();
  const Eigen::ArrayXd t = targets.data.array();
  const double m = static_cast<double>(z.size());
  Tensor out({1});
  out.data(0) = (z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).log()).sum() / m;
  const Eigen::ArrayXd sig = z.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
  const Eigen::VectorXd d = ((sig - t) / m).matrix();
  const int iz = logits.id;
  return g.emit(std::move(out), {logits}, [&g, iz, d](const Tensor& go) { g.grad(iz).data += go.data(0) * d; });
}

}  // namespace byols::nn
