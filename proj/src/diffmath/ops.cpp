#include "nsl/diffmath/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>

#include "nsl/diffmath/errors.hpp"
#include "nsl/kernels/kernels.hpp"

namespace nsl::ad {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

void same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands live on different tapes");
}

// ---- broadcasting ----------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Flat source offset for every element of `out` when `src` is broadcast to it.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    const std::size_t oi = i + (rank - src.size());
    stride[oi] = src[i] == 1 ? 0 : s;
    s *= src[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

struct Broadcast {
  Shape out;
  bool a_same = true;
  bool b_same = true;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
};

std::shared_ptr<const Broadcast> plan_broadcast(const Shape& a, const Shape& b) {
  auto plan = std::make_shared<Broadcast>();
  plan->out = broadcast_shape(a, b);
  plan->a_same = a == plan->out;
  plan->b_same = b == plan->out;
  if (!plan->a_same) plan->ia = broadcast_index(a, plan->out);
  if (!plan->b_same) plan->ib = broadcast_index(b, plan->out);
  return plan;
}

// Sum of g (shaped like plan.out) folded back onto an operand.
Tensor reduce_to(const Tensor& g, const Shape& target, bool same,
                 const std::vector<std::size_t>& index) {
  if (same) return g;
  Tensor out(target, 0.0);
  for (std::size_t i = 0; i < g.numel(); ++i) out[index[i]] += g[i];
  return out;
}

template <class F, class DA, class DB>
Var binary(Var a, Var b, F f, DA dfa, DB dfb) {
  same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  auto plan = plan_broadcast(va.shape(), vb.shape());
  Tensor out(plan->out);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = va[plan->a_same ? i : plan->ia[i]];
    const double y = vb[plan->b_same ? i : plan->ib[i]];
    out[i] = f(x, y);
  }
  return tape.record(std::move(out), {a, b}, [a, b, plan, dfa, dfb](Tape& t, const Tensor& g) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    const std::size_t n = g.numel();
    if (t.requires_grad(a)) {
      Tensor ga(plan->out);
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] = g[i] * dfa(va[plan->a_same ? i : plan->ia[i]], vb[plan->b_same ? i : plan->ib[i]]);
      }
      t.accumulate(a, reduce_to(ga, va.shape(), plan->a_same, plan->ia));
    }
    if (t.requires_grad(b)) {
      Tensor gb(plan->out);
      for (std::size_t i = 0; i < n; ++i) {
        gb[i] = g[i] * dfb(va[plan->a_same ? i : plan->ia[i]], vb[plan->b_same ? i : plan->ib[i]]);
      }
      t.accumulate(b, reduce_to(gb, vb.shape(), plan->b_same, plan->ib));
    }
  });
}

// df receives (input, output).
template <class F, class DF>
Var unary_op(Var a, F f, DF df) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  Tensor out(va.shape());
  for (std::size_t i = 0; i < va.numel(); ++i) out[i] = f(va[i]);
  auto saved = std::make_shared<Tensor>(out);
  return tape.record(std::move(out), {a}, [a, saved, df](Tape& t, const Tensor& g) {
    const Tensor& va = t.value(a);
    Tensor ga(va.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * df(va[i], (*saved)[i]);
    t.accumulate(a, std::move(ga));
  });
}

// [outer, n, inner] view of a shape around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var add(Var a, double c) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var mul(Var a, double c) {
  Tape& tape = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return tape.record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (double& v : ga.data()) v *= c;
    t.accumulate(a, std::move(ga));
  });
}

Var neg(Var a) { return mul(a, -1.0); }

Var abs(Var a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var exp(Var a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a, double floor) {
  return unary_op(
      a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Var sqrt(Var a, double floor) {
  return unary_op(
      a, [floor](double x) { return std::sqrt(std::max(x, floor)); },
      [floor](double x, double y) { return (x > floor && y > 0.0) ? 0.5 / y : 0.0; });
}

Var pow(Var a, double exponent) {
  return unary_op(
      a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) {
        if (exponent == 0.0) return 0.0;
        if (exponent == 1.0) return 1.0;
        if (exponent == 2.0) return 2.0 * x;
        return exponent * std::pow(x, exponent - 1.0);
      });
}

Var relu(Var a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  return unary_op(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------

Var sum(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  double acc = 0.0;
  for (double v : va.data()) acc += v;
  return tape.record(Tensor::scalar(acc), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(t.value(a).shape(), g[0]));
  });
}

Var mean(Var a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return mul(sum(a), 1.0 / static_cast<double>(n));
}

Var sum(Var a, std::size_t axis, bool keepdim) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const AxisView v = axis_view(va.shape(), axis);
  Shape out_shape = va.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor out(out_shape, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.n; ++k) {
      const double* src = va.data().data() + (o * v.n + k) * v.inner;
      double* dst = out.data().data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  return tape.record(std::move(out), {a}, [a, v](Tape& t, const Tensor& g) {
    Tensor ga(t.value(a).shape());
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t k = 0; k < v.n; ++k) {
        const double* src = g.data().data() + o * v.inner;
        double* dst = ga.data().data() + (o * v.n + k) * v.inner;
        std::copy(src, src + v.inner, dst);
      }
    }
    t.accumulate(a, std::move(ga));
  });
}

Var mean(Var a, std::size_t axis, bool keepdim) {
  const std::size_t n = a.shape().at(axis);
  if (n == 0) throw ContractError("mean over an empty axis");
  return mul(sum(a, axis, keepdim), 1.0 / static_cast<double>(n));
}

// ---- structural ------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g.reshaped(t.value(a).shape()));
  });
}

namespace {

// Input offset for each output element of a permutation.
std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& order,
                                       Shape& out_shape) {
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  out_shape.resize(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[order[i]];
    stride[i] = in_stride[order[i]];
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out_shape[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace

Var permute(Var a, std::vector<std::size_t> order) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  if (order.size() != va.rank()) throw DimensionError("permute: order rank mismatch");
  std::vector<bool> seen(order.size(), false);
  for (std::size_t o : order) {
    if (o >= order.size() || seen[o]) throw DimensionError("permute: invalid axis order");
    seen[o] = true;
  }
  Shape out_shape;
  auto index = std::make_shared<std::vector<std::size_t>>(permute_index(va.shape(), order, out_shape));
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[(*index)[i]];
  return tape.record(std::move(out), {a}, [a, index](Tape& t, const Tensor& g) {
    Tensor ga(t.value(a).shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[(*index)[i]] = g[i];
    t.accumulate(a, std::move(ga));
  });
}

Var transpose(Var a) {
  const std::size_t rank = a.shape().size();
  if (rank < 2) throw DimensionError("transpose needs rank >= 2");
  std::vector<std::size_t> order(rank);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[rank - 1], order[rank - 2]);
  return permute(a, std::move(order));
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of no tensors");
  Tape& tape = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  Tensor out(out_shape);
  std::size_t base = 0;
  for (const Var& p : parts) {
    const Tensor& vp = p.value();
    const std::size_t len = vp.dim(axis) * ov.inner;
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(vp.data().data() + o * len, len,
                  out.data().data() + o * ov.n * ov.inner + base * ov.inner);
    }
    base += vp.dim(axis);
  }
  return tape.record(std::move(out), parts, [parts, ov, axis](Tape& t, const Tensor& g) {
    std::size_t base = 0;
    for (const Var& p : parts) {
      const Shape& s = t.value(p).shape();
      const std::size_t len = s[axis] * ov.inner;
      if (t.requires_grad(p)) {
        Tensor gp(s);
        for (std::size_t o = 0; o < ov.outer; ++o) {
          std::copy_n(g.data().data() + o * ov.n * ov.inner + base * ov.inner, len,
                      gp.data().data() + o * len);
        }
        t.accumulate(p, std::move(gp));
      }
      base += s[axis];
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const AxisView v = axis_view(va.shape(), axis);
  if (begin > end || end > v.n) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(va.shape()));
  }
  Shape out_shape = va.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t len = (end - begin) * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(va.data().data() + (o * v.n + begin) * v.inner, len, out.data().data() + o * len);
  }
  return tape.record(std::move(out), {a}, [a, v, begin, len](Tape& t, const Tensor& g) {
    Tensor ga(t.value(a).shape());
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(g.data().data() + o * len, len, ga.data().data() + (o * v.n + begin) * v.inner);
    }
    t.accumulate(a, std::move(ga));
  });
}

// ---- linear algebra --------------------------------------------------------

Var bmm(Var a, Var b) {
  same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.rank() != 3 || vb.rank() != 3 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(1)) {
    throw DimensionError("bmm: " + shape_str(va.shape()) + " * " + shape_str(vb.shape()));
  }
  const std::size_t batch = va.dim(0), m = va.dim(1), k = va.dim(2), n = vb.dim(2);
  Tensor out({batch, m, n}, 0.0);
  const auto& kt = kernels::active();
  for (std::size_t i = 0; i < batch; ++i) {
    kt.gemm_nn(m, n, k, va.data().data() + i * m * k, k, vb.data().data() + i * k * n, n,
               out.data().data() + i * m * n, n);
  }
  return tape.record(std::move(out), {a, b}, [a, b, batch, m, k, n](Tape& t, const Tensor& g) {
    const auto& kt = kernels::active();
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (t.requires_grad(a)) {
      Tensor ga(va.shape(), 0.0);
      for (std::size_t i = 0; i < batch; ++i) {
        // dA = G * B^T
        kt.gemm_nt(m, k, n, g.data().data() + i * m * n, n, vb.data().data() + i * k * n, n,
                   ga.data().data() + i * m * k, k);
      }
      t.accumulate(a, std::move(ga));
    }
    if (t.requires_grad(b)) {
      Tensor gb(vb.shape(), 0.0);
      for (std::size_t i = 0; i < batch; ++i) {
        // dB = A^T * G
        kt.gemm_tn(k, n, m, va.data().data() + i * m * k, k, g.data().data() + i * m * n, n,
                   gb.data().data() + i * k * n, n);
      }
      t.accumulate(b, std::move(gb));
    }
  });
}

Var matmul(Var a, Var b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], n = b.shape()[1];
  Var out = bmm(reshape(a, {1, a.shape()[0], a.shape()[1]}),
                reshape(b, {1, b.shape()[0], b.shape()[1]}));
  return reshape(out, {m, n});
}

Var softmax(Var a, std::size_t axis) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const AxisView v = axis_view(va.shape(), axis);
  Tensor out(va.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.n * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.n; ++k) mx = std::max(mx, va[base + k * v.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        const double e = std::exp(va[base + k * v.inner] - mx);
        out[base + k * v.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < v.n; ++k) out[base + k * v.inner] /= z;
    }
  }
  auto saved = std::make_shared<Tensor>(out);
  return tape.record(std::move(out), {a}, [a, v, saved](Tape& t, const Tensor& g) {
    const Tensor& y = *saved;
    Tensor ga(y.shape());
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.n * v.inner + in;
        double dotp = 0.0;
        for (std::size_t k = 0; k < v.n; ++k) {
          dotp += g[base + k * v.inner] * y[base + k * v.inner];
        }
        for (std::size_t k = 0; k < v.n; ++k) {
          const std::size_t idx = base + k * v.inner;
          ga[idx] = y[idx] * (g[idx] - dotp);
        }
      }
    }
    t.accumulate(a, std::move(ga));
  });
}

// ---- image ops -------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t c, h, w, o, kh, kw, stride, pad, ho, wo;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return ho * wo; }
};

void im2col(const double* in, const ConvGeometry& g, double* col) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* dst = col + ((ci * g.kh + ky) * g.kw + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            dst[oy * g.wo + ox] =
                inside ? in[(ci * g.h + static_cast<std::size_t>(iy)) * g.w +
                            static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* in) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* src = col + ((ci * g.kh + ky) * g.kw + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            in[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                src[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  same_tape(input, kernel);
  Tape& tape = tape_of(input);
  const Tensor& vi = input.value();
  const Tensor& vk = kernel.value();
  if (vi.rank() != 3 || vk.rank() != 4 || vk.dim(1) != vi.dim(0)) {
    throw DimensionError("conv2d: input " + shape_str(vi.shape()) + ", kernel " +
                         shape_str(vk.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  ConvGeometry geo{vi.dim(0), vi.dim(1), vi.dim(2), vk.dim(0), vk.dim(2), vk.dim(3),
                   stride,    padding,   0,         0};
  const std::ptrdiff_t span_h = static_cast<std::ptrdiff_t>(geo.h + 2 * padding) -
                                static_cast<std::ptrdiff_t>(geo.kh);
  const std::ptrdiff_t span_w = static_cast<std::ptrdiff_t>(geo.w + 2 * padding) -
                                static_cast<std::ptrdiff_t>(geo.kw);
  if (span_h < 0 || span_w < 0) {
    throw ConfigError("conv2d: kernel " + shape_str(vk.shape()) + " does not fit padded input " +
                      shape_str(vi.shape()));
  }
  geo.ho = static_cast<std::size_t>(span_h) / stride + 1;
  geo.wo = static_cast<std::size_t>(span_w) / stride + 1;

  std::vector<double> col(geo.rows() * geo.cols());
  im2col(vi.data().data(), geo, col.data());
  Tensor out({geo.o, geo.ho, geo.wo}, 0.0);
  kernels::active().gemm_nn(geo.o, geo.cols(), geo.rows(), vk.data().data(), geo.rows(),
                            col.data(), geo.cols(), out.data().data(), geo.cols());

  return tape.record(std::move(out), {input, kernel}, [input, kernel, geo](Tape& t, const Tensor& g) {
    const auto& kt = kernels::active();
    if (t.requires_grad(kernel)) {
      std::vector<double> col(geo.rows() * geo.cols());
      im2col(t.value(input).data().data(), geo, col.data());
      Tensor gk(t.value(kernel).shape(), 0.0);
      kt.gemm_nt(geo.o, geo.rows(), geo.cols(), g.data().data(), geo.cols(), col.data(),
                 geo.cols(), gk.data().data(), geo.rows());
      t.accumulate(kernel, std::move(gk));
    }
    if (t.requires_grad(input)) {
      std::vector<double> dcol(geo.rows() * geo.cols(), 0.0);
      kt.gemm_tn(geo.rows(), geo.cols(), geo.o, t.value(kernel).data().data(), geo.rows(),
                 g.data().data(), geo.cols(), dcol.data(), geo.cols());
      Tensor gi(t.value(input).shape(), 0.0);
      col2im(dcol.data(), geo, gi.data().data());
      t.accumulate(input, std::move(gi));
    }
  });
}

namespace {

// Planes x H x W view of a rank-2 or rank-3 image tensor.
struct Planes {
  std::size_t c, h, w;
};

Planes planes_of(const Shape& s, const char* op) {
  if (s.size() == 2) return {1, s[0], s[1]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw DimensionError(std::string(op) + ": expected [H x W] or [C x H x W], got " + shape_str(s));
}

}  // namespace

Var avg_pool3x3(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const Planes p = planes_of(va.shape(), "avg_pool3x3");
  auto inv_count = std::make_shared<std::vector<double>>(p.h * p.w);
  for (std::size_t y = 0; y < p.h; ++y) {
    const std::size_t ny = (y > 0) + 1 + (y + 1 < p.h);
    for (std::size_t x = 0; x < p.w; ++x) {
      const std::size_t nx = (x > 0) + 1 + (x + 1 < p.w);
      (*inv_count)[y * p.w + x] = 1.0 / static_cast<double>(ny * nx);
    }
  }
  auto pool = [p](const double* src, double* dst, const std::vector<double>& inv, bool adjoint) {
    for (std::size_t c = 0; c < p.c; ++c) {
      const double* s = src + c * p.h * p.w;
      double* d = dst + c * p.h * p.w;
      for (std::size_t y = 0; y < p.h; ++y) {
        const std::size_t y0 = y > 0 ? y - 1 : 0, y1 = std::min(y + 1, p.h - 1);
        for (std::size_t x = 0; x < p.w; ++x) {
          const std::size_t x0 = x > 0 ? x - 1 : 0, x1 = std::min(x + 1, p.w - 1);
          if (!adjoint) {
            double acc = 0.0;
            for (std::size_t yy = y0; yy <= y1; ++yy) {
              for (std::size_t xx = x0; xx <= x1; ++xx) acc += s[yy * p.w + xx];
            }
            d[y * p.w + x] = acc * inv[y * p.w + x];
          } else {
            const double gv = s[y * p.w + x] * inv[y * p.w + x];
            for (std::size_t yy = y0; yy <= y1; ++yy) {
              for (std::size_t xx = x0; xx <= x1; ++xx) d[yy * p.w + xx] += gv;
            }
          }
        }
      }
    }
  };
  Tensor out(va.shape(), 0.0);
  pool(va.data().data(), out.data().data(), *inv_count, false);
  return tape.record(std::move(out), {a}, [a, inv_count, pool](Tape& t, const Tensor& g) {
    Tensor ga(g.shape(), 0.0);
    pool(g.data().data(), ga.data().data(), *inv_count, true);
    t.accumulate(a, std::move(ga));
  });
}

namespace {

struct Lerp {
  std::size_t i0, i1;
  double w;  // weight of i1
};

std::vector<Lerp> upsample_taps(std::size_t n) {
  std::vector<Lerp> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) / 2.0 - 0.5, 0.0,
                                  static_cast<double>(n - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Var upsample_bilinear2x(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const Planes p = planes_of(va.shape(), "upsample_bilinear2x");
  if (p.h == 0 || p.w == 0) throw DimensionError("upsample_bilinear2x: empty input");
  auto ty = std::make_shared<std::vector<Lerp>>(upsample_taps(p.h));
  auto tx = std::make_shared<std::vector<Lerp>>(upsample_taps(p.w));
  Shape out_shape = va.shape();
  out_shape[out_shape.size() - 2] *= 2;
  out_shape[out_shape.size() - 1] *= 2;
  Tensor out(out_shape, 0.0);
  const std::size_t oh = 2 * p.h, ow = 2 * p.w;
  for (std::size_t c = 0; c < p.c; ++c) {
    const double* s = va.data().data() + c * p.h * p.w;
    double* d = out.data().data() + c * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const Lerp& ly = (*ty)[y];
      for (std::size_t x = 0; x < ow; ++x) {
        const Lerp& lx = (*tx)[x];
        const double top = (1.0 - lx.w) * s[ly.i0 * p.w + lx.i0] + lx.w * s[ly.i0 * p.w + lx.i1];
        const double bot = (1.0 - lx.w) * s[ly.i1 * p.w + lx.i0] + lx.w * s[ly.i1 * p.w + lx.i1];
        d[y * ow + x] = (1.0 - ly.w) * top + ly.w * bot;
      }
    }
  }
  return tape.record(std::move(out), {a}, [a, p, ty, tx](Tape& t, const Tensor& g) {
    Tensor ga(t.value(a).shape(), 0.0);
    const std::size_t oh = 2 * p.h, ow = 2 * p.w;
    for (std::size_t c = 0; c < p.c; ++c) {
      const double* s = g.data().data() + c * oh * ow;
      double* d = ga.data().data() + c * p.h * p.w;
      for (std::size_t y = 0; y < oh; ++y) {
        const Lerp& ly = (*ty)[y];
        for (std::size_t x = 0; x < ow; ++x) {
          const Lerp& lx = (*tx)[x];
          const double gv = s[y * ow + x];
          d[ly.i0 * p.w + lx.i0] += gv * (1.0 - ly.w) * (1.0 - lx.w);
          d[ly.i0 * p.w + lx.i1] += gv * (1.0 - ly.w) * lx.w;
          d[ly.i1 * p.w + lx.i0] += gv * ly.w * (1.0 - lx.w);
          d[ly.i1 * p.w + lx.i1] += gv * ly.w * lx.w;
        }
      }
    }
    t.accumulate(a, std::move(ga));
  });
}

WarpResult bilinear_warp_1d(Var img, Var disparity, int direction) {
  same_tape(img, disparity);
  Tape& tape = tape_of(img);
  const Tensor& vi = img.value();
  const Tensor& vd = disparity.value();
  const Planes p = planes_of(vi.shape(), "bilinear_warp_1d");
  if (vd.rank() != 2 || vd.dim(0) != p.h || vd.dim(1) != p.w) {
    throw DimensionError("bilinear_warp_1d: disparity " + shape_str(vd.shape()) +
                         " does not match image " + shape_str(vi.shape()));
  }
  if (direction != 1 && direction != -1) throw ConfigError("warp direction must be +1 or -1");
  const double dir = static_cast<double>(direction);

  // Per pixel: left tap (or -1 when invalid) and the weight of the right tap.
  auto tap = std::make_shared<std::vector<std::ptrdiff_t>>(p.h * p.w, -1);
  auto frac = std::make_shared<std::vector<double>>(p.h * p.w, 0.0);
  Tensor valid({p.h, p.w}, 0.0);
  const double last = static_cast<double>(p.w - 1);
  for (std::size_t i = 0; i < p.h * p.w; ++i) {
    const double xs = static_cast<double>(i % p.w) + dir * vd[i];
    if (!(xs >= 0.0 && xs <= last)) continue;
    std::size_t x0 = static_cast<std::size_t>(std::floor(xs));
    if (p.w >= 2) x0 = std::min(x0, p.w - 2);
    (*tap)[i] = static_cast<std::ptrdiff_t>(x0);
    (*frac)[i] = xs - static_cast<double>(x0);
    valid[i] = 1.0;
  }
  Tensor out(vi.shape(), 0.0);
  for (std::size_t c = 0; c < p.c; ++c) {
    const double* s = vi.data().data() + c * p.h * p.w;
    double* d = out.data().data() + c * p.h * p.w;
    for (std::size_t i = 0; i < p.h * p.w; ++i) {
      const std::ptrdiff_t x0 = (*tap)[i];
      if (x0 < 0) continue;
      const std::size_t row = (i / p.w) * p.w;
      const double a = (*frac)[i];
      const double v0 = s[row + static_cast<std::size_t>(x0)];
      const double v1 = p.w >= 2 ? s[row + static_cast<std::size_t>(x0) + 1] : v0;
      d[i] = (1.0 - a) * v0 + a * v1;
    }
  }
  Var image = tape.record(std::move(out), {img, disparity},
                          [img, disparity, p, tap, frac, dir](Tape& t, const Tensor& g) {
    const Tensor& vi = t.value(img);
    if (t.requires_grad(img)) {
      Tensor gi(vi.shape(), 0.0);
      for (std::size_t c = 0; c < p.c; ++c) {
        const double* s = g.data().data() + c * p.h * p.w;
        double* d = gi.data().data() + c * p.h * p.w;
        for (std::size_t i = 0; i < p.h * p.w; ++i) {
          const std::ptrdiff_t x0 = (*tap)[i];
          if (x0 < 0) continue;
          const std::size_t row = (i / p.w) * p.w;
          const double a = (*frac)[i];
          if (p.w >= 2) {
            d[row + static_cast<std::size_t>(x0)] += (1.0 - a) * s[i];
            d[row + static_cast<std::size_t>(x0) + 1] += a * s[i];
          } else {
            d[row] += s[i];
          }
        }
      }
      t.accumulate(img, std::move(gi));
    }
    if (t.requires_grad(disparity) && p.w >= 2) {
      Tensor gd(t.value(disparity).shape(), 0.0);
      for (std::size_t c = 0; c < p.c; ++c) {
        const double* s = vi.data().data() + c * p.h * p.w;
        const double* gg = g.data().data() + c * p.h * p.w;
        for (std::size_t i = 0; i < p.h * p.w; ++i) {
          const std::ptrdiff_t x0 = (*tap)[i];
          if (x0 < 0) continue;
          const std::size_t row = (i / p.w) * p.w;
          const double slope =
              s[row + static_cast<std::size_t>(x0) + 1] - s[row + static_cast<std::size_t>(x0)];
          gd[i] += gg[i] * slope * dir;
        }
      }
      t.accumulate(disparity, std::move(gd));
    }
  });
  return {image, std::move(valid)};
}

Var unfold3x3(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  if (va.rank() != 2) throw DimensionError("unfold3x3 expects [H x W], got " + shape_str(va.shape()));
  const std::size_t h = va.dim(0), w = va.dim(1);
  auto src = std::make_shared<std::vector<std::size_t>>(9 * h * w);
  for (std::size_t k = 0; k < 9; ++k) {
    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(k / 3) - 1;
    const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(k % 3) - 1;
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t yy = static_cast<std::size_t>(
          std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + dy, 0,
                                     static_cast<std::ptrdiff_t>(h) - 1));
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t xx = static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) + dx, 0,
                                       static_cast<std::ptrdiff_t>(w) - 1));
        (*src)[(k * h + y) * w + x] = yy * w + xx;
      }
    }
  }
  Tensor out({9, h, w});
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[(*src)[i]];
  return tape.record(std::move(out), {a}, [a, src](Tape& t, const Tensor& g) {
    Tensor ga(t.value(a).shape(), 0.0);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[(*src)[i]] += g[i];
    t.accumulate(a, std::move(ga));
  });
}

}  // namespace nsl::ad
