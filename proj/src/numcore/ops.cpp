#include "transmatcher/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "transmatcher/numcore/primitive.hpp"
#include "transmatcher/numcore/tape.hpp"

namespace transmatcher::nc {

using namespace primitive;

namespace {

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
  }
}

void require_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                         shape_str(s));
  }
}

struct AxisSplit {
  std::size_t outer;
  std::size_t length;
  std::size_t inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

enum class BinaryKind { exact, left_scalar, right_scalar };

BinaryKind binary_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return BinaryKind::exact;
  if (shape_numel(b) == 1) return BinaryKind::right_scalar;
  if (shape_numel(a) == 1) return BinaryKind::left_scalar;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are neither equal nor scalar");
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> c(m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto out = finish("matmul", {m, n}, std::move(c));
  if (auto* tape = recording({&a, &b})) {
    attach<T>(tape, "matmul", out, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      const T* G = on->grad.data();
      const T* A = an->data.data();
      const T* B = bn->data.data();
      if (T* ga = grad_target(an)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            T s = 0;
            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
            ga[i * k + p] += s;
          }
        }
      }
      if (T* gb = grad_target(bn)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("bmm", a.shape(), 3);
  require_rank("bmm", b.shape(), 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> c(batch * m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    const T* As = A + s * m * k;
    const T* Bs = B + s * k * n;
    T* Cs = c.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T av = As[i * k + p];
        for (std::size_t j = 0; j < n; ++j) Cs[i * n + j] += av * Bs[p * n + j];
      }
    }
  }
  auto out = finish("bmm", {batch, m, n}, std::move(c));
  if (auto* tape = recording({&a, &b})) {
    attach<T>(tape, "bmm", out, [an = a.node(), bn = b.node(), on = out.node(), batch, m, k, n] {
      T* ga = grad_target(an);
      T* gb = grad_target(bn);
      for (std::size_t s = 0; s < batch; ++s) {
        const T* G = on->grad.data() + s * m * n;
        const T* As = an->data.data() + s * m * k;
        const T* Bs = bn->data.data() + s * k * n;
        if (ga) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              T acc = 0;
              for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * Bs[p * n + j];
              ga[s * m * k + i * k + p] += acc;
            }
          }
        }
        if (gb) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const T av = As[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[s * k * n + p * n + j] += av * G[i * n + j];
            }
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(s));
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  std::vector<T> y(x.numel());
  const T* X = x.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) y[b * r * c + j * r + i] = X[b * r * c + i * c + j];
    }
  }
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  auto out = finish("transpose", os, std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "transpose", out, [xn = x.node(), on = out.node(), batch, r, c] {
      T* gx = grad_target(xn);
      const T* G = on->grad.data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += G[b * r * c + j * r + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Shared driver for add/sub/mul. op(a,b) is the forward; da/db give partials.
template <class T, class Fwd, class Da, class Db>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Da da, Db db) {
  const BinaryKind kind = binary_kind(name, a.shape(), b.shape());
  const Shape os = kind == BinaryKind::left_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(os);
  const bool a_s = kind == BinaryKind::left_scalar;
  const bool b_s = kind == BinaryKind::right_scalar;
  std::vector<T> y(n);
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(A[a_s ? 0 : i], B[b_s ? 0 : i]);
  auto out = finish(name, os, std::move(y));
  if (auto* tape = recording({&a, &b})) {
    attach<T>(tape, name, out, [an = a.node(), bn = b.node(), on = out.node(), n, a_s, b_s, da, db] {
      const T* G = on->grad.data();
      const T* A = an->data.data();
      const T* B = bn->data.data();
      if (T* ga = grad_target(an)) {
        for (std::size_t i = 0; i < n; ++i) {
          ga[a_s ? 0 : i] += G[i] * da(A[a_s ? 0 : i], B[b_s ? 0 : i]);
        }
      }
      if (T* gb = grad_target(bn)) {
        for (std::size_t i = 0; i < n; ++i) {
          gb[b_s ? 0 : i] += G[i] * db(A[a_s ? 0 : i], B[b_s ? 0 : i]);
        }
      }
    });
  }
  return out;
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> y(x.data().begin(), x.data().end());
  for (auto& v : y) v *= c;
  auto out = finish("scale", x.shape(), std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "scale", out, [xn = x.node(), on = out.node(), c] {
      T* gx = grad_target(xn);
      const auto& G = on->grad;
      for (std::size_t i = 0; i < G.size(); ++i) gx[i] += c * G[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> y(x.data().begin(), x.data().end());
  for (auto& v : y) v = v > T(0) ? v : T(0);
  auto out = finish("relu", x.shape(), std::move(y));
  if (auto* tape = active_tape<T>()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x[i] > T(0)) h = mix(h, i);
    }
    tape->note_branch(h);
  }
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "relu", out, [xn = x.node(), on = out.node()] {
      T* gx = grad_target(xn);
      const auto& G = on->grad;
      for (std::size_t i = 0; i < G.size(); ++i) {
        if (xn->data[i] > T(0)) gx[i] += G[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  auto out = finish("sigmoid", x.shape(), std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "sigmoid", out, [xn = x.node(), on = out.node()] {
      T* gx = grad_target(xn);
      const auto& G = on->grad;
      const auto& Y = on->data;
      for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i] * Y[i] * (T(1) - Y[i]);
    });
  }
  return out;
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t c = x.shape().back();
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  std::vector<T> y(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % c];
  auto out = finish("add_bias", x.shape(), std::move(y));
  if (auto* tape = recording({&x, &bias})) {
    attach<T>(tape, "add_bias", out, [xn = x.node(), bn = bias.node(), on = out.node(), c] {
      const auto& G = on->grad;
      if (T* gx = grad_target(xn)) {
        for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i];
      }
      if (T* gb = grad_target(bn)) {
        for (std::size_t i = 0; i < G.size(); ++i) gb[i % c] += G[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  auto y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_axis("softmax", x.shape(), axis);
  const auto sp = split_at(x.shape(), axis);
  std::vector<T> y(x.numel());
  const T* X = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.length * sp.inner + in;
      T mx = X[base];
      for (std::size_t l = 1; l < sp.length; ++l) mx = std::max(mx, X[base + l * sp.inner]);
      T total = 0;
      for (std::size_t l = 0; l < sp.length; ++l) {
        const T e = std::exp(X[base + l * sp.inner] - mx);
        y[base + l * sp.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < sp.length; ++l) y[base + l * sp.inner] /= total;
    }
  }
  auto out = finish("softmax", x.shape(), std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "softmax", out, [xn = x.node(), on = out.node(), sp] {
      T* gx = grad_target(xn);
      const T* G = on->grad.data();
      const T* Y = on->data.data();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.length * sp.inner + in;
          T dot = 0;
          for (std::size_t l = 0; l < sp.length; ++l) {
            dot += G[base + l * sp.inner] * Y[base + l * sp.inner];
          }
          for (std::size_t l = 0; l < sp.length; ++l) {
            const std::size_t i = base + l * sp.inner;
            gx[i] += Y[i] * (G[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <class T>
MaxResult<T> max_reduce_argmax(const Tensor<T>& x, std::size_t axis) {
  require_axis("max_reduce_argmax", x.shape(), axis);
  const auto sp = split_at(x.shape(), axis);
  const Shape os = drop_axis(x.shape(), axis);
  std::vector<T> values(sp.outer * sp.inner);
  std::vector<std::size_t> idx(values.size());
  std::vector<std::size_t> source(values.size());  // flat input position of each max
  const T* X = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.length * sp.inner + in;
      std::size_t best = 0;
      T bv = X[base];
      for (std::size_t l = 1; l < sp.length; ++l) {
        const T v = X[base + l * sp.inner];
        if (v > bv) {
          bv = v;
          best = l;
        }
      }
      const std::size_t r = o * sp.inner + in;
      values[r] = bv;
      idx[r] = best;
      source[r] = base + best * sp.inner;
    }
  }
  MaxResult<T> res{finish("max_reduce_argmax", os, std::move(values)), IndexTensor{os, idx}};
  if (auto* tape = active_tape<T>()) {
    std::uint64_t h = 0;
    for (auto i : idx) h = mix(h, i);
    tape->note_branch(h);
  }
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "max_reduce_argmax", res.values,
              [xn = x.node(), on = res.values.node(), source = std::move(source)] {
                T* gx = grad_target(xn);
                const auto& G = on->grad;
                for (std::size_t r = 0; r < G.size(); ++r) gx[source[r]] += G[r];
              });
  }
  return res;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (const T v : x.data()) s += v;
  auto out = finish("sum", {1}, std::vector<T>{s});
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "sum", out, [xn = x.node(), on = out.node()] {
      T* gx = grad_target(xn);
      const T g = on->grad[0];
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  require_axis("sum_axis", x.shape(), axis);
  const auto sp = split_at(x.shape(), axis);
  std::vector<T> y(sp.outer * sp.inner, T(0));
  const T* X = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t l = 0; l < sp.length; ++l) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        y[o * sp.inner + in] += X[(o * sp.length + l) * sp.inner + in];
      }
    }
  }
  auto out = finish("sum_axis", drop_axis(x.shape(), axis), std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "sum_axis", out, [xn = x.node(), on = out.node(), sp] {
      T* gx = grad_target(xn);
      const T* G = on->grad.data();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t l = 0; l < sp.length; ++l) {
          for (std::size_t in = 0; in < sp.inner; ++in) {
            gx[(o * sp.length + l) * sp.inner + in] += G[o * sp.inner + in];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  require_axis("mean_axis", x.shape(), axis);
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(x.dim(axis)));
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  auto out = finish("reshape", std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "reshape", out, [xn = x.node(), on = out.node()] {
      T* gx = grad_target(xn);
      const auto& G = on->grad;
      for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw DimensionError("permute: axis count does not match " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis list for " + shape_str(s));
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * s[i];
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = s[axes[i]];
  // map[out_flat] = in_flat
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_stride[axes[i]];
    map[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < os[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<T> y(n);
  for (std::size_t o = 0; o < n; ++o) y[o] = x[map[o]];
  auto out = finish("permute", os, std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "permute", out, [xn = x.node(), on = out.node(), map = std::move(map)] {
      T* gx = grad_target(xn);
      const auto& G = on->grad;
      for (std::size_t o = 0; o < G.size(); ++o) gx[map[o]] += G[o];
    });
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  require_axis("concat", first, axis);
  Shape os = first;
  os[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    }
    os[axis] += s[axis];
  }
  const auto sp = split_at(first, axis);
  const std::size_t outer = sp.outer, inner = sp.inner;
  std::vector<T> y(shape_numel(os));
  const std::size_t out_row = os[axis] * inner;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * chunk, chunk, y.data() + o * out_row + offset);
    }
    offsets.push_back(offset);
    offset += chunk;
  }
  auto out = finish("concat", os, std::move(y));
  std::vector<const Tensor<T>*> ptrs;
  Tape<T>* tape = active_tape<T>();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    attach<T>(tape, "concat", out,
              [nodes = std::move(nodes), offsets, on = out.node(), outer, out_row, inner, axis] {
                const T* G = on->grad.data();
                for (std::size_t k = 0; k < nodes.size(); ++k) {
                  T* gp = grad_target(nodes[k]);
                  if (!gp) continue;
                  const std::size_t chunk = nodes[k]->shape[axis] * inner;
                  for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = G + o * out_row + offsets[k];
                    for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
                  }
                }
              });
  }
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis("slice", x.shape(), axis);
  if (begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis " + std::to_string(axis) + " of " +
                         shape_str(x.shape()));
  }
  const auto sp = split_at(x.shape(), axis);
  Shape os = x.shape();
  os[axis] = end - begin;
  const std::size_t chunk = (end - begin) * sp.inner;
  const std::size_t row = sp.length * sp.inner;
  const std::size_t off = begin * sp.inner;
  std::vector<T> y(sp.outer * chunk);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.data().data() + o * row + off, chunk, y.data() + o * chunk);
  }
  auto out = finish("slice", os, std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "slice", out, [xn = x.node(), on = out.node(), sp, chunk, row, off] {
      T* gx = grad_target(xn);
      const T* G = on->grad.data();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < chunk; ++i) gx[o * row + off + i] += G[o * chunk + i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("gather: empty index list");
  const std::size_t rows = x.dim(0);
  const std::size_t row = x.numel() / rows;
  for (auto i : indices) {
    if (i >= rows) {
      throw DimensionError("gather: index " + std::to_string(i) + " out of range for " +
                           shape_str(x.shape()));
    }
  }
  Shape os = x.shape();
  os[0] = indices.size();
  std::vector<T> y(indices.size() * row);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(x.data().data() + indices[k] * row, row, y.data() + k * row);
  }
  auto out = finish("gather", os, std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "gather", out,
              [xn = x.node(), on = out.node(), idx = std::vector<std::size_t>(indices.begin(),
                                                                               indices.end()),
               row] {
                T* gx = grad_target(xn);
                const T* G = on->grad.data();
                for (std::size_t k = 0; k < idx.size(); ++k) {
                  for (std::size_t i = 0; i < row; ++i) gx[idx[k] * row + i] += G[k * row + i];
                }
              });
  }
  return out;
}

template <class T>
Tensor<T> repeat(const Tensor<T>& x, std::size_t n) {
  if (n == 0) throw DimensionError("repeat: count must be positive");
  Shape os;
  os.push_back(n);
  os.insert(os.end(), x.shape().begin(), x.shape().end());
  const std::size_t m = x.numel();
  std::vector<T> y(n * m);
  for (std::size_t k = 0; k < n; ++k) std::copy_n(x.data().data(), m, y.data() + k * m);
  auto out = finish("repeat", os, std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "repeat", out, [xn = x.node(), on = out.node(), n, m] {
      T* gx = grad_target(xn);
      const T* G = on->grad.data();
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < m; ++i) gx[i] += G[k * m + i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  if (gamma.defined() && gamma.numel() != c) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  if (beta.defined() && beta.numel() != c) {
    throw DimensionError("layer_norm: beta " + shape_str(beta.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  std::vector<T> xhat(x.numel());
  std::vector<T> inv(rows);
  const T* X = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = X + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    inv[r] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < c; ++j) xhat[r * c + j] = (row[j] - mean) * inv[r];
  }
  std::vector<T> y = xhat;
  if (gamma.defined() || beta.defined()) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (gamma.defined()) y[i] *= gamma[i % c];
      if (beta.defined()) y[i] += beta[i % c];
    }
  }
  auto out = finish("layer_norm", x.shape(), std::move(y));
  if (auto* tape = recording({&x, &gamma, &beta})) {
    attach<T>(tape, "layer_norm", out,
              [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(),
               xhat = std::move(xhat), inv = std::move(inv), rows, c] {
                const T* G = on->grad.data();
                if (T* gg = grad_target(gn)) {
                  for (std::size_t i = 0; i < rows * c; ++i) gg[i % c] += G[i] * xhat[i];
                }
                if (T* gb = grad_target(bn)) {
                  for (std::size_t i = 0; i < rows * c; ++i) gb[i % c] += G[i];
                }
                if (T* gx = grad_target(xn)) {
                  std::vector<T> gh(c);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T s1 = 0, s2 = 0;
                    for (std::size_t j = 0; j < c; ++j) {
                      gh[j] = G[r * c + j] * (gn ? gn->data[j] : T(1));
                      s1 += gh[j];
                      s2 += gh[j] * xhat[r * c + j];
                    }
                    const T cn = static_cast<T>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                      gx[r * c + j] += inv[r] / cn * (cn * gh[j] - s1 - xhat[r * c + j] * s2);
                    }
                  }
                }
              });
  }
  return out;
}

template <class T>
BatchNormState<T>::BatchNormState(std::size_t channels) {
  if (channels > 0) {
    running_mean = Tensor<T>::zeros({channels});
    running_var = Tensor<T>::full({channels}, T(1));
  }
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, const Tensor<T>& gamma,
                     const Tensor<T>& beta, bool training) {
  require_rank("batch_norm", x.shape(), 2);
  const std::size_t b = x.dim(0), c = x.dim(1);
  if (!state.running_mean.defined() || state.running_mean.numel() != c) {
    throw DimensionError("batch_norm: running statistics do not cover " + std::to_string(c) +
                         " channels");
  }
  if (training && b < 2) {
    throw BatchSizeError("batch_norm: training mode needs at least 2 samples, got " +
                         std::to_string(b));
  }
  const T* X = x.data().data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv(c);
  const T eps = static_cast<T>(state.eps);
  if (training) {
    const T mom = static_cast<T>(state.momentum);
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t j = 0; j < c; ++j) {
      T mean = 0;
      for (std::size_t i = 0; i < b; ++i) mean += X[i * c + j];
      mean /= static_cast<T>(b);
      T var = 0;
      for (std::size_t i = 0; i < b; ++i) var += (X[i * c + j] - mean) * (X[i * c + j] - mean);
      const T unbiased = var / static_cast<T>(b - 1);
      var /= static_cast<T>(b);
      inv[j] = T(1) / std::sqrt(var + eps);
      for (std::size_t i = 0; i < b; ++i) xhat[i * c + j] = (X[i * c + j] - mean) * inv[j];
      rm[j] = (T(1) - mom) * rm[j] + mom * mean;
      rv[j] = (T(1) - mom) * rv[j] + mom * unbiased;
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t j = 0; j < c; ++j) inv[j] = T(1) / std::sqrt(rv[j] + eps);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < c; ++j) xhat[i * c + j] = (X[i * c + j] - rm[j]) * inv[j];
    }
  }
  std::vector<T> y = xhat;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (gamma.defined()) y[i] *= gamma[i % c];
    if (beta.defined()) y[i] += beta[i % c];
  }
  auto out = finish("batch_norm", x.shape(), std::move(y));
  if (auto* tape = recording({&x, &gamma, &beta})) {
    attach<T>(tape, "batch_norm", out,
              [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(),
               xhat = std::move(xhat), inv = std::move(inv), b, c, training] {
                const T* G = on->grad.data();
                if (T* gg = grad_target(gn)) {
                  for (std::size_t i = 0; i < b * c; ++i) gg[i % c] += G[i] * xhat[i];
                }
                if (T* gb = grad_target(bn)) {
                  for (std::size_t i = 0; i < b * c; ++i) gb[i % c] += G[i];
                }
                T* gx = grad_target(xn);
                if (!gx) return;
                const T bn_f = static_cast<T>(b);
                for (std::size_t j = 0; j < c; ++j) {
                  const T g_scale = gn ? gn->data[j] : T(1);
                  if (!training) {
                    for (std::size_t i = 0; i < b; ++i) gx[i * c + j] += G[i * c + j] * g_scale * inv[j];
                    continue;
                  }
                  T s1 = 0, s2 = 0;
                  for (std::size_t i = 0; i < b; ++i) {
                    const T gh = G[i * c + j] * g_scale;
                    s1 += gh;
                    s2 += gh * xhat[i * c + j];
                  }
                  for (std::size_t i = 0; i < b; ++i) {
                    const T gh = G[i * c + j] * g_scale;
                    gx[i * c + j] += inv[j] / bn_f * (bn_f * gh - s1 - xhat[i * c + j] * s2);
                  }
                }
              });
  }
  return out;
}

template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, double eps) {
  require_rank("l2_normalize_rows", x.shape(), 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> y(x.numel());
  std::vector<T> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    norms[i] = std::max(std::sqrt(s), static_cast<T>(eps));
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = x[i * d + j] / norms[i];
  }
  auto out = finish("l2_normalize_rows", x.shape(), std::move(y));
  if (auto* tape = recording({&x})) {
    attach<T>(tape, "l2_normalize_rows", out,
              [xn = x.node(), on = out.node(), norms = std::move(norms), n, d] {
                T* gx = grad_target(xn);
                const T* G = on->grad.data();
                const T* Y = on->data.data();
                for (std::size_t i = 0; i < n; ++i) {
                  T dot = 0;
                  for (std::size_t j = 0; j < d; ++j) dot += G[i * d + j] * Y[i * d + j];
                  for (std::size_t j = 0; j < d; ++j) {
                    gx[i * d + j] += (G[i * d + j] - Y[i * d + j] * dot) / norms[i];
                  }
                }
              });
  }
  return out;
}

template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const int> labels) {
  if (labels.size() != logits.numel()) {
    throw DimensionError("bce_with_logits: " + std::to_string(labels.size()) +
                         " labels for logits of shape " + shape_str(logits.shape()));
  }
  std::vector<T> y(logits.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw std::invalid_argument("bce_with_logits: label must be 0 or 1");
    }
    const T z = logits[i];
    y[i] = std::max(z, T(0)) - z * static_cast<T>(labels[i]) + std::log1p(std::exp(-std::abs(z)));
  }
  auto out = finish("bce_with_logits", logits.shape(), std::move(y));
  if (auto* tape = recording({&logits})) {
    attach<T>(tape, "bce_with_logits", out,
              [zn = logits.node(), on = out.node(),
               lab = std::vector<int>(labels.begin(), labels.end())] {
                T* gz = grad_target(zn);
                const auto& G = on->grad;
                for (std::size_t i = 0; i < G.size(); ++i) {
                  const T z = zn->data[i];
                  const T s = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                        : std::exp(z) / (T(1) + std::exp(z));
                  gz[i] += G[i] * (s - static_cast<T>(lab[i]));
                }
              });
  }
  return out;
}

template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logit, int label) {
  if (logit.numel() != 1) throw DimensionError("bce_with_logits: scalar form needs one logit");
  const int labels[1] = {label};
  return bce_with_logits(logit, std::span<const int>(labels, 1));
}

// ---------------------------------------------------------------------------

#define TM_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> transpose(const Tensor<T>&);                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                     \
  template MaxResult<T> max_reduce_argmax(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                 \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);             \
  template Tensor<T> gather(const Tensor<T>&, std::span<const std::size_t>);                     \
  template Tensor<T> repeat(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);   \
  template struct BatchNormState<T>;                                                             \
  template Tensor<T> batch_norm(const Tensor<T>&, BatchNormState<T>&, const Tensor<T>&,          \
                                const Tensor<T>&, bool);                                         \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&, double);                                \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const int>);                    \
  template Tensor<T> bce_with_logits(const Tensor<T>&, int);

TM_INSTANTIATE_OPS(float)
TM_INSTANTIATE_OPS(double)

#undef TM_INSTANTIATE_OPS

}  // namespace transmatcher::nc
