#include "transmatcher/backbone/conv.hpp"

#include <string>

#include "transmatcher/numcore/ops.hpp"
#include "transmatcher/numcore/primitive.hpp"

namespace transmatcher::backbone {

using nc::DimensionError;
using nc::Shape;
using nc::Tensor;
using namespace nc::primitive;

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride) {
  if (x.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected x[B,C,H,W] and kernel[O,C,k,k], got " +
                         nc::shape_str(x.shape()) + " and " + nc::shape_str(kernel.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != C || kernel.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d: kernel " + nc::shape_str(kernel.shape()) +
                         " must be odd-sized and match input " + nc::shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != O) {
    throw DimensionError("conv2d: bias " + nc::shape_str(bias.shape()) + " for " +
                         std::to_string(O) + " output channels");
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const long pad = static_cast<long>(k / 2);
  const std::size_t Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;

  std::vector<T> y(B * O * Ho * Wo);
  const T* X = x.data().data();
  const T* K = kernel.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      T* out = y.data() + (b * O + o) * Ho * Wo;
      const T b0 = bias.defined() ? bias[o] : T(0);
      for (std::size_t i = 0; i < Ho * Wo; ++i) out[i] = b0;
      for (std::size_t c = 0; c < C; ++c) {
        const T* in = X + (b * C + c) * H * W;
        const T* kr = K + (o * C + c) * k * k;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            T acc = 0;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                acc += kr[ky * k + kx] * in[iy * static_cast<long>(W) + ix];
              }
            }
            out[oy * Wo + ox] += acc;
          }
        }
      }
    }
  }
  auto res = finish("conv2d", Shape{B, O, Ho, Wo}, std::move(y));
  if (auto* tape = recording({&x, &kernel, &bias})) {
    attach<T>(tape, "conv2d", res,
              [xn = x.node(), kn = kernel.node(), bn = bias.node(), on = res.node(), B, C, H, W, O,
               k, Ho, Wo, stride, pad] {
                const T* G = on->grad.data();
                const T* X = xn->data.data();
                const T* K = kn->data.data();
                T* gx = grad_target(xn);
                T* gk = grad_target(kn);
                T* gb = grad_target(bn);
                for (std::size_t b = 0; b < B; ++b) {
                  for (std::size_t o = 0; o < O; ++o) {
                    const T* g = G + (b * O + o) * Ho * Wo;
                    if (gb) {
                      for (std::size_t i = 0; i < Ho * Wo; ++i) gb[o] += g[i];
                    }
                    for (std::size_t c = 0; c < C; ++c) {
                      const std::size_t in_off = (b * C + c) * H * W;
                      const std::size_t k_off = (o * C + c) * k * k;
                      for (std::size_t oy = 0; oy < Ho; ++oy) {
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                          const T gv = g[oy * Wo + ox];
                          for (std::size_t ky = 0; ky < k; ++ky) {
                            const long iy = static_cast<long>(oy * stride + ky) - pad;
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                              const long ix = static_cast<long>(ox * stride + kx) - pad;
                              if (ix < 0 || ix >= static_cast<long>(W)) continue;
                              const std::size_t pi = in_off + iy * static_cast<long>(W) + ix;
                              if (gk) gk[k_off + ky * k + kx] += gv * X[pi];
                              if (gx) gx[pi] += gv * K[k_off + ky * k + kx];
                            }
                          }
                        }
                      }
                    }
                  }
                }
              });
  }
  return res;
}

template <class T>
Tensor<T> instance_norm(const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw DimensionError("instance_norm: expected [B,C,H,W], got " + nc::shape_str(x.shape()));
  }
  const Shape s = x.shape();
  auto rows = nc::reshape(x, {s[0] * s[1], s[2] * s[3]});
  return nc::reshape(nc::layer_norm(rows, Tensor<T>(), Tensor<T>()), s);
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              std::size_t);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                               std::size_t);
template Tensor<float> instance_norm(const Tensor<float>&);
template Tensor<double> instance_norm(const Tensor<double>&);

}  // namespace transmatcher::backbone
