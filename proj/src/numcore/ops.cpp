#include "spjscc/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "spjscc/numcore/kernels.hpp"

namespace spjscc::numcore {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConvTranspose2d: return "conv_transpose2d";
    case OpKind::kDense: return "dense";
    case OpKind::kRelu: return "relu";
    case OpKind::kPrelu: return "prelu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kMeanPool: return "mean_pool2x2";
    case OpKind::kGlobalMeanPool: return "global_mean_pool";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScalarMul: return "scalar_mul";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

namespace ops {
namespace {

[[noreturn]] void shape_fail(std::string_view op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_rank(std::string_view op, const Shape& s, std::size_t rank,
                  std::string_view name) {
  if (s.size() != rank) {
    shape_fail(op, std::string(name) + " must be rank " + std::to_string(rank) +
                       ", got " + to_string(s));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;  // the "image" side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;             // the "column grid" side
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* src, T* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* drow = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(drow, drow + g.out_w, T{0});
            continue;
          }
          const T* srow = src + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            drow[ox] = (ix < 0 || ix >= static_cast<long>(g.width))
                           ? T{0}
                           : srow[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column entries back onto the image.
template <typename T>
void col2im_acc(const ConvGeometry& g, const T* col, T* dst) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* drow = dst + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const T* srow = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            drow[static_cast<std::size_t>(ix)] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  kernels::active_table<T>().gemm_acc(m, n, k, a, k, b, n, c, n);
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  kernels::active_table<T>().axpy(dst.size(), T{1}, src.data(), dst.data());
}

// Trailing spatial size when b (N,C) broadcasts over a (N,C,...).
std::size_t broadcast_inner(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return 0;
  if (b.size() == 2 && a.size() > 2 && a[0] == b[0] && a[1] == b[1]) {
    std::size_t inner = 1;
    for (std::size_t i = 2; i < a.size(); ++i) inner *= a[i];
    return inner;
  }
  shape_fail(op, "incompatible shapes " + to_string(a) + " and " + to_string(b));
}

}  // namespace

template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId x, NodeId w, std::optional<NodeId> b,
              std::size_t stride) {
  constexpr std::string_view op = "conv2d";
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  require_rank(op, xs, 4, "input");
  require_rank(op, ws, 4, "weight");
  if (ws[1] != xs[1]) {
    shape_fail(op, "weight " + to_string(ws) + " expects " + std::to_string(ws[1]) +
                       " input channels, input is " + to_string(xs));
  }
  if (ws[2] != ws[3] || ws[2] % 2 == 0) shape_fail(op, "kernel must be square and odd");
  if (stride != 1 && stride != 2) shape_fail(op, "stride must be 1 or 2");
  if (b && tape.shape(*b) != Shape{ws[0]}) {
    shape_fail(op, "bias " + to_string(tape.shape(*b)) + " must be [" +
                       std::to_string(ws[0]) + "]");
  }
  const std::size_t k = ws[2];
  const std::size_t pad = k / 2;
  if (xs[2] + 2 * pad < k || xs[3] + 2 * pad < k) shape_fail(op, "input smaller than kernel");
  ConvGeometry g{xs[1], xs[2], xs[3], k, stride, pad,
                 (xs[2] + 2 * pad - k) / stride + 1, (xs[3] + 2 * pad - k) / stride + 1};
  const std::size_t n = xs[0], co = ws[0];
  const std::size_t rows = g.col_rows(), cols = g.col_cols();

  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  Tensor<T> out({n, co, g.out_h, g.out_w});
  std::vector<T> col(rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    T* o = out.data() + i * co * cols;
    if (b) {
      const Tensor<T>& bv = tape.value(*b);
      for (std::size_t c = 0; c < co; ++c) std::fill(o + c * cols, o + (c + 1) * cols, bv[c]);
    }
    im2col(g, xv.data() + i * g.channels * g.height * g.width, col.data());
    gemm(co, cols, rows, wv.data(), col.data(), o);
  }

  std::vector<NodeId> inputs{x, w};
  if (b) inputs.push_back(*b);
  return tape.record(
      OpKind::kConv2d, {}, std::move(out), std::move(inputs),
      [g, n, co, x, w](const Tape<T>& t, const Tensor<T>&, const Tensor<T>& gout,
                       std::span<Tensor<T>* const> gin) {
        const std::size_t rows = g.col_rows(), cols = g.col_cols();
        const Tensor<T>& xv = t.value(x);
        const Tensor<T>& wv = t.value(w);
        std::vector<T> col(rows * cols), colt(rows * cols), wt, dcol;
        if (gin[0]) {
          wt.resize(co * rows);
          transpose(co, rows, wv.data(), wt.data());
          dcol.resize(rows * cols);
        }
        for (std::size_t i = 0; i < n; ++i) {
          const T* go = gout.data() + i * co * cols;
          if (gin[1]) {
            im2col(g, xv.data() + i * g.channels * g.height * g.width, col.data());
            transpose(rows, cols, col.data(), colt.data());
            gemm(co, rows, cols, go, colt.data(), gin[1]->data());
          }
          if (gin.size() > 2 && gin[2]) {
            T* db = gin[2]->data();
            for (std::size_t c = 0; c < co; ++c) {
              T acc{0};
              for (std::size_t j = 0; j < cols; ++j) acc += go[c * cols + j];
              db[c] += acc;
            }
          }
          if (gin[0]) {
            std::fill(dcol.begin(), dcol.end(), T{0});
            gemm(rows, cols, co, wt.data(), go, dcol.data());
            col2im_acc(g, dcol.data(),
                       gin[0]->data() + i * g.channels * g.height * g.width);
          }
        }
      });
}

template <typename T>
NodeId conv_transpose2d(Tape<T>& tape, NodeId x, NodeId w, std::optional<NodeId> b,
                        std::size_t stride, std::size_t output_padding) {
  constexpr std::string_view op = "conv_transpose2d";
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  require_rank(op, xs, 4, "input");
  require_rank(op, ws, 4, "weight");
  if (ws[0] != xs[1]) {
    shape_fail(op, "weight " + to_string(ws) + " expects " + std::to_string(ws[0]) +
                       " input channels, input is " + to_string(xs));
  }
  if (ws[2] != ws[3] || ws[2] % 2 == 0) shape_fail(op, "kernel must be square and odd");
  if (stride != 1 && stride != 2) shape_fail(op, "stride must be 1 or 2");
  if (output_padding >= stride) shape_fail(op, "output_padding must be < stride");
  const std::size_t co = ws[1];
  if (b && tape.shape(*b) != Shape{co}) {
    shape_fail(op, "bias " + to_string(tape.shape(*b)) + " must be [" +
                       std::to_string(co) + "]");
  }
  const std::size_t k = ws[2];
  const std::size_t pad = k / 2;
  const std::size_t out_h = (xs[2] - 1) * stride + k + output_padding;
  const std::size_t out_w = (xs[3] - 1) * stride + k + output_padding;
  if (out_h <= 2 * pad || out_w <= 2 * pad) shape_fail(op, "output would be empty");
  // The output plays the image role of a conv2d whose column grid is the input.
  ConvGeometry g{co, out_h - 2 * pad, out_w - 2 * pad, k, stride, pad, xs[2], xs[3]};
  const std::size_t n = xs[0], ci = xs[1];
  const std::size_t rows = g.col_rows(), cols = g.col_cols();
  const std::size_t img = co * g.height * g.width;

  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  std::vector<T> wt(ci * rows);
  transpose(ci, rows, wv.data(), wt.data());
  Tensor<T> out({n, co, g.height, g.width});
  std::vector<T> col(rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    T* o = out.data() + i * img;
    if (b) {
      const Tensor<T>& bv = tape.value(*b);
      const std::size_t plane = g.height * g.width;
      for (std::size_t c = 0; c < co; ++c) std::fill(o + c * plane, o + (c + 1) * plane, bv[c]);
    }
    std::fill(col.begin(), col.end(), T{0});
    gemm(rows, cols, ci, wt.data(), xv.data() + i * ci * cols, col.data());
    col2im_acc(g, col.data(), o);
  }

  std::vector<NodeId> inputs{x, w};
  if (b) inputs.push_back(*b);
  return tape.record(
      OpKind::kConvTranspose2d, {}, std::move(out), std::move(inputs),
      [g, n, ci, x, w](const Tape<T>& t, const Tensor<T>&, const Tensor<T>& gout,
                       std::span<Tensor<T>* const> gin) {
        const std::size_t rows = g.col_rows(), cols = g.col_cols();
        const std::size_t plane = g.height * g.width;
        const std::size_t img = g.channels * plane;
        const Tensor<T>& xv = t.value(x);
        const Tensor<T>& wv = t.value(w);
        std::vector<T> gcol(rows * cols), xt(cols * ci);
        for (std::size_t i = 0; i < n; ++i) {
          const T* go = gout.data() + i * img;
          im2col(g, go, gcol.data());
          if (gin[0]) gemm(ci, cols, rows, wv.data(), gcol.data(), gin[0]->data() + i * ci * cols);
          if (gin[1]) {
            // dW (Ci, Co*K*K) += X (Ci, HW) * gcol^T, computed as X * (gcol^T).
            std::vector<T> gcolt(cols * rows);
            transpose(rows, cols, gcol.data(), gcolt.data());
            gemm(ci, rows, cols, xv.data() + i * ci * cols, gcolt.data(), gin[1]->data());
          }
          if (gin.size() > 2 && gin[2]) {
            T* db = gin[2]->data();
            for (std::size_t c = 0; c < g.channels; ++c) {
              T acc{0};
              for (std::size_t j = 0; j < plane; ++j) acc += go[c * plane + j];
              db[c] += acc;
            }
          }
        }
      });
}

template <typename T>
NodeId dense(Tape<T>& tape, NodeId x, NodeId w, std::optional<NodeId> b) {
  constexpr std::string_view op = "dense";
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  if (xs.size() < 2) shape_fail(op, "input must have a batch axis, got " + to_string(xs));
  require_rank(op, ws, 2, "weight");
  const std::size_t n = xs[0];
  const std::size_t in = tape.value(x).size() / n;
  const std::size_t outf = ws[0];
  if (ws[1] != in) {
    shape_fail(op, "weight " + to_string(ws) + " expects " + std::to_string(ws[1]) +
                       " features, input " + to_string(xs) + " has " + std::to_string(in));
  }
  if (b && tape.shape(*b) != Shape{outf}) {
    shape_fail(op, "bias " + to_string(tape.shape(*b)) + " must be [" +
                       std::to_string(outf) + "]");
  }
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  std::vector<T> wt(in * outf);
  transpose(outf, in, wv.data(), wt.data());
  Tensor<T> out({n, outf});
  if (b) {
    const Tensor<T>& bv = tape.value(*b);
    for (std::size_t i = 0; i < n; ++i) std::copy(bv.data(), bv.data() + outf, out.data() + i * outf);
  }
  gemm(n, outf, in, xv.data(), wt.data(), out.data());

  std::vector<NodeId> inputs{x, w};
  if (b) inputs.push_back(*b);
  return tape.record(
      OpKind::kDense, {}, std::move(out), std::move(inputs),
      [n, in, outf, x, w](const Tape<T>& t, const Tensor<T>&, const Tensor<T>& gout,
                          std::span<Tensor<T>* const> gin) {
        if (gin[0]) gemm(n, in, outf, gout.data(), t.value(w).data(), gin[0]->data());
        if (gin[1]) {
          std::vector<T> gt(outf * n);
          transpose(n, outf, gout.data(), gt.data());
          gemm(outf, in, n, gt.data(), t.value(x).data(), gin[1]->data());
        }
        if (gin.size() > 2 && gin[2]) {
          T* db = gin[2]->data();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t o = 0; o < outf; ++o) db[o] += gout[i * outf + o];
          }
        }
      });
}

template <typename T>
NodeId relu(Tape<T>& tape, NodeId x) {
  Tensor<T> out = tape.value(x);
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return tape.record(OpKind::kRelu, {}, std::move(out), {x},
                     [x](const Tape<T>& t, const Tensor<T>&, const Tensor<T>& g,
                         std::span<Tensor<T>* const> gin) {
                       const Tensor<T>& xv = t.value(x);
                       T* d = gin[0]->data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (xv[i] > T{0}) d[i] += g[i];
                       }
                     });
}

template <typename T>
NodeId prelu(Tape<T>& tape, NodeId x, NodeId alpha) {
  constexpr std::string_view op = "prelu";
  const Shape& xs = tape.shape(x);
  const Shape& as = tape.shape(alpha);
  if (xs.size() < 2) shape_fail(op, "input must be at least rank 2");
  const std::size_t channels = xs[1];
  if (as != Shape{channels} && as != Shape{1}) {
    shape_fail(op, "alpha " + to_string(as) + " must be [1] or [" + std::to_string(channels) + "]");
  }
  std::size_t inner = 1;
  for (std::size_t i = 2; i < xs.size(); ++i) inner *= xs[i];
  const bool shared = as[0] == 1 && channels != 1;
  const Tensor<T>& av = tape.value(alpha);
  Tensor<T> out = tape.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = shared ? 0 : (i / inner) % channels;
    if (out[i] <= T{0}) out[i] *= av[c];
  }
  return tape.record(
      OpKind::kPrelu, {}, std::move(out), {x, alpha},
      [x, alpha, inner, channels, shared](const Tape<T>& t, const Tensor<T>&, const Tensor<T>& g,
                                          std::span<Tensor<T>* const> gin) {
        const Tensor<T>& xv = t.value(x);
        const Tensor<T>& av = t.value(alpha);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = shared ? 0 : (i / inner) % channels;
          if (xv[i] > T{0}) {
            if (gin[0]) (*gin[0])[i] += g[i];
          } else {
            if (gin[0]) (*gin[0])[i] += g[i] * av[c];
            if (gin[1]) (*gin[1])[c] += g[i] * xv[i];
          }
        }
      });
}

template <typename T>
NodeId sigmoid(Tape<T>& tape, NodeId x) {
  Tensor<T> out = tape.value(x);
  for (T& v : out.values()) v = logistic(v);
  return tape.record(OpKind::kSigmoid, {}, std::move(out), {x},
                     [](const Tape<T>&, const Tensor<T>& s, const Tensor<T>& g,
                        std::span<Tensor<T>* const> gin) {
                       T* d = gin[0]->data();
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s[i] * (T{1} - s[i]);
                     });
}

template <typename T>
NodeId softmax(Tape<T>& tape, NodeId x) {
  const Tensor<T>& xv = tape.value(x);
  const std::size_t last = xv.shape().back();
  const std::size_t rows = xv.size() / last;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * last;
    T* o = out.data() + r * last;
    const T mx = *std::max_element(in, in + last);
    T total{0};
    for (std::size_t j = 0; j < last; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < last; ++j) o[j] /= total;
  }
  return tape.record(
      OpKind::kSoftmax, {}, std::move(out), {x},
      [rows, last](const Tape<T>&, const Tensor<T>& y, const Tensor<T>& g,
                   std::span<Tensor<T>* const> gin) {
        T* d = gin[0]->data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y.data() + r * last;
          const T* gr = g.data() + r * last;
          T dotp{0};
          for (std::size_t j = 0; j < last; ++j) dotp += gr[j] * yr[j];
          for (std::size_t j = 0; j < last; ++j) d[r * last + j] += yr[j] * (gr[j] - dotp);
        }
      });
}

template <typename T>
NodeId mean_pool2x2(Tape<T>& tape, NodeId x) {
  constexpr std::string_view op = "mean_pool2x2";
  const Shape& xs = tape.shape(x);
  require_rank(op, xs, 4, "input");
  if (xs[2] % 2 || xs[3] % 2) shape_fail(op, "spatial dims must be even, got " + to_string(xs));
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = h / 2, ow = w / 2;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out({xs[0], xs[1], oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = xv.data() + p * h * w;
    T* o = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* a = in + 2 * y * w + 2 * xx;
        o[y * ow + xx] = (a[0] + a[1] + a[w] + a[w + 1]) * T{0.25};
      }
    }
  }
  return tape.record(OpKind::kMeanPool, {}, std::move(out), {x},
                     [planes, h, w](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                    std::span<Tensor<T>* const> gin) {
                       const std::size_t oh = h / 2, ow = w / 2;
                       for (std::size_t p = 0; p < planes; ++p) {
                         T* d = gin[0]->data() + p * h * w;
                         const T* go = g.data() + p * oh * ow;
                         for (std::size_t y = 0; y < oh; ++y) {
                           for (std::size_t xx = 0; xx < ow; ++xx) {
                             const T v = go[y * ow + xx] * T{0.25};
                             T* a = d + 2 * y * w + 2 * xx;
                             a[0] += v;
                             a[1] += v;
                             a[w] += v;
                             a[w + 1] += v;
                           }
                         }
                       }
                     });
}

template <typename T>
NodeId global_mean_pool(Tape<T>& tape, NodeId x) {
  constexpr std::string_view op = "global_mean_pool";
  const Shape& xs = tape.shape(x);
  require_rank(op, xs, 4, "input");
  const std::size_t planes = xs[0] * xs[1], area = xs[2] * xs[3];
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out({xs[0], xs[1]});
  for (std::size_t p = 0; p < planes; ++p) {
    T acc{0};
    for (std::size_t i = 0; i < area; ++i) acc += xv[p * area + i];
    out[p] = acc / static_cast<T>(area);
  }
  return tape.record(OpKind::kGlobalMeanPool, {}, std::move(out), {x},
                     [planes, area](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                    std::span<Tensor<T>* const> gin) {
                       T* d = gin[0]->data();
                       const T inv = T{1} / static_cast<T>(area);
                       for (std::size_t p = 0; p < planes; ++p) {
                         const T v = g[p] * inv;
                         for (std::size_t i = 0; i < area; ++i) d[p * area + i] += v;
                       }
                     });
}

namespace {

// Shared body for add and sub; sign applies to b.
template <typename T>
NodeId add_signed(Tape<T>& tape, NodeId a, NodeId b, T sign, OpKind kind) {
  const Shape& as = tape.shape(a);
  const std::size_t inner = broadcast_inner(op_name(kind), as, tape.shape(b));
  const Tensor<T>& bv = tape.value(b);
  Tensor<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[inner ? i / inner : i];
  return tape.record(kind, {}, std::move(out), {a, b},
                     [inner, sign](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                   std::span<Tensor<T>* const> gin) {
                       if (gin[0]) add_into(*gin[0], g);
                       if (gin[1]) {
                         T* d = gin[1]->data();
                         for (std::size_t i = 0; i < g.size(); ++i) d[inner ? i / inner : i] += sign * g[i];
                       }
                     });
}

}  // namespace

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b) {
  return add_signed(tape, a, b, T{1}, OpKind::kAdd);
}

template <typename T>
NodeId sub(Tape<T>& tape, NodeId a, NodeId b) {
  return add_signed(tape, a, b, T{-1}, OpKind::kSub);
}

template <typename T>
NodeId mul(Tape<T>& tape, NodeId a, NodeId b) {
  const std::size_t inner = broadcast_inner("mul", tape.shape(a), tape.shape(b));
  const Tensor<T>& bv = tape.value(b);
  Tensor<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[inner ? i / inner : i];
  return tape.record(OpKind::kMul, {}, std::move(out), {a, b},
                     [a, b, inner](const Tape<T>& t, const Tensor<T>&, const Tensor<T>& g,
                                   std::span<Tensor<T>* const> gin) {
                       const Tensor<T>& av = t.value(a);
                       const Tensor<T>& bv = t.value(b);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const std::size_t j = inner ? i / inner : i;
                         if (gin[0]) (*gin[0])[i] += g[i] * bv[j];
                         if (gin[1]) (*gin[1])[j] += g[i] * av[i];
                       }
                     });
}

template <typename T>
NodeId scalar_mul(Tape<T>& tape, NodeId x, T factor) {
  Tensor<T> out = tape.value(x);
  for (T& v : out.values()) v *= factor;
  return tape.record(OpKind::kScalarMul, {}, std::move(out), {x},
                     [factor](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                              std::span<Tensor<T>* const> gin) {
                       kernels::active_table<T>().axpy(g.size(), factor, g.data(),
                                                       gin[0]->data());
                     });
}

template <typename T>
NodeId concat(Tape<T>& tape, std::span<const NodeId> parts) {
  constexpr std::string_view op = "concat";
  if (parts.empty()) shape_fail(op, "no inputs");
  Shape shape = tape.shape(parts[0]);
  if (shape.size() < 2) shape_fail(op, "inputs must be at least rank 2");
  std::vector<std::size_t> widths;  // per-part slab size within one batch item
  std::size_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
  std::size_t channels = 0;
  for (NodeId p : parts) {
    const Shape& s = tape.shape(p);
    if (s.size() != shape.size() || s[0] != shape[0] ||
        !std::equal(s.begin() + 2, s.end(), shape.begin() + 2)) {
      shape_fail(op, "part " + to_string(s) + " incompatible with " + to_string(shape));
    }
    channels += s[1];
    widths.push_back(s[1] * inner);
  }
  shape[1] = channels;
  const std::size_t n = shape[0], total = channels * inner;
  Tensor<T> out(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = tape.value(parts[k]);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    }
    offset += widths[k];
  }
  return tape.record(OpKind::kConcat, {}, std::move(out),
                     std::vector<NodeId>(parts.begin(), parts.end()),
                     [widths, n, total](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                        std::span<Tensor<T>* const> gin) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (gin[k]) {
                           for (std::size_t i = 0; i < n; ++i) {
                             const T* src = g.data() + i * total + offset;
                             T* dst = gin[k]->data() + i * widths[k];
                             for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[j];
                           }
                         }
                         offset += widths[k];
                       }
                     });
}

template <typename T>
NodeId slice(Tape<T>& tape, NodeId x, std::size_t begin, std::size_t end) {
  const Shape& xs = tape.shape(x);
  if (xs.size() < 2 || begin >= end || end > xs[1]) {
    shape_fail("slice", "channel range [" + std::to_string(begin) + "," +
                            std::to_string(end) + ") invalid for " + to_string(xs));
  }
  std::size_t inner = 1;
  for (std::size_t i = 2; i < xs.size(); ++i) inner *= xs[i];
  Shape shape = xs;
  shape[1] = end - begin;
  const std::size_t n = xs[0], total = xs[1] * inner, width = shape[1] * inner,
                    offset = begin * inner;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(xv.data() + i * total + offset, width, out.data() + i * width);
  }
  return tape.record(OpKind::kSlice, {}, std::move(out), {x},
                     [n, total, width, offset](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                               std::span<Tensor<T>* const> gin) {
                       for (std::size_t i = 0; i < n; ++i) {
                         T* dst = gin[0]->data() + i * total + offset;
                         const T* src = g.data() + i * width;
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     });
}

template <typename T>
NodeId reshape(Tape<T>& tape, NodeId x, Shape shape) {
  const Tensor<T>& xv = tape.value(x);
  if (element_count(shape) != xv.size()) {
    shape_fail("reshape", "cannot view " + to_string(xv.shape()) + " as " + to_string(shape));
  }
  return tape.record(OpKind::kReshape, {}, xv.reshaped(std::move(shape)), {x},
                     [](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                       T* d = gin[0]->data();
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                     });
}

template <typename T>
NodeId sum(Tape<T>& tape, NodeId x) {
  const Tensor<T>& xv = tape.value(x);
  T acc{0};
  for (T v : xv.values()) acc += v;
  return tape.record(OpKind::kSum, {}, Tensor<T>({1}, acc), {x},
                     [](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                       for (T& d : gin[0]->values()) d += g[0];
                     });
}

template <typename T>
NodeId mean(Tape<T>& tape, NodeId x) {
  const Tensor<T>& xv = tape.value(x);
  T acc{0};
  for (T v : xv.values()) acc += v;
  const T inv = T{1} / static_cast<T>(xv.size());
  return tape.record(OpKind::kMean, {}, Tensor<T>({1}, acc * inv), {x},
                     [inv](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g, std::span<Tensor<T>* const> gin) {
                       for (T& d : gin[0]->values()) d += g[0] * inv;
                     });
}

template <typename T>
NodeId cross_entropy_with_logits(Tape<T>& tape, NodeId logits, std::span<const int> labels) {
  constexpr std::string_view op = "cross_entropy";
  const Shape& ls = tape.shape(logits);
  require_rank(op, ls, 2, "logits");
  const std::size_t n = ls[0], classes = ls[1];
  if (labels.size() != n) {
    shape_fail(op, std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
  }
  const Tensor<T>& lv = tape.value(logits);
  auto probs = std::make_shared<Tensor<T>>(ls);
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      shape_fail(op, "label " + std::to_string(label) + " outside [0," + std::to_string(classes) + ")");
    }
    const T* row = lv.data() + i * classes;
    T* p = probs->data() + i * classes;
    const T mx = *std::max_element(row, row + classes);
    T total{0};
    for (std::size_t c = 0; c < classes; ++c) total += (p[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) p[c] /= total;
    loss += -(row[label] - mx - std::log(total));
  }
  loss /= static_cast<T>(n);
  std::vector<int> saved(labels.begin(), labels.end());
  return tape.record(OpKind::kCrossEntropy, {}, Tensor<T>({1}, loss), {logits},
                     [probs, saved, n, classes](const Tape<T>&, const Tensor<T>&, const Tensor<T>& g,
                                                std::span<Tensor<T>* const> gin) {
                       const T scale = g[0] / static_cast<T>(n);
                       T* d = gin[0]->data();
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           const T onehot = static_cast<std::size_t>(saved[i]) == c ? T{1} : T{0};
                           d[i * classes + c] += scale * ((*probs)[i * classes + c] - onehot);
                         }
                       }
                     });
}

#define SPJSCC_INSTANTIATE_OPS(T)                                                          \
  template NodeId conv2d<T>(Tape<T>&, NodeId, NodeId, std::optional<NodeId>, std::size_t); \
  template NodeId conv_transpose2d<T>(Tape<T>&, NodeId, NodeId, std::optional<NodeId>,     \
                                      std::size_t, std::size_t);                          \
  template NodeId dense<T>(Tape<T>&, NodeId, NodeId, std::optional<NodeId>);               \
  template NodeId relu<T>(Tape<T>&, NodeId);                                               \
  template NodeId prelu<T>(Tape<T>&, NodeId, NodeId);                                      \
  template NodeId sigmoid<T>(Tape<T>&, NodeId);                                            \
  template NodeId softmax<T>(Tape<T>&, NodeId);                                            \
  template NodeId mean_pool2x2<T>(Tape<T>&, NodeId);                                       \
  template NodeId global_mean_pool<T>(Tape<T>&, NodeId);                                   \
  template NodeId add<T>(Tape<T>&, NodeId, NodeId);                                        \
  template NodeId sub<T>(Tape<T>&, NodeId, NodeId);                                        \
  template NodeId mul<T>(Tape<T>&, NodeId, NodeId);                                        \
  template NodeId scalar_mul<T>(Tape<T>&, NodeId, T);                                      \
  template NodeId concat<T>(Tape<T>&, std::span<const NodeId>);                            \
  template NodeId slice<T>(Tape<T>&, NodeId, std::size_t, std::size_t);                    \
  template NodeId reshape<T>(Tape<T>&, NodeId, Shape);                                     \
  template NodeId sum<T>(Tape<T>&, NodeId);                                                \
  template NodeId mean<T>(Tape<T>&, NodeId);                                               \
  template NodeId cross_entropy_with_logits<T>(Tape<T>&, NodeId, std::span<const int>);

SPJSCC_INSTANTIATE_OPS(float)
SPJSCC_INSTANTIATE_OPS(double)

#undef SPJSCC_INSTANTIATE_OPS

}  // namespace ops
}  // namespace spjscc::numcore
