#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pgcon/image.hpp"
#include "pgcon/rng.hpp"
#include "pgcon/tensor.hpp"

namespace pgcon {

// Trunk widths and embedding dimension of the desk-scale encoder pair:
// conv(3->c1) -> conv(c1->c2) -> conv(c2->c3), all 3x3 stride 2 pad 1, ReLU
// between, then global average pooling and an affine projection to dim.
struct EncoderConfig {
  int c1 = 16;
  int c2 = 32;
  int c3 = 64;
  int dim = 128;
  bool share_trunk = false;  // ablation: h reuses f's trunk + projection
};

template <typename T>
struct ConvParams {
  Tensor<T> w;  // [oc, ic, 3, 3]
  Tensor<T> b;  // [oc]
};

template <typename T>
struct LinearParams {
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out]
};

template <typename T>
struct TrunkParams {
  ConvParams<T> conv1, conv2, conv3;
};

// Full parameter set: f (prior/WIN path, "theta") and h (jigsaw path, "phi").
template <typename T>
struct ModelParams {
  EncoderConfig cfg;
  TrunkParams<T> f_trunk;
  LinearParams<T> f_proj;
  TrunkParams<T> h_trunk;  // empty tensors when share_trunk
  LinearParams<T> h_proj;
  LinearParams<T> h_agg;  // [dim, 9*dim]

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    auto trunk = [&](const char* prefix, TrunkParams<T>& t) {
      fn(std::string(prefix) + ".conv1.w", t.conv1.w);
      fn(std::string(prefix) + ".conv1.b", t.conv1.b);
      fn(std::string(prefix) + ".conv2.w", t.conv2.w);
      fn(std::string(prefix) + ".conv2.b", t.conv2.b);
      fn(std::string(prefix) + ".conv3.w", t.conv3.w);
      fn(std::string(prefix) + ".conv3.b", t.conv3.b);
    };
    trunk("f", f_trunk);
    fn(std::string("f.proj.w"), f_proj.w);
    fn(std::string("f.proj.b"), f_proj.b);
    if (!cfg.share_trunk) {
      trunk("h", h_trunk);
      fn(std::string("h.proj.w"), h_proj.w);
      fn(std::string("h.proj.b"), h_proj.b);
    }
    fn(std::string("h.agg.w"), h_agg.w);
    fn(std::string("h.agg.b"), h_agg.b);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, Tensor<T>& t) { fn(name, static_cast<const Tensor<T>&>(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }
};

namespace nn {

// ---- small GEMM kernels (row-major) -------------------------------------

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  for (std::size_t m = 0; m < M; ++m) {
    T* c = C + m * N;
    const T* a = A + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* a = A + m * N;
    T* c = C + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T* b = B + k * N;
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) acc += a[n] * b[n];
      c[k] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* a = A + m * K;
    const T* b = B + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      T* c = C + k * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// ---- convolution by im2col ------------------------------------------------

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void im2col(const Tensor<T>& in, int k, int stride, int pad, Tensor<T>& cols) {
  const int C = static_cast<int>(in.shape()[0]);
  const int H = static_cast<int>(in.shape()[1]);
  const int W = static_cast<int>(in.shape()[2]);
  const int OH = conv_out_extent(H, k, stride, pad);
  const int OW = conv_out_extent(W, k, stride, pad);
  cols = Tensor<T>({static_cast<std::size_t>(C) * k * k, static_cast<std::size_t>(OH) * OW});
  T* dst = cols.data();
  for (int c = 0; c < C; ++c) {
    const T* plane = in.data() + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                         ? plane[static_cast<std::size_t>(iy) * W + ix]
                         : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Tensor<T>& cols, int C, int H, int W, int k, int stride, int pad,
                Tensor<T>& grad_in) {
  const int OH = conv_out_extent(H, k, stride, pad);
  const int OW = conv_out_extent(W, k, stride, pad);
  const T* src = cols.data();
  for (int c = 0; c < C; ++c) {
    T* plane = grad_in.data() + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kx;
            const T v = *src++;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              plane[static_cast<std::size_t>(iy) * W + ix] += v;
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const ConvParams<T>& conv, int stride, int pad) {
  const int OC = static_cast<int>(conv.w.shape()[0]);
  const int IC = static_cast<int>(conv.w.shape()[1]);
  const int k = static_cast<int>(conv.w.shape()[2]);
  require(static_cast<int>(in.shape()[0]) == IC, "conv2d: channel mismatch");
  const int OH = conv_out_extent(static_cast<int>(in.shape()[1]), k, stride, pad);
  const int OW = conv_out_extent(static_cast<int>(in.shape()[2]), k, stride, pad);

  Tensor<T> cols;
  im2col(in, k, stride, pad, cols);
  Tensor<T> out({static_cast<std::size_t>(OC), static_cast<std::size_t>(OH),
                 static_cast<std::size_t>(OW)});
  const std::size_t n = static_cast<std::size_t>(OH) * OW;
  for (int oc = 0; oc < OC; ++oc)
    std::fill_n(out.data() + oc * n, n, conv.b[oc]);
  gemm_nn(OC, static_cast<std::size_t>(IC) * k * k, n, conv.w.data(), cols.data(), out.data());
  return out;
}

// grad_out: [OC,OH,OW]; accumulates into grad_w/grad_b; returns grad wrt in.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& in, const ConvParams<T>& conv, int stride, int pad,
                          const Tensor<T>& grad_out, Tensor<T>& grad_w, Tensor<T>& grad_b) {
  const int OC = static_cast<int>(conv.w.shape()[0]);
  const int IC = static_cast<int>(conv.w.shape()[1]);
  const int k = static_cast<int>(conv.w.shape()[2]);
  const int H = static_cast<int>(in.shape()[1]);
  const int W = static_cast<int>(in.shape()[2]);
  const std::size_t n = grad_out.size() / OC;
  const std::size_t K = static_cast<std::size_t>(IC) * k * k;

  Tensor<T> cols;
  im2col(in, k, stride, pad, cols);
  gemm_nt(OC, n, K, grad_out.data(), cols.data(), grad_w.data());
  for (int oc = 0; oc < OC; ++oc) {
    T acc = 0;
    const T* g = grad_out.data() + oc * n;
    for (std::size_t i = 0; i < n; ++i) acc += g[i];
    grad_b[oc] += acc;
  }

  Tensor<T> grad_cols({K, n});
  gemm_tn(OC, K, n, conv.w.data(), grad_out.data(), grad_cols.data());
  Tensor<T> grad_in(in.shape());
  col2im_add(grad_cols, IC, H, W, k, stride, pad, grad_in);
  return grad_in;
}

// ---- pointwise pieces -----------------------------------------------------

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] < T(0)) t[i] = T(0);
}

// Masks grad by the stored post-ReLU activation (zero where the unit was off).
template <typename T>
void relu_backward_inplace(const Tensor<T>& act, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(act[i] > T(0))) grad[i] = T(0);
}

template <typename T>
std::vector<T> global_avg_pool(const Tensor<T>& in) {
  const int C = static_cast<int>(in.shape()[0]);
  const std::size_t hw = in.size() / C;
  std::vector<T> out(C);
  for (int c = 0; c < C; ++c) {
    T acc = 0;
    const T* p = in.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    out[c] = acc / static_cast<T>(hw);
  }
  return out;
}

template <typename T>
std::vector<T> linear_forward(const LinearParams<T>& lin, const std::vector<T>& x) {
  const std::size_t out_dim = lin.w.shape()[0];
  const std::size_t in_dim = lin.w.shape()[1];
  require(x.size() == in_dim, "linear: input size mismatch");
  std::vector<T> y(out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) {
    const T* row = lin.w.data() + o * in_dim;
    T acc = lin.b[o];
    for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

template <typename T>
std::vector<T> linear_backward(const LinearParams<T>& lin, const std::vector<T>& x,
                               const std::vector<T>& grad_y, Tensor<T>& grad_w,
                               Tensor<T>& grad_b) {
  const std::size_t out_dim = lin.w.shape()[0];
  const std::size_t in_dim = lin.w.shape()[1];
  std::vector<T> grad_x(in_dim, T(0));
  for (std::size_t o = 0; o < out_dim; ++o) {
    const T g = grad_y[o];
    grad_b[o] += g;
    const T* row = lin.w.data() + o * in_dim;
    T* gw = grad_w.data() + o * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      gw[i] += g * x[i];
      grad_x[i] += g * row[i];
    }
  }
  return grad_x;
}

template <typename T>
T l2_norm(const std::vector<T>& v) {
  T acc = 0;
  for (T x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace nn

// ---- encoders -------------------------------------------------------------

template <typename T>
Tensor<T> to_chw(const RgbImage& img) {
  Tensor<T> t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) t[c * n + i] = static_cast<T>(img.data[3 * i + c]);
  return t;
}

template <typename T>
struct TrunkTrace {
  Tensor<T> in;
  Tensor<T> a1, a2, a3;  // post-ReLU activations
};

template <typename T>
struct PriorTrace {
  TrunkTrace<T> trunk;
  std::vector<T> pooled;
  std::vector<T> unnorm;
  std::vector<T> embed;
};

template <typename T>
struct JigsawTrace {
  std::array<TrunkTrace<T>, 9> trunks;
  std::array<std::vector<T>, 9> pooled;
  std::vector<T> concat;
  std::vector<T> unnorm;
  std::vector<T> embed;
};

namespace nn {

template <typename T>
Tensor<T> trunk_forward(const Tensor<T>& in, const TrunkParams<T>& trunk, TrunkTrace<T>* trace) {
  Tensor<T> a1 = conv2d_forward(in, trunk.conv1, 2, 1);
  relu_inplace(a1);
  Tensor<T> a2 = conv2d_forward(a1, trunk.conv2, 2, 1);
  relu_inplace(a2);
  Tensor<T> a3 = conv2d_forward(a2, trunk.conv3, 2, 1);
  relu_inplace(a3);
  if (trace) {
    trace->in = in;
    trace->a1 = std::move(a1);
    trace->a2 = std::move(a2);
    trace->a3 = a3;
  }
  return a3;
}

template <typename T>
void trunk_backward(const TrunkTrace<T>& trace, const TrunkParams<T>& trunk, Tensor<T> grad_a3,
                    TrunkParams<T>& grads) {
  relu_backward_inplace(trace.a3, grad_a3);
  Tensor<T> grad_a2 = conv2d_backward(trace.a2, trunk.conv3, 2, 1, grad_a3, grads.conv3.w,
                                      grads.conv3.b);
  relu_backward_inplace(trace.a2, grad_a2);
  Tensor<T> grad_a1 = conv2d_backward(trace.a1, trunk.conv2, 2, 1, grad_a2, grads.conv2.w,
                                      grads.conv2.b);
  relu_backward_inplace(trace.a1, grad_a1);
  conv2d_backward(trace.in, trunk.conv1, 2, 1, grad_a1, grads.conv1.w, grads.conv1.b);
}

template <typename T>
std::vector<T> normalize_forward(const std::vector<T>& x) {
  const T norm = l2_norm(x);
  if (!(norm > T(1e-30))) throw NumericError("cannot normalize a zero embedding");
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / norm;
  return y;
}

// y = x/|x|:  dx = (dy - y (y . dy)) / |x|
template <typename T>
std::vector<T> normalize_backward(const std::vector<T>& y, T norm, const std::vector<T>& grad_y) {
  T dot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * grad_y[i];
  std::vector<T> grad_x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) grad_x[i] = (grad_y[i] - y[i] * dot) / norm;
  return grad_x;
}

}  // namespace nn

// f-path: trunk -> global average pool -> affine to dim -> L2 normalize.
// encode_win shares these parameters exactly.
template <typename T>
std::vector<T> encode_prior(const Tensor<T>& in, const ModelParams<T>& params,
                            PriorTrace<T>* trace = nullptr) {
  require(in.rank() == 3 && in.shape()[0] == 3, "encode_prior: input must be [3,H,W]");
  TrunkTrace<T> local;
  Tensor<T> a3 = nn::trunk_forward(in, params.f_trunk, trace ? &trace->trunk : &local);
  std::vector<T> pooled = nn::global_avg_pool(a3);
  std::vector<T> unnorm = nn::linear_forward(params.f_proj, pooled);
  std::vector<T> embed = nn::normalize_forward(unnorm);
  if (trace) {
    trace->pooled = std::move(pooled);
    trace->unnorm = std::move(unnorm);
    trace->embed = embed;
  }
  return embed;
}

template <typename T>
std::vector<T> encode_prior(const RgbImage& img, const ModelParams<T>& params,
                            PriorTrace<T>* trace = nullptr) {
  return encode_prior(to_chw<T>(img), params, trace);
}

template <typename T>
std::vector<T> encode_win(const RgbImage& img, const ModelParams<T>& params,
                          PriorTrace<T>* trace = nullptr) {
  return encode_prior(img, params, trace);  // same theta by contract
}

// h-path: shared per-tile trunk + projection, concat of the 9 tile
// embeddings (order-sensitive), affine 9*dim -> dim, L2 normalize.
template <typename T>
std::vector<T> encode_jigsaw(std::span<const RgbImage> tiles, const ModelParams<T>& params,
                             JigsawTrace<T>* trace = nullptr) {
  require(tiles.size() == 9, "encode_jigsaw: expected 9 tiles");
  const TrunkParams<T>& trunk = params.cfg.share_trunk ? params.f_trunk : params.h_trunk;
  const LinearParams<T>& proj = params.cfg.share_trunk ? params.f_proj : params.h_proj;
  const int d = params.cfg.dim;
  std::vector<T> concat(static_cast<std::size_t>(9) * d);
  JigsawTrace<T> local;
  JigsawTrace<T>& tr = trace ? *trace : local;
  for (int t = 0; t < 9; ++t) {
    Tensor<T> in = to_chw<T>(tiles[t]);
    Tensor<T> a3 = nn::trunk_forward(in, trunk, &tr.trunks[t]);
    tr.pooled[t] = nn::global_avg_pool(a3);
    std::vector<T> e = nn::linear_forward(proj, tr.pooled[t]);
    std::copy(e.begin(), e.end(), concat.begin() + static_cast<std::size_t>(t) * d);
  }
  std::vector<T> unnorm = nn::linear_forward(params.h_agg, concat);
  std::vector<T> embed = nn::normalize_forward(unnorm);
  if (trace) {
    trace->concat = std::move(concat);
    trace->unnorm = std::move(unnorm);
    trace->embed = embed;
  }
  return embed;
}

// Reverse-mode pass for the f-path; accumulates parameter gradients.
template <typename T>
void backward_prior(const PriorTrace<T>& trace, const ModelParams<T>& params,
                    const std::vector<T>& grad_embed, ModelParams<T>& grads) {
  require(!trace.embed.empty(), "backward_prior: forward trace required");
  const T norm = nn::l2_norm(trace.unnorm);
  std::vector<T> grad_unnorm = nn::normalize_backward(trace.embed, norm, grad_embed);
  std::vector<T> grad_pooled =
      nn::linear_backward(params.f_proj, trace.pooled, grad_unnorm, grads.f_proj.w, grads.f_proj.b);
  const auto& a3 = trace.trunk.a3;
  const int C = static_cast<int>(a3.shape()[0]);
  const std::size_t hw = a3.size() / C;
  Tensor<T> grad_a3(a3.shape());
  for (int c = 0; c < C; ++c) {
    const T g = grad_pooled[c] / static_cast<T>(hw);
    std::fill_n(grad_a3.data() + c * hw, hw, g);
  }
  nn::trunk_backward(trace.trunk, params.f_trunk, std::move(grad_a3), grads.f_trunk);
}

template <typename T>
void backward_jigsaw(const JigsawTrace<T>& trace, const ModelParams<T>& params,
                     const std::vector<T>& grad_embed, ModelParams<T>& grads) {
  require(!trace.embed.empty(), "backward_jigsaw: forward trace required");
  const bool share = params.cfg.share_trunk;
  const TrunkParams<T>& trunk = share ? params.f_trunk : params.h_trunk;
  const LinearParams<T>& proj = share ? params.f_proj : params.h_proj;
  TrunkParams<T>& gtrunk = share ? grads.f_trunk : grads.h_trunk;
  LinearParams<T>& gproj = share ? grads.f_proj : grads.h_proj;
  const int d = params.cfg.dim;

  const T norm = nn::l2_norm(trace.unnorm);
  std::vector<T> grad_unnorm = nn::normalize_backward(trace.embed, norm, grad_embed);
  std::vector<T> grad_concat = nn::linear_backward(params.h_agg, trace.concat, grad_unnorm,
                                                   grads.h_agg.w, grads.h_agg.b);
  for (int t = 0; t < 9; ++t) {
    std::vector<T> grad_e(grad_concat.begin() + static_cast<std::size_t>(t) * d,
                          grad_concat.begin() + static_cast<std::size_t>(t + 1) * d);
    std::vector<T> grad_pooled =
        nn::linear_backward(proj, trace.pooled[t], grad_e, gproj.w, gproj.b);
    const auto& a3 = trace.trunks[t].a3;
    const int C = static_cast<int>(a3.shape()[0]);
    const std::size_t hw = a3.size() / C;
    Tensor<T> grad_a3(a3.shape());
    for (int c = 0; c < C; ++c) {
      const T g = grad_pooled[c] / static_cast<T>(hw);
      std::fill_n(grad_a3.data() + c * hw, hw, g);
    }
    nn::trunk_backward(trace.trunks[t], trunk, std::move(grad_a3), gtrunk);
  }
}

// ---- construction, init, SGD ----------------------------------------------

template <typename T>
ModelParams<T> make_model(const EncoderConfig& cfg) {
  auto conv = [](int oc, int ic) {
    return ConvParams<T>{Tensor<T>({static_cast<std::size_t>(oc), static_cast<std::size_t>(ic), 3, 3}),
                         Tensor<T>({static_cast<std::size_t>(oc)})};
  };
  auto linear = [](int out, int in) {
    return LinearParams<T>{Tensor<T>({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}),
                           Tensor<T>({static_cast<std::size_t>(out)})};
  };
  ModelParams<T> m;
  m.cfg = cfg;
  m.f_trunk = {conv(cfg.c1, 3), conv(cfg.c2, cfg.c1), conv(cfg.c3, cfg.c2)};
  m.f_proj = linear(cfg.dim, cfg.c3);
  if (!cfg.share_trunk) {
    m.h_trunk = {conv(cfg.c1, 3), conv(cfg.c2, cfg.c1), conv(cfg.c3, cfg.c2)};
    m.h_proj = linear(cfg.dim, cfg.c3);
  }
  m.h_agg = linear(cfg.dim, 9 * cfg.dim);
  return m;
}

// He-style uniform fan-in init for weights, zero biases.
template <typename T>
ModelParams<T> init_model(const EncoderConfig& cfg, std::uint64_t seed) {
  ModelParams<T> m = make_model<T>(cfg);
  Rng rng(derive_seed(seed, stream_tag("init")));
  m.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
    if (name.ends_with(".b")) return;  // biases stay zero
    const auto& shape = t.shape();
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(rng.uniform(-limit, limit));
  });
  return m;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params) {
  return make_model<T>(params.cfg);
}

template <typename T>
void zero_grads(ModelParams<T>& grads) {
  grads.for_each_tensor([](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
}

template <typename T>
void accumulate_grads(ModelParams<T>& into, const ModelParams<T>& from) {
  std::vector<Tensor<T>*> dst;
  std::vector<const Tensor<T>*> src;
  into.for_each_tensor([&](const std::string&, Tensor<T>& t) { dst.push_back(&t); });
  from.for_each_tensor([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  require(dst.size() == src.size(), "accumulate_grads: layout mismatch");
  for (std::size_t j = 0; j < dst.size(); ++j) {
    require(dst[j]->same_shape(*src[j]), "accumulate_grads: shape mismatch");
    for (std::size_t i = 0; i < dst[j]->size(); ++i) (*dst[j])[i] += (*src[j])[i];
  }
}

// v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v
template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, ModelParams<T>& velocity,
              double lr, double momentum, double weight_decay,
              const std::set<std::string>& frozen = {}) {
  std::vector<Tensor<T>*> ps, vs;
  std::vector<const Tensor<T>*> gs;
  std::vector<std::string> names;
  params.for_each_tensor([&](const std::string& n, Tensor<T>& t) {
    ps.push_back(&t);
    names.push_back(n);
  });
  grads.for_each_tensor([&](const std::string&, const Tensor<T>& t) { gs.push_back(&t); });
  velocity.for_each_tensor([&](const std::string&, Tensor<T>& t) { vs.push_back(&t); });
  require(ps.size() == gs.size() && ps.size() == vs.size(), "sgd_step: layout mismatch");
  for (std::size_t j = 0; j < ps.size(); ++j) {
    if (frozen.contains(names[j])) continue;
    Tensor<T>& p = *ps[j];
    const Tensor<T>& g = *gs[j];
    Tensor<T>& v = *vs[j];
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = static_cast<T>(momentum) * v[i] + g[i] + static_cast<T>(weight_decay) * p[i];
      p[i] -= static_cast<T>(lr) * v[i];
    }
  }
}

}  // namespace pgcon
