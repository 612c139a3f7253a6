#include "rap/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace rap {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(x.shape()));
  }
}

template <typename F>
void for_each_index(std::size_t n, F&& f) {
  for (std::size_t i = 0; i < n; ++i) f(i);
}

// x [B,H,W,C] -> col [B*H*W, 9*C], rows ordered (b,y,x), cols (ky,kx,c).
template <typename T>
void im2col(const T* x, std::int64_t B, std::int64_t H, std::int64_t W, std::int64_t C, T* col) {
  const std::int64_t row = 9 * C;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t xx = 0; xx < W; ++xx) {
        T* dst = col + ((b * H + y) * W + xx) * row;
        for (std::int64_t ky = 0; ky < 3; ++ky) {
          const std::int64_t sy = y + ky - 1;
          for (std::int64_t kx = 0; kx < 3; ++kx) {
            const std::int64_t sx = xx + kx - 1;
            T* d = dst + (ky * 3 + kx) * C;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
              std::fill(d, d + C, T(0));
            } else {
              const T* s = x + ((b * H + sy) * W + sx) * C;
              std::copy(s, s + C, d);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::int64_t B, std::int64_t H, std::int64_t W, std::int64_t C, T* dx) {
  const std::int64_t row = 9 * C;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t xx = 0; xx < W; ++xx) {
        const T* src = col + ((b * H + y) * W + xx) * row;
        for (std::int64_t ky = 0; ky < 3; ++ky) {
          const std::int64_t sy = y + ky - 1;
          if (sy < 0 || sy >= H) continue;
          for (std::int64_t kx = 0; kx < 3; ++kx) {
            const std::int64_t sx = xx + kx - 1;
            if (sx < 0 || sx >= W) continue;
            const T* s = src + (ky * 3 + kx) * C;
            T* d = dx + ((b * H + sy) * W + sx) * C;
            for (std::int64_t c = 0; c < C; ++c) d[c] += s[c];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for_each_index(o.size(), [&](std::size_t i) { o[i] = av[i] + bv[i]; });
  auto *pa = a.impl(), *pb = b.impl(), *po = out.impl();
  record_if_needed<T>("add", out, {&a, &b}, [pa, pb, po] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) {
      if (pa->requires_grad) pa->grad[i] += po->grad[i];
      if (pb->requires_grad) pb->grad[i] += po->grad[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for_each_index(o.size(), [&](std::size_t i) { o[i] = av[i] - bv[i]; });
  auto *pa = a.impl(), *pb = b.impl(), *po = out.impl();
  record_if_needed<T>("sub", out, {&a, &b}, [pa, pb, po] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) {
      if (pa->requires_grad) pa->grad[i] += po->grad[i];
      if (pb->requires_grad) pb->grad[i] -= po->grad[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a, b);
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for_each_index(o.size(), [&](std::size_t i) { o[i] = av[i] * bv[i]; });
  auto *pa = a.impl(), *pb = b.impl(), *po = out.impl();
  record_if_needed<T>("mul", out, {&a, &b}, [pa, pb, po] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) {
      if (pa->requires_grad) pa->grad[i] += po->grad[i] * pb->data[i];
      if (pb->requires_grad) pb->grad[i] += po->grad[i] * pa->data[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for_each_index(o.size(), [&](std::size_t i) { o[i] = xv[i] * factor; });
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("scale", out, {&x}, [px, po, factor] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) px->grad[i] += po->grad[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> mul_spatial(const Tensor<T>& att, const Tensor<T>& x) {
  require_rank("mul_spatial", x, 4);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (att.rank() < 2 || att.dim(0) != B || numel_of(att.shape()) != B * H * W) {
    throw ShapeError("mul_spatial: attention shape " + shape_str(att.shape()) +
                     " does not match feature map " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto av = att.data();
  auto xv = x.data();
  const auto pixels = static_cast<std::size_t>(B * H * W);
  const auto c = static_cast<std::size_t>(C);
  for (std::size_t p = 0; p < pixels; ++p) {
    const T a = av[p];
    for (std::size_t k = 0; k < c; ++k) o[p * c + k] = a * xv[p * c + k];
  }
  auto *pa = att.impl(), *px = x.impl(), *po = out.impl();
  record_if_needed<T>("mul_spatial", out, {&att, &x}, [pa, px, po, pixels, c] {
    for (std::size_t p = 0; p < pixels; ++p) {
      T acc = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const T g = po->grad[p * c + k];
        if (px->requires_grad) px->grad[p * c + k] += g * pa->data[p];
        acc += g * px->data[p * c + k];
      }
      if (pa->requires_grad) pa->grad[p] += acc;
    }
  });
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for_each_index(o.size(), [&](std::size_t i) { o[i] = xv[i] > T(0) ? xv[i] : T(0); });
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("relu", out, {&x}, [px, po] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) {
      if (px->data[i] > T(0)) px->grad[i] += po->grad[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for_each_index(o.size(), [&](std::size_t i) { o[i] = T(1) / (T(1) + std::exp(-xv[i])); });
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("sigmoid", out, {&x}, [px, po] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) {
      const T y = po->data[i];
      px->grad[i] += po->grad[i] * y * (T(1) - y);
    }
  });
  return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for_each_index(o.size(), [&](std::size_t i) { o[i] = std::min(std::max(xv[i], lo), hi); });
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("clamp", out, {&x}, [px, po, lo, hi] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) {
      const T v = px->data[i];
      if (v >= lo && v <= hi) px->grad[i] += po->grad[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const auto Co = w.dim(3);
  if (w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != C) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                     shape_str(w.shape()));
  }
  const auto rows = B * H * W;
  // Scratch buffers are fully overwritten, so they skip zero-initialisation.
  auto col = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(rows * 9 * C));
  im2col(x.data().data(), B, H, W, C, col.get());
  Tensor<T> out(Shape{B, H, W, Co});
  {
    ConstMatMap<T> cm(col.get(), rows, 9 * C);
    ConstMatMap<T> wm(w.data().data(), 9 * C, Co);
    MatMap<T> om(out.data().data(), rows, Co);
    om.noalias() = cm * wm;
  }
  auto *px = x.impl(), *pw = w.impl(), *po = out.impl();
  record_if_needed<T>("conv2d", out, {&x, &w}, [px, pw, po, B, H, W, C, Co, rows] {
    ConstMatMap<T> gm(po->grad.data(), rows, Co);
    if (pw->requires_grad) {
      auto col = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(rows * 9 * C));
      im2col(px->data.data(), B, H, W, C, col.get());
      ConstMatMap<T> cm(col.get(), rows, 9 * C);
      MatMap<T> dw(pw->grad.data(), 9 * C, Co);
      dw.noalias() += cm.transpose() * gm;
    }
    if (px->requires_grad) {
      auto dcol = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(rows * 9 * C));
      ConstMatMap<T> wm(pw->data.data(), 9 * C, Co);
      MatMap<T> dm(dcol.get(), rows, 9 * C);
      dm.noalias() = gm * wm.transpose();
      col2im_add(dcol.get(), B, H, W, C, px->grad.data());
    }
  });
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const auto M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(Shape{M, N});
  MatMap<T>(out.data().data(), M, N).noalias() =
      ConstMatMap<T>(a.data().data(), M, K) * ConstMatMap<T>(b.data().data(), K, N);
  auto *pa = a.impl(), *pb = b.impl(), *po = out.impl();
  record_if_needed<T>("matmul", out, {&a, &b}, [pa, pb, po, M, K, N] {
    ConstMatMap<T> g(po->grad.data(), M, N);
    if (pa->requires_grad) {
      MatMap<T>(pa->grad.data(), M, K).noalias() += g * ConstMatMap<T>(pb->data.data(), K, N).transpose();
    }
    if (pb->requires_grad) {
      MatMap<T>(pb->grad.data(), K, N).noalias() += ConstMatMap<T>(pa->data.data(), M, K).transpose() * g;
    }
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const auto B = x.dim(0), I = x.dim(1), O = w.dim(1);
  if (w.dim(0) != I || bias.numel() != static_cast<std::size_t>(O)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()) + " and bias " + shape_str(bias.shape()));
  }
  Tensor<T> out(Shape{B, O});
  MatMap<T> om(out.data().data(), B, O);
  om.noalias() = ConstMatMap<T>(x.data().data(), B, I) * ConstMatMap<T>(w.data().data(), I, O);
  auto bv = bias.data();
  for (std::int64_t r = 0; r < B; ++r) {
    for (std::int64_t c = 0; c < O; ++c) om(r, c) += bv[static_cast<std::size_t>(c)];
  }
  auto *px = x.impl(), *pw = w.impl(), *pb = bias.impl(), *po = out.impl();
  record_if_needed<T>("linear", out, {&x, &w, &bias}, [px, pw, pb, po, B, I, O] {
    ConstMatMap<T> g(po->grad.data(), B, O);
    if (px->requires_grad) {
      MatMap<T>(px->grad.data(), B, I).noalias() += g * ConstMatMap<T>(pw->data.data(), I, O).transpose();
    }
    if (pw->requires_grad) {
      MatMap<T>(pw->grad.data(), I, O).noalias() += ConstMatMap<T>(px->data.data(), B, I).transpose() * g;
    }
    if (pb->requires_grad) {
      for (std::int64_t r = 0; r < B; ++r) {
        for (std::int64_t c = 0; c < O; ++c) pb->grad[static_cast<std::size_t>(c)] += g(r, c);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x) {
  require_rank("max_pool2x2", x, 4);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const auto Ho = H / 2, Wo = W / 2;
  if (Ho == 0 || Wo == 0) throw ShapeError("max_pool2x2: input too small " + shape_str(x.shape()));
  Tensor<T> out(Shape{B, Ho, Wo, C});
  std::vector<std::size_t> argmax(out.numel());
  auto xv = x.data();
  auto o = out.data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < Ho; ++y) {
      for (std::int64_t xx = 0; xx < Wo; ++xx) {
        for (std::int64_t c = 0; c < C; ++c) {
          std::size_t best = static_cast<std::size_t>(((b * H + 2 * y) * W + 2 * xx) * C + c);
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const auto idx = static_cast<std::size_t>(((b * H + 2 * y + dy) * W + 2 * xx + dx) * C + c);
              if (xv[idx] > xv[best]) best = idx;
            }
          }
          const auto oi = static_cast<std::size_t>(((b * Ho + y) * Wo + xx) * C + c);
          o[oi] = xv[best];
          argmax[oi] = best;
        }
      }
    }
  }
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("max_pool2x2", out, {&x}, [px, po, argmax = std::move(argmax)] {
    for (std::size_t i = 0; i < argmax.size(); ++i) px->grad[argmax[i]] += po->grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank("global_avg_pool", x, 4);
  const auto B = x.dim(0), C = x.dim(3);
  const auto hw = x.dim(1) * x.dim(2);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent " + shape_str(x.shape()));
  Tensor<T> out(Shape{B, C});
  auto xv = x.data();
  auto o = out.data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < hw; ++p) {
      for (std::int64_t c = 0; c < C; ++c) {
        o[static_cast<std::size_t>(b * C + c)] += xv[static_cast<std::size_t>((b * hw + p) * C + c)];
      }
    }
  }
  const T inv = T(1) / static_cast<T>(hw);
  for (auto& v : o) v *= inv;
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("global_avg_pool", out, {&x}, [px, po, B, C, hw, inv] {
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t p = 0; p < hw; ++p) {
        for (std::int64_t c = 0; c < C; ++c) {
          px->grad[static_cast<std::size_t>((b * hw + p) * C + c)] += po->grad[static_cast<std::size_t>(b * C + c)] * inv;
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, BnMode mode) {
  if (x.rank() < 2) throw ShapeError("batch_norm: expected rank >= 2, got " + shape_str(x.shape()));
  const auto C = static_cast<std::size_t>(x.shape().back());
  if (gamma.numel() != C || beta.numel() != C || stats.running_mean.numel() != C ||
      stats.running_var.numel() != C) {
    throw ShapeError("batch_norm: input " + shape_str(x.shape()) + " incompatible with affine " +
                     shape_str(gamma.shape()));
  }
  const std::size_t R = x.numel() / C;
  if (R == 0) throw ShapeError("batch_norm: empty batch " + shape_str(x.shape()));
  const T eps = static_cast<T>(kBnEpsilon);
  auto xv = x.data();

  std::vector<T> mu(C, T(0)), invstd(C);
  if (mode == BnMode::kEval) {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      invstd[c] = T(1) / std::sqrt(rv[c] + eps);
    }
  } else {
    std::vector<T> var(C, T(0));
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) mu[c] += xv[r * C + c];
    }
    for (auto& m : mu) m /= static_cast<T>(R);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        const T d = xv[r * C + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<T>(R);
    for (std::size_t c = 0; c < C; ++c) invstd[c] = T(1) / std::sqrt(var[c] + eps);
    if (mode == BnMode::kTrain) {
      const T mom = static_cast<T>(kBnMomentum);
      const T unbias = R > 1 ? static_cast<T>(R) / static_cast<T>(R - 1) : T(1);
      auto rm = stats.running_mean.data();
      auto rv = stats.running_var.data();
      for (std::size_t c = 0; c < C; ++c) {
        rm[c] = mom * rm[c] + (T(1) - mom) * mu[c];
        rv[c] = mom * rv[c] + (T(1) - mom) * var[c] * unbias;
      }
    }
  }

  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  auto o = out.data();
  auto g = gamma.data();
  auto bt = beta.data();
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      xhat[i] = (xv[i] - mu[c]) * invstd[c];
      o[i] = g[c] * xhat[i] + bt[c];
    }
  }
  const bool batch_stats = mode != BnMode::kEval;
  auto *px = x.impl(), *pg = gamma.impl(), *pb = beta.impl(), *po = out.impl();
  record_if_needed<T>("batch_norm", out, {&x, &gamma, &beta},
                      [px, pg, pb, po, C, R, batch_stats, xhat = std::move(xhat), invstd = std::move(invstd)] {
    std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = r * C + c;
        sum_g[c] += po->grad[i];
        sum_gx[c] += po->grad[i] * xhat[i];
      }
    }
    if (pg->requires_grad) {
      for (std::size_t c = 0; c < C; ++c) pg->grad[c] += sum_gx[c];
    }
    if (pb->requires_grad) {
      for (std::size_t c = 0; c < C; ++c) pb->grad[c] += sum_g[c];
    }
    if (!px->requires_grad) return;
    const T n = static_cast<T>(R);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = r * C + c;
        const T scale_c = pg->data[c] * invstd[c];
        if (batch_stats) {
          px->grad[i] += scale_c / n * (n * po->grad[i] - sum_g[c] - xhat[i] * sum_gx[c]);
        } else {
          px->grad[i] += scale_c * po->grad[i];
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto B = a.dim(0), P = a.dim(1), Q = b.dim(1);
  Tensor<T> out(Shape{B, P + Q});
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::int64_t r = 0; r < B; ++r) {
    std::copy_n(av.begin() + r * P, P, o.begin() + r * (P + Q));
    std::copy_n(bv.begin() + r * Q, Q, o.begin() + r * (P + Q) + P);
  }
  auto *pa = a.impl(), *pb = b.impl(), *po = out.impl();
  record_if_needed<T>("concat_cols", out, {&a, &b}, [pa, pb, po, B, P, Q] {
    for (std::int64_t r = 0; r < B; ++r) {
      for (std::int64_t c = 0; c < P + Q; ++c) {
        const T g = po->grad[static_cast<std::size_t>(r * (P + Q) + c)];
        if (c < P) {
          if (pa->requires_grad) pa->grad[static_cast<std::size_t>(r * P + c)] += g;
        } else if (pb->requires_grad) {
          pb->grad[static_cast<std::size_t>(r * Q + c - P)] += g;
        }
      }
    }
  });
  return out;
}

template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  require_rank("softmax_rows", logits, 2);
  const auto B = static_cast<std::size_t>(logits.dim(0));
  const auto N = static_cast<std::size_t>(logits.dim(1));
  std::vector<T> p(B * N);
  auto z = logits.data();
  for (std::size_t r = 0; r < B; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < N; ++c) mx = std::max(mx, z[r * N + c]);
    T s = 0;
    for (std::size_t c = 0; c < N; ++c) {
      p[r * N + c] = std::exp(z[r * N + c] - mx);
      s += p[r * N + c];
    }
    for (std::size_t c = 0; c < N; ++c) p[r * N + c] /= s;
  }
  return p;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", logits, 2);
  const auto B = static_cast<std::size_t>(logits.dim(0));
  const auto N = static_cast<std::size_t>(logits.dim(1));
  if (labels.size() != B || B == 0) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= N) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " out of range for logits " +
                       shape_str(logits.shape()));
    }
  }
  auto z = logits.data();
  std::vector<T> probs(B * N);
  T loss = 0;
  for (std::size_t r = 0; r < B; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < N; ++c) mx = std::max(mx, z[r * N + c]);
    T s = 0;
    for (std::size_t c = 0; c < N; ++c) s += std::exp(z[r * N + c] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t c = 0; c < N; ++c) probs[r * N + c] = std::exp(z[r * N + c] - lse);
    loss += lse - z[r * N + static_cast<std::size_t>(labels[r])];
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(B));
  std::vector<int> ys(labels.begin(), labels.end());
  auto *pz = logits.impl(), *po = out.impl();
  record_if_needed<T>("softmax_cross_entropy", out, {&logits},
                      [pz, po, B, N, probs = std::move(probs), ys = std::move(ys)] {
    const T g = po->grad[0] / static_cast<T>(B);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < N; ++c) {
        const T onehot = static_cast<std::size_t>(ys[r]) == c ? T(1) : T(0);
        pz->grad[r * N + c] += g * (probs[r * N + c] - onehot);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> sq_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("sq_distance", a, 2);
  require_rank("sq_distance", b, 2);
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("sq_distance: embedding dims differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto M = static_cast<std::size_t>(a.dim(0));
  const auto N = static_cast<std::size_t>(b.dim(0));
  const auto D = static_cast<std::size_t>(a.dim(1));
  Tensor<T> out(Shape{a.dim(0), b.dim(0)});
  auto av = a.data();
  auto bv = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      T s = 0;
      for (std::size_t d = 0; d < D; ++d) {
        const T diff = av[i * D + d] - bv[j * D + d];
        s += diff * diff;
      }
      o[i * N + j] = s;
    }
  }
  auto *pa = a.impl(), *pb = b.impl(), *po = out.impl();
  record_if_needed<T>("sq_distance", out, {&a, &b}, [pa, pb, po, M, N, D] {
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t j = 0; j < N; ++j) {
        const T g2 = T(2) * po->grad[i * N + j];
        for (std::size_t d = 0; d < D; ++d) {
          const T diff = pa->data[i * D + d] - pb->data[j * D + d];
          if (pa->requires_grad) pa->grad[i * D + d] += g2 * diff;
          if (pb->requires_grad) pb->grad[j * D + d] -= g2 * diff;
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("sum", out, {&x}, [px, po] {
    for (auto& g : px->grad) g += po->grad[0];
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor " + shape_str(x.shape()));
  T s = 0;
  for (T v : x.data()) s += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  Tensor<T> out = Tensor<T>::scalar(s * inv);
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("mean", out, {&x}, [px, po, inv] {
    for (auto& g : px->grad) g += po->grad[0] * inv;
  });
  return out;
}

template <typename T>
Tensor<T> gaussian_log_prob(const Tensor<T>& mean_t, const Tensor<T>& sample, T sigma) {
  require_same("gaussian_log_prob", mean_t, sample);
  if (!(sigma > T(0))) throw ShapeError("gaussian_log_prob: sigma must be positive");
  const T inv_var = T(1) / (sigma * sigma);
  const T log_norm = std::log(sigma) + T(0.5) * std::log(T(2) * std::numbers::pi_v<T>);
  auto m = mean_t.data();
  auto s = sample.data();
  T lp = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const T d = s[i] - m[i];
    lp += -T(0.5) * d * d * inv_var - log_norm;
  }
  Tensor<T> out = Tensor<T>::scalar(lp);
  std::vector<T> sv(s.begin(), s.end());
  auto *pm = mean_t.impl(), *po = out.impl();
  record_if_needed<T>("gaussian_log_prob", out, {&mean_t}, [pm, po, inv_var, sv = std::move(sv)] {
    for (std::size_t i = 0; i < sv.size(); ++i) pm->grad[i] += po->grad[0] * (sv[i] - pm->data[i]) * inv_var;
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != static_cast<std::int64_t>(x.numel())) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.values());
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("reshape", out, {&x}, [px, po] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) px->grad[i] += po->grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::int64_t begin, std::int64_t count) {
  if (x.rank() == 0 || begin < 0 || count < 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") out of range for " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = count;
  const auto row = static_cast<std::size_t>(x.dim(0) ? x.numel() / static_cast<std::size_t>(x.dim(0)) : 0);
  const auto off = static_cast<std::size_t>(begin) * row;
  std::vector<T> vals(x.values().begin() + static_cast<std::ptrdiff_t>(off),
                      x.values().begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(count) * row));
  Tensor<T> out(std::move(shape), std::move(vals));
  auto *px = x.impl(), *po = out.impl();
  record_if_needed<T>("slice_rows", out, {&x}, [px, po, off] {
    for (std::size_t i = 0; i < po->grad.size(); ++i) px->grad[off + i] += po->grad[i];
  });
  return out;
}

#define RAP_INSTANTIATE_OPS(T)                                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> mul_spatial(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> relu(const Tensor<T>&);                                                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                     \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> max_pool2x2(const Tensor<T>&);                                                 \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                             \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                BatchNormStats<T>&, BnMode);                                        \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);                 \
  template Tensor<T> sq_distance(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> gaussian_log_prob(const Tensor<T>&, const Tensor<T>&, T);                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> slice_rows(const Tensor<T>&, std::int64_t, std::int64_t);                      \
  template std::vector<T> softmax_rows(const Tensor<T>&);

RAP_INSTANTIATE_OPS(float)
RAP_INSTANTIATE_OPS(double)

}  // namespace rap
