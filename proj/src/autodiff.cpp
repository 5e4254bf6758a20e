#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <Eigen/Core>

#include "error.hpp"
#include "random.hpp"

namespace despeck::ad {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Var<T> result(Shape shape, bool requires_grad) {
  auto v = std::make_shared<Variable<T>>();
  v->shape = shape;
  v->value.assign(shape.numel(), T(0));
  v->requires_grad = requires_grad;
  return v;
}

template <typename T>
Var<T> scalar_result(T value, bool requires_grad) {
  auto v = result<T>(Shape{}, requires_grad);
  v->value[0] = value;
  return v;
}

// Column buffer (C*9, H*W) of one NCHW sample for a 3x3, pad-1 convolution.
template <typename T>
void im2col(const T* in, std::size_t channels, std::size_t h, std::size_t w, T* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = in + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 1) {
            std::copy(src, src + w, dst);
          } else if (kx == 0) {
            dst[0] = T(0);
            std::copy(src, src + w - 1, dst + 1);
          } else {
            std::copy(src + 1, src + w, dst);
            dst[w - 1] = T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a column buffer into an input gradient.
template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, T* in_grad) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = in_grad + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = row + y * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 1) {
            for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
          } else if (kx == 0) {
            for (std::size_t x = 1; x < w; ++x) dst[x - 1] += src[x];
          } else {
            for (std::size_t x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!(a->shape == b->shape)) fail(ErrorCode::InvalidArgument, std::string(op) + ": shape mismatch");
}

}  // namespace

template <typename T>
Var<T> make_var(Shape shape, std::vector<T> values, bool requires_grad) {
  require(values.size() == shape.numel(), "tensor values do not match shape");
  auto v = std::make_shared<Variable<T>>();
  v->shape = shape;
  v->value = std::move(values);
  v->requires_grad = requires_grad;
  return v;
}

template <typename T>
Var<T> zeros(Shape shape, bool requires_grad) {
  return result<T>(shape, requires_grad);
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  require(loss->shape.numel() == 1, "backward needs a scalar loss");
  loss->ensure_grad();
  loss->grad[0] += T(1);
  for (auto it = backward_.rbegin(); it != backward_.rend(); ++it) (*it)();
}

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& weights, const Var<T>& bias) {
  const Shape in = input->shape;
  const Shape ws = weights->shape;
  require(ws.h == 3 && ws.w == 3, "conv2d: kernel must be 3x3");
  if (ws.c != in.c) fail(ErrorCode::InvalidArgument, "conv2d: input channels do not match kernel");
  if (bias) require(bias->shape.numel() == ws.n, "conv2d: bias length must equal output channels");

  const std::size_t cout = ws.n, k = in.c * 9, hw = in.plane();
  const bool needs_grad =
      tape.grad_enabled && (input->requires_grad || weights->requires_grad || (bias && bias->requires_grad));
  auto out = result<T>(Shape{in.n, cout, in.h, in.w}, needs_grad);

  std::vector<T> col(k * hw);
  Eigen::Map<const MatR<T>> wm(weights->value.data(), static_cast<Eigen::Index>(cout),
                               static_cast<Eigen::Index>(k));
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col(input->value.data() + n * in.c * hw, in.c, in.h, in.w, col.data());
    Eigen::Map<const MatR<T>> cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    Eigen::Map<MatR<T>> om(out->value.data() + n * cout * hw, static_cast<Eigen::Index>(cout),
                           static_cast<Eigen::Index>(hw));
    if (cout == 1) {
      // Eigen evaluates single-row products as GEMV, whose rounding follows
      // buffer alignment; a fixed loop order keeps results reproducible.
      T* o = out->value.data() + n * hw;
      std::fill(o, o + hw, T(0));
      for (std::size_t j = 0; j < k; ++j) {
        const T wj = weights->value[j];
        const T* c = col.data() + j * hw;
        for (std::size_t p = 0; p < hw; ++p) o[p] += wj * c[p];
      }
    } else {
      om.noalias() = wm * cm;
    }
    if (bias) {
      for (std::size_t o = 0; o < cout; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias->value[o];
    }
  }

  if (needs_grad) {
    tape.record([input, weights, bias, out]() {
      if (!out->has_grad()) return;
      const Shape in = input->shape;
      const std::size_t cout = weights->shape.n, k = in.c * 9, hw = in.plane();
      std::vector<T> col(k * hw);
      std::vector<T> dcol;
      if (weights->requires_grad) weights->ensure_grad();
      if (bias && bias->requires_grad) bias->ensure_grad();
      if (input->requires_grad) {
        input->ensure_grad();
        dcol.resize(k * hw);
      }
      Eigen::Map<const MatR<T>> wm(weights->value.data(), static_cast<Eigen::Index>(cout),
                                   static_cast<Eigen::Index>(k));
      for (std::size_t n = 0; n < in.n; ++n) {
        Eigen::Map<const MatR<T>> dom(out->grad.data() + n * cout * hw, static_cast<Eigen::Index>(cout),
                                      static_cast<Eigen::Index>(hw));
        if (weights->requires_grad) {
          im2col(input->value.data() + n * in.c * hw, in.c, in.h, in.w, col.data());
          Eigen::Map<const MatR<T>> cm(col.data(), static_cast<Eigen::Index>(k),
                                       static_cast<Eigen::Index>(hw));
          Eigen::Map<MatR<T>> dwm(weights->grad.data(), static_cast<Eigen::Index>(cout),
                                  static_cast<Eigen::Index>(k));
          if (cout == 1) {
            const T* g = out->grad.data() + n * hw;
            for (std::size_t j = 0; j < k; ++j) {
              const T* c = col.data() + j * hw;
              T acc = T(0);
              for (std::size_t p = 0; p < hw; ++p) acc += g[p] * c[p];
              weights->grad[j] += acc;
            }
          } else {
            dwm.noalias() += dom * cm.transpose();
          }
        }
        if (bias && bias->requires_grad) {
          for (std::size_t o = 0; o < cout; ++o) {
            const T* g = out->grad.data() + (n * cout + o) * hw;
            T acc = T(0);
            for (std::size_t p = 0; p < hw; ++p) acc += g[p];
            bias->grad[o] += acc;
          }
        }
        if (input->requires_grad) {
          Eigen::Map<MatR<T>> dcm(dcol.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
          if (cout == 1) {
            const T* g = out->grad.data() + n * hw;
            for (std::size_t j = 0; j < k; ++j) {
              const T wj = weights->value[j];
              for (std::size_t p = 0; p < hw; ++p) dcol[j * hw + p] = wj * g[p];
            }
          } else {
            dcm.noalias() = wm.transpose() * dom;
          }
          col2im_add(dcol.data(), in.c, in.h, in.w, input->grad.data() + n * in.c * hw);
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> batchnorm(Tape<T>& tape, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormState<T>& state, Mode mode) {
  const Shape s = input->shape;
  require(gamma->shape.numel() == s.c && beta->shape.numel() == s.c,
          "batchnorm: gamma/beta length must equal channels");
  require(state.running_mean.size() == s.c && state.running_var.size() == s.c,
          "batchnorm: running statistics do not match channels");
  const std::size_t hw = s.plane();
  const std::size_t count = s.n * hw;
  const bool needs_grad = tape.grad_enabled && (input->requires_grad || gamma->requires_grad || beta->requires_grad);
  auto out = result<T>(s, needs_grad);

  if (mode == Mode::Train) {
    if (count < 2) fail(ErrorCode::InvalidArgument, "batchnorm: train mode needs more than one value per channel");
    auto xhat = std::make_shared<std::vector<T>>(s.numel());
    auto inv_std = std::make_shared<std::vector<T>>(s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = input->value.data() + (n * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      }
      const double mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = input->value.data() + (n * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      const double istd = 1.0 / std::sqrt(var + static_cast<double>(state.eps));
      (*inv_std)[c] = static_cast<T>(istd);
      const T g = gamma->value[c], b = beta->value[c];
      const T m = static_cast<T>(mean), is = static_cast<T>(istd);
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t off = (n * s.c + c) * hw;
        const T* p = input->value.data() + off;
        T* xh = xhat->data() + off;
        T* o = out->value.data() + off;
        for (std::size_t i = 0; i < hw; ++i) {
          xh[i] = (p[i] - m) * is;
          o[i] = g * xh[i] + b;
        }
      }
      const double unbiased = sq / static_cast<double>(count - 1);
      const double mom = static_cast<double>(state.momentum);
      state.running_mean[c] = static_cast<T>(mom * state.running_mean[c] + (1.0 - mom) * mean);
      state.running_var[c] = static_cast<T>(mom * state.running_var[c] + (1.0 - mom) * unbiased);
    }
    if (needs_grad) {
      tape.record([input, gamma, beta, out, xhat, inv_std]() {
        if (!out->has_grad()) return;
        const Shape s = input->shape;
        const std::size_t hw = s.plane();
        const double count = static_cast<double>(s.n * hw);
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        if (input->requires_grad) input->ensure_grad();
        for (std::size_t c = 0; c < s.c; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t off = (n * s.c + c) * hw;
            const T* dy = out->grad.data() + off;
            const T* xh = xhat->data() + off;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += dy[i];
              sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
            }
          }
          if (gamma->requires_grad) gamma->grad[c] += static_cast<T>(sum_dy_xhat);
          if (beta->requires_grad) beta->grad[c] += static_cast<T>(sum_dy);
          if (!input->requires_grad) continue;
          // dx = g * istd / M * (M dy - sum(dy) - xhat * sum(dy xhat))
          const double scale = gamma->value[c] * static_cast<double>((*inv_std)[c]) / count;
          const T a = static_cast<T>(scale * count);
          const T b = static_cast<T>(scale * sum_dy);
          const T cc = static_cast<T>(scale * sum_dy_xhat);
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t off = (n * s.c + c) * hw;
            const T* dy = out->grad.data() + off;
            const T* xh = xhat->data() + off;
            T* dx = input->grad.data() + off;
            for (std::size_t i = 0; i < hw; ++i) dx[i] += a * dy[i] - b - cc * xh[i];
          }
        }
      });
    }
    return out;
  }

  auto inv_std = std::make_shared<std::vector<T>>(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    const double istd = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + static_cast<double>(state.eps));
    (*inv_std)[c] = static_cast<T>(istd);
    const T scale = static_cast<T>(gamma->value[c] * istd);
    const T shift = static_cast<T>(beta->value[c] - gamma->value[c] * istd * state.running_mean[c]);
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t off = (n * s.c + c) * hw;
      const T* p = input->value.data() + off;
      T* o = out->value.data() + off;
      for (std::size_t i = 0; i < hw; ++i) o[i] = scale * p[i] + shift;
    }
  }
  if (needs_grad) {
    const auto mean = state.running_mean;
    tape.record([input, gamma, beta, out, inv_std, mean]() {
      if (!out->has_grad()) return;
      const Shape s = input->shape;
      const std::size_t hw = s.plane();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      if (input->requires_grad) input->ensure_grad();
      for (std::size_t c = 0; c < s.c; ++c) {
        const T is = (*inv_std)[c];
        double dg = 0.0, db = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::size_t off = (n * s.c + c) * hw;
          const T* dy = out->grad.data() + off;
          const T* p = input->value.data() + off;
          for (std::size_t i = 0; i < hw; ++i) {
            db += dy[i];
            dg += static_cast<double>(dy[i]) * (p[i] - mean[c]) * is;
            if (input->requires_grad) input->grad[off + i] += dy[i] * gamma->value[c] * is;
          }
        }
        if (gamma->requires_grad) gamma->grad[c] += static_cast<T>(dg);
        if (beta->requires_grad) beta->grad[c] += static_cast<T>(db);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& input) {
  const bool needs_grad = tape.grad_enabled && input->requires_grad;
  auto out = result<T>(input->shape, needs_grad);
  const std::size_t n = input->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = input->value[i] > T(0) ? input->value[i] : T(0);
  if (tape.track_signature) {
    for (std::size_t i = 0; i < n; ++i) tape.signature.push_back(input->value[i] > T(0) ? 1 : 0);
  }
  if (needs_grad) {
    tape.record([input, out]() {
      if (!out->has_grad()) return;
      input->ensure_grad();
      const std::size_t n = input->value.size();
      for (std::size_t i = 0; i < n; ++i) {
        if (input->value[i] > T(0)) input->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  const bool needs_grad = tape.grad_enabled && (a->requires_grad || b->requires_grad);
  auto out = result<T>(a->shape, needs_grad);
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] * b->value[i];
  if (needs_grad) {
    tape.record([a, b, out]() {
      if (!out->has_grad()) return;
      const std::size_t n = out->value.size();
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->value[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  const bool needs_grad = tape.grad_enabled && (a->requires_grad || b->requires_grad);
  auto out = result<T>(a->shape, needs_grad);
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] + b->value[i];
  if (needs_grad) {
    tape.record([a, b, out]() {
      if (!out->has_grad()) return;
      for (const auto& v : {a, b}) {
        if (!v->requires_grad) continue;
        v->ensure_grad();
        for (std::size_t i = 0; i < out->value.size(); ++i) v->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& input) {
  double acc = 0.0;
  for (const T v : input->value) acc += v;
  const bool needs_grad = tape.grad_enabled && input->requires_grad;
  auto out = scalar_result<T>(static_cast<T>(acc), needs_grad);
  if (needs_grad) {
    tape.record([input, out]() {
      if (!out->has_grad()) return;
      input->ensure_grad();
      for (auto& g : input->grad) g += out->grad[0];
    });
  }
  return out;
}

template <typename T>
Var<T> mse_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target, double weight) {
  require_same_shape(pred, target, "mse_loss");
  require(weight >= 0.0, "mse_loss: weight must be nonnegative");
  const std::size_t n = pred->value.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred->value[i]) - target->value[i];
    acc += d * d;
  }
  const bool needs_grad = tape.grad_enabled && (pred->requires_grad || target->requires_grad);
  auto out = scalar_result<T>(static_cast<T>(weight * acc / static_cast<double>(n)), needs_grad);
  if (needs_grad) {
    tape.record([pred, target, out, weight]() {
      if (!out->has_grad()) return;
      const std::size_t n = pred->value.size();
      const T k = static_cast<T>(static_cast<double>(out->grad[0]) * weight * 2.0 / static_cast<double>(n));
      if (pred->requires_grad) {
        pred->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) pred->grad[i] += k * (pred->value[i] - target->value[i]);
      }
      if (target->requires_grad) {
        target->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) target->grad[i] -= k * (pred->value[i] - target->value[i]);
      }
    });
  }
  return out;
}

namespace {

template <typename T>
std::int8_t sign_of(T v) {
  return static_cast<std::int8_t>((v > T(0)) - (v < T(0)));
}

}  // namespace

template <typename T>
Var<T> tv_loss(Tape<T>& tape, const Var<T>& pred, double weight) {
  require(weight >= 0.0, "tv_loss: weight must be nonnegative");
  const Shape s = pred->shape;
  const std::size_t planes = s.n * s.c;
  double acc = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* v = pred->value.data() + p * s.plane();
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const std::size_t i = y * s.w + x;
        if (x + 1 < s.w) {
          const T d = v[i + 1] - v[i];
          acc += std::abs(static_cast<double>(d));
          if (tape.track_signature) tape.signature.push_back(sign_of(d));
        }
        if (y + 1 < s.h) {
          const T d = v[i + s.w] - v[i];
          acc += std::abs(static_cast<double>(d));
          if (tape.track_signature) tape.signature.push_back(sign_of(d));
        }
      }
    }
  }
  const bool needs_grad = tape.grad_enabled && pred->requires_grad;
  auto out = scalar_result<T>(static_cast<T>(weight * acc), needs_grad);
  if (needs_grad) {
    tape.record([pred, out, weight]() {
      if (!out->has_grad()) return;
      pred->ensure_grad();
      const Shape s = pred->shape;
      const T k = static_cast<T>(static_cast<double>(out->grad[0]) * weight);
      for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const T* v = pred->value.data() + p * s.plane();
        T* g = pred->grad.data() + p * s.plane();
        for (std::size_t y = 0; y < s.h; ++y) {
          for (std::size_t x = 0; x < s.w; ++x) {
            const std::size_t i = y * s.w + x;
            if (x + 1 < s.w) {
              const T sg = static_cast<T>(sign_of(v[i + 1] - v[i])) * k;
              g[i + 1] += sg;
              g[i] -= sg;
            }
            if (y + 1 < s.h) {
              const T sg = static_cast<T>(sign_of(v[i + s.w] - v[i])) * k;
              g[i + s.w] += sg;
              g[i] -= sg;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
AdamResult adam_step(std::span<const Var<T>> params, AdamState<T>& state, double lr) {
  require(lr > 0.0, "adam: learning rate must be positive");
  AdamResult res;
  for (const auto& p : params) {
    if (!p->has_grad()) continue;
    for (const T g : p->grad) {
      if (!std::isfinite(static_cast<double>(g))) ++res.nonfinite;
    }
  }
  if (res.nonfinite > 0) return res;

  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.value.size()) {
      m.assign(p.value.size(), 0.0);
      v.assign(p.value.size(), 0.0);
    }
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = has ? static_cast<double>(p.grad[i]) : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p.value[i] = static_cast<T>(p.value[i] - lr * mh / (std::sqrt(vh) + state.eps));
    }
  }
  res.applied = true;
  return res;
}

template <typename T>
GradCheckResult grad_check(const std::function<Var<T>(Tape<T>&)>& f, const Var<T>& x, double h,
                           const GradCheckOptions& options) {
  require(h > 0.0, "grad_check: step must be positive");
  require(x->requires_grad, "grad_check: x must require grad");

  x->zero_grad();
  Tape<T> tape;
  tape.track_signature = true;
  auto loss = f(tape);
  require(loss->shape.numel() == 1, "grad_check: f must return a scalar");
  tape.backward(loss);
  const std::vector<T> analytic = x->grad;
  const std::vector<std::int8_t> base_signature = tape.signature;

  std::vector<std::size_t> indices(x->value.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  if (options.max_elements > 0 && options.max_elements < indices.size()) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_elements; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(indices.size() - i));
      std::swap(indices[i], indices[j]);
    }
    indices.resize(options.max_elements);
  }

  const auto evaluate = [&](std::vector<std::int8_t>& sig) {
    Tape<T> t;
    t.track_signature = true;
    const double v = static_cast<double>(f(t)->value[0]);
    sig = std::move(t.signature);
    return v;
  };

  GradCheckResult out;
  std::vector<std::int8_t> sig_plus, sig_minus;
  for (const std::size_t i : indices) {
    const T orig = x->value[i];
    x->value[i] = static_cast<T>(orig + h);
    const double fp = evaluate(sig_plus);
    x->value[i] = static_cast<T>(orig - h);
    const double fm = evaluate(sig_minus);
    x->value[i] = orig;
    if (sig_plus != base_signature || sig_minus != base_signature) {
      ++out.skipped_nonsmooth;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++out.checked;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_index = i;
    }
  }
  return out;
}

#define DESPECK_INSTANTIATE(T)                                                                          \
  template class Tape<T>;                                                                               \
  template Var<T> make_var<T>(Shape, std::vector<T>, bool);                                             \
  template Var<T> zeros<T>(Shape, bool);                                                                \
  template Var<T> conv2d<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Var<T> batchnorm<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&,                   \
                               BatchNormState<T>&, Mode);                                               \
  template Var<T> relu<T>(Tape<T>&, const Var<T>&);                                                     \
  template Var<T> mul<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                       \
  template Var<T> add<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                       \
  template Var<T> sum<T>(Tape<T>&, const Var<T>&);                                                      \
  template Var<T> mse_loss<T>(Tape<T>&, const Var<T>&, const Var<T>&, double);                          \
  template Var<T> tv_loss<T>(Tape<T>&, const Var<T>&, double);                                          \
  template AdamResult adam_step<T>(std::span<const Var<T>>, AdamState<T>&, double);                     \
  template GradCheckResult grad_check<T>(const std::function<Var<T>(Tape<T>&)>&, const Var<T>&, double, \
                                         const GradCheckOptions&);

DESPECK_INSTANTIATE(float)
DESPECK_INSTANTIATE(double)

#undef DESPECK_INSTANTIATE

}  // namespace despeck::ad
