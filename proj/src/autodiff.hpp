#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace despeck::ad {

// NCHW extent of a tensor.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
struct Variable {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
  void zero_grad() { grad.assign(value.size(), T(0)); }
  bool has_grad() const noexcept { return grad.size() == value.size(); }
};

template <typename T>
using Var = std::shared_ptr<Variable<T>>;

template <typename T>
Var<T> make_var(Shape shape, std::vector<T> values, bool requires_grad = false);
template <typename T>
Var<T> zeros(Shape shape, bool requires_grad = false);

// Ordered record of the backward closures of executed ops.
//
// Nonsmooth ops (relu, tv) append their branch pattern to `signature` when
// tracking is on; grad_check uses it to skip coordinates whose finite
// difference straddles a kink.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward) { backward_.push_back(std::move(backward)); }
  // Seeds d(loss)/d(loss) = 1 and runs closures in reverse execution order.
  void backward(const Var<T>& loss);
  std::size_t size() const noexcept { return backward_.size(); }
  void clear() {
    backward_.clear();
    signature.clear();
  }

  // When false, ops compute values only and record nothing (inference).
  bool grad_enabled = true;
  bool track_signature = false;
  std::vector<std::int8_t> signature;

 private:
  std::vector<std::function<void()>> backward_;
};

// 3x3 convolution, stride 1, zero padding 1. weights: (out, in, 3, 3);
// bias: (out, 1, 1, 1) or null.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& weights, const Var<T>& bias);

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.9);  // running = momentum * running + (1 - momentum) * batch

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

enum class Mode { Train, Eval };

template <typename T>
Var<T> batchnorm(Tape<T>& tape, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormState<T>& state, Mode mode);

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& input);

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

// Scalar: sum of all elements.
template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& input);

// Scalar: weight * mean((pred - target)^2) over all elements.
template <typename T>
Var<T> mse_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target, double weight);

// Scalar: weight * sum of |forward differences| along x and y, per plane,
// summed over batch and channels (anisotropic L1 total variation).
template <typename T>
Var<T> tv_loss(Tape<T>& tape, const Var<T>& pred, double weight);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

struct AdamResult {
  bool applied = false;
  std::size_t nonfinite = 0;  // non-finite gradient entries (step skipped if > 0)
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient. Parameters without a gradient are treated as zero-gradient.
template <typename T>
AdamResult adam_step(std::span<const Var<T>> params, AdamState<T>& state, double lr);

struct GradCheckOptions {
  std::size_t max_elements = 0;  // 0 checks every element; otherwise a seeded subset
  std::uint64_t seed = 0;
  double abs_floor = 1e-6;  // denominator floor of the relative error
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_nonsmooth = 0;
  std::size_t worst_index = 0;
};

// Compares the reverse-mode gradient of f with respect to x against central
// differences (f(x+h) - f(x-h)) / 2h, elementwise:
//   rel = |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
// f must build its graph on the given tape and return a scalar.
template <typename T>
GradCheckResult grad_check(const std::function<Var<T>(Tape<T>&)>& f, const Var<T>& x, double h,
                           const GradCheckOptions& options = {});

}  // namespace despeck::ad
