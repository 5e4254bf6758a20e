#include "network.hpp"

#include <cmath>

#include "error.hpp"
#include "random.hpp"

namespace despeck::net {

void ModelConfig::validate() const {
  require(depth >= 3, "model depth must be >= 3");
  require(channels >= 1, "model channels must be >= 1");
  require(input_channels == 1, "only single-channel input is supported");
}

void LossWeights::validate() const {
  require(mu >= 0.0 && xi >= 0.0 && lambda >= 0.0, "loss weights must be nonnegative");
}

template <typename T>
std::vector<Var<T>> Branch<T>::parameters() const {
  std::vector<Var<T>> p{head_weight, head_bias};
  for (std::size_t i = 0; i < mid_weight.size(); ++i) {
    p.push_back(mid_weight[i]);
    p.push_back(bn_gamma[i]);
    p.push_back(bn_beta[i]);
  }
  p.push_back(pred_weight);
  p.push_back(pred_bias);
  return p;
}

template <typename T>
void Branch<T>::set_trainable(bool trainable) {
  for (auto& p : parameters()) p->requires_grad = trainable;
}

template <typename T>
void Branch<T>::zero_grad() {
  for (auto& p : parameters()) p->zero_grad();
}

template <typename T>
std::vector<Var<T>> Model<T>::parameters() const {
  auto p = clean.parameters();
  auto q = noise.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

template <typename T>
void Model<T>::zero_grad() {
  clean.zero_grad();
  noise.zero_grad();
}

namespace {

// Zero-mean normal weights with variance 2 / fan_in.
template <typename T>
Var<T> he_normal(Rng& rng, ad::Shape shape) {
  const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
  const double sd = std::sqrt(2.0 / fan_in);
  std::vector<T> v(shape.numel());
  for (auto& x : v) x = static_cast<T>(sd * rng.normal());
  return ad::make_var<T>(shape, std::move(v), true);
}

template <typename T>
Var<T> filled(std::size_t n, T value) {
  return ad::make_var<T>(ad::Shape{n, 1, 1, 1}, std::vector<T>(n, value), true);
}

template <typename T>
Branch<T> build_branch(const ModelConfig& cfg, Rng& rng) {
  const std::size_t c = cfg.channels;
  Branch<T> b;
  b.head_weight = he_normal<T>(rng, {c, cfg.input_channels, 3, 3});
  b.head_bias = filled<T>(c, T(0));
  for (std::size_t i = 0; i + 2 < cfg.depth; ++i) {
    b.mid_weight.push_back(he_normal<T>(rng, {c, c, 3, 3}));
    b.bn_gamma.push_back(filled<T>(c, T(1)));
    b.bn_beta.push_back(filled<T>(c, T(0)));
    b.bn_state.emplace_back(c);
  }
  b.pred_weight = he_normal<T>(rng, {1, c, 3, 3});
  b.pred_bias = filled<T>(1, T(0));
  return b;
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model<T> m;
  m.config = config;
  m.clean = build_branch<T>(config, rng);
  m.noise = build_branch<T>(config, rng);
  return m;
}

template <typename T>
Var<T> branch_forward(Tape<T>& tape, Branch<T>& branch, const Var<T>& y, Mode mode) {
  auto h = ad::relu(tape, ad::conv2d(tape, y, branch.head_weight, branch.head_bias));
  for (std::size_t i = 0; i < branch.mid_weight.size(); ++i) {
    h = ad::conv2d(tape, h, branch.mid_weight[i], Var<T>{});
    h = ad::batchnorm(tape, h, branch.bn_gamma[i], branch.bn_beta[i], branch.bn_state[i], mode);
    h = ad::relu(tape, h);
  }
  return ad::conv2d(tape, h, branch.pred_weight, branch.pred_bias);
}

template <typename T>
ModelOutputs<T> forward(Tape<T>& tape, Model<T>& model, const Var<T>& y, Mode mode) {
  const auto& s = y->shape;
  if (s.c != model.config.input_channels) {
    fail(ErrorCode::InvalidArgument, "forward: input must have exactly one channel");
  }
  require(s.h >= 3 && s.w >= 3, "forward: input must be at least 3x3");
  ModelOutputs<T> out;
  out.x_hat = branch_forward(tape, model.clean, y, mode);
  out.n_hat = branch_forward(tape, model.noise, y, mode);
  out.y_hat = ad::mul(tape, out.x_hat, out.n_hat);
  return out;
}

template <typename T>
LossTerms<T> composite_loss(Tape<T>& tape, const ModelOutputs<T>& outputs, const Var<T>& y,
                            const Var<T>& label, const LossWeights& weights, int phase) {
  weights.validate();
  require(phase == 1 || phase == 2, "phase must be 1 or 2");
  if (phase == 1 && !label) fail(ErrorCode::InvalidArgument, "phase 1 loss requires a label");
  LossTerms<T> t;
  t.clean = ad::mse_loss(tape, outputs.x_hat, phase == 1 ? label : y, weights.mu);
  t.noisy = ad::mse_loss(tape, outputs.y_hat, y, weights.xi);
  t.tv = ad::tv_loss(tape, outputs.x_hat, weights.lambda);
  t.total = ad::add(tape, ad::add(tape, t.clean, t.noisy), t.tv);
  return t;
}

namespace {

template <typename To, typename From>
Var<To> cast_var(const Var<From>& v) {
  std::vector<To> values(v->value.begin(), v->value.end());
  return ad::make_var<To>(v->shape, std::move(values), v->requires_grad);
}

template <typename To, typename From>
Branch<To> cast_branch(const Branch<From>& b) {
  Branch<To> o;
  o.head_weight = cast_var<To>(b.head_weight);
  o.head_bias = cast_var<To>(b.head_bias);
  for (std::size_t i = 0; i < b.mid_weight.size(); ++i) {
    o.mid_weight.push_back(cast_var<To>(b.mid_weight[i]));
    o.bn_gamma.push_back(cast_var<To>(b.bn_gamma[i]));
    o.bn_beta.push_back(cast_var<To>(b.bn_beta[i]));
    ad::BatchNormState<To> st(b.bn_state[i].running_mean.size());
    st.running_mean.assign(b.bn_state[i].running_mean.begin(), b.bn_state[i].running_mean.end());
    st.running_var.assign(b.bn_state[i].running_var.begin(), b.bn_state[i].running_var.end());
    o.bn_state.push_back(std::move(st));
  }
  o.pred_weight = cast_var<To>(b.pred_weight);
  o.pred_bias = cast_var<To>(b.pred_bias);
  return o;
}

}  // namespace

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model) {
  Model<To> m;
  m.config = model.config;
  m.clean = cast_branch<To>(model.clean);
  m.noise = cast_branch<To>(model.noise);
  m.history = model.history;
  return m;
}

#define DESPECK_INSTANTIATE(T)                                                                     \
  template struct Branch<T>;                                                                       \
  template struct Model<T>;                                                                        \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                             \
  template Var<T> branch_forward<T>(Tape<T>&, Branch<T>&, const Var<T>&, Mode);                    \
  template ModelOutputs<T> forward<T>(Tape<T>&, Model<T>&, const Var<T>&, Mode);                   \
  template LossTerms<T> composite_loss<T>(Tape<T>&, const ModelOutputs<T>&, const Var<T>&,         \
                                          const Var<T>&, const LossWeights&, int);

DESPECK_INSTANTIATE(float)
DESPECK_INSTANTIATE(double)

#undef DESPECK_INSTANTIATE

template Model<double> cast_model<double, float>(const Model<float>&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);

}  // namespace despeck::net
