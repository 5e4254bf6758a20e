#pragma once

#include <string>
#include <vector>

#include "autodiff.hpp"
#include "network.hpp"
#include "random.hpp"

namespace gradcases {

using despeck::ad::GradCheckResult;
using despeck::ad::Shape;
using despeck::ad::Tape;
using despeck::ad::Var;

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

inline Var<double> random_var(Shape s, despeck::Rng& rng, double lo, double hi, bool grad = true) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return despeck::ad::make_var<double>(s, std::move(v), grad);
}

// Scalar probe: sum(out * r) with a fixed random r, so every output element
// carries a distinct weight.
inline Var<double> probe(Tape<double>& t, const Var<double>& out, const Var<double>& r) {
  return despeck::ad::sum(t, despeck::ad::mul(t, out, r));
}

inline std::vector<NamedCheck> op_checks(std::uint64_t seed, double h = 1e-5) {
  using namespace despeck::ad;
  despeck::Rng rng(seed);
  std::vector<NamedCheck> out;

  {
    const Shape xs{2, 3, 6, 5};
    auto x = random_var(xs, rng, -1, 1);
    auto w = random_var({4, 3, 3, 3}, rng, -0.5, 0.5);
    auto b = random_var({4, 1, 1, 1}, rng, -0.5, 0.5);
    auto r = random_var({2, 4, 6, 5}, rng, -1, 1, false);
    auto f = [&](Tape<double>& t) { return probe(t, conv2d(t, x, w, b), r); };
    out.push_back({"conv2d/input", grad_check<double>(f, x, h)});
    out.push_back({"conv2d/weights", grad_check<double>(f, w, h)});
    out.push_back({"conv2d/bias", grad_check<double>(f, b, h)});
  }
  {
    const Shape xs{3, 2, 4, 4};
    auto x = random_var(xs, rng, -2, 2);
    auto g = random_var({2, 1, 1, 1}, rng, 0.5, 1.5);
    auto be = random_var({2, 1, 1, 1}, rng, -0.5, 0.5);
    auto r = random_var(xs, rng, -1, 1, false);
    auto f = [&](Tape<double>& t) {
      BatchNormState<double> st(2);
      return probe(t, batchnorm(t, x, g, be, st, Mode::Train), r);
    };
    out.push_back({"batchnorm/input", grad_check<double>(f, x, h)});
    out.push_back({"batchnorm/gamma", grad_check<double>(f, g, h)});
    out.push_back({"batchnorm/beta", grad_check<double>(f, be, h)});
    auto fe = [&](Tape<double>& t) {
      BatchNormState<double> st(2);
      st.running_mean = {0.3, -0.2};
      st.running_var = {0.5, 2.0};
      return probe(t, batchnorm(t, x, g, be, st, Mode::Eval), r);
    };
    out.push_back({"batchnorm-eval/input", grad_check<double>(fe, x, h)});
  }
  {
    auto x = random_var({1, 2, 5, 5}, rng, -1, 1);
    // Keep every entry at least 1e-3 away from the kink.
    for (auto& v : x->value) {
      if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 - std::abs(v) : 1e-3 + v;
    }
    auto r = random_var(x->shape, rng, -1, 1, false);
    auto f = [&](Tape<double>& t) { return probe(t, relu(t, x), r); };
    out.push_back({"relu", grad_check<double>(f, x, h)});
  }
  {
    auto a = random_var({2, 1, 4, 3}, rng, -1, 1);
    auto b = random_var({2, 1, 4, 3}, rng, -1, 1);
    auto r = random_var(a->shape, rng, -1, 1, false);
    auto f = [&](Tape<double>& t) { return probe(t, mul(t, a, b), r); };
    out.push_back({"mul/a", grad_check<double>(f, a, h)});
    out.push_back({"mul/b", grad_check<double>(f, b, h)});
  }
  {
    auto p = random_var({2, 1, 5, 5}, rng, 0, 2);
    auto q = random_var({2, 1, 5, 5}, rng, 0, 2, false);
    auto f = [&](Tape<double>& t) { return mse_loss(t, p, q, 0.7); };
    out.push_back({"mse_loss", grad_check<double>(f, p, h)});
  }
  {
    auto p = random_var({2, 1, 6, 7}, rng, 0, 2);
    // Piecewise linear, so a wide step is exact away from kinks and keeps
    // cancellation error small next to zero-gradient pixels.
    auto f = [&](Tape<double>& t) { return tv_loss(t, p, 0.3); };
    out.push_back({"tv_loss", grad_check<double>(f, p, 1e-3)});
  }
  return out;
}

// Full composite loss of a double-precision model with respect to the input
// and every parameter tensor.
inline std::vector<NamedCheck> network_checks(const despeck::net::ModelConfig& cfg, std::size_t batch,
                                              std::size_t size, int phase, std::uint64_t seed,
                                              double h = 1e-5) {
  using namespace despeck;
  auto model = net::build_model<double>(cfg, seed);
  Rng rng(seed + 1);
  const ad::Shape s{batch, 1, size, size};
  auto y = random_var(s, rng, 0.2, 2.0);
  auto label = random_var(s, rng, 0.5, 1.5, false);
  const net::LossWeights w = phase == 1 ? net::LossWeights{1.0, 1e-2, 1e-3} : net::LossWeights{1e-2, 1.0, 1e-4};
  auto f = [&](ad::Tape<double>& t) {
    auto outs = net::forward(t, model, y, ad::Mode::Train);
    return net::composite_loss(t, outs, y, label, w, phase).total;
  };
  std::vector<NamedCheck> out;
  out.push_back({"input", ad::grad_check<double>(f, y, h)});
  const auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    out.push_back({"param" + std::to_string(k), ad::grad_check<double>(f, params[k], h)});
  }
  return out;
}

}  // namespace gradcases
