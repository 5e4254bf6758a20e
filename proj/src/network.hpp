#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace despeck::net {

using ad::Mode;
using ad::Tape;
using ad::Var;

// depth counts conv layers: 1 head conv + (depth - 2) conv/BN/ReLU blocks +
// 1 prediction conv.
struct ModelConfig {
  std::size_t depth = 17;
  std::size_t channels = 64;
  std::size_t input_channels = 1;

  static ModelConfig full() { return {}; }
  static ModelConfig desk() { return {5, 16, 1}; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One fully convolutional branch. No pooling; feature maps keep the input size.
template <typename T>
struct Branch {
  Var<T> head_weight;  // (C, 1, 3, 3)
  Var<T> head_bias;    // (C)
  std::vector<Var<T>> mid_weight;  // (C, C, 3, 3); BN follows, so no bias
  std::vector<Var<T>> bn_gamma;
  std::vector<Var<T>> bn_beta;
  std::vector<ad::BatchNormState<T>> bn_state;
  Var<T> pred_weight;  // (1, C, 3, 3)
  Var<T> pred_bias;    // (1)

  std::vector<Var<T>> parameters() const;
  void set_trainable(bool trainable);
  void zero_grad();
};

struct LossWeights {
  double mu = 1.0;   // L_clean (mu2 in phase 2)
  double xi = 0.01;  // L_noisy
  double lambda = 0.0;  // L_tv

  void validate() const;
};

// One completed training run, kept in the checkpoint.
struct PhaseRecord {
  int phase = 1;
  LossWeights weights;
  std::size_t epochs = 0;
  std::size_t iterations = 0;
};

template <typename T>
struct Model {
  ModelConfig config;
  Branch<T> clean;
  Branch<T> noise;
  std::vector<PhaseRecord> history;

  std::vector<Var<T>> parameters() const;
  void zero_grad();
};

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

template <typename T>
struct ModelOutputs {
  Var<T> x_hat;
  Var<T> n_hat;
  Var<T> y_hat;  // x_hat * n_hat
};

// y: (B, 1, H, W) with H, W >= 3.
template <typename T>
Var<T> branch_forward(Tape<T>& tape, Branch<T>& branch, const Var<T>& y, Mode mode);

template <typename T>
ModelOutputs<T> forward(Tape<T>& tape, Model<T>& model, const Var<T>& y, Mode mode);

template <typename T>
struct LossTerms {
  Var<T> total;
  Var<T> clean;
  Var<T> noisy;
  Var<T> tv;
};

// Phase 1: mu*MSE(x_hat, label) + xi*MSE(y_hat, y) + lambda*TV(x_hat).
// Phase 2: the clean term compares x_hat with y instead; label is ignored.
template <typename T>
LossTerms<T> composite_loss(Tape<T>& tape, const ModelOutputs<T>& outputs, const Var<T>& y,
                            const Var<T>& label, const LossWeights& weights, int phase);

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model);

}  // namespace despeck::net
