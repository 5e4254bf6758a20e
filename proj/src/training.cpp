#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "error.hpp"
#include "random.hpp"

namespace despeck::train {

std::vector<LrStep> default_lr_schedule() {
  return {{1, 10, 1e-3}, {11, 20, std::pow(10.0, -3.5)}, {21, 30, 1e-4}};
}

double lr_at(std::span<const LrStep> schedule, std::size_t epoch) {
  require(epoch >= 1, "epochs are 1-based");
  require(!schedule.empty(), "empty learning-rate schedule");
  for (const auto& s : schedule) {
    if (epoch >= s.first_epoch && epoch <= s.last_epoch) return s.lr;
  }
  if (epoch < schedule.front().first_epoch) return schedule.front().lr;
  return schedule.back().lr;
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(!lr_schedule.empty(), "learning-rate schedule must not be empty");
  for (const auto& s : lr_schedule) {
    require(s.lr > 0.0 && std::isfinite(s.lr), "learning rates must be positive");
    require(s.first_epoch >= 1 && s.first_epoch <= s.last_epoch, "invalid learning-rate epoch range");
  }
  require(patch_size >= 3, "patch_size must be >= 3");
  require(stride >= 1, "stride must be >= 1");
  weights.validate();
}

TrainConfig TrainConfig::phase1() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune(Preset preset) {
  TrainConfig c;
  c.epochs = 1;
  c.weights = preset == Preset::Grd ? net::LossWeights{1e-2, 1.0, 0.0} : net::LossWeights{1e-2, 1.0, 1e-4};
  c.stride = c.patch_size / 2;
  c.batch_size = 8;
  c.early_stop = EarlyStop{};
  return c;
}

NormalizationRecord normalization_for(const Image& img) {
  const double m = img.valid_mean();
  if (!(m > 0.0) || !std::isfinite(m)) fail(ErrorCode::Numeric, "cannot normalize an image with zero mean");
  return {m};
}

namespace {

// Partial Fisher-Yates; keeps the first k of a seeded permutation.
template <typename V>
void seeded_subset(std::vector<V>& items, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k >= items.size()) return;
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(k);
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(order[i - 1], order[j]);
  }
}

ad::Var<float> stack_batch(const std::vector<const Image*>& images) {
  const std::size_t h = images.front()->height(), w = images.front()->width();
  std::vector<float> v;
  v.reserve(images.size() * h * w);
  for (const auto* img : images) v.insert(v.end(), img->data().begin(), img->data().end());
  return ad::make_var<float>({images.size(), 1, h, w}, std::move(v), false);
}

using BnSnapshot = std::vector<ad::BatchNormState<float>>;

std::pair<BnSnapshot, BnSnapshot> snapshot_bn(const net::Model<float>& m) {
  return {m.clean.bn_state, m.noise.bn_state};
}

struct StepOutcome {
  double loss = 0.0;
  bool applied = false;
};

StepOutcome train_step(net::Model<float>& model, ad::AdamState<float>& adam,
                       const std::vector<ad::Var<float>>& params, const ad::Var<float>& y,
                       const ad::Var<float>& label, const TrainConfig& cfg, int phase, double lr) {
  model.zero_grad();
  std::optional<std::pair<BnSnapshot, BnSnapshot>> frozen;
  if (cfg.freeze_bn_stats) frozen = snapshot_bn(model);

  ad::Tape<float> tape;
  const auto out = net::forward(tape, model, y, ad::Mode::Train);
  const auto terms = net::composite_loss(tape, out, y, label, cfg.weights, phase);
  const double loss = terms.total->value[0];
  if (!std::isfinite(loss)) {
    fail(ErrorCode::Numeric, "non-finite training loss (clean " + std::to_string(terms.clean->value[0]) +
                                 ", noisy " + std::to_string(terms.noisy->value[0]) + ", tv " +
                                 std::to_string(terms.tv->value[0]) + ")");
  }
  tape.backward(terms.total);
  if (frozen) {
    model.clean.bn_state = frozen->first;
    model.noise.bn_state = frozen->second;
  }
  const auto res = ad::adam_step<float>(params, adam, lr);
  return {loss, res.applied};
}

std::vector<ad::Var<float>> trainable(const net::Model<float>& model) {
  std::vector<ad::Var<float>> out;
  for (const auto& p : model.parameters()) {
    if (p->requires_grad) out.push_back(p);
  }
  return out;
}

struct Freezer {
  net::Model<float>& model;
  bool active;
  Freezer(net::Model<float>& m, bool freeze_clean) : model(m), active(freeze_clean) {
    if (active) model.clean.set_trainable(false);
  }
  ~Freezer() {
    if (active) model.clean.set_trainable(true);
  }
  Freezer(const Freezer&) = delete;
  Freezer& operator=(const Freezer&) = delete;
};

TrainHistory run_epochs(net::Model<float>& model, const raster::PatchSet& patches, const TrainConfig& cfg,
                        int phase) {
  cfg.validate();
  if (patches.patches.empty()) fail(ErrorCode::InvalidArgument, "training patch set is empty");
  Freezer freezer(model, cfg.freeze_clean_branch);
  const auto params = trainable(model);

  TrainHistory hist;
  ad::AdamState<float> adam;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(patches.patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !hist.early_stopped; ++epoch) {
    const double lr = lr_at(cfg.lr_schedule, epoch);
    shuffle(order, rng);
    double weighted = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Image*> noisy, label;
      for (std::size_t k = start; k < end; ++k) {
        noisy.push_back(&patches.patches[order[k]].noisy);
        label.push_back(&patches.patches[order[k]].label);
      }
      const auto y = stack_batch(noisy);
      const auto x = phase == 1 ? stack_batch(label) : ad::Var<float>{};
      const auto step = train_step(model, adam, params, y, x, cfg, phase, lr);
      if (!step.applied) ++hist.skipped_steps;
      hist.iteration_loss.push_back(step.loss);
      ++hist.iterations;
      weighted += step.loss * static_cast<double>(end - start);
      seen += end - start;

      if (cfg.early_stop) {
        if (step.loss < best - cfg.early_stop->min_delta) {
          best = step.loss;
          since_best = 0;
        } else if (++since_best >= cfg.early_stop->patience) {
          hist.early_stopped = true;
          break;
        }
      }
    }
    hist.epoch_mean_loss.push_back(weighted / static_cast<double>(seen));
    hist.epoch_lr.push_back(lr);
  }
  model.zero_grad();
  model.history.push_back({phase, cfg.weights, hist.epoch_mean_loss.size(), hist.iterations});
  return hist;
}

}  // namespace

raster::PatchSet build_training_set(std::span<const TrainingPair> pairs, const TrainConfig& cfg) {
  cfg.validate();
  raster::PatchSet all;
  all.patch_size = cfg.patch_size;
  all.stride = cfg.stride;
  for (const auto& p : pairs) {
    const double scale = cfg.normalize ? normalization_for(p.noisy).scale : 1.0;
    const Image noisy = cfg.normalize ? p.noisy.scaled(1.0 / scale) : p.noisy;
    const Image label = cfg.normalize ? p.label.scaled(1.0 / scale) : p.label;
    auto set = raster::extract_patches(noisy, label, cfg.patch_size, cfg.stride);
    all.windows_total += set.windows_total;
    all.windows_dropped += set.windows_dropped;
    for (auto& patch : set.patches) all.patches.push_back(std::move(patch));
  }
  seeded_subset(all.patches, cfg.max_patches, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  return all;
}

TrainHistory train_phase1(net::Model<float>& model, const raster::PatchSet& patches, const TrainConfig& cfg) {
  if (cfg.epochs == 0) {
    cfg.validate();
    return {};
  }
  return run_epochs(model, patches, cfg, 1);
}

TrainHistory finetune_phase2(net::Model<float>& model, const Image& image, const TrainConfig& cfg) {
  cfg.validate();
  if (image.width() < cfg.patch_size || image.height() < cfg.patch_size) {
    fail(ErrorCode::InvalidArgument, "fine-tuning image is smaller than the patch size");
  }
  const double scale = cfg.normalize ? normalization_for(image).scale : 1.0;
  const Image y = cfg.normalize ? image.scaled(1.0 / scale) : image;
  auto patches = raster::extract_patches(y, y, cfg.patch_size, cfg.stride);
  seeded_subset(patches.patches, cfg.max_patches, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  if (cfg.epochs == 0) return {};
  return run_epochs(model, patches, cfg, 2);
}

namespace {

// Eval-mode forward of one (1, 1, h, w) window.
std::pair<std::vector<float>, std::vector<float>> infer_window(net::Model<float>& model,
                                                                const std::vector<float>& input,
                                                                std::size_t w, std::size_t h) {
  ad::Tape<float> tape;
  tape.grad_enabled = false;
  const auto y = ad::make_var<float>({1, 1, h, w}, input, false);
  const auto out = net::forward(tape, model, y, ad::Mode::Eval);
  return {std::move(out.x_hat->value), std::move(out.n_hat->value)};
}

}  // namespace

DespeckleResult despeckle(net::Model<float>& model, const Image& image, std::size_t tile, std::size_t overlap) {
  require(image.width() >= 3 && image.height() >= 3, "despeckle: image must be at least 3x3");
  require(tile > 2 * overlap, "despeckle: tile must exceed twice the overlap");

  DespeckleResult res;
  res.normalization = normalization_for(image);
  const double scale = res.normalization.scale;
  const std::size_t w = image.width(), h = image.height();

  // Masked inputs are filled with the normalized mean.
  std::vector<float> norm(w * h);
  for (std::size_t i = 0; i < norm.size(); ++i) {
    norm[i] = image.masked(i) ? 1.0f : static_cast<float>(image[i] / scale);
  }

  std::vector<float> xs(w * h), ns(w * h);
  if (w <= tile && h <= tile) {
    auto [x, n] = infer_window(model, norm, w, h);
    xs = std::move(x);
    ns = std::move(n);
  } else {
    const std::size_t core = tile - 2 * overlap;
    for (std::size_t cy = 0; cy < h; cy += core) {
      for (std::size_t cx = 0; cx < w; cx += core) {
        const std::size_t cw = std::min(core, w - cx), ch = std::min(core, h - cy);
        const std::size_t x0 = cx >= overlap ? cx - overlap : 0;
        const std::size_t y0 = cy >= overlap ? cy - overlap : 0;
        const std::size_t x1 = std::min(w, cx + cw + overlap);
        const std::size_t y1 = std::min(h, cy + ch + overlap);
        const std::size_t tw = x1 - x0, th = y1 - y0;
        std::vector<float> in(tw * th);
        for (std::size_t y = 0; y < th; ++y) {
          std::copy_n(norm.begin() + static_cast<std::ptrdiff_t>((y0 + y) * w + x0), tw,
                      in.begin() + static_cast<std::ptrdiff_t>(y * tw));
        }
        const auto [x, n] = infer_window(model, in, tw, th);
        for (std::size_t y = 0; y < ch; ++y) {
          for (std::size_t xx = 0; xx < cw; ++xx) {
            const std::size_t src = (cy + y - y0) * tw + (cx + xx - x0);
            const std::size_t dst = (cy + y) * w + cx + xx;
            xs[dst] = x[src];
            ns[dst] = n[src];
          }
        }
      }
    }
  }

  res.clean = Image(w, h);
  res.noise = Image(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    if (image.masked(i)) {
      res.clean.set_masked(i);
      res.noise.set_masked(i);
      continue;
    }
    float xv = static_cast<float>(xs[i] * scale);
    if (xv < 0.0f) {
      xv = 0.0f;
      ++res.clamped;
    }
    res.clean.set(i, xv);
    // N hat has no positivity constraint either; negative values are masked.
    res.noise.set(i, ns[i]);
  }
  return res;
}

}  // namespace despeck::train
