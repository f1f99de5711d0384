#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "cat/checkpoint.hpp"
#include "cat/data.hpp"
#include "cat/error.hpp"
#include "cat/model.hpp"
#include "cat/rng.hpp"
#include "cat/tensor.hpp"

namespace cat {

struct TrainConfig {
  std::int64_t epochs = 1;
  std::int64_t batch_size = 32;
  double base_lr = 3e-4;
  double min_lr = 0.0;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::string dataset = "synthetic";  // "synthetic" or "cifar10"
  std::string data_dir;               // cifar10: directory with the binary batch files
  std::int64_t train_limit = -1;      // cap on training samples (-1 = all)
  std::int64_t eval_limit = -1;       // cap on validation samples (-1 = all)
  std::int64_t synthetic_count = 512; // synthetic: training-set size
  std::int64_t max_steps = -1;        // hard step cap across epochs (-1 = epochs govern)
  std::int64_t eval_every = 0;        // evaluate every k steps (0 = only at the end)
  bool hflip = false;                 // random horizontal flip augmentation
  std::string out_dir = "out";

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(base_lr > min_lr) || min_lr < 0)
      throw ConfigError("learning rates must satisfy base_lr > min_lr >= 0");
    if (dataset != "synthetic" && dataset != "cifar10")
      throw ConfigError("dataset must be \"synthetic\" or \"cifar10\", got \"" + dataset + "\"");
  }
};

// Cosine annealing from base to min over T steps (no warmup).
inline double cosine_lr(std::int64_t t, std::int64_t T, double base, double min) {
  const double frac = static_cast<double>(t) / static_cast<double>(T);
  return min + 0.5 * (base - min) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// Per-parameter Adam moments plus the shared step counter.
template <typename S>
struct OptimizerState {
  std::map<std::string, Tensor<S>> m;
  std::map<std::string, Tensor<S>> v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
OptimizerState<S> init_optimizer(const ParamMap<S>& params) {
  OptimizerState<S> state;
  for (const auto& [name, p] : params) {
    state.m.emplace(name, Tensor<S>::zeros(p.shape()));
    state.v.emplace(name, Tensor<S>::zeros(p.shape()));
  }
  return state;
}

// One AdamW update: decoupled weight decay (p -= lr*wd*p) applied first,
// then the bias-corrected Adam step with the state's beta1/beta2/eps.
// state.t increments exactly once per call.
template <typename S>
void adamw_step(ParamMap<S>& params, const std::map<std::string, Tensor<S>>& grads,
                OptimizerState<S>& state, double lr, double weight_decay) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) throw ShapeMismatch("no gradient for parameter " + name);
    const Tensor<S>& g = git->second;
    if (g.shape() != p.shape())
      throw ShapeMismatch("gradient shape " + shape_str(g.shape()) + " vs parameter " + name +
                          " " + shape_str(p.shape()));
    const Tensor<S>& m = state.m.at(name);
    const Tensor<S>& v = state.v.at(name);
    const S* pd = p.data();
    const S* md = m.data();
    const S* vd = v.data();
    const S* gd = g.data();
    const std::int64_t n = p.numel();
    std::vector<S> pn(static_cast<std::size_t>(n));
    std::vector<S> mn(static_cast<std::size_t>(n));
    std::vector<S> vn(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      double pi = static_cast<double>(pd[i]);
      pi -= lr * weight_decay * pi;
      const double gi = static_cast<double>(gd[i]);
      const double mi = state.beta1 * static_cast<double>(md[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(vd[i]) + (1.0 - state.beta2) * gi * gi;
      mn[static_cast<std::size_t>(i)] = static_cast<S>(mi);
      vn[static_cast<std::size_t>(i)] = static_cast<S>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      pn[static_cast<std::size_t>(i)] = static_cast<S>(pi - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
    p = Tensor<S>(p.shape(), std::move(pn));
    state.m.at(name) = Tensor<S>(m.shape(), std::move(mn));
    state.v.at(name) = Tensor<S>(v.shape(), std::move(vn));
  }
}

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

namespace detail {

// argmax with ties broken toward the lowest class index
template <typename S>
int argmax_row(const S* row, std::int64_t n) {
  int best = 0;
  for (std::int64_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace detail

// Mean cross-entropy and argmax accuracy over a whole dataset, evaluated in
// batches with untracked parameters.
template <typename S>
EvalResult evaluate(const ParamMap<S>& params, const CatConfig& mc, const Dataset<S>& data,
                    std::int64_t batch_size) {
  EvalResult r;
  const std::int64_t n = data.size();
  if (n == 0) return r;
  const std::int64_t C = mc.num_classes;
  double loss_sum = 0;
  std::int64_t hits = 0;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t b = std::min(batch_size, n - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(b));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<S> images = data.gather_images(idx);
    const std::vector<int> labels = data.gather_labels(idx);
    const Tensor<S> logits = model_forward_batch(images, params, mc);
    loss_sum += static_cast<double>(cross_entropy(logits, labels).item()) * static_cast<double>(b);
    for (std::int64_t i = 0; i < b; ++i) {
      const int pred = detail::argmax_row(logits.data() + i * C, C);
      if (pred == labels[static_cast<std::size_t>(i)]) ++hits;
    }
  }
  r.loss = loss_sum / static_cast<double>(n);
  r.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return r;
}

struct TrainResult {
  std::int64_t steps = 0;
  double final_loss = 0;        // last training batch loss
  double final_train_acc = 0;   // last training batch accuracy
  double final_val_loss = 0;
  double final_val_acc = 0;
  double best_val_acc = 0;
  std::uint64_t peak_tensor_bytes = 0;  // qualitative memory footprint of a step
  std::string metrics_path;
  std::string eval_path;
  std::string checkpoint_path;
};

namespace detail {

template <typename S>
Checkpoint<S> make_checkpoint(const CatConfig& mc, const ParamMap<S>& params,
                              const OptimizerState<S>& opt, const std::string& config_json,
                              std::uint64_t step) {
  Checkpoint<S> ckpt;
  for (const auto& [name, shape] : enumerate_params(mc)) ckpt.tensors.emplace_back(name, params.at(name));
  for (const auto& [name, shape] : enumerate_params(mc))
    ckpt.tensors.emplace_back("adam.m." + name, opt.m.at(name));
  for (const auto& [name, shape] : enumerate_params(mc))
    ckpt.tensors.emplace_back("adam.v." + name, opt.v.at(name));
  ckpt.config_json = config_json;
  ckpt.step = step;
  return ckpt;
}

inline std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

// Load the dataset a TrainConfig names. `train_split` selects the training
// set (synthetic seed / CIFAR batch files) versus the validation set
// (independent synthetic draw / CIFAR test batch).
template <typename S>
Dataset<S> load_dataset(const CatConfig& mc, const TrainConfig& tc, bool train_split) {
  if (tc.dataset == "synthetic") {
    const std::uint64_t seed = train_split ? tc.seed : tc.seed + 0x5eedull;
    const std::int64_t count = train_split
                                   ? tc.synthetic_count
                                   : (tc.eval_limit > 0 ? tc.eval_limit : tc.synthetic_count / 4);
    return synthetic_dataset<S>(mc.num_classes, mc.image_size, mc.patch_size, mc.channels, seed,
                                std::max<std::int64_t>(count, 1));
  }
  Dataset<S> data = train_split ? load_cifar10<S>(tc.data_dir)
                                : load_cifar10_file<S>(tc.data_dir + "/test_batch.bin");
  const std::int64_t limit = train_split ? tc.train_limit : tc.eval_limit;
  return data.take(limit);
}

// Full training loop: seeded shuffling each epoch, forward / cross-entropy /
// backward / AdamW with the cosine schedule, one metrics row per step
// (step,lr,loss,acc), periodic evaluation into eval.csv (step,loss,acc),
// best/final checkpoints under out_dir. Any non-finite loss aborts.
template <typename S>
TrainResult train(const CatConfig& mc, const TrainConfig& tc, const std::string& config_json) {
  mc.validate();
  tc.validate();
  namespace fs = std::filesystem;
  fs::create_directories(tc.out_dir);

  const Dataset<S> train_data = load_dataset<S>(mc, tc, true);
  const Dataset<S> val_data = load_dataset<S>(mc, tc, false);

  ParamMap<S> params = init_params<S>(mc, tc.seed);
  OptimizerState<S> opt = init_optimizer(params);

  const std::int64_t n = train_data.size();
  const std::int64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  std::int64_t total_steps = tc.epochs * steps_per_epoch;
  if (tc.max_steps > 0) total_steps = std::min(total_steps, tc.max_steps);
  if (total_steps < 1) throw ConfigError("training would run zero steps");

  TrainResult result;
  result.metrics_path = tc.out_dir + "/metrics.csv";
  result.eval_path = tc.out_dir + "/eval.csv";
  result.checkpoint_path = tc.out_dir + "/final.ckpt";

  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  std::ofstream evals(result.eval_path, std::ios::trunc);
  if (!metrics || !evals) throw MissingFile("cannot write metrics under " + tc.out_dir);
  metrics << "step,lr,loss,acc\n";
  evals << "step,loss,acc\n";

  Rng shuffle_rng(tc.seed ^ 0x7261696eull);  // dedicated stream for batch order and flips
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  reset_peak_bytes();
  std::int64_t step = 0;
  bool have_best = false;
  const std::int64_t C = mc.num_classes;

  for (std::int64_t epoch = 0; epoch < tc.epochs && step < total_steps; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::int64_t start = 0; start < n && step < total_steps; start += tc.batch_size) {
      const std::int64_t b = std::min(tc.batch_size, n - start);
      std::vector<std::int64_t> idx(order.begin() + start, order.begin() + start + b);
      Tensor<S> images = train_data.gather_images(idx);
      const std::vector<int> labels = train_data.gather_labels(idx);
      if (tc.hflip && shuffle_rng.uniform() < 0.5) images = flip_horizontal(images);

      const double lr = cosine_lr(step, total_steps, tc.base_lr, tc.min_lr);

      Tape<S> tape;
      ParamMap<S> tracked;
      for (const auto& [name, p] : params) tracked.emplace(name, tape.leaf(name, p));
      const Tensor<S> logits = model_forward_batch(images, tracked, mc);
      const Tensor<S> loss = cross_entropy(logits, labels);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        throw NonFiniteLoss("loss became non-finite at step " + std::to_string(step + 1));

      std::int64_t hits = 0;
      for (std::int64_t i = 0; i < b; ++i)
        if (detail::argmax_row(logits.data() + i * C, C) == labels[static_cast<std::size_t>(i)])
          ++hits;
      const double acc = static_cast<double>(hits) / static_cast<double>(b);

      const auto grads = tape.backward(loss);
      adamw_step(params, grads, opt, lr, tc.weight_decay);
      ++step;

      metrics << step << ',' << detail::format_metric(lr) << ','
              << detail::format_metric(loss_value) << ',' << detail::format_metric(acc) << '\n';
      result.final_loss = loss_value;
      result.final_train_acc = acc;

      if (tc.eval_every > 0 && step % tc.eval_every == 0 && step < total_steps) {
        const EvalResult ev = evaluate(params, mc, val_data, tc.batch_size);
        evals << step << ',' << detail::format_metric(ev.loss) << ','
              << detail::format_metric(ev.accuracy) << '\n';
        if (!have_best || ev.accuracy > result.best_val_acc) {
          have_best = true;
          result.best_val_acc = ev.accuracy;
          save_checkpoint(tc.out_dir + "/best.ckpt",
                          detail::make_checkpoint(mc, params, opt, config_json,
                                                  static_cast<std::uint64_t>(step)));
        }
      }
    }
  }

  const EvalResult final_ev = evaluate(params, mc, val_data, tc.batch_size);
  evals << step << ',' << detail::format_metric(final_ev.loss) << ','
        << detail::format_metric(final_ev.accuracy) << '\n';
  result.final_val_loss = final_ev.loss;
  result.final_val_acc = final_ev.accuracy;
  if (!have_best || final_ev.accuracy > result.best_val_acc) {
    result.best_val_acc = final_ev.accuracy;
    save_checkpoint(tc.out_dir + "/best.ckpt",
                    detail::make_checkpoint(mc, params, opt, config_json,
                                            static_cast<std::uint64_t>(step)));
  }

  result.steps = step;
  result.peak_tensor_bytes = peak_tensor_bytes();
  save_checkpoint(result.checkpoint_path,
                  detail::make_checkpoint(mc, params, opt, config_json,
                                          static_cast<std::uint64_t>(step)));
  metrics.flush();
  evals.flush();
  return result;
}

}  // namespace cat
