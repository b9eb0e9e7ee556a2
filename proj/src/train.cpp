#include "mvcnn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>

#include "mvcnn/util.hpp"

namespace mvcnn::train {

CrossEntropyResult cross_entropy(const Tensor& probabilities, const Tensor& onehot_labels,
                                 const std::vector<float>& class_weights) {
  if (probabilities.shape() != onehot_labels.shape()) {
    throw DimensionError("cross_entropy: probabilities " + probabilities.shape().str() +
                         " vs labels " + onehot_labels.shape().str());
  }
  if (probabilities.h() != 1 || probabilities.w() != 1) {
    throw DimensionError("cross_entropy expects (n, classes, 1, 1) inputs, got " +
                         probabilities.shape().str());
  }
  const int n = probabilities.n(), k = probabilities.c();
  if (!class_weights.empty() && int(class_weights.size()) != k) {
    throw DimensionError("cross_entropy: " + std::to_string(class_weights.size()) +
                         " class weights for " + std::to_string(k) + " classes");
  }

  // Validate one-hot rows and find the true class per sample.
  std::vector<int> truth(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    int ones = 0, cls = -1;
    for (int c = 0; c < k; ++c) {
      const float v = onehot_labels.at(i, c, 0, 0);
      if (v == 1.0f) {
        ++ones;
        cls = c;
      } else if (v != 0.0f) {
        throw LabelError("label row " + std::to_string(i) + " is not one-hot: entry " +
                         std::to_string(c) + " is " + std::to_string(v));
      }
    }
    if (ones != 1) {
      throw LabelError("label row " + std::to_string(i) + " is not one-hot: " +
                       std::to_string(ones) + " entries set");
    }
    truth[size_t(i)] = cls;
  }

  double weight_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    weight_sum += class_weights.empty() ? 1.0 : double(class_weights[size_t(truth[size_t(i)])]);
  }
  if (weight_sum <= 0.0) {
    throw LabelError("cross_entropy: total class weight of the batch is zero");
  }

  CrossEntropyResult res;
  res.d_logits = Tensor(n, k, 1, 1);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = class_weights.empty() ? 1.0 : double(class_weights[size_t(truth[size_t(i)])]);
    const double p = std::max(double(probabilities.at(i, truth[size_t(i)], 0, 0)), 1e-12);
    loss -= w * std::log(p);
    for (int c = 0; c < k; ++c) {
      const double y = c == truth[size_t(i)] ? 1.0 : 0.0;
      res.d_logits.at(i, c, 0, 0) =
          float(w * (double(probabilities.at(i, c, 0, 0)) - y) / weight_sum);
    }
  }
  res.loss = loss / weight_sum;
  return res;
}

std::vector<float> inverse_frequency_weights(const std::vector<size_t>& class_histogram) {
  size_t total = 0;
  for (size_t c : class_histogram) total += c;
  std::vector<float> w(class_histogram.size(), 0.0f);
  for (size_t i = 0; i < w.size(); ++i) {
    if (class_histogram[i] > 0) {
      w[i] = float(double(total) / (double(class_histogram.size()) * double(class_histogram[i])));
    }
  }
  return w;
}

namespace {

// Backward through the norm of one conv stage. Train-mode caches carry batch
// statistics that depend on the input, so the full normalization rule
// applies; infer-mode caches applied a fixed affine map, whose backward is a
// per-channel scale.
BnGrads norm_backward(const LayerParams& params, const model::LayerTrace& trace,
                      const Tensor& d_out, Mode mode) {
  if (mode == Mode::Train) {
    return batchnorm_backward(trace.activated, params, trace.bn, d_out);
  }
  const Tensor& x = trace.activated;
  BnGrads g;
  g.d_input = Tensor(x.n(), x.c(), x.h(), x.w());
  g.d_gamma.assign(size_t(x.c()), 0.0f);
  g.d_beta.assign(size_t(x.c()), 0.0f);
  for (int c = 0; c < x.c(); ++c) {
    const double scale = double(params.bn_gamma[size_t(c)]) * double(trace.bn.inv_std[size_t(c)]);
    double dg = 0.0, db = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const float* xd = x.channel(n, c);
      const float* dy = d_out.channel(n, c);
      float* dx = g.d_input.channel(n, c);
      for (int64_t i = 0; i < int64_t(x.h()) * x.w(); ++i) {
        dx[i] = float(double(dy[i]) * scale);
        dg += double(dy[i]) * (double(xd[i]) - double(trace.bn.mean[size_t(c)])) *
              double(trace.bn.inv_std[size_t(c)]);
        db += double(dy[i]);
      }
    }
    g.d_gamma[size_t(c)] = float(dg);
    g.d_beta[size_t(c)] = float(db);
  }
  return g;
}

// Shared reverse walk. With stop_index < 0 the walk runs to the batch and
// fills `out`; otherwise it returns the gradient at the post-ReLU activation
// of the conv stage at stop_index.
Tensor backward_core(const model::Model& model, const model::ActivationCache& cache,
                     const Tensor& d_logits, long stop_index, ModelGrads* out) {
  if (cache.layers.size() != model.layers.size()) {
    throw DimensionError("activation cache does not match the model's stage list");
  }
  if (d_logits.shape() != cache.logits.shape()) {
    throw DimensionError("d_logits shape " + d_logits.shape().str() +
                         " does not match the cached logits " + cache.logits.shape().str());
  }
  if (out) out->layers.resize(model.layers.size());

  // Classifier head: dense, dropout, global average pool.
  const size_t dense_idx = model.layers.size() - 1;
  GradBundle db = dense_backward(cache.dense_in, model.layers[dense_idx].params, d_logits);
  if (out) {
    out->layers[dense_idx].d_weights = std::move(db.d_weights);
    out->layers[dense_idx].d_bias = std::move(db.d_bias);
  }
  Tensor cur = dropout_backward(cache.dropout.mask, model.config.dropout_rate, db.d_input);
  const Shape4 gap_in = cache.layers[dense_idx - 1].output.shape();
  cur = global_avg_pool_backward(gap_in, cur);

  for (long i = long(dense_idx) - 1; i >= 0; --i) {
    const model::Layer& layer = model.layers[size_t(i)];
    const model::LayerTrace& trace = cache.layers[size_t(i)];
    if (layer.spec.kind == model::LayerKind::Pool) {
      cur = maxpool2d_backward(trace.pool_in_shape, trace.pool_argmax, cur);
      continue;
    }
    BnGrads bg = norm_backward(layer.params, trace, cur, cache.mode);
    if (out) {
      out->layers[size_t(i)].d_gamma = std::move(bg.d_gamma);
      out->layers[size_t(i)].d_beta = std::move(bg.d_beta);
    }
    if (i == stop_index) return std::move(bg.d_input);
    cur = relu_backward(trace.pre_act, bg.d_input);
    const Tensor& conv_in = i == 0 ? cache.input : cache.layers[size_t(i) - 1].output;
    GradBundle cb = conv2d_backward(conv_in, layer.params, cur);
    if (out) {
      out->layers[size_t(i)].d_weights = std::move(cb.d_weights);
      out->layers[size_t(i)].d_bias = std::move(cb.d_bias);
    }
    cur = std::move(cb.d_input);
  }
  return cur;
}

}  // namespace

ModelGrads backward(const model::Model& model, const model::ActivationCache& cache,
                    const Tensor& d_logits) {
  ModelGrads grads;
  grads.d_input = backward_core(model, cache, d_logits, -1, &grads);
  return grads;
}

Tensor backward_to_activation(const model::Model& model, const model::ActivationCache& cache,
                              const Tensor& d_logits, size_t layer_index) {
  if (layer_index >= model.layers.size() ||
      model.layers[layer_index].spec.kind != model::LayerKind::Conv) {
    throw ParameterError("activation gradients are defined for conv stages only");
  }
  return backward_core(model, cache, d_logits, long(layer_index), nullptr);
}

AdamState AdamState::init(const model::Model& model, const AdamConfig& hyper) {
  AdamState state;
  state.hyper = hyper;
  for (const model::Layer& layer : model.layers) {
    state.m.emplace_back(size_t(layer.params.weights.numel()), 0.0f);
    state.m.emplace_back(layer.params.bias.size(), 0.0f);
    state.m.emplace_back(layer.params.bn_gamma.size(), 0.0f);
    state.m.emplace_back(layer.params.bn_beta.size(), 0.0f);
  }
  state.v = state.m;
  return state;
}

void adam_update(float* param, const float* grad, float* m, float* v, size_t count,
                 const AdamConfig& hyper, int64_t t) {
  const double bc1 = 1.0 - std::pow(double(hyper.beta1), double(t));
  const double bc2 = 1.0 - std::pow(double(hyper.beta2), double(t));
  for (size_t i = 0; i < count; ++i) {
    const double g = double(grad[i]);
    const double mi = double(hyper.beta1) * double(m[i]) + (1.0 - double(hyper.beta1)) * g;
    const double vi = double(hyper.beta2) * double(v[i]) + (1.0 - double(hyper.beta2)) * g * g;
    m[i] = float(mi);
    v[i] = float(vi);
    const double step =
        double(hyper.lr) * (mi / bc1) / (std::sqrt(vi / bc2) + double(hyper.epsilon));
    param[i] = float(double(param[i]) - step);
  }
}

void adam_step(model::Model& model, const ModelGrads& grads, AdamState& state) {
  if (grads.layers.size() != model.layers.size()) {
    throw DimensionError("gradient stage list does not match the model");
  }
  if (state.m.size() != model.layers.size() * 4) {
    throw DimensionError("optimizer state does not match the model");
  }
  state.t += 1;

  auto update_vec = [&](std::vector<float>& param, const std::vector<float>& grad, size_t slot) {
    if (param.empty()) return;
    if (grad.size() != param.size() || state.m[slot].size() != param.size()) {
      throw DimensionError("optimizer slot size mismatch");
    }
    adam_update(param.data(), grad.data(), state.m[slot].data(), state.v[slot].data(),
                param.size(), state.hyper, state.t);
  };

  for (size_t i = 0; i < model.layers.size(); ++i) {
    LayerParams& p = model.layers[i].params;
    const LayerGrads& g = grads.layers[i];
    if (p.weights.numel() > 0) {
      if (g.d_weights.shape() != p.weights.shape()) {
        throw DimensionError("weight gradient shape mismatch at stage " + std::to_string(i));
      }
      adam_update(p.weights.data(), g.d_weights.data(), state.m[i * 4].data(),
                  state.v[i * 4].data(), size_t(p.weights.numel()), state.hyper, state.t);
    }
    update_vec(p.bias, g.d_bias, i * 4 + 1);
    update_vec(p.bn_gamma, g.d_gamma, i * 4 + 2);
    update_vec(p.bn_beta, g.d_beta, i * 4 + 3);
  }
}

namespace {

int argmax_row(const Tensor& t, int row) {
  int best = 0;
  for (int c = 1; c < t.c(); ++c) {
    if (t.at(row, c, 0, 0) > t.at(row, best, 0, 0)) best = c;
  }
  return best;
}

data::ViewSpec view_spec_for(const model::Model& model, const TrainConfig& config) {
  return data::ViewSpec{model.config.combo, config.view_params, model.config.input_h,
                        model.config.input_w};
}

}  // namespace

EpochStats train_epoch(model::Model& model, const data::Dataset& train_set,
                       const TrainConfig& config, AdamState& state, uint64_t epoch_index) {
  model.config.dropout_rate = config.dropout_rate;
  const std::vector<float> weights = config.weight_by_class
                                         ? inverse_frequency_weights(train_set.class_histogram())
                                         : std::vector<float>{};

  data::BatchIter it(train_set, view_spec_for(model, config), config.batch_size, config.seed,
                     epoch_index);
  double loss_sum = 0.0;
  int64_t correct = 0, total = 0;
  uint64_t batch_index = 0;
  while (std::optional<data::Batch> batch = it.next()) {
    const uint64_t dropout_seed = Rng(config.seed, (epoch_index << 24) + batch_index).next_u64();
    model::ActivationCache cache;
    Tensor probs = model::forward(model, batch->views, Mode::Train, dropout_seed, &cache);
    CrossEntropyResult ce = cross_entropy(probs, batch->labels, weights);

    const int n = probs.n();
    loss_sum += ce.loss * n;
    for (int i = 0; i < n; ++i) {
      correct += argmax_row(probs, i) == argmax_row(batch->labels, i) ? 1 : 0;
    }
    total += n;

    ModelGrads grads = backward(model, cache, ce.d_logits);
    adam_step(model, grads, state);
    ++batch_index;
  }

  EpochStats stats;
  stats.loss = loss_sum / double(total);
  stats.accuracy = double(correct) / double(total);
  return stats;
}

EpochStats evaluate(const model::Model& model, const data::Dataset& dataset,
                    const TrainConfig& config) {
  data::BatchIter it(dataset, view_spec_for(model, config), config.batch_size,
                     /*seed=*/0, /*epoch=*/0);
  double loss_sum = 0.0;
  int64_t correct = 0, total = 0;
  while (std::optional<data::Batch> batch = it.next()) {
    Tensor probs = model::forward(model, batch->views, Mode::Infer, 0);
    CrossEntropyResult ce = cross_entropy(probs, batch->labels);
    const int n = probs.n();
    loss_sum += ce.loss * n;
    for (int i = 0; i < n; ++i) {
      correct += argmax_row(probs, i) == argmax_row(batch->labels, i) ? 1 : 0;
    }
    total += n;
  }
  EpochStats stats;
  stats.loss = loss_sum / double(total);
  stats.accuracy = double(correct) / double(total);
  return stats;
}

void write_history_csv(const std::string& path, const History& history) {
  std::string csv = "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
  for (const EpochRecord& r : history.epochs) {
    csv += std::to_string(r.epoch) + "," + fmt_f6(r.train_loss) + "," + fmt_f6(r.train_acc) +
           "," + fmt_f6(r.val_loss) + "," + fmt_f6(r.val_acc) + "," + fmt_f6(r.seconds) + "\n";
  }
  write_text_file(path, csv);
}

History fit(model::Model& model, const data::Dataset& train_set, const data::Dataset& val_set,
            const TrainConfig& config, const std::string& out_dir) {
  if (config.epochs < 1) {
    throw ParameterError("epochs must be at least 1, got " + std::to_string(config.epochs));
  }
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  AdamState state = AdamState::init(model, config.adam);
  History history;
  double best_val_acc = -1.0;
  for (int e = 0; e < config.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats tr = train_epoch(model, train_set, config, state, uint64_t(e));
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
    EpochStats va = evaluate(model, val_set, config);

    EpochRecord rec;
    rec.epoch = e + 1;
    rec.train_loss = tr.loss;
    rec.train_acc = tr.accuracy;
    rec.val_loss = va.loss;
    rec.val_acc = va.accuracy;
    rec.seconds = std::max(elapsed.count(), 1e-9);
    history.epochs.push_back(rec);

    if (!out_dir.empty()) {
      const std::filesystem::path dir(out_dir);
      write_history_csv((dir / "history.csv").string(), history);
      if (va.accuracy > best_val_acc) {
        model::save_checkpoint(model, (dir / "checkpoint_best.mvck").string());
      }
      if (config.checkpoint_every > 0 && (e + 1) % config.checkpoint_every == 0) {
        model::save_checkpoint(model,
                               (dir / ("checkpoint_epoch_" + std::to_string(e + 1) + ".mvck"))
                                   .string());
      }
    }
    best_val_acc = std::max(best_val_acc, va.accuracy);
  }
  return history;
}

}  // namespace mvcnn::train
