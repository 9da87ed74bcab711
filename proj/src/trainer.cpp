#include "agyolo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "agyolo/weights_io.hpp"

namespace agyolo {

void init_weights(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int id = 0; id < net.size(); ++id) {
    LayerParams<float>& p = net.params(id);
    if (net.layer(id).kind == LayerKind::Conv) {
      std::normal_distribution<double> dist(0.0, init_stddev(p.conv.weights.size()));
      for (float& w : p.conv.weights.span()) w = static_cast<float>(dist(rng));
      std::fill(p.conv.bias.begin(), p.conv.bias.end(), 0.0f);
    } else if (net.layer(id).kind == LayerKind::BatchNorm) {
      p.bn = BnParams<float>(p.bn.channels());
    }
  }
  net.clear_cache();
}

void bn_gamma_l1_grad(std::span<const float> gamma, std::span<float> grad, double coeff) {
  if (gamma.size() != grad.size()) throw DimensionError("gamma and gradient lengths differ");
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    if (gamma[i] > 0)
      grad[i] += static_cast<float>(coeff);
    else if (gamma[i] < 0)
      grad[i] -= static_cast<float>(coeff);
  }
}

// ---- Adam ----

void Adam::ensure(std::size_t slot, std::size_t n) {
  if (m_.size() <= slot) {
    m_.resize(slot + 1);
    v_.resize(slot + 1);
  }
  if (m_[slot].empty()) {
    m_[slot].assign(n, 0.0f);
    v_[slot].assign(n, 0.0f);
  }
  if (m_[slot].size() != n) throw StateError("optimizer state does not match parameter shapes");
}

void Adam::step(std::span<float> w, std::span<const float> g, std::size_t slot, double lr, double decay) {
  if (w.size() != g.size()) throw StateError("parameter and gradient lengths differ");
  ensure(slot, w.size());
  if (t_ < 1) throw StateError("call next_step() before updating parameters");
  std::vector<float>& m = m_[slot];
  std::vector<float>& v = v_[slot];
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i] + 2.0 * decay * w[i];
    const double mi = beta1 * m[i] + (1 - beta1) * gi;
    const double vi = beta2 * v[i] + (1 - beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    w[i] = static_cast<float>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + epsilon));
  }
}

void Adam::step(Network& net, double lr, double decay) {
  next_step();
  std::size_t slot = 0;
  for (ParamRef<float>& p : net.parameters()) {
    const double d = p.kind == ParamKind::ConvWeight ? decay : 0.0;
    step(p.value, p.grad, slot++, lr, d);
  }
  net.clear_cache();
}

std::vector<float> Adam::state() const {
  std::vector<float> flat;
  for (std::size_t s = 0; s < m_.size(); ++s) {
    flat.insert(flat.end(), m_[s].begin(), m_[s].end());
    flat.insert(flat.end(), v_[s].begin(), v_[s].end());
  }
  return flat;
}

void Adam::set_state(const std::vector<float>& flat, std::int64_t steps, Network const& net) {
  std::vector<std::size_t> sizes;
  for (int id = 0; id < net.size(); ++id) {
    const LayerParams<float>& p = net.params(id);
    if (net.layer(id).kind == LayerKind::Conv) {
      sizes.push_back(p.conv.weights.size());
      if (p.conv.has_bias()) sizes.push_back(p.conv.bias.size());
    } else if (net.layer(id).kind == LayerKind::BatchNorm) {
      sizes.push_back(p.bn.gamma.size());
      sizes.push_back(p.bn.beta.size());
    }
  }
  std::size_t total = 0;
  for (std::size_t n : sizes) total += 2 * n;
  if (flat.empty()) {
    m_.clear();
    v_.clear();
    t_ = steps;
    return;
  }
  if (flat.size() != total) throw FormatError("optimizer state size does not match the network");
  m_.assign(sizes.size(), {});
  v_.assign(sizes.size(), {});
  std::size_t pos = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    m_[s].assign(flat.begin() + pos, flat.begin() + pos + sizes[s]);
    pos += sizes[s];
    v_[s].assign(flat.begin() + pos, flat.begin() + pos + sizes[s]);
    pos += sizes[s];
  }
  t_ = steps;
}

// ---- loop ----

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw InputError("learning rate must be positive");
  if (batch_size < 1) throw InputError("batch size must be positive");
  if (max_iterations < 0) throw InputError("max iterations must be non-negative");
  if (dims.empty()) throw InputError("no training dims");
  for (int d : dims)
    if (d < 32 || d % 32 != 0) throw InputError("training dims must be positive multiples of 32");
  if (decay.early < 0 || decay.late < 0 || bn_l1.early < 0 || bn_l1.late < 0)
    throw InputError("regularization coefficients must be non-negative");
  if (!(loss.lambda_obj >= 0 && loss.lambda_noobj >= 0 && loss.lambda_box >= 0))
    throw InputError("loss weights must be non-negative");
  if (!(lr_scale > 0)) throw InputError("lr scale must be positive");
  if (!std::is_sorted(lr_steps.begin(), lr_steps.end())) throw InputError("lr steps must be ascending");
  if (use_augment) augment.validate();
}

double TrainConfig::lr_at(std::int64_t iteration) const {
  double lr = learning_rate;
  for (std::int64_t s : lr_steps)
    if (iteration >= s) lr *= lr_scale;
  return lr;
}

std::string format_log_line(const IterationLog& it) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%lld %.6f %.6f %.6f %d %.6g %.6g", static_cast<long long>(it.iteration), it.loss,
                it.lobj, it.lbox, it.dim, it.lr, it.lambda);
  return buf;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct EpochPlan {
  std::vector<std::size_t> order;
  int dim = 0;
};

EpochPlan plan_epoch(std::size_t n, std::int64_t epoch, const TrainConfig& cfg) {
  std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
  EpochPlan p;
  p.dim = cfg.dims[std::uniform_int_distribution<std::size_t>(0, cfg.dims.size() - 1)(rng)];
  p.order.resize(n);
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  std::shuffle(p.order.begin(), p.order.end(), rng);
  return p;
}

}  // namespace

TrainResult train_loop(Network& net, ImageStore& data, const TrainConfig& cfg, Adam& optimizer,
                       std::int64_t start_iteration, const TrainHooks& hooks) {
  cfg.validate();
  if (data.size() == 0) throw InputError("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t per_epoch =
      (static_cast<std::int64_t>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    metrics.open(cfg.metrics_path, start_iteration > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics log " + cfg.metrics_path);
  }

  TrainResult result;
  EpochPlan plan;
  std::int64_t planned = -1;
  std::vector<TensorF> grads;
  std::int64_t it = start_iteration;
  for (; it < cfg.max_iterations; ++it) {
    const std::int64_t epoch = it / per_epoch;
    if (epoch != planned) {
      plan = plan_epoch(data.size(), epoch, cfg);
      planned = epoch;
    }
    const std::size_t first = static_cast<std::size_t>(it % per_epoch) * cfg.batch_size;
    const std::size_t count = std::min<std::size_t>(cfg.batch_size, data.size() - first);

    TensorF x(static_cast<int>(count), 3, plan.dim, plan.dim);
    std::vector<std::vector<GroundTruth>> truth(count);
    const std::size_t per = x.size() / count;
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t idx = plan.order[first + j];
      const TensorF& img = data.image(idx);
      TensorF sample;
      if (cfg.use_augment) {
        Augmented a = augment(img, data.item(idx).objects, cfg.augment, mix(mix(cfg.seed, epoch + 1), idx),
                              plan.dim, plan.dim);
        sample = std::move(a.image);
        truth[j] = std::move(a.objects);
      } else {
        sample = resize_bilinear(img, plan.dim, plan.dim);
        truth[j] = data.item(idx).objects;
      }
      std::copy(sample.data(), sample.data() + per, x.data() + j * per);
    }

    const std::vector<TensorF> out = net.forward(x, RunMode::Train);
    const std::vector<HeadLayout> heads = head_layouts(net, plan.dim, plan.dim);
    const LossBreakdown loss =
        total_loss<float>(out, truth, net.anchors(), heads, cfg.loss, &grads);
    if (!std::isfinite(loss.total))
      throw DivergenceError("loss became non-finite at iteration " + std::to_string(it) + " (obj " +
                            std::to_string(loss.obj) + ", box " + std::to_string(loss.box) +
                            "); try a smaller learning rate or box weight");
    net.backward(grads);

    const double l1 = cfg.bn_l1.at(it);
    if (l1 > 0)
      for (ParamRef<float>& p : net.parameters())
        if (p.kind == ParamKind::BnGamma) bn_gamma_l1_grad(p.value, p.grad, l1);
    const double lambda = cfg.decay.at(it);
    const double lr = cfg.lr_at(it);
    optimizer.step(net, lr, lambda);

    const IterationLog entry{it, loss.total, loss.obj, loss.box, plan.dim, lr, lambda};
    result.log.push_back(entry);
    if (metrics) metrics << format_log_line(entry) << "\n" << std::flush;

    const std::int64_t done = it + 1;
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)
      save_checkpoint(net, optimizer, done, cfg.checkpoint_path);
    if (hooks.eval_set && cfg.eval_every > 0 && done % cfg.eval_every == 0)
      result.evals.emplace_back(done, evaluate(net, *hooks.eval_set, cfg.eval));
    if (hooks.on_iteration && !hooks.on_iteration(entry)) {
      ++it;
      break;
    }
  }
  result.iterations = it;
  if (!cfg.checkpoint_path.empty()) save_checkpoint(net, optimizer, it, cfg.checkpoint_path);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---- checkpoints ----

void save_checkpoint(const Network& net, const Adam& opt, std::int64_t iteration, const std::string& path) {
  const nlohmann::json meta = {{"iteration", iteration}, {"adam_steps", opt.steps()}};
  save_weights(net, path, Precision::FP32, meta.dump());
  const std::vector<float> state = opt.state();
  std::ofstream out(path + ".adam", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write optimizer state " + path + ".adam");
  const auto n = static_cast<std::uint64_t>(state.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(state.data()), static_cast<std::streamsize>(state.size() * sizeof(float)));
  if (!out) throw IoError("failed writing optimizer state " + path + ".adam");
}

std::int64_t load_checkpoint(Network& net, Adam& opt, const std::string& path) {
  const nlohmann::json meta = nlohmann::json::parse(load_weights(net, path));
  const std::int64_t iteration = meta.value("iteration", std::int64_t{0});
  const std::int64_t steps = meta.value("adam_steps", iteration);
  std::vector<float> state;
  std::ifstream in(path + ".adam", std::ios::binary);
  if (in) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    state.resize(n);
    in.read(reinterpret_cast<char*>(state.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw FormatError(path + ".adam: truncated optimizer state");
  }
  opt.set_state(state, steps, net);
  return iteration;
}

}  // namespace agyolo
