#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "agyolo/dataio.hpp"
#include "agyolo/evaluator.hpp"
#include "agyolo/network.hpp"
#include "agyolo/yolo.hpp"

namespace agyolo {

// Conv weights ~ N(0, 1 / (16 n)) with n the element count of the tensor;
// biases zero; BN gamma 1, beta 0, running mean 0, running var 1.
void init_weights(Network& net, std::uint64_t seed);

inline double init_stddev(std::size_t n) { return 1.0 / std::sqrt(16.0 * static_cast<double>(n)); }

// Two-level schedule shared by weight decay and the BN-gamma L1 coefficient.
struct StepSchedule {
  double early = 0.01;
  double late = 0.001;
  std::int64_t switch_at = 100000;
  [[nodiscard]] double at(std::int64_t iteration) const { return iteration < switch_at ? early : late; }
};

// Adds coeff * sign(gamma) to the gamma gradients (0 where gamma == 0).
void bn_gamma_l1_grad(std::span<const float> gamma, std::span<float> grad, double coeff);

class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  // Updates every learnable parameter of `net` from its stored gradients.
  // Conv weights receive the L2 term g += 2 * decay * w first.
  void step(Network& net, double lr, double decay);
  // Raw update over one array; exposed for tests.
  void step(std::span<float> w, std::span<const float> g, std::size_t slot, double lr, double decay);
  void next_step() { ++t_; }

  [[nodiscard]] std::int64_t steps() const { return t_; }
  // Moments serialized as a flat buffer for checkpoints.
  [[nodiscard]] std::vector<float> state() const;
  void set_state(const std::vector<float>& flat, std::int64_t steps, const Network& net);

 private:
  void ensure(std::size_t slot, std::size_t n);
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  // Learning rate is multiplied by lr_scale at each of these iterations.
  std::vector<std::int64_t> lr_steps;
  double lr_scale = 0.1;
  int batch_size = 10;
  std::int64_t max_iterations = 1000;
  std::vector<int> dims{352, 384, 416, 448, 480, 512, 544, 576};
  StepSchedule decay{0.01, 0.001, 100000};
  StepSchedule bn_l1{0.0, 0.0, 100000};  // slimming runs set early/late > 0
  LossConfig loss;
  AugmentPolicy augment;
  bool use_augment = true;
  std::uint64_t seed = 1;

  int checkpoint_every = 1000;
  std::string checkpoint_path;  // empty: no checkpoints
  std::string metrics_path;     // empty: no metrics log
  // Optional periodic evaluation.
  int eval_every = 0;
  EvalOptions eval;

  void validate() const;
  [[nodiscard]] double lr_at(std::int64_t iteration) const;
};

struct IterationLog {
  std::int64_t iteration = 0;
  double loss = 0;
  double lobj = 0;
  double lbox = 0;
  int dim = 0;
  double lr = 0;
  double lambda = 0;
};

struct TrainResult {
  std::vector<IterationLog> log;
  std::vector<std::pair<std::int64_t, EvalReport>> evals;
  std::int64_t iterations = 0;
  double seconds = 0;
};

struct TrainHooks {
  // Called after every iteration; return false to stop early.
  std::function<bool(const IterationLog&)> on_iteration;
  ImageStore* eval_set = nullptr;
};

// Metrics log line "iter loss lobj lbox dim lr lambda".
std::string format_log_line(const IterationLog& it);

// Multi-scale training. Each epoch shuffles the training set and draws one
// input dim from `dims`; both come from a generator seeded with `seed`, so a
// run is reproducible. Starts from `start_iteration` (resume) with the given
// optimizer. Throws DivergenceError on a non-finite loss.
TrainResult train_loop(Network& net, ImageStore& data, const TrainConfig& cfg, Adam& optimizer,
                       std::int64_t start_iteration = 0, const TrainHooks& hooks = {});

// Checkpoint = weights file with iteration in its meta, plus a sidecar
// "<path>.adam" holding the optimizer moments.
void save_checkpoint(const Network& net, const Adam& opt, std::int64_t iteration, const std::string& path);
// Returns the iteration stored in the checkpoint.
std::int64_t load_checkpoint(Network& net, Adam& opt, const std::string& path);

}  // namespace agyolo
