#pragma once
// The G-step and the full alternating training loop: one Adam move on the
// ratio network, one on the generator, per iteration, with periodic
// diagnostics and stability halts.

#include "rf/data.hpp"
#include "rf/fgen.hpp"
#include "rf/net.hpp"
#include "rf/ratio.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rf {

struct GeneratorModel {
  Mlp net;
  int noise_dim = 2;
};

inline GeneratorModel make_generator(int noise_dim, int data_dim, std::mt19937_64& rng,
                                     const std::vector<int>& hidden = {64, 64},
                                     Act out_act = Act::linear) {
  if (noise_dim < 1 || data_dim < 1)
    throw std::invalid_argument("generator: dimensions must be positive");
  if (out_act != Act::linear && out_act != Act::tanh_fn)
    throw std::invalid_argument("generator: output activation must be linear or tanh");
  return GeneratorModel{make_mlp(noise_dim, hidden, data_dim, out_act, 0.0, rng), noise_dim};
}

inline Batch sample_noise(int B, int dz, std::mt19937_64& rng) {
  if (B < 1 || dz < 1) throw std::invalid_argument("sample_noise: need B >= 1, dz >= 1");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Batch z(B, dz);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < dz; ++j) z(i, j) = u(rng);
  return z;
}

inline Batch generator_forward(const GeneratorModel& model, const Batch& z) {
  return mlp_forward(model.net, z);
}

// The three generator objectives: (f) mean f(r), (fprime) mean -f'(r),
// (conjugate) mean -(r f'(r) - f(r)).
enum class GStepVariant { f, fprime, conjugate };

inline const char* gstep_variant_name(GStepVariant v) {
  switch (v) {
    case GStepVariant::f: return "f";
    case GStepVariant::fprime: return "fprime";
    default: return "conjugate";
  }
}

inline GStepVariant parse_gstep_variant(std::string_view text) {
  if (text == "f") return GStepVariant::f;
  if (text == "fprime") return GStepVariant::fprime;
  if (text == "conjugate") return GStepVariant::conjugate;
  throw std::invalid_argument("unknown G-step variant: " + std::string(text));
}

inline double gstep_loss(const FGen& gen, GStepVariant v, const Eigen::VectorXd& r) {
  if (r.size() == 0) throw std::invalid_argument("gstep_loss: empty batch");
  switch (v) {
    case GStepVariant::f:
      return r.unaryExpr([&](double x) { return gen.value(x); }).mean();
    case GStepVariant::fprime:
      return -r.unaryExpr([&](double x) { return gen.prime(x); }).mean();
    default:
      return -r.unaryExpr([&](double x) { return gen.conjugate_of_prime(x); }).mean();
  }
}

// d/dr of the per-sample objective; variant (conjugate) carries the extra
// factor r that makes its gradient vanish fast for small ratios.
inline double gstep_objective_derivative(const FGen& gen, GStepVariant v, double r) {
  switch (v) {
    case GStepVariant::f: return gen.prime(r);
    case GStepVariant::fprime: return -gen.second(r);
    default: return -r * gen.second(r);
  }
}

struct GStepEval {
  double loss = 0.0;
  MlpGrads grads;      // generator parameters only
  Eigen::VectorXd r;   // ratio values on the generated batch
};

// Loss and generator gradients with the ratio network frozen: the chain runs
// through the ratio net's input gradient only.
inline GStepEval gstep_eval(const GeneratorModel& model, const RatioModel& ratio,
                            GStepVariant v, const Batch& z) {
  if (z.rows() == 0) throw std::invalid_argument("gstep_eval: empty batch");
  Tape tape_g, tape_r;
  const Batch x = mlp_forward(model.net, z, &tape_g);
  const auto c = detail::clamp_ratio(mlp_forward(ratio.net, x, &tape_r).col(0), ratio.scale());

  GStepEval out;
  out.r = c.r;
  if (!c.r.allFinite()) {  // poisoned batch: report, don't throw
    out.loss = std::numeric_limits<double>::quiet_NaN();
    out.grads = MlpGrads::zeros_like(model.net);
    return out;
  }
  out.loss = gstep_loss(ratio.gen, v, c.r);

  Batch up(z.rows(), 1);
  for (int i = 0; i < z.rows(); ++i)
    up(i, 0) = c.pass(i) * gstep_objective_derivative(ratio.gen, v, c.r(i)) / z.rows();
  const Batch dx = mlp_backward(ratio.net, tape_r, up).inputs;
  out.grads = mlp_backward(model.net, tape_g, dx).params;
  return out;
}

inline UpdateResult gstep_update(GeneratorModel& model, const RatioModel& ratio, Adam& opt,
                                 GStepVariant v, const Batch& z) {
  const GStepEval eval = gstep_eval(model, ratio, v, z);
  UpdateResult res;
  res.loss = eval.loss;
  if (!std::isfinite(eval.loss) || !eval.grads.all_finite()) {
    res.status = StepStatus::nonfinite;
    return res;
  }
  res.grad_norm = std::sqrt(eval.grads.squared_norm());
  adam_step(opt, model.net, eval.grads);
  return res;
}

struct TrainConfig {
  FGen gen = FGen::pearson();
  GStepVariant variant = GStepVariant::f;
  DistSpec dataset;  // required
  std::int64_t steps = 40000;
  int batch = 64;
  double lr = 5e-5;
  double scale = 2.0;
  double relative_alpha = 0.0;
  std::uint64_t seed = 0;
  int log_every = 100;
  int noise_dim = 2;
  std::vector<int> hidden = {64, 64};
};

struct TrainLogRecord {
  std::int64_t step = 0;
  double mean_r_real = 0.0;
  double mean_r_fake = 0.0;
  double dstep_loss = 0.0;
  double gstep_loss = 0.0;
  double div_delta = 0.0;  // plug-in divergence before minus after the G-step, same noise
  std::string flag;        // "", "nan", or "stall"
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  GeneratorModel generator;
  RatioModel ratio;
  bool halted = false;
  std::string halt_flag;
  std::int64_t steps_completed = 0;
};

// Stall detection: D-step gradient norm below this for 100 consecutive steps
// counts as "learning stopped".
inline constexpr double kStallGradNorm = 1e-12;
inline constexpr int kStallPatience = 100;

// Optional observers, invoked as each log record is appended (halt records
// included, distinguishable by their flag).
struct TrainHooks {
  std::function<void(const TrainLogRecord&, const GeneratorModel&, const RatioModel&)> on_log;
};

inline TrainResult train(const TrainConfig& cfg, const TrainHooks* hooks = nullptr) {
  if (cfg.steps < 0 || cfg.batch < 1 || !(cfg.lr > 0.0) || cfg.log_every < 1)
    throw std::invalid_argument("train: bad config");
  if (cfg.dataset.comps.empty() && cfg.dataset.kind != DistSpec::Kind::uniform_box)
    throw std::invalid_argument("train: config needs a dataset");

  std::mt19937_64 rng(cfg.seed);
  const int dx = cfg.dataset.dim();

  TrainResult out{
      {},
      make_generator(cfg.noise_dim, dx, rng, cfg.hidden),
      make_ratio_model(dx, cfg.gen, cfg.scale, cfg.relative_alpha, rng, cfg.hidden),
      false,
      "",
      0};
  Adam opt_d = Adam::like(out.ratio.net, cfg.lr);
  Adam opt_g = Adam::like(out.generator.net, cfg.lr);

  auto notify = [&] {
    if (hooks && hooks->on_log)
      hooks->on_log(out.log.back(), out.generator, out.ratio);
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto halt = [&](std::int64_t step, const char* flag, double dloss, double gloss) {
    out.halted = true;
    out.halt_flag = flag;
    out.log.push_back({step, nan, nan, dloss, gloss, nan, flag});
    notify();
  };

  int stall_run = 0;
  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    const Batch real = sample(cfg.dataset, cfg.batch, rng);
    const Batch z = sample_noise(cfg.batch, cfg.noise_dim, rng);
    const Batch fake = generator_forward(out.generator, z);
    Batch denom;
    if (cfg.relative_alpha > 0.0) {
      denom = relative_mixture_sample(
          [&](int n) { return sample(cfg.dataset, n, rng); },
          [&](int n) {
            return generator_forward(out.generator, sample_noise(n, cfg.noise_dim, rng));
          },
          cfg.relative_alpha, cfg.batch, rng);
    } else {
      denom = fake;
    }

    const UpdateResult d = dstep_update(out.ratio, opt_d, real, denom);
    if (d.status == StepStatus::nonfinite) {
      halt(step, "nan", d.loss, nan);
      break;
    }
    stall_run = d.grad_norm < kStallGradNorm ? stall_run + 1 : 0;
    if (stall_run >= kStallPatience) {
      halt(step, "stall", d.loss, nan);
      break;
    }

    const bool log_now = step % cfg.log_every == 0 || step == cfg.steps;
    double mean_rr = 0.0, mean_rf = 0.0, div_before = 0.0;
    if (log_now) {
      mean_rr = ratio_forward(out.ratio, real).mean();
      const Eigen::VectorXd rf = ratio_forward(out.ratio, fake);
      mean_rf = rf.mean();
      div_before = plugin_divergence(cfg.gen, rf);
    }

    const UpdateResult g = gstep_update(out.generator, out.ratio, opt_g, cfg.variant, z);
    if (g.status == StepStatus::nonfinite) {
      halt(step, "nan", d.loss, g.loss);
      break;
    }

    if (log_now) {
      const double div_after =
          estimate_divergence_plugin(cfg.gen, out.ratio, generator_forward(out.generator, z));
      out.log.push_back(
          {step, mean_rr, mean_rf, d.loss, g.loss, div_before - div_after, ""});
      notify();
    }
    out.steps_completed = step;
  }
  return out;
}

}  // namespace rf
