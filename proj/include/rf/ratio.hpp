#pragma once
// The D-step: fit a ratio network r_theta to p/q (or to the relative ratio
// p/(a*p+(1-a)*q)) by minimizing the empirical Bregman objective
//   BR(r) = mean_fake[ r f'(r) - f(r) ] - mean_real[ f'(r) ],
// plus the divergence estimators built from a fitted ratio.

#include "rf/data.hpp"
#include "rf/fgen.hpp"
#include "rf/net.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace rf {

// Keep ratio values strictly inside the sigmoid's open range before they hit
// log/reciprocal terms; the floor matches clamp_positive's.
inline constexpr double kRatioCeilMargin = 1e-9;

struct RatioModel {
  Mlp net;  // final activation scaled_sigmoid(C)
  FGen gen;
  double relative_alpha = 0.0;

  double scale() const { return net.layers.back().act_param; }
};

inline RatioModel make_ratio_model(int dim, const FGen& gen, double scale,
                                   double relative_alpha, std::mt19937_64& rng,
                                   const std::vector<int>& hidden = {64, 64}) {
  if (!(scale > 0.0)) throw std::invalid_argument("ratio model: scale must be positive");
  if (!(relative_alpha >= 0.0 && relative_alpha < 1.0))
    throw std::invalid_argument("ratio model: relative_alpha must be in [0,1)");
  return RatioModel{make_mlp(dim, hidden, 1, Act::scaled_sigmoid, scale, rng), gen,
                    relative_alpha};
}

namespace detail {

struct ClampedRatio {
  Eigen::VectorXd r;     // values in [floor, C - margin]
  Eigen::ArrayXd pass;   // 1 where the clamp was inactive, else 0
};

inline ClampedRatio clamp_ratio(const Eigen::VectorXd& raw, double scale) {
  const double lo = kRatioFloor;
  const double hi = scale - kRatioCeilMargin;
  ClampedRatio out;
  out.r.resize(raw.size());
  out.pass.resize(raw.size());
  for (int i = 0; i < raw.size(); ++i) {
    const double v = raw(i);
    if (std::isnan(v)) {  // propagate so the stability guards see it
      out.r(i) = v;
      out.pass(i) = 0.0;
    } else {
      out.r(i) = std::min(std::max(v, lo), hi);
      out.pass(i) = v > lo && v < hi ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace detail

inline Eigen::VectorXd ratio_forward(const RatioModel& model, const Batch& x) {
  return detail::clamp_ratio(mlp_forward(model.net, x).col(0), model.scale()).r;
}

// Empirical Bregman objective; "fake" rows come from the denominator
// distribution (generated samples, or the mixture when relative_alpha > 0).
inline double dstep_loss(const FGen& gen, const Eigen::VectorXd& r_real,
                         const Eigen::VectorXd& r_fake) {
  if (r_real.size() == 0 || r_fake.size() == 0)
    throw std::invalid_argument("dstep_loss: empty batch");
  const double fake_term =
      r_fake.unaryExpr([&](double r) { return gen.conjugate_of_prime(r); }).mean();
  const double real_term = r_real.unaryExpr([&](double r) { return gen.prime(r); }).mean();
  return fake_term - real_term;
}

struct DStepEval {
  double loss = 0.0;
  MlpGrads grads;
  Eigen::VectorXd r_real, r_fake;
};

// Loss and parameter gradients in one pass. d/dr of the fake integrand is
// r f''(r); of the real integrand, f''(r).
inline DStepEval dstep_eval(const RatioModel& model, const Batch& real, const Batch& fake) {
  if (real.rows() == 0 || fake.rows() == 0)
    throw std::invalid_argument("dstep_eval: empty batch");
  DStepEval out;

  Tape tape_real, tape_fake;
  const auto cr = detail::clamp_ratio(mlp_forward(model.net, real, &tape_real).col(0),
                                      model.scale());
  const auto cf = detail::clamp_ratio(mlp_forward(model.net, fake, &tape_fake).col(0),
                                      model.scale());
  out.r_real = cr.r;
  out.r_fake = cf.r;
  if (!cr.r.allFinite() || !cf.r.allFinite()) {  // poisoned batch: report, don't throw
    out.loss = std::numeric_limits<double>::quiet_NaN();
    out.grads = MlpGrads::zeros_like(model.net);
    return out;
  }
  out.loss = dstep_loss(model.gen, cr.r, cf.r);

  Batch up_fake(fake.rows(), 1), up_real(real.rows(), 1);
  for (int i = 0; i < fake.rows(); ++i) {
    const double r = cf.r(i);
    up_fake(i, 0) = cf.pass(i) * r * model.gen.second(r) / fake.rows();
  }
  for (int i = 0; i < real.rows(); ++i)
    up_real(i, 0) = -cr.pass(i) * model.gen.second(cr.r(i)) / real.rows();

  out.grads = mlp_backward(model.net, tape_fake, up_fake).params;
  out.grads.add(mlp_backward(model.net, tape_real, up_real).params);
  return out;
}

enum class StepStatus { ok, nonfinite };

struct UpdateResult {
  StepStatus status = StepStatus::ok;
  double loss = 0.0;
  double grad_norm = 0.0;
};

// One Adam move on the ratio parameters; non-finite loss or gradients leave
// the model untouched and are reported as a stability event.
inline UpdateResult dstep_update(RatioModel& model, Adam& opt, const Batch& real,
                                 const Batch& fake) {
  const DStepEval eval = dstep_eval(model, real, fake);
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

// Denominator batch for the relative ratio: each row is real with
// probability a, generated otherwise. Bernoulli draws happen first so the
// stream stays deterministic regardless of the samplers' internals.
template <class RealSampler, class FakeSampler>
Batch relative_mixture_sample(RealSampler&& real, FakeSampler&& fake, double a, int B,
                              std::mt19937_64& rng) {
  if (!(a >= 0.0 && a <= 1.0))
    throw std::invalid_argument("relative_mixture_sample: need 0 <= a <= 1");
  if (B < 1) throw std::invalid_argument("relative_mixture_sample: need B >= 1");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<char> from_real(static_cast<size_t>(B));
  int n_real = 0;
  for (int i = 0; i < B; ++i) {
    from_real[static_cast<size_t>(i)] = u01(rng) < a;
    n_real += from_real[static_cast<size_t>(i)];
  }
  const Batch rb = n_real > 0 ? real(n_real) : Batch();
  const Batch fb = B - n_real > 0 ? fake(B - n_real) : Batch();
  const int d = n_real > 0 ? static_cast<int>(rb.cols()) : static_cast<int>(fb.cols());
  Batch out(B, d);
  int ir = 0, jf = 0;
  for (int i = 0; i < B; ++i)
    out.row(i) = from_real[static_cast<size_t>(i)] ? rb.row(ir++) : fb.row(jf++);
  return out;
}

// Plug-in estimate: mean f(r) over generated samples.
inline double plugin_divergence(const FGen& gen, const Eigen::VectorXd& r) {
  if (r.size() == 0) throw std::invalid_argument("plugin_divergence: empty batch");
  return r.unaryExpr([&](double v) { return gen.value(v); }).mean();
}

// Variational estimate: the negated Bregman objective, a lower bound on
// D_f(p||q) that is tight at the exact ratio.
inline double variational_divergence(const FGen& gen, const Eigen::VectorXd& r_real,
                                     const Eigen::VectorXd& r_fake) {
  return -dstep_loss(gen, r_real, r_fake);
}

inline double estimate_divergence_plugin(const FGen& gen, const RatioModel& model,
                                         const Batch& fake) {
  return plugin_divergence(gen, ratio_forward(model, fake));
}

inline double estimate_divergence_variational(const FGen& gen, const RatioModel& model,
                                              const Batch& real, const Batch& fake) {
  return variational_divergence(gen, ratio_forward(model, real), ratio_forward(model, fake));
}

// Expectation-weighted counterparts on finite supports (enumeration oracles).
inline double discrete_plugin_value(const FGen& gen, const DiscretePair& pair,
                                    const Eigen::VectorXd& r) {
  double acc = 0.0;
  for (int i = 0; i < pair.size(); ++i) acc += pair.q(i) * gen.value(r(i));
  return acc;
}

inline double discrete_variational_value(const FGen& gen, const DiscretePair& pair,
                                         const Eigen::VectorXd& r) {
  double acc = 0.0;
  for (int i = 0; i < pair.size(); ++i)
    acc += pair.p(i) * gen.prime(r(i)) - pair.q(i) * gen.conjugate_of_prime(r(i));
  return acc;
}

struct FitConfig {
  FGen gen = FGen::pearson();
  int steps = 4000;
  int batch = 128;
  double lr = 1e-3;
  double scale = 2.0;
  double relative_alpha = 0.0;
  std::vector<int> hidden = {64, 64};
};

// D-step-only training over fixed sample sets: minibatch SGD with
// replacement, one Adam move per step.
inline RatioModel fit_ratio(const FitConfig& cfg, const Batch& real_pts, const Batch& fake_pts,
                            std::mt19937_64& rng) {
  if (real_pts.rows() == 0 || fake_pts.rows() == 0 || real_pts.cols() != fake_pts.cols())
    throw std::invalid_argument("fit_ratio: need nonempty point sets of equal dimension");
  if (cfg.steps < 0 || cfg.batch < 1 || !(cfg.lr > 0.0))
    throw std::invalid_argument("fit_ratio: bad config");

  RatioModel model = make_ratio_model(static_cast<int>(real_pts.cols()), cfg.gen, cfg.scale,
                                      cfg.relative_alpha, rng, cfg.hidden);
  Adam opt = Adam::like(model.net, cfg.lr);
  std::uniform_int_distribution<int> pick_real(0, static_cast<int>(real_pts.rows()) - 1);
  std::uniform_int_distribution<int> pick_fake(0, static_cast<int>(fake_pts.rows()) - 1);

  auto draw_real = [&](int n) {
    Batch b(n, real_pts.cols());
    for (int i = 0; i < n; ++i) b.row(i) = real_pts.row(pick_real(rng));
    return b;
  };
  auto draw_fake = [&](int n) {
    Batch b(n, fake_pts.cols());
    for (int i = 0; i < n; ++i) b.row(i) = fake_pts.row(pick_fake(rng));
    return b;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const Batch real = draw_real(cfg.batch);
    const Batch denom = cfg.relative_alpha > 0.0
                            ? relative_mixture_sample(draw_real, draw_fake,
                                                      cfg.relative_alpha, cfg.batch, rng)
                            : draw_fake(cfg.batch);
    dstep_update(model, opt, real, denom);
  }
  return model;
}

}  // namespace rf
