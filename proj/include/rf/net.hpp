#pragma once

// Minimal dense feed-forward network in double precision: forward with an
// activation tape, exact reverse-mode gradients (parameters and inputs),
// and a bias-corrected Adam optimizer. Batches are row-major: one sample
// per row.

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace rf {

using Batch = Eigen::MatrixXd;  // B x d, one sample per row

enum class Act { linear, relu, leaky_relu, sigmoid, scaled_sigmoid, tanh_fn };

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Layer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
  Act act = Act::linear;
  double act_param = 0.0;  // leaky slope or sigmoid scale

  int in_dim() const { return static_cast<int>(w.cols()); }
  int out_dim() const { return static_cast<int>(w.rows()); }
};

struct Mlp {
  std::vector<Layer> layers;

  int input_dim() const { return layers.front().in_dim(); }
  int output_dim() const { return layers.back().out_dim(); }
};

// Xavier-uniform weights, zero biases.
inline Layer make_layer(int in, int out, Act act, double act_param, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-s, s);
  Layer layer;
  layer.w.resize(out, in);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < in; ++j) layer.w(i, j) = u(rng);
  layer.b = Eigen::VectorXd::Zero(out);
  layer.act = act;
  layer.act_param = act_param;
  return layer;
}

// Hidden layers all share one activation; the head gets its own.
inline Mlp make_mlp(int in, const std::vector<int>& hidden, int out, Act out_act,
                    double out_param, std::mt19937_64& rng, Act hidden_act = Act::leaky_relu,
                    double hidden_param = 0.2) {
  Mlp net;
  int prev = in;
  for (int h : hidden) {
    net.layers.push_back(make_layer(prev, h, hidden_act, hidden_param, rng));
    prev = h;
  }
  net.layers.push_back(make_layer(prev, out, out_act, out_param, rng));
  return net;
}

inline double act_forward(double z, Act act, double p) {
  switch (act) {
    case Act::linear: return z;
    case Act::relu: return z > 0.0 ? z : 0.0;
    case Act::leaky_relu: return z > 0.0 ? z : p * z;
    case Act::sigmoid: return stable_sigmoid(z);
    case Act::scaled_sigmoid: return p * stable_sigmoid(z);
    case Act::tanh_fn: return std::tanh(z);
  }
  return z;
}

inline double act_grad(double z, Act act, double p) {
  switch (act) {
    case Act::linear: return 1.0;
    case Act::relu: return z > 0.0 ? 1.0 : 0.0;
    case Act::leaky_relu: return z > 0.0 ? 1.0 : p;
    case Act::sigmoid: {
      const double s = stable_sigmoid(z);
      return s * (1.0 - s);
    }
    case Act::scaled_sigmoid: {
      const double s = stable_sigmoid(z);
      return p * s * (1.0 - s);
    }
    case Act::tanh_fn: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

// Pre-activations and layer inputs retained for the backward pass.
struct Tape {
  std::vector<Batch> inputs;
  std::vector<Batch> preacts;
};

inline Batch mlp_forward(const Mlp& net, const Batch& x, Tape* tape = nullptr) {
  if (x.cols() != net.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  if (tape) {
    tape->inputs.clear();
    tape->preacts.clear();
  }
  Batch a = x;
  for (const Layer& layer : net.layers) {
    Batch z = a * layer.w.transpose();
    z.rowwise() += layer.b.transpose();
    if (tape) {
      tape->inputs.push_back(std::move(a));
      tape->preacts.push_back(z);
    }
    a = z.unaryExpr([&](double v) { return act_forward(v, layer.act, layer.act_param); });
  }
  return a;
}

// Gradient accumulators shaped like an Mlp's parameters.
struct MlpGrads {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  static MlpGrads zeros_like(const Mlp& net) {
    MlpGrads g;
    for (const Layer& l : net.layers) {
      g.w.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
      g.b.push_back(Eigen::VectorXd::Zero(l.b.size()));
    }
    return g;
  }

  void add(const MlpGrads& other) {
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] += other.w[i];
      b[i] += other.b[i];
    }
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& m : w) s += m.squaredNorm();
    for (const auto& v : b) s += v.squaredNorm();
    return s;
  }

  bool all_finite() const {
    for (const auto& m : w)
      if (!m.allFinite()) return false;
    for (const auto& v : b)
      if (!v.allFinite()) return false;
    return true;
  }
};

struct BackwardResult {
  MlpGrads params;
  Batch inputs;  // d(sum(upstream . output)) / d(input)
};

// Exact gradients of sum(upstream .* output) with respect to every
// parameter and to the network input.
inline BackwardResult mlp_backward(const Mlp& net, const Tape& tape, const Batch& upstream) {
  if (tape.inputs.size() != net.layers.size())
    throw std::invalid_argument("mlp_backward: tape does not match network");
  if (upstream.rows() != tape.preacts.back().rows() ||
      upstream.cols() != tape.preacts.back().cols())
    throw std::invalid_argument("mlp_backward: upstream shape mismatch");

  BackwardResult res;
  res.params = MlpGrads::zeros_like(net);
  Batch u = upstream;
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const Layer& layer = net.layers[li];
    const Batch& z = tape.preacts[li];
    Batch gz = u.cwiseProduct(z.unaryExpr(
        [&](double v) { return act_grad(v, layer.act, layer.act_param); }));
    res.params.w[li] = gz.transpose() * tape.inputs[li];
    res.params.b[li] = gz.colwise().sum().transpose();
    u = gz * layer.w;
  }
  res.inputs = std::move(u);
  return res;
}

// Bias-corrected Adam.
struct Adam {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;

  static Adam like(const Mlp& net, double lr) {
    Adam a;
    a.lr = lr;
    for (const Layer& l : net.layers) {
      a.mw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
      a.vw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
      a.mb.push_back(Eigen::VectorXd::Zero(l.b.size()));
      a.vb.push_back(Eigen::VectorXd::Zero(l.b.size()));
    }
    return a;
  }
};

inline void adam_step(Adam& state, Mlp& net, const MlpGrads& grads) {
  if (state.mw.size() != net.layers.size())
    throw std::invalid_argument("adam_step: state does not match network");
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < net.layers.size(); ++i) {
    auto update = [&](auto& m, auto& v, auto& p, const auto& g) {
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v.array() = state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square();
      p.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    };
    update(state.mw[i], state.vw[i], net.layers[i].w, grads.w[i]);
    update(state.mb[i], state.vb[i], net.layers[i].b, grads.b[i]);
  }
}

}  // namespace rf
