#pragma once
// Synthetic distributions: samplers plus closed-form densities, ratios, and
// divergences. These double as training data sources and as oracles for the
// estimator tests.

#include <Eigen/Dense>

#include "rf/fgen.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rf {

using Batch = Eigen::MatrixXd;  // one sample per row

struct GaussianComp {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // diagonal standard deviations
};

// A distribution we can both sample from and evaluate in closed form.
struct DistSpec {
  enum class Kind { gaussian, mixture, ring, uniform_box };

  Kind kind = Kind::gaussian;
  std::vector<double> weights;      // one weight per component
  std::vector<GaussianComp> comps;  // empty for uniform_box
  Eigen::VectorXd lo, hi;           // uniform_box bounds
  std::string text;                 // canonical text form

  int dim() const {
    return kind == Kind::uniform_box ? static_cast<int>(lo.size())
                                     : static_cast<int>(comps.front().mean.size());
  }

  static DistSpec gaussian(Eigen::VectorXd mean, Eigen::VectorXd std) {
    if (mean.size() == 0 || mean.size() != std.size() || (std.array() <= 0.0).any())
      throw std::invalid_argument("gaussian: need matching dims and positive stds");
    DistSpec s;
    s.kind = Kind::gaussian;
    s.weights = {1.0};
    s.comps = {{std::move(mean), std::move(std)}};
    s.text = "gaussian";
    if (s.comps[0].mean.size() == 1) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "gauss1d:%g:%g", s.comps[0].mean(0), s.comps[0].std(0));
      s.text = buf;
    }
    return s;
  }

  static DistSpec mixture(std::vector<double> weights, std::vector<GaussianComp> comps) {
    if (weights.empty() || weights.size() != comps.size())
      throw std::invalid_argument("mixture: need one weight per component");
    double total = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw std::invalid_argument("mixture: weights must be positive");
      total += w;
    }
    for (double& w : weights) w /= total;
    const int d = static_cast<int>(comps.front().mean.size());
    for (const auto& c : comps)
      if (c.mean.size() != d || c.std.size() != d || (c.std.array() <= 0.0).any())
        throw std::invalid_argument("mixture: inconsistent component");
    DistSpec s;
    s.kind = Kind::mixture;
    s.weights = std::move(weights);
    s.comps = std::move(comps);
    s.text = "mixture";
    return s;
  }

  static DistSpec ring(int k, double radius, double std) {
    if (k < 1 || !(radius > 0.0) || !(std > 0.0))
      throw std::invalid_argument("ring: need k >= 1, radius > 0, std > 0");
    std::vector<double> w(static_cast<size_t>(k), 1.0 / k);
    std::vector<GaussianComp> comps;
    for (int j = 0; j < k; ++j) {
      const double angle = 2.0 * M_PI * j / k;
      Eigen::VectorXd mean(2), sd(2);
      mean << radius * std::cos(angle), radius * std::sin(angle);
      sd << std, std;
      comps.push_back({mean, sd});
    }
    DistSpec s;
    s.kind = Kind::ring;
    s.weights = std::move(w);
    s.comps = std::move(comps);
    char buf[64];
    std::snprintf(buf, sizeof buf, "ring:%d:%g:%g", k, radius, std);
    s.text = buf;
    return s;
  }

  static DistSpec uniform_box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    if (lo.size() == 0 || lo.size() != hi.size() || (lo.array() >= hi.array()).any())
      throw std::invalid_argument("uniform_box: need lo < hi elementwise");
    DistSpec s;
    s.kind = Kind::uniform_box;
    s.lo = std::move(lo);
    s.hi = std::move(hi);
    s.text = "uniform-box";
    return s;
  }

  // Text forms: "gauss2d", "gauss1d:<mu>:<sigma>", "ring:<k>:<r>:<std>"
  // (bare "ring" and "mixture8" mean the canonical ring:8:2.0:0.02).
  static DistSpec parse(std::string_view text) {
    std::string low(text);
    for (char& c : low) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::vector<std::string> parts;
    for (size_t pos = 0; pos <= low.size();) {
      const size_t next = low.find(':', pos);
      if (next == std::string::npos) {
        parts.push_back(low.substr(pos));
        break;
      }
      parts.push_back(low.substr(pos, next - pos));
      pos = next + 1;
    }
    auto num = [&](size_t i) {
      size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(parts.at(i), &used);
      } catch (const std::exception&) {
        throw std::invalid_argument("bad dataset spec: " + std::string(text));
      }
      if (used != parts[i].size())
        throw std::invalid_argument("bad dataset spec: " + std::string(text));
      return v;
    };

    DistSpec s;
    if (low == "gauss2d") {
      Eigen::VectorXd mean(2), sd(2);
      mean << 1.0, 1.0;
      sd << 1.0, 1.0;
      s = gaussian(mean, sd);
    } else if (parts[0] == "gauss1d" && parts.size() == 3) {
      Eigen::VectorXd mean(1), sd(1);
      mean << num(1);
      sd << num(2);
      s = gaussian(mean, sd);
    } else if (low == "ring" || low == "mixture8") {
      s = ring(8, 2.0, 0.02);
    } else if (parts[0] == "ring" && parts.size() == 4) {
      const double k = num(1);
      if (k != std::floor(k) || k < 1)
        throw std::invalid_argument("bad dataset spec: " + std::string(text));
      s = ring(static_cast<int>(k), num(2), num(3));
    } else {
      throw std::invalid_argument("unknown dataset spec: " + std::string(text));
    }
    s.text = low;
    return s;
  }
};

namespace detail {

inline double log_gaussian(const GaussianComp& g, const Eigen::RowVectorXd& x) {
  const Eigen::ArrayXd z = (x.transpose() - g.mean).array() / g.std.array();
  return -0.5 * z.square().sum() - g.std.array().log().sum() -
         0.5 * g.mean.size() * std::log(2.0 * M_PI);
}

}  // namespace detail

// Log density, computed in log space so tail ratios stay finite.
inline double log_density(const DistSpec& s, const Eigen::RowVectorXd& x) {
  if (x.size() != s.dim()) throw std::invalid_argument("log_density: dimension mismatch");
  if (s.kind == DistSpec::Kind::uniform_box) {
    if ((x.transpose().array() < s.lo.array()).any() ||
        (x.transpose().array() > s.hi.array()).any())
      return -std::numeric_limits<double>::infinity();
    return -(s.hi - s.lo).array().log().sum();
  }
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(s.comps.size());
  for (size_t i = 0; i < s.comps.size(); ++i) {
    terms[i] = std::log(s.weights[i]) + detail::log_gaussian(s.comps[i], x);
    best = std::max(best, terms[i]);
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

inline Eigen::VectorXd log_density(const DistSpec& s, const Batch& x) {
  Eigen::VectorXd out(x.rows());
  for (int i = 0; i < x.rows(); ++i) out(i) = log_density(s, Eigen::RowVectorXd(x.row(i)));
  return out;
}

inline Batch sample(const DistSpec& s, int n, std::mt19937_64& rng) {
  if (n < 1) throw std::invalid_argument("sample: need n >= 1");
  const int d = s.dim();
  Batch out(n, d);
  if (s.kind == DistSpec::Kind::uniform_box) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) out(i, j) = s.lo(j) + (s.hi(j) - s.lo(j)) * u01(rng);
    return out;
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    size_t c = 0;
    if (s.comps.size() > 1) {
      double t = u01(rng);
      while (c + 1 < s.comps.size() && t > s.weights[c]) t -= s.weights[c], ++c;
    }
    for (int j = 0; j < d; ++j)
      out(i, j) = s.comps[c].mean(j) + s.comps[c].std(j) * gauss(rng);
  }
  return out;
}

// Exact density ratio p(x)/q(x).
inline double analytic_ratio(const DistSpec& p, const DistSpec& q, const Eigen::RowVectorXd& x) {
  const double lq = log_density(q, x);
  if (std::exp(lq) == 0.0) throw std::domain_error("analytic_ratio: q(x) underflows");
  return std::exp(log_density(p, x) - lq);
}

// Relative density ratio p/(a*p + (1-a)*q); bounded above by 1/a for a > 0.
inline double analytic_relative_ratio(const DistSpec& p, const DistSpec& q, double a,
                                      const Eigen::RowVectorXd& x) {
  if (!(a >= 0.0 && a < 1.0))
    throw std::invalid_argument("analytic_relative_ratio: need 0 <= a < 1");
  const double lq = log_density(q, x);
  if (std::exp(lq) == 0.0) throw std::domain_error("analytic_relative_ratio: q(x) underflows");
  const double lp = log_density(p, x);
  return 1.0 / (a + (1.0 - a) * std::exp(lq - lp));
}

// Finite support with strictly positive pmfs; oracle scaffolding for the
// variational identity tests.
struct DiscretePair {
  Eigen::VectorXd p, q;

  DiscretePair(Eigen::VectorXd p_in, Eigen::VectorXd q_in)
      : p(std::move(p_in)), q(std::move(q_in)) {
    if (p.size() == 0 || p.size() != q.size())
      throw std::invalid_argument("DiscretePair: need matching nonempty supports");
    if ((p.array() <= 0.0).any() || (q.array() <= 0.0).any())
      throw std::invalid_argument("DiscretePair: entries must be positive");
    if (std::abs(p.sum() - 1.0) > 1e-12 || std::abs(q.sum() - 1.0) > 1e-12)
      throw std::invalid_argument("DiscretePair: pmfs must sum to 1");
  }

  int size() const { return static_cast<int>(p.size()); }
  Eigen::VectorXd ratio() const { return (p.array() / q.array()).matrix(); }
};

// D_f(p||q) = sum_x q(x) f(p(x)/q(x)) by direct enumeration.
inline double brute_force_divergence(const DiscretePair& pair, const FGen& gen) {
  double acc = 0.0;
  for (int i = 0; i < pair.size(); ++i) acc += pair.q(i) * gen.value(pair.p(i) / pair.q(i));
  return acc;
}

// Closed-form KL between diagonal Gaussians.
inline double analytic_kl_gaussians(const DistSpec& p, const DistSpec& q) {
  if (p.kind != DistSpec::Kind::gaussian || q.kind != DistSpec::Kind::gaussian)
    throw std::invalid_argument("analytic_kl_gaussians: needs single Gaussians");
  if (p.dim() != q.dim()) throw std::invalid_argument("analytic_kl_gaussians: dim mismatch");
  const auto& a = p.comps[0];
  const auto& b = q.comps[0];
  double acc = 0.0;
  for (int i = 0; i < p.dim(); ++i) {
    const double vp = a.std(i) * a.std(i);
    const double vq = b.std(i) * b.std(i);
    const double dm = a.mean(i) - b.mean(i);
    acc += std::log(b.std(i) / a.std(i)) + (vp + dm * dm) / (2.0 * vq) - 0.5;
  }
  return acc;
}

// Headerless CSV, one point per row, 17 significant digits (lossless).
inline void write_points_csv(const std::string& path, const Batch& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  char buf[64];
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

inline Batch read_points_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      size_t used = 0;
      row.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::runtime_error("bad CSV cell in " + path);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("ragged CSV rows in " + path);
    rows.push_back(std::move(row));
  }
  Batch out(static_cast<int>(rows.size()), rows.empty() ? 0 : static_cast<int>(rows[0].size()));
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) = rows[i][j];
  return out;
}

}  // namespace rf
