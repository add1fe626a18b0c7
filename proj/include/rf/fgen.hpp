#pragma once

// Closed-form f-divergence generators: the alpha family and the power
// (beta) family, their first two derivatives, the composed conjugate
// f*(f'(r)) = r f'(r) - f(r), and the pointwise Bregman divergence.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rf {

// Arguments below this are clamped before evaluation; the log/reciprocal
// branches are singular at 0.
inline constexpr double kRatioFloor = 1e-6;

inline double clamp_positive(double r) {
  if (!(r > 0.0)) throw std::domain_error("f-generator argument must be positive");
  return r < kRatioFloor ? kRatioFloor : r;
}

// A convex generator f with f(1) = 0 and f'(1) = 0, so the induced
// divergence is valid on unnormalized measures.
class FGen {
 public:
  enum class Family { alpha, power };

  static FGen kl() { return FGen(Family::alpha, 1.0, Branch::kl, "kl"); }
  static FGen pearson() { return FGen(Family::alpha, 3.0, Branch::alpha_generic, "pearson"); }
  static FGen reversed_kl() { return FGen(Family::alpha, -1.0, Branch::rkl, "rkl"); }

  // The generic alpha formula loses all precision near its removable
  // singularities, so a in (1 +- 1e-3) and (-1 +- 1e-3) is routed to the
  // dedicated closed forms.
  static FGen alpha(double a) {
    if (std::abs(a - 1.0) < kAlphaSnap) return kl();
    if (std::abs(a + 1.0) < kAlphaSnap) return reversed_kl();
    if (a == 3.0) return pearson();
    return FGen(Family::alpha, a, Branch::alpha_generic, "alpha:" + format_param(a));
  }

  static FGen power(double b) {
    if (std::abs(b) < 1e-9 || std::abs(b + 1.0) < 1e-9)
      throw std::invalid_argument("power divergence requires beta != 0 and beta != -1");
    return FGen(Family::power, b, Branch::power, "power:" + format_param(b));
  }

  static FGen power() { return power(0.5); }

  // Accepts kl | pearson | rkl | alpha:<a> | power:<b>, case-insensitive.
  static FGen parse(std::string_view text) {
    std::string s(text);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "kl") return kl();
    if (s == "pearson") return pearson();
    if (s == "rkl") return reversed_kl();
    auto colon = s.find(':');
    if (colon != std::string::npos) {
      const std::string head = s.substr(0, colon);
      const std::string arg = s.substr(colon + 1);
      try {
        size_t used = 0;
        const double v = std::stod(arg, &used);
        if (used == arg.size()) {
          if (head == "alpha") return alpha(v);
          if (head == "power") return power(v);
        }
      } catch (const std::invalid_argument&) {
      } catch (const std::out_of_range&) {
      }
    }
    if (s == "power") return power();
    throw std::invalid_argument("unknown divergence '" + std::string(text) +
                                "' (expected kl|pearson|rkl|alpha:<a>|power:<b>)");
  }

  Family family() const { return family_; }
  double param() const { return param_; }
  const std::string& name() const { return name_; }

  double value(double r) const {
    r = clamp_positive(r);
    switch (branch_) {
      case Branch::kl:
        return r * std::log(r) - r + 1.0;
      case Branch::rkl:
        return -std::log(r) + r - 1.0;
      case Branch::alpha_generic: {
        const double a = param_;
        return 4.0 / (1.0 - a * a) * (1.0 - std::pow(r, 0.5 * (1.0 + a))) +
               2.0 / (1.0 - a) * (r - 1.0);
      }
      case Branch::power: {
        const double b = param_;
        return (std::pow(r, b + 1.0) - (b + 1.0) * r + b) / (b * (b + 1.0));
      }
    }
    return 0.0;  // unreachable
  }

  double prime(double r) const {
    r = clamp_positive(r);
    switch (branch_) {
      case Branch::kl:
        return std::log(r);
      case Branch::rkl:
        return 1.0 - 1.0 / r;
      case Branch::alpha_generic: {
        const double a = param_;
        return 2.0 / (1.0 - a) * (1.0 - std::pow(r, 0.5 * (a - 1.0)));
      }
      case Branch::power:
        return (std::pow(r, param_) - 1.0) / param_;
    }
    return 0.0;
  }

  double second(double r) const {
    r = clamp_positive(r);
    switch (branch_) {
      case Branch::kl:
        return 1.0 / r;
      case Branch::rkl:
        return 1.0 / (r * r);
      case Branch::alpha_generic:
        return std::pow(r, 0.5 * (param_ - 3.0));
      case Branch::power:
        return std::pow(r, param_ - 1.0);
    }
    return 0.0;
  }

  // f*(f'(r)) = r f'(r) - f(r), the per-sample fake-batch term of the
  // Bregman ratio objective. Evaluated from per-family simplifications so
  // tests can cross-check it against the composed form.
  double conjugate_of_prime(double r) const {
    r = clamp_positive(r);
    switch (branch_) {
      case Branch::kl:
        return r - 1.0;
      case Branch::rkl:
        return std::log(r);
      case Branch::alpha_generic: {
        const double a = param_;
        return 2.0 * (std::pow(r, 0.5 * (1.0 + a)) - 1.0) / (1.0 + a);
      }
      case Branch::power:
        return (std::pow(r, param_ + 1.0) - 1.0) / (param_ + 1.0);
    }
    return 0.0;
  }

  // B_f(r_true || r_model); nonnegative, zero iff the arguments coincide.
  double bregman(double r_true, double r_model) const {
    r_true = clamp_positive(r_true);
    r_model = clamp_positive(r_model);
    return value(r_true) - value(r_model) - prime(r_model) * (r_true - r_model);
  }

 private:
  enum class Branch { kl, rkl, alpha_generic, power };

  static constexpr double kAlphaSnap = 1e-3;

  FGen(Family family, double param, Branch branch, std::string name)
      : family_(family), param_(param), branch_(branch), name_(std::move(name)) {}

  static std::string format_param(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

  Family family_;
  double param_;
  Branch branch_;
  std::string name_;
};

}  // namespace rf
