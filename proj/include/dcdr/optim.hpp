#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dcdr/autodiff.hpp"
#include "dcdr/errors.hpp"

namespace dcdr {

enum class OptimizerKind { kAdam, kSgd };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw InvalidArgument("unknown optimizer '" + s + "' (expected adam or sgd)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam (or plain SGD) over a fixed list of parameters.
class Optimizer {
 public:
  Optimizer(std::vector<ad::Param*> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double lr = cfg_.learning_rate;
    if (cfg_.kind == OptimizerKind::kSgd) {
      for (auto* p : params_) p->value -= lr * p->grad;
      return;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<ad::Param*> params_;
  OptimizerConfig cfg_;
  std::vector<ad::Mat> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace dcdr
