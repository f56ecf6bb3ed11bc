#include "taxpref/reward_math.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace taxpref::reward {

namespace {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw std::domain_error(std::string("non-finite ") + what);
  }
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double neg_log_sigmoid(double x) {
  // -log sigma(x) = max(-x, 0) + log(1 + exp(-|x|))
  return std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double range_penalty(const RewardPair& p, double R) {
  require_finite(p.r_w, "r_w");
  require_finite(p.r_l, "r_l");
  if (R <= 0.0) throw std::domain_error("R must be positive");
  double a = hinge(p.r_w - R);
  double b = hinge(-p.r_w - R);
  double c = hinge(p.r_l - R);
  double d = hinge(-p.r_l - R);
  return a * a + b * b + c * c + d * d;
}

double pairwise_loss(const RewardPair& p, const LossParams& params) {
  require_finite(p.r_w, "r_w");
  require_finite(p.r_l, "r_l");
  if (params.lambda < 0.0) throw std::domain_error("lambda must be >= 0");
  return neg_log_sigmoid(p.r_w - p.r_l) + params.lambda * range_penalty(p, params.R);
}

LossGrad pairwise_loss_grad(const RewardPair& p, const LossParams& params) {
  require_finite(p.r_w, "r_w");
  require_finite(p.r_l, "r_l");
  if (params.lambda < 0.0) throw std::domain_error("lambda must be >= 0");
  if (params.R <= 0.0) throw std::domain_error("R must be positive");
  double delta = p.r_w - p.r_l;
  // d/dx of -log sigma(x) is -(1 - sigma(x)) = -sigma(-x)
  double s = sigmoid(-delta);
  LossGrad g;
  g.d_r_w = -s + params.lambda * 2.0 * (hinge(p.r_w - params.R) - hinge(-p.r_w - params.R));
  g.d_r_l = s + params.lambda * 2.0 * (hinge(p.r_l - params.R) - hinge(-p.r_l - params.R));
  return g;
}

double batch_loss(std::span<const RewardPair> pairs, const LossParams& params) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const RewardPair& p : pairs) sum += pairwise_loss(p, params);
  return sum / static_cast<double>(pairs.size());
}

}  // namespace taxpref::reward
