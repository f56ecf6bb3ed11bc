#pragma once

#include <span>

namespace taxpref::reward {

/// Scalar rewards of the preferred and less-preferred response of one pair.
struct RewardPair {
  double r_w = 0.0;
  double r_l = 0.0;
};

/// Hyperparameters of the training loss: reward bound R (> 0) and the
/// auxiliary penalty weight lambda (>= 0).
struct LossParams {
  double R = 5.0;
  double lambda = 0.05;
};

struct LossGrad {
  double d_r_w = 0.0;
  double d_r_l = 0.0;
};

// Squared-hinge penalty keeping both rewards inside [-R, R]:
//   max(0, r_w - R)^2 + max(0, -r_w - R)^2
// + max(0, r_l - R)^2 + max(0, -r_l - R)^2
// Non-negative everywhere, zero exactly when both rewards are in range.
double range_penalty(const RewardPair& p, double R);

// -log sigma(r_w - r_l) + lambda * range_penalty. The log-sigmoid is
// computed as max(-x, 0) + log1p(exp(-|x|)), stable for |x| up to 1e6+.
double pairwise_loss(const RewardPair& p, const LossParams& params);

// Analytic gradient of pairwise_loss w.r.t. (r_w, r_l).
LossGrad pairwise_loss_grad(const RewardPair& p, const LossParams& params);

// Mean per-sample loss over a batch; the per-sample functions above are the
// tested core.
double batch_loss(std::span<const RewardPair> pairs, const LossParams& params);

double neg_log_sigmoid(double x);
double sigmoid(double x);

}  // namespace taxpref::reward
