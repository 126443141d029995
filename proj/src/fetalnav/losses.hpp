#pragma once

#include <torch/torch.h>

namespace fetalnav {

/// Probabilities are clipped to [kProbClip, 1 - kProbClip] before any log.
constexpr double kProbClip = 1e-7;

/// Mean pixelwise binary cross-entropy. `probs` and `target` share a shape.
torch::Tensor bce_loss(const torch::Tensor& probs, const torch::Tensor& target);

/// 1 - (2|P∩G| + eps) / (|P| + |G| + eps), computed per sample over all
/// non-batch dims and averaged over the batch. Shapes [B,...].
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps = 1.0);

/// (Dice + BCE) / 2 on labeled masks.
torch::Tensor loss_seg_labeled(const torch::Tensor& probs, const torch::Tensor& target, double eps = 1.0);

/// Pose-paired consistency: `masks` is [n,...] (n >= 2 predictions of one pose);
/// the mean over the n(n-1)/2 unordered pairs of the per-pair pixel MSE.
torch::Tensor loss_seg_unlabeled(const torch::Tensor& masks);

/// Batched form: `groups` is [G,n,...]; the group losses are averaged.
torch::Tensor loss_seg_unlabeled_batched(const torch::Tensor& groups);

/// Weighted sum; the classification term is passed in already reduced.
inline double loss_total(double seg_labeled, double seg_unlabeled, double classification, double alpha)
{
    return seg_labeled + alpha * seg_unlabeled + classification;
}
torch::Tensor loss_total(const torch::Tensor& seg_labeled, const torch::Tensor& seg_unlabeled,
                         const torch::Tensor& classification, double alpha);

/// Batched Gram-Schmidt: [B,6] → [B,3,3] with columns (b1, b2, b1×b2).
torch::Tensor rot6d_to_matrix_batched(const torch::Tensor& six);

/// Batched Rodrigues formula: [B,3] → [B,3,3].
torch::Tensor rotvec_to_matrix_batched(const torch::Tensor& rotvec);

struct PoseLossTerms {
    torch::Tensor translation;  ///< mean Euclidean distance (mm)
    torch::Tensor rotation;     ///< mean Frobenius distance between matrices
    torch::Tensor total;        ///< rotation + lambda * translation
};

/// `pred` is [B,9] (t', r1..r6); `gt_t` is [B,3]; `gt_R` is [B,3,3].
PoseLossTerms loss_pose(const torch::Tensor& pred, const torch::Tensor& gt_t, const torch::Tensor& gt_R,
                        double lambda);

}  // namespace fetalnav
