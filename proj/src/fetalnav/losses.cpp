#include "fetalnav/losses.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/geometry.hpp"

namespace fetalnav {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    if (a.sizes() != b.sizes()) {
        throw ValidationError(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

torch::Tensor bce_loss(const torch::Tensor& probs, const torch::Tensor& target)
{
    require_same_shape(probs, target, "bce_loss");
    const auto p = probs.clamp(kProbClip, 1.0 - kProbClip);
    return -(target * torch::log(p) + (1 - target) * torch::log(1 - p)).mean();
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps)
{
    require_same_shape(probs, target, "dice_loss");
    if (probs.dim() < 2) {
        throw ValidationError("dice_loss expects a leading batch dimension");
    }
    const auto p = probs.flatten(1);
    const auto g = target.flatten(1);
    const auto inter = (p * g).sum(1);
    const auto dice = (2 * inter + eps) / (p.sum(1) + g.sum(1) + eps);
    return (1 - dice).mean();
}

torch::Tensor loss_seg_labeled(const torch::Tensor& probs, const torch::Tensor& target, double eps)
{
    return (dice_loss(probs, target, eps) + bce_loss(probs, target)) / 2;
}

torch::Tensor loss_seg_unlabeled(const torch::Tensor& masks)
{
    if (masks.dim() < 1 || masks.size(0) < 2) {
        throw ValidationError("loss_seg_unlabeled needs at least two pose-paired masks");
    }
    return loss_seg_unlabeled_batched(masks.unsqueeze(0));
}

torch::Tensor loss_seg_unlabeled_batched(const torch::Tensor& groups)
{
    if (groups.dim() < 2 || groups.size(1) < 2) {
        throw ValidationError("loss_seg_unlabeled needs at least two pose-paired masks per group");
    }
    const int64_t n = groups.size(1);
    const auto flat = groups.flatten(2);  // [G,n,P]
    torch::Tensor sum = torch::zeros({groups.size(0)}, groups.options());
    for (int64_t i = 0; i < n - 1; ++i) {
        for (int64_t j = i + 1; j < n; ++j) {
            sum = sum + (flat.select(1, i) - flat.select(1, j)).pow(2).mean(1);
        }
    }
    const double pairs = static_cast<double>(n * (n - 1)) / 2.0;
    return (sum / pairs).mean();
}

torch::Tensor loss_total(const torch::Tensor& seg_labeled, const torch::Tensor& seg_unlabeled,
                         const torch::Tensor& classification, double alpha)
{
    return seg_labeled + alpha * seg_unlabeled + classification;
}

torch::Tensor rot6d_to_matrix_batched(const torch::Tensor& six)
{
    if (six.dim() != 2 || six.size(1) != 6) {
        throw ValidationError("rot6d_to_matrix_batched expects shape [B,6]");
    }
    const auto a1 = six.narrow(1, 0, 3);
    const auto a2 = six.narrow(1, 3, 3);
    const auto n1 = a1.norm(2, 1, true);
    const auto b1 = a1 / n1;
    const auto u2 = a2 - (b1 * a2).sum(1, true) * b1;
    const auto n2 = u2.norm(2, 1, true);
    {
        // Same verdict as the scalar rot6d_to_matrix.
        torch::NoGradGuard ng;
        const auto bad = ~torch::isfinite(six).all(1, true) | (n1 < kDegeneracyTolerance) |
                         (n2 < kDegeneracyTolerance * a2.norm(2, 1, true).clamp_min(1.0));
        if (bad.any().item<bool>()) {
            throw DegenerateRepresentationError("rot6d: degenerate rotation parameters in batch");
        }
    }
    const auto b2 = u2 / n2;
    const auto b3 = torch::cross(b1, b2, 1);
    return torch::stack({b1, b2, b3}, 2);
}

torch::Tensor rotvec_to_matrix_batched(const torch::Tensor& rotvec)
{
    const auto angle = rotvec.norm(2, 1, true);                 // [B,1]
    const auto safe = angle.clamp_min(1e-12);
    const auto k = rotvec / safe;                              // [B,3]
    const auto zeros = torch::zeros_like(k.select(1, 0));
    const auto kx = k.select(1, 0), ky = k.select(1, 1), kz = k.select(1, 2);
    const auto K = torch::stack({zeros, -kz, ky, kz, zeros, -kx, -ky, kx, zeros}, 1).view({-1, 3, 3});
    const auto eye = torch::eye(3, rotvec.options()).expand({rotvec.size(0), 3, 3});
    const auto s = torch::sin(angle).unsqueeze(2);
    const auto c = (1 - torch::cos(angle)).unsqueeze(2);
    return eye + s * K + c * torch::bmm(K, K);
}

PoseLossTerms loss_pose(const torch::Tensor& pred, const torch::Tensor& gt_t, const torch::Tensor& gt_R, double lambda)
{
    if (pred.dim() != 2 || pred.size(1) != 9) {
        throw ValidationError("loss_pose expects predictions of shape [B,9]");
    }
    PoseLossTerms out;
    const auto t_pred = pred.narrow(1, 0, 3);
    const auto R_pred = rot6d_to_matrix_batched(pred.narrow(1, 3, 6));
    out.translation = torch::linalg_vector_norm(t_pred - gt_t, 2, {1}).mean();
    out.rotation = torch::linalg_vector_norm((R_pred - gt_R).flatten(1), 2, {1}).mean();
    out.total = out.rotation + lambda * out.translation;
    return out;
}

}  // namespace fetalnav
