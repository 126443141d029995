#pragma once

#include <torch/torch.h>

#include <vector>

namespace fetalnav {

/// conv3x3 → BN → ReLU, twice.
struct ConvBlockImpl : torch::nn::Module {
    ConvBlockImpl(int in, int out);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(ConvBlock);

struct SegOutput {
    torch::Tensor mask_logits;   ///< [B,1,H,W]
    torch::Tensor class_logits;  ///< [B]
};

/// U-Net style encoder/decoder with skip connections and a classification head
/// (global average pool → fully connected → sigmoid) on the deepest features.
/// Input [B,3,H,W] with H, W divisible by 2^(levels-1).
struct SegNetImpl : torch::nn::Module {
    explicit SegNetImpl(std::vector<int> widths);
    SegOutput forward(const torch::Tensor& x);

    std::vector<int> widths;
    torch::nn::ModuleList encoder{nullptr};
    torch::nn::ModuleList up{nullptr};
    torch::nn::ModuleList decoder{nullptr};
    torch::nn::Conv2d seg_head{nullptr};
    torch::nn::Linear cls_head{nullptr};
};
TORCH_MODULE(SegNet);

struct BasicBlockImpl : torch::nn::Module {
    BasicBlockImpl(int in, int out, int stride);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(BasicBlock);

/// 18-layer residual regressor (stem + 4 stages of 2 basic blocks + fc) with a
/// 9-value head: translation (scaled to mm) followed by the six rotation parameters.
struct PoseNetImpl : torch::nn::Module {
    PoseNetImpl(std::vector<int> widths, double translation_scale_mm);
    /// [B,3,H,W] → [B,9]
    torch::Tensor forward(const torch::Tensor& x);

    std::vector<int> widths;
    double translation_scale_mm;
    torch::nn::Sequential stem{nullptr};
    torch::nn::Sequential stages{nullptr};
    torch::nn::Linear fc{nullptr};
};
TORCH_MODULE(PoseNet);

}  // namespace fetalnav
