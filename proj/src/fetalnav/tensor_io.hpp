#pragma once

#include "fetalnav/volume.hpp"

#include <torch/torch.h>

#include <vector>

namespace fetalnav {

/// Grayscale images → [B,3,H,W] float tensor with the channel replicated.
torch::Tensor images_to_tensor(const std::vector<const Image*>& images);
torch::Tensor images_to_tensor(const std::vector<Image>& images);

/// Binary masks → [B,1,H,W] float tensor of 0/1.
torch::Tensor masks_to_tensor(const std::vector<const Mask*>& masks);

/// [H,W] float tensor → Image (copies).
Image tensor_to_image(const torch::Tensor& t);

/// Pins torch to a fixed single-threaded, reproducible configuration.
void configure_torch_determinism(std::uint64_t seed);

}  // namespace fetalnav
