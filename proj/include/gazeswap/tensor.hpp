#pragma once

#include <torch/torch.h>

#include "gazeswap/image.hpp"

namespace gazeswap {

/// HWC FaceImage -> CHW float tensor.
torch::Tensor image_to_tensor(const FaceImage& img);

/// Mask -> 1xHxW float tensor of 0/1.
torch::Tensor mask_to_tensor(const Mask& m);

/// CHW (or 1xCxHxW) tensor -> FaceImage. Values are clamped to [0, 1].
FaceImage tensor_to_image(const torch::Tensor& t);

/// Images as an NCHW batch; all images must share size and channels.
torch::Tensor stack_images(const std::vector<const FaceImage*>& imgs);
torch::Tensor stack_masks(const std::vector<const Mask*>& masks);

}  // namespace gazeswap
