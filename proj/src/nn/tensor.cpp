#include "gazeswap/tensor.hpp"

namespace gazeswap {

torch::Tensor image_to_tensor(const FaceImage& img) {
    auto px = img.pixels();
    auto hwc = torch::from_blob(const_cast<float*>(px.data()), {img.size(), img.size(), img.channels()},
                                torch::kFloat32);
    return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor mask_to_tensor(const Mask& m) {
    auto bits = m.bits();
    auto t = torch::from_blob(const_cast<uint8_t*>(bits.data()), {1, m.size(), m.size()}, torch::kUInt8);
    return t.to(torch::kFloat32);
}

FaceImage tensor_to_image(const torch::Tensor& t) {
    torch::Tensor x = t.detach();
    if (x.dim() == 4) {
        if (x.size(0) != 1) {
            throw ContractViolation("tensor_to_image expects a single image");
        }
        x = x.squeeze(0);
    }
    if (x.dim() != 3 || x.size(1) != x.size(2)) {
        throw ContractViolation("tensor_to_image expects a square CHW tensor");
    }
    x = x.to(torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    const int size = static_cast<int>(x.size(0));
    const int channels = static_cast<int>(x.size(2));
    const float* p = x.data_ptr<float>();
    return FaceImage(size, channels, std::vector<float>(p, p + x.numel()));
}

torch::Tensor stack_images(const std::vector<const FaceImage*>& imgs) {
    std::vector<torch::Tensor> ts;
    ts.reserve(imgs.size());
    for (const FaceImage* img : imgs) {
        ts.push_back(image_to_tensor(*img));
    }
    return torch::stack(ts);
}

torch::Tensor stack_masks(const std::vector<const Mask*>& masks) {
    std::vector<torch::Tensor> ts;
    ts.reserve(masks.size());
    for (const Mask* m : masks) {
        ts.push_back(mask_to_tensor(*m));
    }
    return torch::stack(ts);
}

}  // namespace gazeswap
