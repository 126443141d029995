#include "fetalnav/tensor_io.hpp"

#include "fetalnav/errors.hpp"

#include <cstring>

namespace fetalnav {

torch::Tensor images_to_tensor(const std::vector<const Image*>& images)
{
    if (images.empty()) {
        throw ValidationError("images_to_tensor: empty batch");
    }
    const int rows = images.front()->rows;
    const int cols = images.front()->cols;
    auto out = torch::empty({static_cast<int64_t>(images.size()), 1, rows, cols}, torch::kFloat32);
    float* dst = out.data_ptr<float>();
    for (const Image* img : images) {
        if (img->rows != rows || img->cols != cols) {
            throw ValidationError("images_to_tensor: inconsistent image sizes");
        }
        const Image c = img->isContinuous() ? *img : img->clone();
        std::memcpy(dst, c.ptr<float>(), sizeof(float) * rows * cols);
        dst += rows * cols;
    }
    return out.expand({-1, 3, -1, -1}).contiguous();
}

torch::Tensor images_to_tensor(const std::vector<Image>& images)
{
    std::vector<const Image*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& i : images) {
        ptrs.push_back(&i);
    }
    return images_to_tensor(ptrs);
}

torch::Tensor masks_to_tensor(const std::vector<const Mask*>& masks)
{
    if (masks.empty()) {
        throw ValidationError("masks_to_tensor: empty batch");
    }
    const int rows = masks.front()->rows;
    const int cols = masks.front()->cols;
    auto out = torch::empty({static_cast<int64_t>(masks.size()), 1, rows, cols}, torch::kFloat32);
    float* dst = out.data_ptr<float>();
    for (const Mask* m : masks) {
        if (m->rows != rows || m->cols != cols) {
            throw ValidationError("masks_to_tensor: inconsistent mask sizes");
        }
        for (int r = 0; r < rows; ++r) {
            const uchar* src = m->ptr<uchar>(r);
            for (int c = 0; c < cols; ++c) {
                *dst++ = src[c] ? 1.0f : 0.0f;
            }
        }
    }
    return out;
}

Image tensor_to_image(const torch::Tensor& t)
{
    const auto c = t.detach().to(torch::kFloat32).contiguous();
    if (c.dim() != 2) {
        throw ValidationError("tensor_to_image expects [H,W]");
    }
    Image out(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
    std::memcpy(out.ptr<float>(), c.data_ptr<float>(), sizeof(float) * out.total());
    return out;
}

void configure_torch_determinism(std::uint64_t seed)
{
    torch::set_num_threads(1);
    torch::manual_seed(seed);
}

}  // namespace fetalnav
