#include "fetalnav/nets.hpp"

#include "fetalnav/errors.hpp"

namespace fetalnav {

namespace nn = torch::nn;

ConvBlockImpl::ConvBlockImpl(int in, int out)
{
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(false)));
    bn1 = register_module("bn1", nn::BatchNorm2d(out));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)));
    bn2 = register_module("bn2", nn::BatchNorm2d(out));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x)
{
    auto h = torch::relu(bn1(conv1(x)));
    return torch::relu(bn2(conv2(h)));
}

SegNetImpl::SegNetImpl(std::vector<int> w) : widths(std::move(w))
{
    if (widths.size() < 2) {
        throw ValidationError("SegNet needs at least two encoder levels");
    }
    encoder = register_module("encoder", nn::ModuleList());
    up = register_module("up", nn::ModuleList());
    decoder = register_module("decoder", nn::ModuleList());
    int in = 3;
    for (int width : widths) {
        encoder->push_back(ConvBlock(in, width));
        in = width;
    }
    for (int level = static_cast<int>(widths.size()) - 2; level >= 0; --level) {
        up->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(widths[level + 1], widths[level], 2).stride(2)));
        decoder->push_back(ConvBlock(2 * widths[level], widths[level]));
    }
    seg_head = register_module("seg_head", nn::Conv2d(nn::Conv2dOptions(widths.front(), 1, 1)));
    cls_head = register_module("cls_head", nn::Linear(widths.back(), 1));
}

SegOutput SegNetImpl::forward(const torch::Tensor& x)
{
    std::vector<torch::Tensor> skips;
    torch::Tensor h = x;
    for (std::size_t i = 0; i < encoder->size(); ++i) {
        if (i > 0) {
            h = torch::max_pool2d(h, 2);
        }
        h = encoder[i]->as<ConvBlock>()->forward(h);
        skips.push_back(h);
    }
    const torch::Tensor deepest = h;
    for (std::size_t d = 0; d < decoder->size(); ++d) {
        const auto& skip = skips[skips.size() - 2 - d];
        h = up[d]->as<nn::ConvTranspose2d>()->forward(h);
        h = decoder[d]->as<ConvBlock>()->forward(torch::cat({h, skip}, 1));
    }
    SegOutput out;
    out.mask_logits = seg_head(h);
    out.class_logits = cls_head(deepest.mean({2, 3})).squeeze(1);
    return out;
}

BasicBlockImpl::BasicBlockImpl(int in, int out, int stride)
{
    conv1 = register_module("conv1",
                            nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
    bn1 = register_module("bn1", nn::BatchNorm2d(out));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)));
    bn2 = register_module("bn2", nn::BatchNorm2d(out));
    shortcut = register_module("shortcut", nn::Sequential());
    if (stride != 1 || in != out) {
        shortcut->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)));
        shortcut->push_back(nn::BatchNorm2d(out));
    }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x)
{
    auto h = torch::relu(bn1(conv1(x)));
    h = bn2(conv2(h));
    return torch::relu(h + (shortcut->is_empty() ? x : shortcut->forward(x)));
}

PoseNetImpl::PoseNetImpl(std::vector<int> w, double scale_mm) : widths(std::move(w)), translation_scale_mm(scale_mm)
{
    if (widths.size() != 4) {
        throw ValidationError("PoseNet expects 4 stage widths");
    }
    stem = register_module(
        "stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, widths[0], 7).stride(2).padding(3).bias(false)),
                               nn::BatchNorm2d(widths[0]), nn::ReLU(),
                               nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1))));
    stages = register_module("stages", nn::Sequential());
    int in = widths[0];
    for (int s = 0; s < 4; ++s) {
        const int stride = s == 0 ? 1 : 2;
        stages->push_back(BasicBlock(in, widths[s], stride));
        stages->push_back(BasicBlock(widths[s], widths[s], 1));
        in = widths[s];
    }
    fc = register_module("fc", nn::Linear(in, 9));
    // Start the rotation head at the identity columns so Gram-Schmidt is well-posed.
    torch::NoGradGuard no_grad;
    fc->weight.mul_(0.1);
    fc->bias.zero_();
    fc->bias[3] = 1.0;
    fc->bias[7] = 1.0;
}

torch::Tensor PoseNetImpl::forward(const torch::Tensor& x)
{
    auto h = stages->forward(stem->forward(x));
    auto out = fc(h.mean({2, 3}));
    auto t = out.narrow(1, 0, 3) * translation_scale_mm;
    return torch::cat({t, out.narrow(1, 3, 6)}, 1);
}

}  // namespace fetalnav
