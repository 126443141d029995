#include "fetalnav/image.hpp"

#include "fetalnav/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fetalnav {

Image read_gray(const std::string& path)
{
    const cv::Mat raw = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (raw.empty()) {
        throw IoError("cannot read image " + path);
    }
    Image out;
    raw.convertTo(out, CV_32F, 1.0 / 255.0);
    return out;
}

void write_gray(const Image& img, const std::string& path)
{
    cv::Mat u8;
    img.convertTo(u8, CV_8U, 255.0);  // saturating + rounding
    if (!cv::imwrite(path, u8)) {
        throw IoError("cannot write image " + path);
    }
}

Mask read_mask(const std::string& path)
{
    const cv::Mat raw = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (raw.empty()) {
        throw IoError("cannot read mask " + path);
    }
    Mask out = raw > 0;
    return out / 255;
}

void write_mask(const Mask& m, const std::string& path)
{
    const cv::Mat u8 = m * 255;
    if (!cv::imwrite(path, u8)) {
        throw IoError("cannot write mask " + path);
    }
}

Image quantize8(const Image& img)
{
    cv::Mat u8;
    img.convertTo(u8, CV_8U, 255.0);
    Image out;
    u8.convertTo(out, CV_32F, 1.0 / 255.0);
    return out;
}

namespace {

cv::Rect centered_square(const cv::Size& s)
{
    const int side = std::min(s.width, s.height);
    return {(s.width - side) / 2, (s.height - side) / 2, side, side};
}

}  // namespace

Image center_crop_square(const Image& img) { return img(centered_square(img.size())).clone(); }

Mask center_crop_square(const Mask& m) { return m(centered_square(m.size())).clone(); }

Image letterbox_square(const Image& img)
{
    const int side = std::max(img.rows, img.cols);
    Image out(side, side, 0.0f);
    img.copyTo(out(cv::Rect((side - img.cols) / 2, (side - img.rows) / 2, img.cols, img.rows)));
    return out;
}

Image resize_linear(const Image& img, int size)
{
    if (img.rows == size && img.cols == size) {
        return img.clone();
    }
    Image out;
    cv::resize(img, out, cv::Size(size, size), 0, 0, img.rows > size ? cv::INTER_AREA : cv::INTER_LINEAR);
    return out;
}

Mask resize_nearest(const Mask& m, int rows, int cols)
{
    if (m.rows == rows && m.cols == cols) {
        return m.clone();
    }
    Mask out;
    cv::resize(m, out, cv::Size(cols, rows), 0, 0, cv::INTER_NEAREST);
    return out;
}

Mask dilate_square(const Mask& m, int kernel_px)
{
    if (kernel_px <= 1) {
        return m.clone();
    }
    Mask out;
    const cv::Mat kernel = cv::Mat::ones(kernel_px, kernel_px, CV_8U);
    cv::dilate(m, out, kernel, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
    return out;
}

double iou(const Mask& a, const Mask& b)
{
    if (a.size() != b.size()) {
        throw ValidationError("iou: mask sizes differ");
    }
    const int inter = cv::countNonZero(a & b);
    const int uni = cv::countNonZero(a | b);
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

Mask threshold(const Image& probs, double t)
{
    Mask out = probs > t;
    return out / 255;
}

}  // namespace fetalnav
