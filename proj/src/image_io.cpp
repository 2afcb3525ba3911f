#include "mgcc/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mgcc/error.hpp"

namespace mgcc::image_io {
namespace {

cv::Mat read_raw(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) {
    throw DataError("cannot read image: " + path.string());
  }
  return m;
}

// To single-channel CV_32F in [0, 1].
cv::Mat to_unit_gray(const cv::Mat& raw) {
  cv::Mat gray;
  switch (raw.channels()) {
    case 1:
      gray = raw;
      break;
    case 3:
      cv::cvtColor(raw, gray, cv::COLOR_BGR2GRAY);
      break;
    case 4:
      cv::cvtColor(raw, gray, cv::COLOR_BGRA2GRAY);
      break;
    default:
      throw DataError("unsupported channel count " + std::to_string(raw.channels()));
  }
  double scale = 1.0;
  switch (gray.depth()) {
    case CV_8U:
      scale = 1.0 / 255.0;
      break;
    case CV_16U:
      scale = 1.0 / 65535.0;
      break;
    case CV_32F:
    case CV_64F:
      scale = 1.0;
      break;
    default:
      throw DataError("unsupported pixel depth");
  }
  cv::Mat out;
  gray.convertTo(out, CV_32F, scale);
  cv::min(cv::max(out, 0.0), 1.0, out);
  return out;
}

data::Image from_mat(const cv::Mat& m) {
  data::Image img(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    const float* row = m.ptr<float>(r);
    std::copy(row, row + m.cols, img.values.begin() + static_cast<std::ptrdiff_t>(r) * m.cols);
  }
  return img;
}

cv::Mat to_mat(const data::Image& img) {
  cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), CV_32F);
  for (int r = 0; r < m.rows; ++r) {
    std::copy_n(img.values.begin() + static_cast<std::ptrdiff_t>(r) * m.cols, m.cols, m.ptr<float>(r));
  }
  return m;
}

void write_mat(const cv::Mat& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  if (!cv::imwrite(path.string(), m)) {
    throw DataError("cannot write image: " + path.string());
  }
}

}  // namespace

data::Image read_luminance(const std::filesystem::path& path) { return from_mat(to_unit_gray(read_raw(path))); }

data::Mask read_mask(const std::filesystem::path& path) {
  cv::Mat gray = to_unit_gray(read_raw(path));
  data::Mask mask(gray.rows, gray.cols);
  for (int r = 0; r < gray.rows; ++r) {
    const float* row = gray.ptr<float>(r);
    for (int c = 0; c < gray.cols; ++c) {
      mask.at(r, c) = row[c] > 0.0f ? 1 : 0;
    }
  }
  return mask;
}

void write_image(const data::Image& image, const std::filesystem::path& path) {
  cv::Mat m;
  to_mat(image).convertTo(m, CV_8U, 255.0);
  write_mat(m, path);
}

void write_mask(const data::Mask& mask, const std::filesystem::path& path) {
  cv::Mat m(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8U);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      m.at<std::uint8_t>(r, c) = mask.at(r, c) ? 255 : 0;
    }
  }
  write_mat(m, path);
}

data::Image resize_bilinear(const data::Image& image, std::int64_t height, std::int64_t width) {
  if (image.same_shape(height, width)) return image;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             cv::INTER_LINEAR);
  cv::min(cv::max(out, 0.0), 1.0, out);
  return from_mat(out);
}

data::Mask resize_nearest(const data::Mask& mask, std::int64_t height, std::int64_t width) {
  if (mask.same_shape(height, width)) return mask;
  cv::Mat in(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8U,
             const_cast<std::uint8_t*>(mask.values.data()));
  cv::Mat out;
  cv::resize(in, out, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_NEAREST);
  data::Mask result(height, width);
  std::copy(out.data, out.data + result.size(), result.values.begin());
  return result;
}

data::Image gaussian_blur(const data::Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  cv::Mat out;
  cv::GaussianBlur(to_mat(image), out, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  return from_mat(out);
}

void write_color(const ColorImage& image, const std::filesystem::path& path) {
  cv::Mat m(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3,
            const_cast<std::uint8_t*>(image.bgr.data()));
  write_mat(m, path);
}

}  // namespace mgcc::image_io
