// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_DATASET_HPP_
#define NEFIC_DATASET_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "nefic/image.hpp"
#include "nefic/rng.hpp"
#include "nefic/tensor.hpp"

namespace nefic {

// In-memory image corpus. Images are [3,H,W] float tensors in [0,1]; the
// corpus is small enough at toy scale to keep resident.
template <class S>
struct Dataset {
  std::vector<Tensor<S>> images;
  std::vector<std::string> paths;

  size_t size() const { return images.size(); }
};

inline std::vector<std::string> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  NEFIC_CHECK(fs::is_directory(dir), IoError, "'", dir,
              "' is not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string p = e.path().string();
    if (has_suffix(p, ".png") || has_suffix(p, ".PNG") ||
        has_suffix(p, ".ppm") || has_suffix(p, ".PPM"))
      out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <class S>
Dataset<S> load_dataset(const std::string& dir) {
  Dataset<S> ds;
  for (const auto& p : list_images(dir)) {
    ds.images.push_back(image_to_tensor<S>(load_image(p)));
    ds.paths.push_back(p);
  }
  NEFIC_CHECK(!ds.images.empty(), ConfigError, "dataset '", dir,
              "' contains no .png/.ppm images");
  return ds;
}

// Crop with the top-left corner at (r0, c0).
template <class S>
Tensor<S> crop(const Tensor<S>& img, int64_t r0, int64_t c0, int64_t h,
               int64_t w) {
  NEFIC_CHECK(img.shape().size() == 3, ShapeError, "crop: need [C,H,W]");
  const int64_t C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  NEFIC_CHECK(r0 >= 0 && c0 >= 0 && r0 + h <= H && c0 + w <= W, ShapeError,
              "crop ", h, "x", w, "@(", r0, ",", c0, ") outside ",
              shape_str(img.shape()));
  Tensor<S> out({C, h, w});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x)
        out[(c * h + r) * w + x] = img[(c * H + r0 + r) * W + c0 + x];
  return out;
}

template <class S>
Tensor<S> center_crop(const Tensor<S>& img, int64_t h, int64_t w) {
  return crop(img, (img.shape()[1] - h) / 2, (img.shape()[2] - w) / 2, h, w);
}

// Picks the crop side uniformly among multiples of 64 within [min,max], then
// a random image and a random position. All batch entries share one side so
// they stack into a single [N,3,s,s] tensor.
template <class S>
Tensor<S> sample_batch(const Dataset<S>& ds, int64_t n, int crop_min,
                       int crop_max, Rng& rng) {
  NEFIC_CHECK(!ds.images.empty(), ConfigError, "sample_batch: empty dataset");
  const int n_sides = (crop_max - crop_min) / 64 + 1;
  const int side = crop_min + 64 * int(rng.uniform_int(0, n_sides - 1));
  // Restrict to images large enough for the chosen side.
  std::vector<size_t> eligible;
  for (size_t i = 0; i < ds.images.size(); ++i)
    if (ds.images[i].shape()[1] >= side && ds.images[i].shape()[2] >= side)
      eligible.push_back(i);
  NEFIC_CHECK(!eligible.empty(), ConfigError, "sample_batch: no image fits a ",
              side, "-pixel crop");
  Tensor<S> batch({n, 3, side, side});
  const int64_t plane = int64_t(3) * side * side;
  for (int64_t b = 0; b < n; ++b) {
    const Tensor<S>& img =
        ds.images[eligible[size_t(rng.uniform_int(0, int64_t(eligible.size()) - 1))]];
    const int64_t r0 = rng.uniform_int(0, img.shape()[1] - side);
    const int64_t c0 = rng.uniform_int(0, img.shape()[2] - side);
    Tensor<S> c = crop(img, r0, c0, side, side);
    std::copy(c.data(), c.data() + plane, batch.data() + b * plane);
  }
  return batch;
}

// Separable Gaussian blur with clamp-to-edge padding, applied per channel of
// a [C,H,W] or [N,C,H,W] tensor. Used to build the defocused first frame of
// the backbone pretraining pair.
template <class S>
Tensor<S> gaussian_blur(const Tensor<S>& img, double sigma) {
  NEFIC_CHECK(sigma > 0, ConfigError, "gaussian_blur: sigma must be > 0");
  const size_t nd = img.shape().size();
  NEFIC_CHECK(nd == 3 || nd == 4, ShapeError,
              "gaussian_blur: need [C,H,W] or [N,C,H,W], got ",
              shape_str(img.shape()));
  if (nd == 4) {
    Tensor<S> out(img.shape());
    const int64_t N = img.shape()[0];
    const int64_t plane = img.numel() / N;
    for (int64_t b = 0; b < N; ++b) {
      Tensor<S> one({img.shape()[1], img.shape()[2], img.shape()[3]});
      std::copy(img.data() + b * plane, img.data() + (b + 1) * plane, one.data());
      Tensor<S> blurred = gaussian_blur(one, sigma);
      std::copy(blurred.data(), blurred.data() + plane, out.data() + b * plane);
    }
    return out;
  }
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[size_t(i + radius)] = std::exp(-double(i * i) / (2.0 * sigma * sigma));
    sum += k[size_t(i + radius)];
  }
  for (auto& v : k) v /= sum;

  const int64_t C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  Tensor<S> tmp(img.shape()), out(img.shape());
  auto clampi = [](int64_t v, int64_t hi) { return std::min(std::max(v, int64_t(0)), hi); };
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t r = 0; r < H; ++r)
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[size_t(i + radius)] *
                 double(img[(c * H + r) * W + clampi(x + i, W - 1)]);
        tmp[(c * H + r) * W + x] = S(acc);
      }
    for (int64_t r = 0; r < H; ++r)
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[size_t(i + radius)] *
                 double(tmp[(c * H + clampi(r + i, H - 1)) * W + x]);
        out[(c * H + r) * W + x] = S(acc);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus. Procedural scenes with smooth backgrounds, soft shapes
// and mild texture: structured enough that an autoencoder and a conditional
// codec have something to learn, smooth enough to be compressible at very
// low rates. Fully determined by the seed.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> synth_image(int64_t h, int64_t w, Rng& rng) {
  Tensor<S> img({3, h, w});
  // Background: two-corner gradient in a random color pair.
  double c0[3], c1[3];
  for (int i = 0; i < 3; ++i) {
    c0[i] = rng.uniform(0.1, 0.9);
    c1[i] = rng.uniform(0.1, 0.9);
  }
  const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
  const double gn = std::max(1e-6, std::hypot(gx, gy));
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const double u = 0.5 + 0.5 * (gx * (double(c) / double(w) - 0.5) +
                                    gy * (double(r) / double(h) - 0.5)) / gn;
      for (int64_t ch = 0; ch < 3; ++ch)
        img[(ch * h + r) * w + c] = S(c0[ch] + (c1[ch] - c0[ch]) * u);
    }
  // Soft ellipses.
  const int64_t n_ell = rng.uniform_int(2, 4);
  for (int64_t e = 0; e < n_ell; ++e) {
    const double cy = rng.uniform(0.1, 0.9) * double(h);
    const double cx = rng.uniform(0.1, 0.9) * double(w);
    const double ry = rng.uniform(0.08, 0.35) * double(h);
    const double rx = rng.uniform(0.08, 0.35) * double(w);
    const double feather = rng.uniform(1.5, 5.0);
    double col[3];
    for (int i = 0; i < 3; ++i) col[i] = rng.uniform(0.05, 0.95);
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) {
        const double dy = (double(r) - cy) / ry, dx = (double(c) - cx) / rx;
        const double d = dy * dy + dx * dx;
        if (d < 2.0) {
          const double a = 1.0 / (1.0 + std::exp(feather * (d - 1.0) * 4.0));
          for (int64_t ch = 0; ch < 3; ++ch) {
            S& px = img[(ch * h + r) * w + c];
            px = S((1.0 - a) * double(px) + a * col[ch]);
          }
        }
      }
  }
  // One soft-edged rectangle.
  {
    const int64_t r0 = rng.uniform_int(0, h / 2);
    const int64_t c0r = rng.uniform_int(0, w / 2);
    const int64_t rh = rng.uniform_int(h / 8, h / 2);
    const int64_t rw = rng.uniform_int(w / 8, w / 2);
    double col[3];
    for (int i = 0; i < 3; ++i) col[i] = rng.uniform(0.05, 0.95);
    const double alpha = rng.uniform(0.4, 0.9);
    for (int64_t r = r0; r < std::min(h, r0 + rh); ++r)
      for (int64_t c = c0r; c < std::min(w, c0r + rw); ++c)
        for (int64_t ch = 0; ch < 3; ++ch) {
          S& px = img[(ch * h + r) * w + c];
          px = S((1.0 - alpha) * double(px) + alpha * col[ch]);
        }
  }
  // Mild sinusoidal luminance texture so reconstructions must carry detail.
  const double fr = rng.uniform(2.0, 6.0) * 2.0 * M_PI / double(h);
  const double fc = rng.uniform(2.0, 6.0) * 2.0 * M_PI / double(w);
  const double amp = rng.uniform(0.02, 0.06);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const double tex =
          amp * std::sin(fr * double(r) + phase) * std::cos(fc * double(c));
      for (int64_t ch = 0; ch < 3; ++ch) {
        S& px = img[(ch * h + r) * w + c];
        px = S(std::clamp(double(px) + tex, 0.0, 1.0));
      }
    }
  return img;
}

// Writes `count` synthetic images of side `side` into `dir` as PNGs named
// img_0000.png, img_0001.png, ... Each image derives from seed+index only,
// so regenerating any subset reproduces identical files.
inline void write_synth_corpus(const std::string& dir, int count, int side,
                               uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    Rng rng(seed ^ (0x5851F42D4C957F2Dull * uint64_t(i + 1)));
    Tensor<float> t = synth_image<float>(side, side, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d.png", i);
    save_png((std::filesystem::path(dir) / name).string(), tensor_to_image(t));
  }
}

}  // namespace nefic

#endif  // NEFIC_DATASET_HPP_
