#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffir/tensor.hpp"

namespace diffir {

// 10*log10(max^2 / MSE), capped at 99 dB for near-zero MSE
inline double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0) {
    require_same_shape(a, b, "psnr");
    if (max_val <= 0.0) throw std::invalid_argument("psnr: max_val must be positive");
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse < 1e-12) return 99.0;
    return 10.0 * std::log10(max_val * max_val / mse);
}

// ITU-R 601 luma; grayscale images pass through
inline Tensor to_luma(const Tensor& img) {
    if (img.rank() != 3) throw std::invalid_argument("to_luma: expected (H,W,C)");
    if (img.dim(2) == 1) return img;
    if (img.dim(2) < 3) throw std::invalid_argument("to_luma: need 1 or >=3 channels");
    Tensor y({img.dim(0), img.dim(1), 1});
    for (int64_t p = 0; p < img.dim(0) * img.dim(1); ++p) {
        const double* px = &img.data[static_cast<size_t>(p * img.dim(2))];
        y.data[static_cast<size_t>(p)] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
    return y;
}

namespace detail {

inline std::vector<double> gaussian_kernel(int radius, double sigma) {
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// separable valid-region Gaussian filter on a (H,W) plane stored flat
inline std::vector<double> gauss_valid(const std::vector<double>& img, int64_t h, int64_t w, const std::vector<double>& k) {
    int64_t r = static_cast<int64_t>(k.size() / 2);
    int64_t wo = w - 2 * r, ho = h - 2 * r;
    std::vector<double> tmp(static_cast<size_t>(h * wo));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < wo; ++x) {
            double s = 0;
            for (size_t i = 0; i < k.size(); ++i) s += k[i] * img[static_cast<size_t>(y * w + x + static_cast<int64_t>(i))];
            tmp[static_cast<size_t>(y * wo + x)] = s;
        }
    std::vector<double> out(static_cast<size_t>(ho * wo));
    for (int64_t y = 0; y < ho; ++y)
        for (int64_t x = 0; x < wo; ++x) {
            double s = 0;
            for (size_t i = 0; i < k.size(); ++i) s += k[i] * tmp[static_cast<size_t>((y + static_cast<int64_t>(i)) * wo + x)];
            out[static_cast<size_t>(y * wo + x)] = s;
        }
    return out;
}

}  // namespace detail

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// luma only, mean over the valid window positions.
inline double ssim(const Tensor& a, const Tensor& b, double max_val = 1.0) {
    require_same_shape(a, b, "ssim");
    constexpr int kRadius = 5;
    if (a.dim(0) < 2 * kRadius + 1 || a.dim(1) < 2 * kRadius + 1)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    Tensor ya = to_luma(a), yb = to_luma(b);
    int64_t h = a.dim(0), w = a.dim(1);
    auto k = detail::gaussian_kernel(kRadius, 1.5);

    std::vector<double> xa = ya.data, xb = yb.data, xaa(xa.size()), xbb(xa.size()), xab(xa.size());
    for (size_t i = 0; i < xa.size(); ++i) {
        xaa[i] = xa[i] * xa[i];
        xbb[i] = xb[i] * xb[i];
        xab[i] = xa[i] * xb[i];
    }
    auto mu_a = detail::gauss_valid(xa, h, w, k);
    auto mu_b = detail::gauss_valid(xb, h, w, k);
    auto s_aa = detail::gauss_valid(xaa, h, w, k);
    auto s_bb = detail::gauss_valid(xbb, h, w, k);
    auto s_ab = detail::gauss_valid(xab, h, w, k);

    double c1 = (0.01 * max_val) * (0.01 * max_val);
    double c2 = (0.03 * max_val) * (0.03 * max_val);
    double acc = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        double va = s_aa[i] - mu_a[i] * mu_a[i];
        double vb = s_bb[i] - mu_b[i] * mu_b[i];
        double cab = s_ab[i] - mu_a[i] * mu_b[i];
        double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cab + c2);
        double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
        acc += num / den;
    }
    return acc / static_cast<double>(mu_a.size());
}

}  // namespace diffir
