#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diffir/config.hpp"
#include "diffir/image_io.hpp"
#include "diffir/rng.hpp"
#include "diffir/tensor.hpp"

namespace diffir {

inline void clamp01(Tensor& t) {
    for (auto& v : t.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

// ---- bicubic resize (Catmull-Rom, a = -0.5) ----

namespace resize_detail {

inline double cubic(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

}  // namespace resize_detail

// (H,W,C) -> (out_h,out_w,C)
inline Tensor resize_bicubic(const Tensor& img, int64_t out_h, int64_t out_w) {
    if (img.rank() != 3) throw std::invalid_argument("resize_bicubic: expected (H,W,C)");
    int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    // horizontal pass: treat each (row, channel) as a lane over x
    Tensor mid({h, out_w, c});
    {
        double scale = static_cast<double>(w) / static_cast<double>(out_w);
        double support = scale > 1.0 ? 2.0 * scale : 2.0;
        for (int64_t o = 0; o < out_w; ++o) {
            double center = (static_cast<double>(o) + 0.5) * scale - 0.5;
            int64_t lo = static_cast<int64_t>(std::floor(center - support + 1.0));
            int64_t hi = static_cast<int64_t>(std::floor(center + support));
            std::vector<double> wts(static_cast<size_t>(hi - lo + 1));
            double wsum = 0;
            for (int64_t i = lo; i <= hi; ++i) {
                double x = (center - static_cast<double>(i)) / (scale > 1.0 ? scale : 1.0);
                wts[static_cast<size_t>(i - lo)] = resize_detail::cubic(x);
                wsum += wts[static_cast<size_t>(i - lo)];
            }
            for (int64_t y = 0; y < h; ++y)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0;
                    for (int64_t i = lo; i <= hi; ++i) {
                        int64_t ic = std::clamp<int64_t>(i, 0, w - 1);
                        acc += wts[static_cast<size_t>(i - lo)] * img.at3(y, ic, ch);
                    }
                    mid.at3(y, o, ch) = acc / wsum;
                }
        }
    }
    // vertical pass
    Tensor out({out_h, out_w, c});
    {
        double scale = static_cast<double>(h) / static_cast<double>(out_h);
        double support = scale > 1.0 ? 2.0 * scale : 2.0;
        for (int64_t o = 0; o < out_h; ++o) {
            double center = (static_cast<double>(o) + 0.5) * scale - 0.5;
            int64_t lo = static_cast<int64_t>(std::floor(center - support + 1.0));
            int64_t hi = static_cast<int64_t>(std::floor(center + support));
            std::vector<double> wts(static_cast<size_t>(hi - lo + 1));
            double wsum = 0;
            for (int64_t i = lo; i <= hi; ++i) {
                double x = (center - static_cast<double>(i)) / (scale > 1.0 ? scale : 1.0);
                wts[static_cast<size_t>(i - lo)] = resize_detail::cubic(x);
                wsum += wts[static_cast<size_t>(i - lo)];
            }
            for (int64_t x2 = 0; x2 < out_w; ++x2)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0;
                    for (int64_t i = lo; i <= hi; ++i) {
                        int64_t ic = std::clamp<int64_t>(i, 0, h - 1);
                        acc += wts[static_cast<size_t>(i - lo)] * mid.at3(ic, x2, ch);
                    }
                    out.at3(o, x2, ch) = acc / wsum;
                }
        }
    }
    return out;
}

// ---- sample types ----

struct ImagePair {
    Tensor i_gt;                 // (H,W,3), values in [0,1]
    Tensor i_lq;                 // same shape, or (H/4,W/4,3) for SR
    std::optional<Tensor> mask;  // (H,W,1), 1 = missing pixel
    std::string provenance;      // degradation descriptor incl. seed
};

// ---- procedural ground-truth corpus ----

namespace corpus_detail {

inline Tensor gen_image(Rng& rng, int64_t size) {
    Tensor img({size, size, 3});
    // two-color oriented gradient
    double theta = rng.uniform(0.0, 6.283185307179586);
    double dx = std::cos(theta), dy = std::sin(theta);
    double c0[3], c1[3];
    for (int i = 0; i < 3; ++i) {
        c0[i] = rng.uniform(0.05, 0.95);
        c1[i] = rng.uniform(0.05, 0.95);
    }
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            double t = ((x + 0.5) / size - 0.5) * dx + ((y + 0.5) / size - 0.5) * dy + 0.5;
            t = std::clamp(t, 0.0, 1.0);
            for (int64_t c = 0; c < 3; ++c) img.at3(y, x, c) = c0[c] * (1 - t) + c1[c] * t;
        }
    // sinusoidal stripes
    if (rng.uniform() < 0.7) {
        double phi = rng.uniform(0.0, 6.283185307179586);
        double freq = rng.uniform(1.5, 6.0);
        double phase = rng.uniform(0.0, 6.283185307179586);
        double amp = rng.uniform(0.03, 0.12);
        double sx = std::cos(phi), sy = std::sin(phi);
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                double s = amp * std::sin(6.283185307179586 * freq * ((x * sx + y * sy) / size) + phase);
                for (int64_t c = 0; c < 3; ++c) img.at3(y, x, c) += s;
            }
    }
    // soft ellipses
    int n_ell = static_cast<int>(rng.uniform_int(1, 4));
    for (int e = 0; e < n_ell; ++e) {
        double cx = rng.uniform(0.15, 0.85) * size, cy = rng.uniform(0.15, 0.85) * size;
        double ax = rng.uniform(0.08, 0.35) * size, ay = rng.uniform(0.08, 0.35) * size;
        double rot = rng.uniform(0.0, 3.141592653589793);
        double col[3];
        for (int i = 0; i < 3; ++i) col[i] = rng.uniform(0.0, 1.0);
        double cr = std::cos(rot), sr = std::sin(rot);
        double edge = std::max(1.0, 0.05 * size);
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                double ux = (x - cx) * cr + (y - cy) * sr;
                double uy = -(x - cx) * sr + (y - cy) * cr;
                double d = std::sqrt((ux / ax) * (ux / ax) + (uy / ay) * (uy / ay));
                double alpha = 1.0 / (1.0 + std::exp((d - 1.0) * ax / edge));
                if (alpha < 1e-4) continue;
                for (int64_t c = 0; c < 3; ++c) img.at3(y, x, c) = img.at3(y, x, c) * (1 - alpha) + col[c] * alpha;
            }
    }
    // band-limited noise: white noise at 1/8 scale, bicubic up
    if (size >= 16) {
        int64_t ls = std::max<int64_t>(2, size / 8);
        Tensor low = rng.uniform_tensor({ls, ls, 3}, -1.0, 1.0);
        Tensor up = resize_bicubic(low, size, size);
        double amp = rng.uniform(0.02, 0.08);
        for (int64_t i = 0; i < img.numel(); ++i) img[i] += amp * up[i];
    }
    clamp01(img);
    return img;
}

}  // namespace corpus_detail

// n procedural GT images, content deterministic per (seed, index)
inline std::vector<Tensor> gen_corpus(uint64_t seed, int n, int size) {
    if (size % 8 != 0) throw std::invalid_argument("gen_corpus: size must be divisible by 8");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::derive(seed, static_cast<uint64_t>(i)));
        out.push_back(corpus_detail::gen_image(rng, size));
    }
    return out;
}

// ---- degradations ----

// union of random rectangles and thick polylines until coverage lands in
// [lo, hi]; whole-mask restart on overshoot, bounded attempts
inline ImagePair apply_mask(const Tensor& img, uint64_t seed, double lo, double hi) {
    if (img.rank() != 3 || img.dim(2) != 3) throw std::invalid_argument("apply_mask: expected (H,W,3)");
    bool identity = (lo == 0.0 && hi == 0.0);
    if (!identity && !(0.0 <= lo && lo < hi && hi <= 0.9))
        throw std::invalid_argument("apply_mask: need 0 <= lo < hi <= 0.9");
    int64_t h = img.dim(0), w = img.dim(1);
    Tensor mask({h, w, 1});
    if (!identity) {
        Rng rng(seed);
        bool done = false;
        for (int attempt = 0; attempt < 64 && !done; ++attempt) {
            std::fill(mask.data.begin(), mask.data.end(), 0.0);
            double cov = 0.0;
            for (int shapes = 0; shapes < 256; ++shapes) {
                if (cov >= lo) {
                    done = true;
                    break;
                }
                double budget = hi - cov;
                if (rng.uniform() < 0.6) {
                    // rectangle sized to at most ~half the remaining budget
                    double target = budget * rng.uniform(0.2, 0.5) * static_cast<double>(h * w);
                    double side = std::sqrt(std::max(1.0, target));
                    int64_t rw = std::clamp<int64_t>(static_cast<int64_t>(side * rng.uniform(0.6, 1.6)), 1, w);
                    int64_t rh = std::clamp<int64_t>(static_cast<int64_t>(target / std::max<double>(1.0, static_cast<double>(rw))), 1, h);
                    int64_t oy = rng.uniform_int(0, h - rh), ox = rng.uniform_int(0, w - rw);
                    for (int64_t y = oy; y < oy + rh; ++y)
                        for (int64_t x = ox; x < ox + rw; ++x) mask.at3(y, x, 0) = 1.0;
                } else {
                    // thick polyline random walk
                    double thick = std::max(1.0, static_cast<double>(std::min(h, w)) * rng.uniform(0.02, 0.06));
                    double px = rng.uniform(0.0, static_cast<double>(w - 1)), py = rng.uniform(0.0, static_cast<double>(h - 1));
                    int segs = static_cast<int>(rng.uniform_int(2, 5));
                    for (int sgi = 0; sgi < segs; ++sgi) {
                        double ang = rng.uniform(0.0, 6.283185307179586);
                        double len = rng.uniform(0.1, 0.4) * std::min(h, w);
                        double qx = std::clamp(px + len * std::cos(ang), 0.0, static_cast<double>(w - 1));
                        double qy = std::clamp(py + len * std::sin(ang), 0.0, static_cast<double>(h - 1));
                        int steps = static_cast<int>(std::ceil(std::hypot(qx - px, qy - py))) * 2 + 1;
                        for (int st = 0; st <= steps; ++st) {
                            double t = static_cast<double>(st) / steps;
                            double cx = px + (qx - px) * t, cy = py + (qy - py) * t;
                            int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy - thick)), y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(cy + thick));
                            int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx - thick)), x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(cx + thick));
                            for (int64_t y = y0; y <= y1; ++y)
                                for (int64_t x = x0; x <= x1; ++x)
                                    if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= thick * thick / 4.0) mask.at3(y, x, 0) = 1.0;
                        }
                        px = qx;
                        py = qy;
                    }
                }
                double s = 0;
                for (double v : mask.data) s += v;
                cov = s / static_cast<double>(h * w);
                if (cov > hi) break;  // overshoot: restart the whole mask
            }
            if (done) {
                double s = 0;
                for (double v : mask.data) s += v;
                cov = s / static_cast<double>(h * w);
                if (cov < lo || cov > hi) done = false;
            }
        }
        if (!done) throw std::runtime_error("apply_mask: coverage band unattainable after bounded attempts");
    }
    ImagePair p;
    p.i_gt = img;
    p.i_lq = img;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            if (mask.at3(y, x, 0) > 0.5)
                for (int64_t c = 0; c < 3; ++c) p.i_lq.at3(y, x, c) = 0.0;
    p.mask = std::move(mask);
    std::ostringstream ss;
    ss << "mask:lo=" << lo << ",hi=" << hi << ",seed=" << seed;
    p.provenance = ss.str();
    return p;
}

// normalized linear motion kernel rasterized onto an L x L grid
inline std::vector<double> motion_kernel(int kernel_len, double angle_rad) {
    int L = kernel_len;
    std::vector<double> k(static_cast<size_t>(L * L), 0.0);
    double c = (L - 1) / 2.0;
    double dx = std::cos(angle_rad), dy = std::sin(angle_rad);
    double half = (kernel_len - 1) / 2.0;
    int steps = kernel_len * 16;
    for (int s = 0; s <= steps; ++s) {
        double t = -half + (2.0 * half) * s / steps;
        double x = c + t * dx, y = c + t * dy;
        int64_t x0 = static_cast<int64_t>(std::floor(x)), y0 = static_cast<int64_t>(std::floor(y));
        double fx = x - x0, fy = y - y0;
        auto splat = [&](int64_t yy, int64_t xx, double wgt) {
            if (yy >= 0 && yy < L && xx >= 0 && xx < L) k[static_cast<size_t>(yy * L + xx)] += wgt;
        };
        splat(y0, x0, (1 - fx) * (1 - fy));
        splat(y0, x0 + 1, fx * (1 - fy));
        splat(y0 + 1, x0, (1 - fx) * fy);
        splat(y0 + 1, x0 + 1, fx * fy);
    }
    double sum = 0;
    for (double v : k) sum += v;
    for (auto& v : k) v /= sum;
    return k;
}

// convolution with reflect padding; kernel sums to 1
inline ImagePair apply_blur(const Tensor& img, uint64_t seed, int kernel_len, double angle_rad) {
    if (img.rank() != 3) throw std::invalid_argument("apply_blur: expected (H,W,C)");
    if (kernel_len != 1 && (kernel_len < 3 || kernel_len % 2 == 0))
        throw std::invalid_argument("apply_blur: kernel_len must be 1 or odd >= 3");
    ImagePair p;
    p.i_gt = img;
    if (kernel_len == 1) {
        p.i_lq = img;
    } else {
        auto k = motion_kernel(kernel_len, angle_rad);
        int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2), r = kernel_len / 2;
        auto reflect = [](int64_t i, int64_t n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
            return i;
        };
        p.i_lq = Tensor({h, w, c});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0;
                    for (int64_t ky = -r; ky <= r; ++ky)
                        for (int64_t kx = -r; kx <= r; ++kx)
                            acc += k[static_cast<size_t>((ky + r) * kernel_len + (kx + r))] *
                                   img.at3(reflect(y + ky, h), reflect(x + kx, w), ch);
                    p.i_lq.at3(y, x, ch) = acc;
                }
        clamp01(p.i_lq);
    }
    std::ostringstream ss;
    ss << "blur:len=" << kernel_len << ",angle=" << angle_rad << ",seed=" << seed;
    p.provenance = ss.str();
    return p;
}

inline ImagePair apply_downsample(const Tensor& img, int factor = 4) {
    if (img.rank() != 3) throw std::invalid_argument("apply_downsample: expected (H,W,C)");
    if (factor <= 0 || img.dim(0) % factor || img.dim(1) % factor)
        throw std::invalid_argument("apply_downsample: factor must divide both dims");
    ImagePair p;
    p.i_gt = img;
    p.i_lq = resize_bicubic(img, img.dim(0) / factor, img.dim(1) / factor);
    clamp01(p.i_lq);
    p.provenance = "sr:factor=" + std::to_string(factor) + ",seed=0";
    return p;
}

// ---- task dispatch + dataset ----

struct DegradeParams {
    double mask_lo = 0.05;
    double mask_hi = 0.25;
    int blur_len = 7;
    double blur_angle_deg = -1.0;  // negative means per-sample random
    int sr_factor = 4;
};

inline ImagePair degrade(Task task, const Tensor& gt, uint64_t seed, const DegradeParams& dp) {
    switch (task) {
        case Task::inpainting:
            return apply_mask(gt, seed, dp.mask_lo, dp.mask_hi);
        case Task::deblur: {
            double ang = dp.blur_angle_deg;
            if (ang < 0) {
                Rng rng(Rng::derive(seed, 77));
                ang = rng.uniform(0.0, 180.0);
            }
            return apply_blur(gt, seed, dp.blur_len, ang * 3.141592653589793 / 180.0);
        }
        case Task::sr:
            return apply_downsample(gt, dp.sr_factor);
    }
    throw std::invalid_argument("degrade: bad task");
}

struct Dataset {
    Task task = Task::inpainting;
    std::vector<ImagePair> pairs;

    int64_t size() const { return static_cast<int64_t>(pairs.size()); }
};

inline Dataset make_dataset(Task task, const std::vector<Tensor>& gts, uint64_t seed, const DegradeParams& dp) {
    Dataset d;
    d.task = task;
    d.pairs.reserve(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) d.pairs.push_back(degrade(task, gts[i], Rng::derive(seed, i), dp));
    return d;
}

// Deterministic shuffled epochs with aligned random crops. A batch larger
// than the dataset keeps drawing from subsequent epochs, so indices repeat.
class BatchIter {
  public:
    BatchIter(const Dataset& ds, int batch_size, int patch_size, uint64_t seed)
        : ds_(&ds), batch_(batch_size), patch_(patch_size), rng_(seed) {
        if (ds.size() == 0) throw std::invalid_argument("BatchIter: empty dataset");
        if (batch_size <= 0) throw std::invalid_argument("BatchIter: batch_size must be positive");
        int64_t h = ds.pairs[0].i_gt.dim(0);
        if (patch_ > h) throw std::invalid_argument("BatchIter: patch larger than image");
        if (patch_ % 8 != 0) throw std::invalid_argument("BatchIter: patch_size must be divisible by 8");
        reshuffle();
    }

    std::vector<ImagePair> next() {
        std::vector<ImagePair> out;
        out.reserve(static_cast<size_t>(batch_));
        for (int i = 0; i < batch_; ++i) {
            if (pos_ >= order_.size()) reshuffle();
            out.push_back(crop(ds_->pairs[order_[pos_++]]));
        }
        return out;
    }

  private:
    void reshuffle() {
        order_.resize(static_cast<size_t>(ds_->size()));
        for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        // Fisher-Yates with our deterministic rng
        for (size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        pos_ = 0;
    }

    ImagePair crop(const ImagePair& p) {
        int64_t h = p.i_gt.dim(0), w = p.i_gt.dim(1);
        if (h == patch_ && w == patch_) return p;
        int64_t align = 8;
        int64_t oy = rng_.uniform_int(0, (h - patch_) / align) * align;
        int64_t ox = rng_.uniform_int(0, (w - patch_) / align) * align;
        ImagePair out;
        out.provenance = p.provenance + ",crop=" + std::to_string(oy) + "x" + std::to_string(ox);
        out.i_gt = crop_t(p.i_gt, oy, ox, patch_, patch_);
        if (ds_->task == Task::sr) {
            int f = static_cast<int>(p.i_gt.dim(0) / p.i_lq.dim(0));
            out.i_lq = crop_t(p.i_lq, oy / f, ox / f, patch_ / f, patch_ / f);
        } else {
            out.i_lq = crop_t(p.i_lq, oy, ox, patch_, patch_);
        }
        if (p.mask) out.mask = crop_t(*p.mask, oy, ox, patch_, patch_);
        return out;
    }

    static Tensor crop_t(const Tensor& t, int64_t oy, int64_t ox, int64_t ch, int64_t cw) {
        Tensor out({ch, cw, t.dim(2)});
        for (int64_t y = 0; y < ch; ++y)
            for (int64_t x = 0; x < cw; ++x)
                for (int64_t c = 0; c < t.dim(2); ++c) out.at3(y, x, c) = t.at3(oy + y, ox + x, c);
        return out;
    }

    const Dataset* ds_;
    int batch_, patch_;
    Rng rng_;
    std::vector<size_t> order_;
    size_t pos_ = 0;
};

// ---- on-disk corpus ----

// one image file per sample plus an index of (filename, seed, descriptor)
inline void save_corpus(const std::string& dir, const std::vector<Tensor>& gts, uint64_t seed, const std::string& descriptor) {
    std::filesystem::create_directories(dir);
    std::ofstream idx(dir + "/index.tsv", std::ios::trunc);
    if (!idx) throw IoError("cannot write " + dir + "/index.tsv");
    idx << "filename\tseed\tdegradation\n";
    for (size_t i = 0; i < gts.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "gt_%05zu.ppm", i);
        imgio::write_ppm(dir + "/" + name, gts[i]);
        idx << name << "\t" << Rng::derive(seed, i) << "\t" << descriptor << "\n";
    }
}

struct CorpusEntry {
    std::string filename;
    uint64_t seed;
    std::string descriptor;
};

inline std::vector<CorpusEntry> read_corpus_index(const std::string& dir) {
    std::ifstream idx(dir + "/index.tsv");
    if (!idx) throw IoError("cannot open " + dir + "/index.tsv");
    std::string line;
    std::getline(idx, line);  // header
    std::vector<CorpusEntry> out;
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        CorpusEntry e;
        std::string seed_str;
        std::getline(ss, e.filename, '\t');
        std::getline(ss, seed_str, '\t');
        std::getline(ss, e.descriptor, '\t');
        e.seed = std::stoull(seed_str);
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<Tensor> load_corpus_images(const std::string& dir) {
    auto entries = read_corpus_index(dir);
    std::vector<Tensor> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(imgio::read_image(dir + "/" + e.filename));
    return out;
}

// user-supplied folder of 8-bit png/ppm images, sorted by name and cropped to
// multiple-of-8 dims
inline std::vector<Tensor> ingest_folder(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& de : std::filesystem::directory_iterator(dir)) {
        auto ext = de.path().extension().string();
        if (ext == ".png" || ext == ".ppm") files.push_back(de.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("ingest_folder: no .png/.ppm files in " + dir);
    std::vector<Tensor> out;
    for (const auto& f : files) {
        Tensor img = imgio::read_image(f);
        int64_t h = img.dim(0) / 8 * 8, w = img.dim(1) / 8 * 8;
        if (h < 8 || w < 8) throw IoError("ingest_folder: image too small: " + f);
        if (h != img.dim(0) || w != img.dim(1)) {
            Tensor cropped({h, w, 3});
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    for (int64_t c = 0; c < 3; ++c) cropped.at3(y, x, c) = img.at3(y, x, c);
            img = std::move(cropped);
        }
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace diffir
