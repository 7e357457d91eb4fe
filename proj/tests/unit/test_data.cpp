#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "diffir/data.hpp"

using namespace diffir;

TEST_CASE("gen_corpus contract and determinism") {
    auto imgs = gen_corpus(1, 4, 64);
    REQUIRE(imgs.size() == 4);
    for (const auto& im : imgs) {
        CHECK(im.shape == std::vector<int64_t>{64, 64, 3});
        for (double v : im.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    auto again = gen_corpus(1, 4, 64);
    for (size_t i = 0; i < 4; ++i) CHECK(imgs[i].data == again[i].data);

    auto other = gen_corpus(2, 4, 64);
    for (size_t i = 0; i < 4; ++i) CHECK(imgs[i].data != other[i].data);

    CHECK_THROWS_AS(gen_corpus(1, 1, 63), std::invalid_argument);
}

TEST_CASE("apply_mask coverage control") {
    auto img = gen_corpus(3, 1, 64)[0];

    auto p = apply_mask(img, 5, 0.1, 0.3);
    REQUIRE(p.mask.has_value());
    double cov = 0;
    for (double v : p.mask->data) cov += v;
    cov /= static_cast<double>(p.mask->numel());
    CHECK(cov >= 0.1);
    CHECK(cov <= 0.3);

    // masked pixels zeroed, known pixels untouched
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                if (p.mask->at3(y, x, 0) > 0.5)
                    CHECK(p.i_lq.at3(y, x, c) == 0.0);
                else
                    CHECK(p.i_lq.at3(y, x, c) == img.at3(y, x, c));
            }

    // (0,0) is the identity escape hatch
    auto id = apply_mask(img, 5, 0.0, 0.0);
    CHECK(id.i_lq.data == img.data);
    double zc = 0;
    for (double v : id.mask->data) zc += v;
    CHECK(zc == 0.0);

    // fixed seed reproduces the mask exactly
    auto p2 = apply_mask(img, 5, 0.1, 0.3);
    CHECK(p.mask->data == p2.mask->data);

    CHECK_THROWS_AS(apply_mask(img, 5, 0.3, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(apply_mask(img, 5, 0.1, 0.95), std::invalid_argument);

    // a band narrower than one pixel of coverage is unattainable
    auto tiny = gen_corpus(3, 1, 16)[0];
    CHECK_THROWS_AS(apply_mask(tiny, 5, 0.89999, 0.9), std::runtime_error);
}

TEST_CASE("apply_blur properties") {
    auto img = gen_corpus(4, 1, 32)[0];

    // identity escape hatch
    auto id = apply_blur(img, 1, 1, 0.3);
    CHECK(id.i_lq.data == img.data);

    // constant image unchanged (kernel sums to 1)
    Tensor flat = Tensor::full({32, 32, 3}, 0.42);
    auto fc = apply_blur(flat, 1, 7, 0.7);
    for (double v : fc.i_lq.data) CHECK(v == Catch::Approx(0.42).margin(1e-12));

    // impulse image reproduces the kernel, centered
    Tensor imp = Tensor::zeros({33, 33, 3});
    for (int64_t c = 0; c < 3; ++c) imp.at3(16, 16, c) = 1.0;
    int len = 5;
    double ang = 0.0;
    auto k = motion_kernel(len, ang);
    auto bp = apply_blur(imp, 1, len, ang);
    for (int64_t dy = -2; dy <= 2; ++dy)
        for (int64_t dx = -2; dx <= 2; ++dx)
            CHECK(bp.i_lq.at3(16 + dy, 16 + dx, 0) == Catch::Approx(k[static_cast<size_t>((2 - dy) * len + (2 - dx))]).margin(1e-9));

    // kernel normalization
    double s = 0;
    for (double v : k) s += v;
    CHECK(s == Catch::Approx(1.0).margin(1e-12));

    CHECK_THROWS_AS(apply_blur(img, 1, 4, 0.0), std::invalid_argument);
}

TEST_CASE("apply_downsample properties") {
    auto p = apply_downsample(gen_corpus(5, 1, 64)[0], 4);
    CHECK(p.i_lq.shape == std::vector<int64_t>{16, 16, 3});
    CHECK(p.i_gt.dim(0) == 4 * p.i_lq.dim(0));

    Tensor flat = Tensor::full({32, 32, 3}, 0.67);
    auto fc = apply_downsample(flat, 4);
    for (double v : fc.i_lq.data) CHECK(v == Catch::Approx(0.67).margin(1e-6));

    // linear ramp: downsampled interior matches analytic source-coordinate sampling
    Tensor ramp({64, 64, 3});
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x)
            for (int64_t c = 0; c < 3; ++c) ramp.at3(y, x, c) = static_cast<double>(x) / 63.0;
    auto rp = apply_downsample(ramp, 4);
    for (int64_t x = 2; x < 14; ++x) {
        double src = (static_cast<double>(x) + 0.5) * 4.0 - 0.5;
        CHECK(rp.i_lq.at3(8, x, 0) == Catch::Approx(src / 63.0).margin(1e-3));
    }

    CHECK_THROWS_AS(apply_downsample(gen_corpus(5, 1, 24)[0], 5), std::invalid_argument);
}

TEST_CASE("batch_iter: determinism, shapes, epoch coverage") {
    auto gts = gen_corpus(6, 6, 16);
    DegradeParams dp;
    auto ds = make_dataset(Task::inpainting, gts, 7, dp);

    BatchIter it1(ds, 2, 16, 99), it2(ds, 2, 16, 99);
    for (int i = 0; i < 5; ++i) {
        auto b1 = it1.next(), b2 = it2.next();
        REQUIRE(b1.size() == 2);
        for (size_t j = 0; j < 2; ++j) {
            CHECK(b1[j].i_gt.data == b2[j].i_gt.data);
            CHECK(b1[j].i_gt.shape == std::vector<int64_t>{16, 16, 3});
        }
    }

    // one epoch covers every index exactly once before repeats
    BatchIter it3(ds, 6, 16, 123);
    auto epoch = it3.next();
    std::vector<int> seen(6, 0);
    for (const auto& p : epoch)
        for (size_t k = 0; k < gts.size(); ++k)
            if (p.i_gt.data == gts[k].data) seen[k]++;
    for (int s : seen) CHECK(s == 1);

    CHECK_THROWS_AS(BatchIter(ds, 2, 20, 1), std::invalid_argument);  // patch > image
    Dataset empty;
    CHECK_THROWS_AS(BatchIter(empty, 2, 16, 1), std::invalid_argument);

    // batch larger than the dataset: draws continue into the next epoch
    BatchIter big(ds, 9, 16, 4);
    auto wide = big.next();
    CHECK(wide.size() == 9);
    std::vector<int> counts(6, 0);
    for (const auto& p : wide)
        for (size_t k = 0; k < gts.size(); ++k)
            if (p.i_gt.data == gts[k].data) counts[k]++;
    int repeats = 0;
    for (int cnt : counts) {
        CHECK(cnt >= 1);
        repeats += cnt;
    }
    CHECK(repeats == 9);
}

TEST_CASE("crops align and SR keeps the 4x shape relation") {
    auto gts = gen_corpus(8, 3, 32);
    DegradeParams dp;
    auto ds = make_dataset(Task::sr, gts, 9, dp);
    for (const auto& p : ds.pairs) CHECK(p.i_lq.dim(0) * 4 == p.i_gt.dim(0));

    BatchIter it(ds, 2, 16, 5);
    auto b = it.next();
    for (const auto& p : b) {
        CHECK(p.i_gt.shape == std::vector<int64_t>{16, 16, 3});
        CHECK(p.i_lq.shape == std::vector<int64_t>{4, 4, 3});
    }
}

TEST_CASE("image io round trips") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "diffir_imgio_test";
    fs::create_directories(dir);
    auto img = gen_corpus(10, 1, 16)[0];

    // ppm: quantized to 8 bits, read-back within half a step
    imgio::write_ppm((dir / "a.ppm").string(), img);
    auto back = imgio::read_ppm((dir / "a.ppm").string());
    REQUIRE(back.shape == img.shape);
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-9);

    // png: exact once both sides are 8-bit
    imgio::write_png((dir / "a.png").string(), img);
    auto pback = imgio::read_png((dir / "a.png").string());
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(pback[i] == back[i]);

    CHECK_THROWS_AS(imgio::read_image((dir / "missing.png").string()), IoError);
    CHECK_THROWS_AS(imgio::read_image((dir / "a.bmp").string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("corpus save/load and folder ingestion") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "diffir_corpus_test";
    fs::remove_all(dir);
    auto gts = gen_corpus(11, 3, 16);
    save_corpus(dir.string(), gts, 11, "mask:lo=0.05,hi=0.25");

    auto entries = read_corpus_index(dir.string());
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].descriptor == "mask:lo=0.05,hi=0.25");

    auto loaded = load_corpus_images(dir.string());
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0].shape == gts[0].shape);

    auto ingested = ingest_folder(dir.string());
    CHECK(ingested.size() == 3);

    // non-multiple-of-8 images are cropped down on ingestion
    Tensor odd({10, 14, 3});
    for (int64_t i = 0; i < odd.numel(); ++i) odd[i] = (i % 7) / 7.0;
    auto odd_dir = dir / "odd";
    fs::create_directories(odd_dir);
    imgio::write_png((odd_dir / "x.png").string(), odd);
    auto cropped = ingest_folder(odd_dir.string());
    REQUIRE(cropped.size() == 1);
    CHECK(cropped[0].shape == std::vector<int64_t>{8, 8, 3});
    fs::remove_all(dir);
}

TEST_CASE("degradation provenance regenerates i_lq from i_gt") {
    auto img = gen_corpus(12, 1, 32)[0];
    auto p = apply_mask(img, 77, 0.05, 0.25);
    // provenance carries the seed; re-applying reproduces i_lq bit for bit
    auto again = apply_mask(p.i_gt, 77, 0.05, 0.25);
    CHECK(p.i_lq.data == again.i_lq.data);
    CHECK(p.provenance == again.provenance);
}
