#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <imglong/features.hpp>
#include <imglong/renderer.hpp>
#include <imglong/rng.hpp>

using namespace imglong;
using render::render_config;

namespace {

std::uint64_t pixel_byte_hash(const image& im) {
    std::string bytes;
    bytes.reserve(im.pixels.size());
    for (double p : im.pixels)
        bytes.push_back(static_cast<char>(static_cast<int>(std::floor(255.0 * p + 0.5))));
    return fnv1a64(bytes);
}

sampling::latent_vector zeros(int d = 128) {
    sampling::latent_vector z;
    z.values.assign(static_cast<std::size_t>(d), 0.0);
    return z;
}

// intensity-weighted row centroid over a window that isolates band 1
double band1_centroid(const image& im, double background) {
    double num = 0.0, den = 0.0;
    for (int y = 8; y < 36; ++y)
        for (int x = 0; x < im.width; ++x) {
            const double w = im.at(y, x) - background;
            if (w > 0.0) {
                num += y * w;
                den += w;
            }
        }
    return num / den;
}

struct fitted_fixture {
    std::vector<sampling::latent_vector> latents;
    std::vector<image> images;
    render::encoder_model enc;
};

const fitted_fixture& fitted() {
    static const fitted_fixture f = [] {
        fitted_fixture fx;
        fx.latents = sampling::sample_latents(2000, 128, 99);
        fx.images.reserve(fx.latents.size());
        render_config cfg;
        for (const auto& z : fx.latents) fx.images.push_back(render::render(z, cfg));
        fx.enc = render::fit_encoder(fx.images, fx.latents, 1.0);
        return fx;
    }();
    return f;
}

} // namespace

TEST_CASE("render_config validation") {
    render_config cfg;
    CHECK_NOTHROW(cfg.validate());

    SECTION("duplicate controlled dims") {
        cfg.controlled_dims[1] = cfg.controlled_dims[0];
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SECTION("controlled dim out of range") {
        cfg.controlled_dims[7] = 128;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
        cfg.controlled_dims[7] = -1;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SECTION("background out of range") {
        cfg.background = 1.0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SECTION("bad band width") {
        cfg.bands[0].width_px = 0.0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
}

TEST_CASE("render reference image and determinism") {
    render_config cfg;
    const auto ref = render::render(zeros(), cfg);

    CHECK(ref.height == 64);
    CHECK(ref.width == 64);
    CHECK(pixel_byte_hash(ref) == 0x8757cedda9f4e5a5ull);

    // closed form at the band-1 center column: bg + base1/2 * exp(-dy^2/(2 w1^2)) + band-2 tail
    const double expected = 0.10 + 0.275 * std::exp(-0.2 * 0.2 / 18.0) +
                            0.225 * std::exp(-(19.0 - 44.8) * (19.0 - 44.8) / 32.0);
    CHECK(ref.at(19, 32) == Catch::Approx(expected).margin(1e-12));

    const auto again = render::render(zeros(), cfg);
    CHECK(ref.pixels == again.pixels);

    for (double p : ref.pixels) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
}

TEST_CASE("render ignores non-controlled dims") {
    render_config cfg;
    const std::set<int> controlled(cfg.controlled_dims.begin(), cfg.controlled_dims.end());

    auto z = zeros();
    rng256 g(derive_seed(7, "noncontrolled", 0));
    for (int k = 0; k < 128; ++k)
        if (!controlled.count(k)) z.values[k] = g.next_normal();

    const auto base = render::render(zeros(), cfg);
    const auto scrambled = render::render(z, cfg);
    CHECK(base.pixels == scrambled.pixels);
}

TEST_CASE("render stays in gamut for extreme latents") {
    render_config cfg;
    for (double v : {-6.0, 6.0}) {
        auto z = zeros();
        for (int dim : cfg.controlled_dims) z.values[dim] = v;
        const auto im = render::render(z, cfg);
        for (double p : im.pixels) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }
}

TEST_CASE("render moves the band-1 centroid by the position gain") {
    render_config cfg;
    const auto ref = render::render(zeros(), cfg);
    auto z = zeros();
    z.values[cfg.controlled_dims[0]] = 1.0;
    const auto shifted = render::render(z, cfg);

    const double shift =
        band1_centroid(shifted, cfg.background) - band1_centroid(ref, cfg.background);
    CHECK(std::abs(shift - cfg.bands[0].g_pos * 64.0) < 0.5);
    CHECK(shift == Catch::Approx(6.3264).margin(0.01));
}

TEST_CASE("render rejects short latent vectors") {
    render_config cfg; // highest controlled dim is 117
    CHECK_THROWS_AS(render::render(zeros(117), cfg), std::invalid_argument);
    CHECK_NOTHROW(render::render(zeros(118), cfg));
}

TEST_CASE("block-mean features") {
    image im;
    im.height = im.width = 4;
    im.pixels.assign(16, 0.5);

    SECTION("constant image gives constant raw features") {
        for (double f : feat::block_means(im, 2)) CHECK(f == 0.5);
        CHECK(feat::block_means(im, 2).size() == 4);
    }
    SECTION("factor 1 is the identity") {
        CHECK(feat::block_means(im, 1) == im.pixels);
    }
    SECTION("checkerboard averages to one half") {
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) im.at(y, x) = (x + y) % 2 ? 1.0 : 0.0;
        for (double f : feat::block_means(im, 2)) CHECK(f == 0.5);
    }
    SECTION("indivisible shape rejected") {
        CHECK_THROWS_AS(feat::block_means(im, 3), std::invalid_argument);
    }
    SECTION("constant features are dropped by the spec fit") {
        std::vector<image> constant(3, im);
        CHECK_THROWS_AS(feat::fit_feature_spec(constant, 2), std::invalid_argument);
    }
    SECTION("featurize rejects a mismatched shape") {
        image other;
        other.height = other.width = 8;
        other.pixels.assign(64, 0.3);
        auto varied = im;
        varied.at(0, 0) = 0.9;
        auto spec = feat::fit_feature_spec({im, varied}, 2);
        CHECK_THROWS_AS(feat::featurize(other, spec), std::invalid_argument);
    }
}

TEST_CASE("fit_encoder input contracts") {
    render_config cfg;
    auto latents = sampling::sample_latents(4, 128, 5);
    std::vector<image> imgs;
    for (const auto& z : latents) imgs.push_back(render::render(z, cfg));

    SECTION("count mismatch") {
        latents.pop_back();
        CHECK_THROWS_AS(render::fit_encoder(imgs, latents, 1.0), std::invalid_argument);
    }
    SECTION("fewer images than features") {
        CHECK_THROWS_AS(render::fit_encoder(imgs, latents, 1.0), std::invalid_argument);
    }
    SECTION("negative lambda") {
        CHECK_THROWS_AS(render::fit_encoder(imgs, latents, -1.0), std::invalid_argument);
    }
    SECTION("singular system at lambda zero") {
        // 300 copies of two images: feature rank 2, far below 256
        std::vector<image> dup;
        std::vector<sampling::latent_vector> dup_z;
        for (int i = 0; i < 300; ++i) {
            dup.push_back(imgs[i % 2]);
            dup_z.push_back(latents[i % 2]);
        }
        CHECK_THROWS_AS(render::fit_encoder(dup, dup_z, 0.0), numerical_error);
    }
}

TEST_CASE("fit_encoder recovers the controlled geometry") {
    const auto& fx = fitted();
    const render_config cfg;

    CHECK(fx.enc.spec.size() == 256); // every block varies under tilt and curvature
    CHECK(fx.enc.weights.rows() == 128);
    CHECK(fx.enc.weights.cols() == 256);

    SECTION("a zeroed target dimension fits to exactly zero") {
        auto latents = fx.latents;
        for (auto& z : latents) z.values[5] = 0.0;
        auto enc = render::fit_encoder(fx.images, latents, 1.0);
        CHECK(enc.bias[5] == 0.0);
        for (int k = 0; k < 256; ++k) CHECK(std::abs(enc.weights(5, k)) < 1e-12);
        CHECK(enc.training_mse[5] == Catch::Approx(0.0).margin(1e-20));
    }

    SECTION("huge lambda collapses to the target mean") {
        auto enc = render::fit_encoder(fx.images, fx.latents, 1e12);
        const auto zhat = render::encode(fx.images[17], enc);
        for (int k = 0; k < 128; ++k)
            CHECK(std::abs(zhat.values[k] - enc.bias[k]) < 1e-6);
    }

    SECTION("fresh-draw recovery, frozen bands per factor") {
        auto m1 = render::method1_influence(2000, cfg, fx.enc, 123);
        const auto& s = m1.per_dim_score;
        // position and tilt dims reconstruct well, curvature is mid, luminance is
        // capped by its multiplicative coupling with position
        CHECK(s[7] < 0.15);
        CHECK(s[19] < 0.05);
        CHECK(s[34] > 0.15);
        CHECK(s[34] < 0.33);
        CHECK(s[52] < 0.50);
        CHECK(s[71] < 0.10);
        CHECK(s[88] < 0.25);
        CHECK(s[101] < 0.33);
        CHECK(s[117] < 0.55);
        const std::set<int> controlled(cfg.controlled_dims.begin(), cfg.controlled_dims.end());
        for (int k = 0; k < 128; ++k)
            if (!controlled.count(k)) CHECK(s[k] >= 0.9);
        // the dominant trio clears R^2 >= 0.9 against unit-variance latents
        for (int dim : {7, 19, 71}) CHECK(1.0 - s[dim] >= 0.9);
    }
}

TEST_CASE("encode basics") {
    const auto& fx = fitted();

    SECTION("deterministic") {
        auto a = render::encode(fx.images[3], fx.enc);
        auto b = render::encode(fx.images[3], fx.enc);
        CHECK(a.values == b.values);
    }
    SECTION("all-zero image encodes to something finite") {
        image zero;
        zero.height = zero.width = 64;
        zero.pixels.assign(64 * 64, 0.0);
        for (double v : render::encode(zero, fx.enc).values) CHECK(std::isfinite(v));
    }
    SECTION("single-pixel perturbation respects the explicit Lipschitz bound") {
        auto bumped = fx.images[0];
        bumped.at(10, 10) += 1.0 / 255.0;
        REQUIRE(bumped.at(10, 10) <= 1.0);
        const auto za = render::encode(fx.images[0], fx.enc);
        const auto zb = render::encode(bumped, fx.enc);

        // one pixel hits one block feature: |dz_k| <= |W_kj| / (ds^2 sd_j) * (1/255)
        const int touched_raw = (10 / 4) * 16 + (10 / 4);
        double bound = 0.0;
        for (std::size_t j = 0; j < fx.enc.spec.size(); ++j)
            if (fx.enc.spec.retained[j] == touched_raw)
                for (int k = 0; k < 128; ++k)
                    bound = std::max(bound, std::abs(fx.enc.weights(k, j)) /
                                                (16.0 * fx.enc.spec.stddev[j] * 255.0));
        REQUIRE(bound > 0.0);
        CHECK(bound < 0.01);
        for (int k = 0; k < 128; ++k)
            CHECK(std::abs(za.values[k] - zb.values[k]) <= bound + 1e-12);
    }
}

TEST_CASE("influence methods") {
    const auto& fx = fitted();
    const render_config cfg;

    SECTION("argument validation") {
        CHECK_THROWS_AS(render::method1_influence(0, cfg, fx.enc, 1), std::invalid_argument);
        CHECK_THROWS_AS(render::method2_influence(0, cfg, 1), std::invalid_argument);
    }

    SECTION("n = 1 still yields a valid permutation") {
        auto m1 = render::method1_influence(1, cfg, fx.enc, 77);
        auto sorted = m1.ranked_dims;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> expect(128);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(sorted == expect);
        for (double v : m1.per_dim_score) CHECK(std::isfinite(v));
    }

    SECTION("method2 scores: zero exactly off the controlled set, positive on it") {
        auto m2 = render::method2_influence(50, cfg, 321);
        const std::set<int> controlled(cfg.controlled_dims.begin(), cfg.controlled_dims.end());
        for (int k = 0; k < 128; ++k) {
            if (controlled.count(k))
                CHECK(m2.per_dim_score[k] > 0.0);
            else
                CHECK(m2.per_dim_score[k] == 0.0);
        }
        // zero-score ties broken by index: tail of the ranking is ascending
        std::vector<int> tail(m2.ranked_dims.begin() + 8, m2.ranked_dims.end());
        CHECK(std::is_sorted(tail.begin(), tail.end()));
    }

    SECTION("resampling a non-controlled dim provably leaves pixels unchanged") {
        auto latents = sampling::sample_latents(3, 128, 5150);
        for (const auto& z : latents) {
            auto base = render::render(z, cfg);
            for (int dim : {0, 64, 127}) {
                auto zv = z;
                zv.values[dim] += 2.5;
                CHECK(render::render(zv, cfg).pixels == base.pixels);
            }
        }
    }

    SECTION("determinism per seed") {
        auto a = render::method2_influence(20, cfg, 99);
        auto b = render::method2_influence(20, cfg, 99);
        CHECK(a.per_dim_score == b.per_dim_score);
        CHECK(a.ranked_dims == b.ranked_dims);
    }

    SECTION("methods agree on the dominant trio at n = 2000") {
        auto m1 = render::method1_influence(2000, cfg, fx.enc, 123);
        auto m2 = render::method2_influence(2000, cfg, 321);
        auto t1 = m1.top3(), t2 = m2.top3();
        CHECK(std::set<int>(t1.begin(), t1.end()) == std::set<int>{7, 19, 71});
        CHECK(std::set<int>(t2.begin(), t2.end()) == std::set<int>{7, 19, 71});

        // ranking directions: ascending reconstruction error vs descending image MSE
        CHECK(m1.per_dim_score[m1.ranked_dims[0]] <= m1.per_dim_score[m1.ranked_dims[1]]);
        CHECK(m2.per_dim_score[m2.ranked_dims[0]] >= m2.per_dim_score[m2.ranked_dims[1]]);
    }
}
