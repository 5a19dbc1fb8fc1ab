#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "imglong/image.hpp"

namespace imglong::feat {

struct feature_spec {
    int downsample = 4;
    int block_h = 0;
    int block_w = 0;
    std::vector<int> retained;  // raw block indices kept after dropping constants
    std::vector<double> mean;   // per retained feature, from the training set
    std::vector<double> stddev; // per retained feature, all > 0

    std::size_t size() const { return retained.size(); }
};

inline std::vector<double> block_means(const image& img, int downsample) {
    img.validate();
    if (downsample <= 0 || img.height % downsample != 0 || img.width % downsample != 0)
        throw std::invalid_argument("block_means: image shape not divisible by downsample factor");
    const int bh = img.height / downsample, bw = img.width / downsample;
    std::vector<double> out(static_cast<std::size_t>(bh) * bw, 0.0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out[static_cast<std::size_t>(y / downsample) * bw + x / downsample] += img.at(y, x);
    const double inv = 1.0 / (static_cast<double>(downsample) * downsample);
    for (auto& v : out) v *= inv;
    return out;
}

inline feature_spec fit_feature_spec(const std::vector<image>& images, int downsample = 4) {
    if (images.empty()) throw std::invalid_argument("fit_feature_spec: no images");
    const auto first = block_means(images.front(), downsample);
    const std::size_t raw_n = first.size();
    std::vector<double> sum(raw_n, 0.0), sumsq(raw_n, 0.0);
    for (const auto& img : images) {
        if (img.height != images.front().height || img.width != images.front().width)
            throw std::invalid_argument("fit_feature_spec: inconsistent image shapes");
        const auto f = block_means(img, downsample);
        for (std::size_t k = 0; k < raw_n; ++k) {
            sum[k] += f[k];
            sumsq[k] += f[k] * f[k];
        }
    }
    const double n = static_cast<double>(images.size());
    feature_spec spec;
    spec.downsample = downsample;
    spec.block_h = images.front().height / downsample;
    spec.block_w = images.front().width / downsample;
    for (std::size_t k = 0; k < raw_n; ++k) {
        const double m = sum[k] / n;
        const double var = std::max(sumsq[k] / n - m * m, 0.0);
        const double sd = std::sqrt(var);
        if (sd < 1e-12) continue; // constant block carries no signal
        spec.retained.push_back(static_cast<int>(k));
        spec.mean.push_back(m);
        spec.stddev.push_back(sd);
    }
    if (spec.retained.empty())
        throw std::invalid_argument("fit_feature_spec: every feature is constant");
    return spec;
}

inline std::vector<double> featurize(const image& img, const feature_spec& spec) {
    if (img.height != spec.block_h * spec.downsample || img.width != spec.block_w * spec.downsample)
        throw std::invalid_argument("featurize: image shape does not match feature spec");
    const auto raw = block_means(img, spec.downsample);
    std::vector<double> out(spec.size());
    for (std::size_t k = 0; k < spec.size(); ++k)
        out[k] = (raw[static_cast<std::size_t>(spec.retained[k])] - spec.mean[k]) / spec.stddev[k];
    return out;
}

} // namespace imglong::feat
