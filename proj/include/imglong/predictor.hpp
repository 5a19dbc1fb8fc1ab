#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "imglong/errors.hpp"
#include "imglong/features.hpp"
#include "imglong/image.hpp"
#include "imglong/ridge.hpp"

namespace imglong::pred {

struct train_metadata {
    std::size_t n_subjects = 0;
    std::uint64_t seed = 0;
    double sigma2 = 0.0;
};

struct predictor_model {
    Eigen::MatrixXd weights; // 3 x n_features
    Eigen::Vector3d bias = Eigen::Vector3d::Zero();
    double lambda = 1.0;
    feat::feature_spec spec;
    train_metadata meta;
    std::array<double, 3> training_mse{}; // on the training set, per output
};

// ridge on standardized block-mean features, one model for all three outputs
inline predictor_model train(const std::vector<image>& images,
                             const std::vector<std::array<double, 3>>& targets, double lambda,
                             int downsample = 4, const train_metadata& meta = {}) {
    if (images.size() != targets.size())
        throw std::invalid_argument("pred::train: image/target counts differ");
    if (images.empty()) throw std::invalid_argument("pred::train: no training subjects");
    if (!std::isfinite(lambda) || lambda < 0.0)
        throw std::invalid_argument("pred::train: lambda must be finite and >= 0");

    feat::feature_spec spec = feat::fit_feature_spec(images, downsample);
    const auto n = static_cast<Eigen::Index>(images.size());
    const auto p = static_cast<Eigen::Index>(spec.size());
    if (n < p && lambda <= 0.0)
        throw std::invalid_argument(
            "pred::train: lambda must be > 0 with fewer subjects than features");

    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto f = feat::featurize(images[static_cast<std::size_t>(i)], spec);
        for (Eigen::Index j = 0; j < p; ++j) X(i, j) = f[static_cast<std::size_t>(j)];
    }

    Eigen::MatrixXd T(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < 3; ++k)
            T(i, k) = targets[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    const Eigen::RowVector3d target_mean = T.colwise().mean();
    T.rowwise() -= target_mean;

    const ridge_solution sol = ridge_solve(X, T, lambda, "pred::train");

    predictor_model model;
    model.weights = sol.weights.transpose();
    model.bias = target_mean.transpose();
    model.lambda = lambda;
    model.spec = std::move(spec);
    model.meta = meta;
    if (model.meta.n_subjects == 0) model.meta.n_subjects = images.size();
    for (std::size_t k = 0; k < 3; ++k) model.training_mse[k] = sol.training_mse[k];
    return model;
}

inline std::array<double, 3> predict(const predictor_model& model, const image& img) {
    const auto f = feat::featurize(img, model.spec);
    if (static_cast<Eigen::Index>(f.size()) != model.weights.cols())
        throw std::invalid_argument("pred::predict: feature count does not match model");
    const Eigen::Map<const Eigen::VectorXd> fv(f.data(), static_cast<Eigen::Index>(f.size()));
    const Eigen::Vector3d out = model.weights * fv + model.bias;
    if (!out.allFinite()) throw numerical_error("pred::predict: non-finite prediction");
    return {out(0), out(1), out(2)};
}

namespace detail {

inline constexpr const char* model_file_tag = "imglong-predictor";
inline constexpr int model_file_version = 1;

template <class It>
void write_row(std::ostream& os, const char* key, It first, It last) {
    os << key;
    for (It it = first; it != last; ++it) os << ' ' << *it;
    os << '\n';
}

inline void expect_key(std::istream& is, const char* key, const std::string& path) {
    std::string got;
    if (!(is >> got) || got != key)
        throw integrity_error("model file " + path + ": expected field '" + key + "', got '" +
                              got + "'");
}

template <class T>
T read_value(std::istream& is, const char* key, const std::string& path) {
    expect_key(is, key, path);
    T v{};
    if (!(is >> v)) throw integrity_error("model file " + path + ": bad value for '" + key + "'");
    return v;
}

template <class T>
std::vector<T> read_vector(std::istream& is, const char* key, std::size_t count,
                           const std::string& path) {
    expect_key(is, key, path);
    std::vector<T> out(count);
    for (std::size_t i = 0; i < count; ++i)
        if (!(is >> out[i]))
            throw integrity_error("model file " + path + ": truncated field '" + key + "'");
    return out;
}

} // namespace detail

// plain-text dump; 17 significant digits round-trips doubles exactly
inline void save_model(const predictor_model& model, const std::filesystem::path& path) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << detail::model_file_tag << ' ' << detail::model_file_version << '\n';
    os << "lambda " << model.lambda << '\n';
    os << "sigma2 " << model.meta.sigma2 << '\n';
    os << "seed " << model.meta.seed << '\n';
    os << "n_subjects " << model.meta.n_subjects << '\n';
    os << "downsample " << model.spec.downsample << '\n';
    os << "block_h " << model.spec.block_h << '\n';
    os << "block_w " << model.spec.block_w << '\n';
    os << "n_features " << model.spec.size() << '\n';
    detail::write_row(os, "retained", model.spec.retained.begin(), model.spec.retained.end());
    detail::write_row(os, "mean", model.spec.mean.begin(), model.spec.mean.end());
    detail::write_row(os, "stddev", model.spec.stddev.begin(), model.spec.stddev.end());
    detail::write_row(os, "bias", model.bias.data(), model.bias.data() + 3);
    for (Eigen::Index k = 0; k < 3; ++k) {
        os << "weights" << k;
        for (Eigen::Index j = 0; j < model.weights.cols(); ++j) os << ' ' << model.weights(k, j);
        os << '\n';
    }
    detail::write_row(os, "training_mse", model.training_mse.begin(), model.training_mse.end());

    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("save_model: cannot open " + path.string());
    file << os.str();
    file.flush();
    if (!file) throw std::runtime_error("save_model: write failed for " + path.string());
}

inline predictor_model load_model(const std::filesystem::path& path) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("load_model: cannot open " + path.string());
    const std::string name = path.string();

    std::string tag;
    int version = 0;
    if (!(file >> tag >> version) || tag != detail::model_file_tag)
        throw version_error("model file " + name + ": not a predictor model file");
    if (version != detail::model_file_version)
        throw version_error("model file " + name + ": unsupported version " +
                            std::to_string(version));

    predictor_model model;
    model.lambda = detail::read_value<double>(file, "lambda", name);
    model.meta.sigma2 = detail::read_value<double>(file, "sigma2", name);
    model.meta.seed = detail::read_value<std::uint64_t>(file, "seed", name);
    model.meta.n_subjects = detail::read_value<std::size_t>(file, "n_subjects", name);
    model.spec.downsample = detail::read_value<int>(file, "downsample", name);
    model.spec.block_h = detail::read_value<int>(file, "block_h", name);
    model.spec.block_w = detail::read_value<int>(file, "block_w", name);
    const auto p = detail::read_value<std::size_t>(file, "n_features", name);
    model.spec.retained = detail::read_vector<int>(file, "retained", p, name);
    model.spec.mean = detail::read_vector<double>(file, "mean", p, name);
    model.spec.stddev = detail::read_vector<double>(file, "stddev", p, name);
    const auto bias = detail::read_vector<double>(file, "bias", 3, name);
    for (Eigen::Index k = 0; k < 3; ++k) model.bias(k) = bias[static_cast<std::size_t>(k)];
    model.weights.resize(3, static_cast<Eigen::Index>(p));
    for (Eigen::Index k = 0; k < 3; ++k) {
        const std::string key = "weights" + std::to_string(k);
        const auto row = detail::read_vector<double>(file, key.c_str(), p, name);
        for (Eigen::Index j = 0; j < model.weights.cols(); ++j)
            model.weights(k, j) = row[static_cast<std::size_t>(j)];
    }
    const auto mse = detail::read_vector<double>(file, "training_mse", 3, name);
    for (std::size_t k = 0; k < 3; ++k) model.training_mse[k] = mse[k];
    return model;
}

} // namespace imglong::pred
