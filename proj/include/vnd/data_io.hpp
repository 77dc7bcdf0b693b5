#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vnd/tensor.hpp"

namespace vnd {

/// n x d sample matrix, row-major single precision. Loaders guarantee all
/// values are finite; downstream code relies on that.
struct FeatureMatrix {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<float> values;
    std::vector<int> labels; // empty or size n
    std::vector<std::string> feature_names; // empty or size d
    std::string source;        // file path or generator tag
    std::string preprocessing; // human-readable description of applied steps

    bool has_labels() const { return !labels.empty(); }
    std::span<const float> row(std::size_t i) const { return {values.data() + i * d, d}; }
    VecD row_double(std::size_t i) const;
    Tensor row_tensor(std::size_t i, const Shape& shape) const;
    FeatureMatrix select(const std::vector<std::size_t>& ids) const;
};

/// IDX image file (big-endian, magic 2051), flattened to n x (h*w) and
/// scaled to [0, 1]. Label files are rejected here; use load_idx_labels.
FeatureMatrix load_idx(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

/// Loads the matrix container (text header + little-endian f32 payload) or,
/// when the file does not start with the container magic, delimited text with
/// a header row (comma/tab/space separated, optional "label" column).
FeatureMatrix load_matrix(const std::string& path);
void save_matrix(const FeatureMatrix& m, const std::string& path);

struct PreprocessStats {
    std::map<std::string, double> source_means; // per-source global intensity
    VecD channel_means;                          // train-set per-feature means
    bool from_training = false;

    bool empty() const { return channel_means.empty(); }
};

/// Two-stage intensity normalization: divide each source by its global mean,
/// then divide each feature by the training-set per-channel mean. When stats
/// are given (test time) the stored constants are reused verbatim; otherwise
/// both stages are fit on `data`. Requires strictly positive means.
std::pair<FeatureMatrix, PreprocessStats> preprocess(const FeatureMatrix& data,
                                                     const PreprocessStats* stats = nullptr);

struct SplitSpec {
    double train_fraction = 0.8;
    double val_fraction = 0.2; // of the remainder semantics: see split()
    std::uint64_t seed = 0;
};

struct Split {
    FeatureMatrix train;
    FeatureMatrix validation;
    FeatureMatrix test; // empty when fractions cover everything
};

/// Seed-reproducible disjoint cover. train_fraction and val_fraction are
/// fractions of the whole set; anything left over becomes the test part.
Split split(const FeatureMatrix& data, const SplitSpec& spec);

struct OneDigitOut {
    FeatureMatrix train;      // 80% of normal (labels != digit)
    FeatureMatrix validation; // held out from training normals
    FeatureMatrix test;       // 20% of normal + all of the novelty digit, labels in {0,1}
};

/// The benchmark split: normal = all classes except `digit`, split
/// train/validation; test = remaining normal fraction plus every sample of
/// the novelty digit, relabeled 1 (novel) vs 0 (normal).
OneDigitOut one_digit_out(const FeatureMatrix& data, int digit, double train_fraction,
                          double val_fraction, std::uint64_t seed);

struct SynthConfig {
    std::size_t d = 46;
    std::size_t n_normal = 4000;
    std::size_t n_abnormal = 1000;
    double separation = 4.0; // Euclidean distance between cluster means
    std::uint64_t seed = 0;
};

/// Standard-Gaussian normal cluster plus a mean-shifted abnormal cluster at
/// the configured separation; labels 0/1.
FeatureMatrix make_synthetic(const SynthConfig& config);

} // namespace vnd
