#ifndef NORMLAB_DATA_HPP_
#define NORMLAB_DATA_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

struct Dataset {
  enum class Provenance { synthetic_blobs, idx_files, csv };

  Tensor x_train;  // [N, d] or [N, C, H, W]
  std::vector<int64_t> y_train;
  Tensor x_test;   // empty tensor when there is no test split
  std::vector<int64_t> y_test;
  int64_t num_classes = 0;
  Provenance provenance = Provenance::synthetic_blobs;

  bool has_test() const { return !x_test.empty(); }
  void validate() const;
};

/// One loaded split (images+labels or a csv file).
struct DataPart {
  Tensor x;
  std::vector<int64_t> y;
};

// Gaussian direction clusters with a controllable within-class spread of
// Euclidean norms: each sample points near its class direction and its
// norm is drawn uniformly from [center_scale, center_scale * norm_spread].
struct BlobSpec {
  int64_t num_classes = 2;
  int64_t dim = 2;
  int64_t samples_per_class = 100;  // training split; test gets 1/4 of this
  double center_scale = 1.0;
  double norm_spread = 1.0;  // >= 1, max/min norm ratio within a class
  uint64_t seed = 0;

  void validate() const;
};

Dataset make_blobs(const BlobSpec& spec);

// IDX container (big-endian dims, magic 0x803 for images / 0x801 for
// labels). Pixels come back scaled to [0,1] with shape [N,1,H,W].
DataPart load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx_images(const std::string& path, const Tensor& images);
void write_idx_labels(const std::string& path, const std::vector<int64_t>& labels);

/// Numeric CSV with a required header row; label_column names the integer
/// class column, every other column becomes a feature.
DataPart load_csv(const std::string& path, const std::string& label_column);

// A renderable 10-class-style image corpus: each class is a fixed smooth
// template of Gaussian bumps, each sample scales it by a random brightness
// in [1/brightness_spread, 1] plus pixel noise, then quantizes to bytes.
// Written as four IDX files (train/test x images/labels) under dir.
struct ImageCorpusSpec {
  int64_t num_classes = 10;
  int64_t image_size = 28;
  int64_t train_per_class = 100;
  int64_t test_per_class = 25;
  double brightness_spread = 10.0;  // >= 1
  double noise = 0.03;
  uint64_t seed = 7;
};

struct ImageCorpusPaths {
  std::string train_images, train_labels, test_images, test_labels;
};

ImageCorpusPaths write_synthetic_idx_corpus(const std::string& dir,
                                            const ImageCorpusSpec& spec);

}  // namespace normlab

#endif  // NORMLAB_DATA_HPP_
