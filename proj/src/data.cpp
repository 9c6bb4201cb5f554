#include "normlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "normlab/rng.hpp"

namespace normlab {

namespace {

// angular jitter of sample directions around their class direction
constexpr double kDirectionJitter = 0.25;

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

void normalize_inplace(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw std::runtime_error("degenerate zero direction");
  for (double& x : v) x /= n;
}

uint32_t read_be_u32(std::ifstream& f, const std::string& path, int64_t& offset) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4)
    throw std::runtime_error(path + ": truncated file at byte " +
                             std::to_string(offset));
  offset += 4;
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

void Dataset::validate() const {
  if (x_train.empty()) throw std::invalid_argument("dataset: empty training split");
  if (static_cast<int64_t>(y_train.size()) != x_train.dim(0))
    throw std::invalid_argument("dataset: train labels/features length mismatch");
  if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
  for (int64_t y : y_train)
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("dataset: train label " + std::to_string(y) +
                                  " outside [0," + std::to_string(num_classes) + ")");
  if (has_test()) {
    if (static_cast<int64_t>(y_test.size()) != x_test.dim(0))
      throw std::invalid_argument("dataset: test labels/features length mismatch");
    if (x_test.rank() != x_train.rank())
      throw std::invalid_argument("dataset: train/test rank mismatch");
    for (int64_t i = 1; i < x_train.rank(); ++i)
      if (x_test.dim(i) != x_train.dim(i))
        throw std::invalid_argument("dataset: train/test sample shape mismatch");
    for (int64_t y : y_test)
      if (y < 0 || y >= num_classes)
        throw std::invalid_argument("dataset: test label out of range");
  }
}

void BlobSpec::validate() const {
  if (num_classes < 1 || dim < 1 || samples_per_class < 1)
    throw std::invalid_argument("blobs: classes, dim, samples must be >= 1");
  if (!(norm_spread >= 1.0))
    throw std::invalid_argument("blobs: norm_spread must be >= 1");
  if (!(center_scale > 0.0))
    throw std::invalid_argument("blobs: center_scale must be > 0");
}

Dataset make_blobs(const BlobSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  std::vector<std::vector<double>> directions;
  directions.reserve(static_cast<size_t>(spec.num_classes));
  for (int64_t c = 0; c < spec.num_classes; ++c) {
    std::vector<double> dir(static_cast<size_t>(spec.dim));
    for (double& v : dir) v = rng.normal();
    normalize_inplace(dir);
    directions.push_back(std::move(dir));
  }

  auto draw_split = [&](int64_t per_class, Tensor& x, std::vector<int64_t>& y) {
    int64_t n = per_class * spec.num_classes;
    x = Tensor({n, spec.dim});
    y.resize(static_cast<size_t>(n));
    int64_t row = 0;
    for (int64_t c = 0; c < spec.num_classes; ++c) {
      for (int64_t j = 0; j < per_class; ++j, ++row) {
        std::vector<double> dir(static_cast<size_t>(spec.dim));
        for (int64_t k = 0; k < spec.dim; ++k)
          dir[static_cast<size_t>(k)] =
              directions[static_cast<size_t>(c)][static_cast<size_t>(k)] +
              kDirectionJitter * rng.normal();
        normalize_inplace(dir);
        double r = rng.uniform(spec.center_scale,
                               spec.center_scale * spec.norm_spread);
        for (int64_t k = 0; k < spec.dim; ++k)
          x.at2(row, k) = r * dir[static_cast<size_t>(k)];
        y[static_cast<size_t>(row)] = c;
      }
    }
  };

  Dataset out;
  out.num_classes = spec.num_classes;
  out.provenance = Dataset::Provenance::synthetic_blobs;
  draw_split(spec.samples_per_class, out.x_train, out.y_train);
  draw_split(std::max<int64_t>(1, spec.samples_per_class / 4), out.x_test,
             out.y_test);
  out.validate();
  return out;
}

DataPart load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imf(images_path, std::ios::binary);
  if (!imf) throw std::runtime_error("cannot open " + images_path);
  int64_t off = 0;
  uint32_t magic = read_be_u32(imf, images_path, off);
  if (magic != kIdxImagesMagic) {
    std::ostringstream os;
    os << images_path << ": bad image magic 0x" << std::hex << magic
       << " at byte 0 (want 0x" << kIdxImagesMagic << ")";
    throw std::runtime_error(os.str());
  }
  uint32_t n = read_be_u32(imf, images_path, off);
  uint32_t h = read_be_u32(imf, images_path, off);
  uint32_t w = read_be_u32(imf, images_path, off);
  if (n == 0 || h == 0 || w == 0)
    throw std::runtime_error(images_path + ": zero dimension in header at byte " +
                             std::to_string(off));
  int64_t count = int64_t(n) * h * w;
  std::vector<unsigned char> bytes(static_cast<size_t>(count));
  imf.read(reinterpret_cast<char*>(bytes.data()), count);
  if (imf.gcount() != count)
    throw std::runtime_error(images_path + ": truncated file at byte " +
                             std::to_string(off + imf.gcount()));

  std::ifstream lbf(labels_path, std::ios::binary);
  if (!lbf) throw std::runtime_error("cannot open " + labels_path);
  int64_t loff = 0;
  uint32_t lmagic = read_be_u32(lbf, labels_path, loff);
  if (lmagic != kIdxLabelsMagic) {
    std::ostringstream os;
    os << labels_path << ": bad label magic 0x" << std::hex << lmagic
       << " at byte 0 (want 0x" << kIdxLabelsMagic << ")";
    throw std::runtime_error(os.str());
  }
  uint32_t ln = read_be_u32(lbf, labels_path, loff);
  if (ln != n)
    throw std::runtime_error(labels_path + ": label count " + std::to_string(ln) +
                             " does not match image count " + std::to_string(n));
  std::vector<unsigned char> lbytes(ln);
  lbf.read(reinterpret_cast<char*>(lbytes.data()), ln);
  if (lbf.gcount() != static_cast<int64_t>(ln))
    throw std::runtime_error(labels_path + ": truncated file at byte " +
                             std::to_string(loff + lbf.gcount()));

  DataPart part;
  part.x = Tensor({int64_t(n), 1, int64_t(h), int64_t(w)});
  for (int64_t i = 0; i < count; ++i)
    part.x[i] = static_cast<double>(bytes[static_cast<size_t>(i)]) / 255.0;
  part.y.assign(lbytes.begin(), lbytes.end());
  return part;
}

void write_idx_images(const std::string& path, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1)
    throw std::invalid_argument("write_idx_images: expected [N,1,H,W], got " +
                                shape_str(images.shape()));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_be_u32(f, kIdxImagesMagic);
  write_be_u32(f, static_cast<uint32_t>(images.dim(0)));
  write_be_u32(f, static_cast<uint32_t>(images.dim(2)));
  write_be_u32(f, static_cast<uint32_t>(images.dim(3)));
  for (int64_t i = 0; i < images.numel(); ++i) {
    double v = std::clamp(images[i], 0.0, 1.0);
    unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
    f.write(reinterpret_cast<char*>(&b), 1);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<int64_t>& labels) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_be_u32(f, kIdxLabelsMagic);
  write_be_u32(f, static_cast<uint32_t>(labels.size()));
  for (int64_t v : labels) {
    if (v < 0 || v > 255)
      throw std::invalid_argument("idx label " + std::to_string(v) +
                                  " does not fit a byte");
    unsigned char b = static_cast<unsigned char>(v);
    f.write(reinterpret_cast<char*>(&b), 1);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

DataPart load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error(path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  int64_t label_idx = -1;
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == label_column) label_idx = static_cast<int64_t>(i);
  if (label_idx < 0)
    throw std::runtime_error(path + ": no column named '" + label_column + "'");

  std::vector<double> values;
  std::vector<int64_t> labels;
  int64_t rows = 0;
  int64_t row_no = 1;  // header is row 1
  while (std::getline(f, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int64_t col = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw std::runtime_error(path + ": non-numeric cell at row " +
                                 std::to_string(row_no) + " column " +
                                 std::to_string(col + 1));
      if (col == label_idx) {
        if (v != std::floor(v))
          throw std::runtime_error(path + ": non-integer label at row " +
                                   std::to_string(row_no));
        labels.push_back(static_cast<int64_t>(v));
      } else {
        values.push_back(v);
      }
      ++col;
    }
    if (col != static_cast<int64_t>(header.size()))
      throw std::runtime_error(path + ": row " + std::to_string(row_no) + " has " +
                               std::to_string(col) + " cells, header has " +
                               std::to_string(header.size()));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path + ": no data rows");

  int64_t d = static_cast<int64_t>(header.size()) - 1;
  if (d < 1) throw std::runtime_error(path + ": no feature columns");
  DataPart part;
  part.x = Tensor({rows, d}, std::move(values));
  part.y = std::move(labels);
  return part;
}

ImageCorpusPaths write_synthetic_idx_corpus(const std::string& dir,
                                            const ImageCorpusSpec& spec) {
  if (spec.num_classes < 1 || spec.num_classes > 255)
    throw std::invalid_argument("image corpus: classes must be in [1,255]");
  if (spec.image_size < 8)
    throw std::invalid_argument("image corpus: image_size must be >= 8");
  if (!(spec.brightness_spread >= 1.0))
    throw std::invalid_argument("image corpus: brightness_spread must be >= 1");
  std::filesystem::create_directories(dir);

  Rng rng(spec.seed);
  int64_t S = spec.image_size;

  // class templates: a few gaussian bumps, peak-normalized
  std::vector<Tensor> templates;
  for (int64_t c = 0; c < spec.num_classes; ++c) {
    Tensor t({S, S});
    for (int bump = 0; bump < 3; ++bump) {
      double cy = rng.uniform(4.0, static_cast<double>(S - 4));
      double cx = rng.uniform(4.0, static_cast<double>(S - 4));
      double sg = rng.uniform(1.5, 3.5);
      double amp = rng.uniform(0.6, 1.0);
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) {
          double dy = (static_cast<double>(y) - cy) / sg;
          double dx = (static_cast<double>(x) - cx) / sg;
          t.at2(y, x) += amp * std::exp(-0.5 * (dy * dy + dx * dx));
        }
    }
    double peak = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) peak = std::max(peak, t[i]);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] /= peak;
    templates.push_back(std::move(t));
  }

  auto render_split = [&](int64_t per_class, Tensor& x, std::vector<int64_t>& y) {
    int64_t n = per_class * spec.num_classes;
    x = Tensor({n, 1, S, S});
    y.resize(static_cast<size_t>(n));
    int64_t row = 0;
    for (int64_t c = 0; c < spec.num_classes; ++c) {
      const Tensor& t = templates[static_cast<size_t>(c)];
      for (int64_t j = 0; j < per_class; ++j, ++row) {
        double brightness = rng.uniform(1.0 / spec.brightness_spread, 1.0);
        double* px = x.data() + row * S * S;
        for (int64_t i = 0; i < S * S; ++i)
          px[i] = std::clamp(brightness * t[i] + spec.noise * rng.normal(),
                             0.0, 1.0);
        y[static_cast<size_t>(row)] = c;
      }
    }
  };

  Tensor xtr, xte;
  std::vector<int64_t> ytr, yte;
  render_split(spec.train_per_class, xtr, ytr);
  render_split(spec.test_per_class, xte, yte);

  ImageCorpusPaths paths;
  paths.train_images = dir + "/train-images-idx3-ubyte";
  paths.train_labels = dir + "/train-labels-idx1-ubyte";
  paths.test_images = dir + "/test-images-idx3-ubyte";
  paths.test_labels = dir + "/test-labels-idx1-ubyte";
  write_idx_images(paths.train_images, xtr);
  write_idx_labels(paths.train_labels, ytr);
  write_idx_images(paths.test_images, xte);
  write_idx_labels(paths.test_labels, yte);
  return paths;
}

}  // namespace normlab
