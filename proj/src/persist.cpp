#include "normlab/persist.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace normlab {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'N', 'O', 'R', 'M', 'L', 'A', 'B', '1'};
constexpr uint32_t kVersion = 1;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v.has_value() ? fmt_double(*v) : std::string();
}

void write_le_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<char*>(b), 4);
}

uint32_t read_le_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw std::runtime_error(path + ": truncated checkpoint");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

void write_le_f64(std::ofstream& f, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  f.write(reinterpret_cast<char*>(b), 8);
}

double read_le_f64(std::ifstream& f, const std::string& path) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  if (f.gcount() != 8) throw std::runtime_error(path + ": truncated checkpoint");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_tensor(std::ofstream& f, const Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i) write_le_f64(f, t[i]);
}

void read_tensor(std::ifstream& f, const std::string& path, Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = read_le_f64(f, path);
}

// tensors belonging to one layer, in the declaration order the stream uses
template <typename LayerT, typename Fn>
void for_each_state_tensor(LayerT& l, Fn&& fn) {
  if (!l.weight.empty()) fn(l.weight);
  if (!l.bias.empty()) fn(l.bias);
  if (!l.norm_state.gamma.empty()) fn(l.norm_state.gamma);
  if (!l.norm_state.beta.empty()) fn(l.norm_state.beta);
  if (!l.norm_state.running_mean.empty()) fn(l.norm_state.running_mean);
  if (!l.norm_state.running_var.empty()) fn(l.norm_state.running_var);
}

}  // namespace

void write_log(const std::vector<EpochRecord>& records, const std::string& path,
               LogFormat format) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  if (format == LogFormat::csv) {
    f << "epoch,train_loss,train_acc,test_acc,intra_train_deg,intra_test_deg,"
         "inter_deg,iir_train,iir_test,wall_ms\n";
    for (const EpochRecord& r : records) {
      f << r.epoch << ',' << fmt_double(r.train_loss) << ','
        << fmt_double(r.train_acc) << ',' << fmt_opt(r.test_acc) << ','
        << fmt_double(r.angles.intra_train) << ','
        << fmt_opt(r.angles.intra_test) << ',' << fmt_double(r.angles.inter)
        << ',' << fmt_double(r.angles.iir_train) << ','
        << fmt_opt(r.angles.iir_test) << ',' << fmt_double(r.wall_ms) << '\n';
    }
  } else {
    for (const EpochRecord& r : records) {
      json j;
      j["epoch"] = r.epoch;
      j["train_loss"] = r.train_loss;
      j["train_acc"] = r.train_acc;
      if (r.test_acc) j["test_acc"] = *r.test_acc;
      j["intra_train_deg"] = r.angles.intra_train;
      if (r.angles.intra_test) j["intra_test_deg"] = *r.angles.intra_test;
      j["inter_deg"] = r.angles.inter;
      j["iir_train"] = r.angles.iir_train;
      if (r.angles.iir_test) j["iir_test"] = *r.angles.iir_test;
      j["wall_ms"] = r.wall_ms;
      f << j.dump() << '\n';
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<EpochRecord> read_log_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty log");
  std::vector<EpochRecord> out;
  int64_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 10) cells.push_back("");  // trailing empties
    if (cells.size() != 10)
      throw std::runtime_error(path + ": row " + std::to_string(row) +
                               " has " + std::to_string(cells.size()) +
                               " cells, want 10");
    auto num = [&](const std::string& s) { return std::stod(s); };
    auto opt = [&](const std::string& s) {
      return s.empty() ? std::optional<double>{} : std::optional<double>{num(s)};
    };
    EpochRecord r;
    r.epoch = static_cast<int>(num(cells[0]));
    r.train_loss = num(cells[1]);
    r.train_acc = num(cells[2]);
    r.test_acc = opt(cells[3]);
    r.angles.intra_train = num(cells[4]);
    r.angles.intra_test = opt(cells[5]);
    r.angles.inter = num(cells[6]);
    r.angles.iir_train = num(cells[7]);
    r.angles.iir_test = opt(cells[8]);
    r.wall_ms = num(cells[9]);
    out.push_back(r);
  }
  return out;
}

void save_checkpoint(const LayerStack& stack, const std::string& path) {
  stack.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(kMagic, 8);
  write_le_u32(f, kVersion);
  std::string desc = stack.descriptor();
  write_le_u32(f, static_cast<uint32_t>(desc.size()));
  f.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  for (const Layer& l : stack.layers) {
    for_each_state_tensor(l, [&](const Tensor& t) { write_tensor(f, t); });
    if (l.kind == Layer::Kind::norm)
      write_le_f64(f, static_cast<double>(l.norm_state.num_batches_tracked));
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

LayerStack stack_from_descriptor(const std::string& descriptor) {
  json arr = json::parse(descriptor);
  if (!arr.is_array()) throw std::runtime_error("descriptor is not a layer list");
  LayerStack stack;
  for (const json& j : arr) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "linear") {
      stack.layers.push_back(Layer::linear(j.at("in"), j.at("out")));
    } else if (kind == "classifier_linear") {
      stack.layers.push_back(Layer::classifier(j.at("in"), j.at("out")));
    } else if (kind == "conv3x3") {
      stack.layers.push_back(
          Layer::conv3x3(j.at("in"), j.at("out"), j.at("stride")));
    } else if (kind == "relu") {
      stack.layers.push_back(Layer::relu());
    } else if (kind == "flatten") {
      stack.layers.push_back(Layer::flatten());
    } else if (kind == "global_avg_pool") {
      stack.layers.push_back(Layer::global_avg_pool());
    } else if (kind == "norm") {
      NormSpec spec;
      spec.kind = norm_kind_from_string(j.at("norm").get<std::string>());
      spec.eps_l2 = j.at("eps_l2").get<double>();
      spec.eps_var = j.at("eps_var").get<double>();
      spec.momentum = j.at("momentum").get<double>();
      spec.affine = j.at("affine").get<bool>();
      spec.channels_per_group = j.at("cpg").get<int64_t>();
      const json& sn = j.at("sqrt_numel");
      if (sn.is_boolean()) spec.scale_by_sqrt_numel = sn.get<bool>();
      stack.layers.push_back(Layer::norm(spec, j.at("features").get<int64_t>()));
    } else {
      throw std::runtime_error("descriptor names unknown layer kind '" + kind +
                               "'");
    }
  }
  return stack;
}

LayerStack load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a NORMLAB1 checkpoint");
  uint32_t version = read_le_u32(f, path);
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  uint32_t desc_len = read_le_u32(f, path);
  std::string desc(desc_len, '\0');
  f.read(desc.data(), desc_len);
  if (f.gcount() != static_cast<std::streamsize>(desc_len))
    throw std::runtime_error(path + ": truncated descriptor");

  LayerStack stack;
  try {
    stack = stack_from_descriptor(desc);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": descriptor rejected: " + e.what());
  }
  for (Layer& l : stack.layers) {
    for_each_state_tensor(l, [&](Tensor& t) { read_tensor(f, path, t); });
    if (l.kind == Layer::Kind::norm) {
      double count = read_le_f64(f, path);
      if (!(count >= 0.0) || count != std::floor(count))
        throw std::runtime_error(path + ": corrupt batch counter");
      l.norm_state.num_batches_tracked = static_cast<int64_t>(count);
    }
  }
  char extra;
  f.read(&extra, 1);
  if (!f.eof())
    throw std::runtime_error(path + ": trailing bytes after tensor stream");
  stack.set_mode(NormState::Mode::eval);
  return stack;
}

LayerStack load_checkpoint(const std::string& path,
                           const std::string& expected_descriptor) {
  LayerStack stack = load_checkpoint(path);
  if (stack.descriptor() != expected_descriptor)
    throw std::runtime_error(path +
                             ": checkpoint architecture does not match the "
                             "expected descriptor");
  return stack;
}

}  // namespace normlab
