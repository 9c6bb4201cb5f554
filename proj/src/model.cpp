#include "normlab/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "normlab/exec.hpp"
#include "normlab/kernels.hpp"

namespace normlab {

using json = nlohmann::json;

Layer Layer::linear(int64_t in, int64_t out) {
  Layer l;
  l.kind = Kind::linear;
  l.in_dim = in;
  l.out_dim = out;
  l.weight = Tensor({out, in});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::conv3x3(int64_t in_ch, int64_t out_ch, int64_t stride) {
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv3x3: stride must be 1 or 2");
  Layer l;
  l.kind = Kind::conv3x3;
  l.in_dim = in_ch;
  l.out_dim = out_ch;
  l.stride = stride;
  l.weight = Tensor({out_ch, in_ch, 3, 3});
  return l;
}

Layer Layer::relu() {
  Layer l;
  l.kind = Kind::relu;
  return l;
}

Layer Layer::norm(const NormSpec& spec, int64_t features) {
  Layer l;
  l.kind = Kind::norm;
  l.in_dim = l.out_dim = features;
  l.norm_spec = spec;
  l.norm_state = NormState::init(spec, features);
  return l;
}

Layer Layer::global_avg_pool() {
  Layer l;
  l.kind = Kind::global_avg_pool;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = Kind::flatten;
  return l;
}

Layer Layer::classifier(int64_t in, int64_t num_classes) {
  Layer l = linear(in, num_classes);
  l.kind = Kind::classifier_linear;
  return l;
}

const char* Layer::kind_name() const {
  switch (kind) {
    case Kind::linear: return "linear";
    case Kind::conv3x3: return "conv3x3";
    case Kind::relu: return "relu";
    case Kind::norm: return "norm";
    case Kind::global_avg_pool: return "global_avg_pool";
    case Kind::flatten: return "flatten";
    case Kind::classifier_linear: return "classifier_linear";
  }
  return "?";
}

void LayerStack::validate() const {
  if (layers.empty()) throw std::invalid_argument("empty layer stack");
  int64_t classifiers = 0;
  for (const Layer& l : layers)
    if (l.kind == Layer::Kind::classifier_linear) ++classifiers;
  if (classifiers != 1 ||
      layers.back().kind != Layer::Kind::classifier_linear)
    throw std::invalid_argument(
        "stack must end with its single classifier_linear layer");
}

void LayerStack::set_mode(NormState::Mode m) {
  for (Layer& l : layers)
    if (l.kind == Layer::Kind::norm) l.norm_state.mode = m;
}

std::vector<int64_t> LayerStack::norm_positions() const {
  std::vector<int64_t> pos;
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == Layer::Kind::norm)
      pos.push_back(static_cast<int64_t>(i));
  return pos;
}

std::vector<Shape> LayerStack::parameter_shapes() const {
  std::vector<Shape> shapes;
  for (const Layer& l : layers) {
    if (!l.weight.empty()) shapes.push_back(l.weight.shape());
    if (!l.bias.empty()) shapes.push_back(l.bias.shape());
    if (!l.norm_state.gamma.empty()) shapes.push_back(l.norm_state.gamma.shape());
    if (!l.norm_state.beta.empty()) shapes.push_back(l.norm_state.beta.shape());
  }
  return shapes;
}

int64_t LayerStack::parameter_count() const {
  int64_t n = 0;
  for (const Shape& s : parameter_shapes()) {
    int64_t p = 1;
    for (int64_t d : s) p *= d;
    n += p;
  }
  return n;
}

std::string LayerStack::descriptor() const {
  json arr = json::array();
  for (const Layer& l : layers) {
    json j;
    j["kind"] = l.kind_name();
    switch (l.kind) {
      case Layer::Kind::linear:
      case Layer::Kind::classifier_linear:
        j["in"] = l.in_dim;
        j["out"] = l.out_dim;
        break;
      case Layer::Kind::conv3x3:
        j["in"] = l.in_dim;
        j["out"] = l.out_dim;
        j["stride"] = l.stride;
        break;
      case Layer::Kind::norm:
        j["norm"] = to_string(l.norm_spec.kind);
        j["features"] = l.in_dim;
        j["eps_l2"] = l.norm_spec.eps_l2;
        j["eps_var"] = l.norm_spec.eps_var;
        j["momentum"] = l.norm_spec.momentum;
        j["affine"] = l.norm_spec.affine;
        if (l.norm_spec.scale_by_sqrt_numel.has_value())
          j["sqrt_numel"] = *l.norm_spec.scale_by_sqrt_numel;
        else
          j["sqrt_numel"] = "auto";
        j["cpg"] = l.norm_spec.channels_per_group;
        break;
      default:
        break;
    }
    arr.push_back(j);
  }
  return arr.dump();
}

LayerStack make_mlp(int64_t in_dim, const std::vector<int64_t>& hidden,
                    int64_t num_classes, const NormSpec& norm) {
  if (hidden.empty()) throw std::invalid_argument("mlp needs at least one hidden layer");
  LayerStack stack;
  stack.layers.push_back(Layer::flatten());
  int64_t prev = in_dim;
  for (int64_t h : hidden) {
    stack.layers.push_back(Layer::linear(prev, h));
    stack.layers.push_back(Layer::norm(norm, h));
    stack.layers.push_back(Layer::relu());
    prev = h;
  }
  stack.layers.push_back(Layer::classifier(prev, num_classes));
  return stack;
}

LayerStack make_cnn(int64_t in_channels, int64_t num_classes,
                    const NormSpec& norm) {
  LayerStack stack;
  stack.layers.push_back(Layer::conv3x3(in_channels, 8, 1));
  stack.layers.push_back(Layer::norm(norm, 8));
  stack.layers.push_back(Layer::relu());
  stack.layers.push_back(Layer::conv3x3(8, 16, 2));
  stack.layers.push_back(Layer::norm(norm, 16));
  stack.layers.push_back(Layer::relu());
  stack.layers.push_back(Layer::global_avg_pool());
  stack.layers.push_back(Layer::classifier(16, num_classes));
  return stack;
}

void init_params(LayerStack& stack, Rng& rng) {
  for (Layer& l : stack.layers) {
    switch (l.kind) {
      case Layer::Kind::linear: {
        double std = std::sqrt(2.0 / static_cast<double>(l.in_dim));
        l.weight = randn(rng, l.weight.shape(), 0.0, std);
        l.bias = Tensor::zeros(l.bias.shape());
        break;
      }
      case Layer::Kind::classifier_linear: {
        double std = std::sqrt(1.0 / static_cast<double>(l.in_dim));
        l.weight = randn(rng, l.weight.shape(), 0.0, std);
        l.bias = Tensor::zeros(l.bias.shape());
        break;
      }
      case Layer::Kind::conv3x3: {
        double std = std::sqrt(2.0 / static_cast<double>(l.in_dim * 9));
        l.weight = randn(rng, l.weight.shape(), 0.0, std);
        break;
      }
      default:
        break;
    }
  }
}

const char* to_string(PlacementPolicy p) {
  switch (p) {
    case PlacementPolicy::none: return "none";
    case PlacementPolicy::classifier_only: return "classifier_only";
    case PlacementPolicy::early_stages: return "early_stages";
    case PlacementPolicy::late_stages: return "late_stages";
    case PlacementPolicy::all: return "all";
  }
  return "?";
}

PlacementPolicy placement_from_string(const std::string& s) {
  for (PlacementPolicy p :
       {PlacementPolicy::none, PlacementPolicy::classifier_only,
        PlacementPolicy::early_stages, PlacementPolicy::late_stages,
        PlacementPolicy::all})
    if (s == to_string(p)) return p;
  throw std::invalid_argument("unknown placement policy: " + s);
}

void apply_placement(LayerStack& stack, PlacementPolicy policy) {
  std::vector<int64_t> pos = stack.norm_positions();
  if (pos.empty()) return;
  for (int64_t p : pos) {
    NormKind k = stack.layers[static_cast<size_t>(p)].norm_spec.kind;
    if (k != NormKind::BN && k != NormKind::L2BN)
      throw std::invalid_argument(
          "placement policies rewrite BN positions only; found " +
          std::string(to_string(k)));
  }
  int64_t P = static_cast<int64_t>(pos.size());
  int64_t early = (P + 1) / 2;
  for (int64_t i = 0; i < P; ++i) {
    bool use_l2;
    switch (policy) {
      case PlacementPolicy::none: use_l2 = false; break;
      case PlacementPolicy::all: use_l2 = true; break;
      case PlacementPolicy::classifier_only: use_l2 = (i == P - 1); break;
      case PlacementPolicy::early_stages: use_l2 = (i < early); break;
      case PlacementPolicy::late_stages: use_l2 = (i >= early); break;
      default: use_l2 = false; break;
    }
    stack.layers[static_cast<size_t>(pos[i])].norm_spec.kind =
        use_l2 ? NormKind::L2BN : NormKind::BN;
  }
}

namespace {

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& bias) {
  int64_t b = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor y({b, out});
  kernels::matmul_nt(x.data(), w.data(), y.data(), b, in, out);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < out; ++j) y.at2(i, j) += bias[j];
  return y;
}

Tensor colsum(const Tensor& g) {
  int64_t b = g.dim(0), out = g.dim(1);
  Tensor s({out});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < out; ++j) s[j] += g.at2(i, j);
  return s;
}

int64_t conv_out(int64_t n, int64_t stride) { return (n - 1) / stride + 1; }

}  // namespace

Tensor stack_forward(LayerStack& stack, const Tensor& x, StackCache* cache) {
  stack.validate();
  if (cache) {
    cache->inputs.assign(stack.layers.size(), Tensor());
    cache->norm_caches.assign(stack.layers.size(), NormCache());
  }
  Tensor cur = x;
  for (size_t k = 0; k < stack.layers.size(); ++k) {
    Layer& l = stack.layers[k];
    try {
      if (cache) cache->inputs[k] = cur;
      Tensor next;
      switch (l.kind) {
        case Layer::Kind::linear:
        case Layer::Kind::classifier_linear: {
          if (cur.rank() != 2 || cur.dim(1) != l.in_dim)
            throw std::invalid_argument("expected [b," + std::to_string(l.in_dim) +
                                        "], got " + shape_str(cur.shape()));
          if (l.kind == Layer::Kind::classifier_linear && cache)
            cache->penultimate = cur;
          next = linear_forward(cur, l.weight, l.bias);
          break;
        }
        case Layer::Kind::conv3x3: {
          if (cur.rank() != 4 || cur.dim(1) != l.in_dim)
            throw std::invalid_argument("expected [b," + std::to_string(l.in_dim) +
                                        ",h,w], got " + shape_str(cur.shape()));
          int64_t b = cur.dim(0), h = cur.dim(2), w = cur.dim(3);
          next = Tensor({b, l.out_dim, conv_out(h, l.stride), conv_out(w, l.stride)});
          kernels::conv3x3_forward(cur.data(), l.weight.data(), next.data(), b,
                                   l.in_dim, h, w, l.out_dim, l.stride);
          break;
        }
        case Layer::Kind::relu: {
          next = Tensor(cur.shape());
          for (int64_t i = 0; i < cur.numel(); ++i)
            next[i] = cur[i] > 0.0 ? cur[i] : 0.0;
          break;
        }
        case Layer::Kind::norm: {
          NormResult res = norm_forward(cur, l.norm_spec, l.norm_state);
          if (cache) cache->norm_caches[k] = std::move(res.cache);
          next = std::move(res.y);
          break;
        }
        case Layer::Kind::global_avg_pool: {
          if (cur.rank() != 4)
            throw std::invalid_argument("expected rank-4 input, got " +
                                        shape_str(cur.shape()));
          int64_t b = cur.dim(0), c = cur.dim(1), s = cur.dim(2) * cur.dim(3);
          next = Tensor({b, c});
          for (int64_t i = 0; i < b; ++i)
            for (int64_t ch = 0; ch < c; ++ch) {
              const double* p = cur.data() + (i * c + ch) * s;
              double acc = 0.0;
              for (int64_t j = 0; j < s; ++j) acc += p[j];
              next.at2(i, ch) = acc / static_cast<double>(s);
            }
          break;
        }
        case Layer::Kind::flatten: {
          int64_t b = cur.dim(0);
          next = cur.reshape({b, cur.numel() / b});
          break;
        }
      }
      cur = std::move(next);
    } catch (const std::exception& e) {
      throw std::runtime_error("layer " + std::to_string(k) + " (" +
                               l.kind_name() + "): " + e.what());
    }
  }
  return cur;
}

Tensor stack_backward(LayerStack& stack, const Tensor& grad_logits,
                      StackCache& cache) {
  if (cache.inputs.size() != stack.layers.size())
    throw std::invalid_argument("stack_backward: cache does not match stack");
  Tensor g = grad_logits;
  for (int64_t k = static_cast<int64_t>(stack.layers.size()) - 1; k >= 0; --k) {
    Layer& l = stack.layers[static_cast<size_t>(k)];
    const Tensor& in = cache.inputs[static_cast<size_t>(k)];
    switch (l.kind) {
      case Layer::Kind::linear:
      case Layer::Kind::classifier_linear: {
        int64_t b = in.dim(0);
        l.grad_weight = Tensor({l.out_dim, l.in_dim});
        kernels::matmul_tn(g.data(), in.data(), l.grad_weight.data(), l.out_dim,
                           b, l.in_dim);
        l.grad_bias = colsum(g);
        Tensor gx({b, l.in_dim});
        kernels::matmul(g.data(), l.weight.data(), gx.data(), b, l.out_dim,
                        l.in_dim);
        g = std::move(gx);
        break;
      }
      case Layer::Kind::conv3x3: {
        int64_t b = in.dim(0), h = in.dim(2), w = in.dim(3);
        l.grad_weight = Tensor(l.weight.shape());
        kernels::conv3x3_backward_weight(g.data(), in.data(),
                                         l.grad_weight.data(), b, l.in_dim, h,
                                         w, l.out_dim, l.stride);
        Tensor gx(in.shape());
        kernels::conv3x3_backward_input(g.data(), l.weight.data(), gx.data(), b,
                                        l.in_dim, h, w, l.out_dim, l.stride);
        g = std::move(gx);
        break;
      }
      case Layer::Kind::relu: {
        Tensor gx(in.shape());
        for (int64_t i = 0; i < in.numel(); ++i)
          gx[i] = in[i] > 0.0 ? g[i] : 0.0;
        g = std::move(gx);
        break;
      }
      case Layer::Kind::norm: {
        NormGrads ng = norm_backward(g, cache.norm_caches[static_cast<size_t>(k)],
                                     l.norm_spec, l.norm_state);
        l.grad_gamma = std::move(ng.gamma);
        l.grad_beta = std::move(ng.beta);
        g = std::move(ng.input);
        break;
      }
      case Layer::Kind::global_avg_pool: {
        int64_t b = in.dim(0), c = in.dim(1), s = in.dim(2) * in.dim(3);
        Tensor gx(in.shape());
        double inv = 1.0 / static_cast<double>(s);
        for (int64_t i = 0; i < b; ++i)
          for (int64_t ch = 0; ch < c; ++ch) {
            double v = g.at2(i, ch) * inv;
            double* p = gx.data() + (i * c + ch) * s;
            for (int64_t j = 0; j < s; ++j) p[j] = v;
          }
        g = std::move(gx);
        break;
      }
      case Layer::Kind::flatten: {
        g = g.reshape(in.shape());
        break;
      }
    }
  }
  return g;
}

void zero_grads(LayerStack& stack) {
  for (Layer& l : stack.layers) {
    if (!l.weight.empty()) l.grad_weight = Tensor::zeros(l.weight.shape());
    if (!l.bias.empty()) l.grad_bias = Tensor::zeros(l.bias.shape());
    if (!l.norm_state.gamma.empty()) {
      l.grad_gamma = Tensor::zeros(l.norm_state.gamma.shape());
      l.grad_beta = Tensor::zeros(l.norm_state.beta.shape());
    }
  }
}

void sgd_update(Tensor& param, const Tensor& grad, Tensor& vel, double lr,
                double momentum, double weight_decay) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("sgd_update: param/grad shape mismatch " +
                                shape_str(param.shape()) + " vs " +
                                shape_str(grad.shape()));
  if (vel.empty()) vel = Tensor::zeros(param.shape());
  for (int64_t i = 0; i < param.numel(); ++i) {
    vel[i] = momentum * vel[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * vel[i];
  }
}

void sgd_step(LayerStack& stack, double lr, double momentum,
              double weight_decay) {
  for (Layer& l : stack.layers) {
    if (!l.weight.empty() && !l.grad_weight.empty())
      sgd_update(l.weight, l.grad_weight, l.vel_weight, lr, momentum, weight_decay);
    if (!l.bias.empty() && !l.grad_bias.empty())
      sgd_update(l.bias, l.grad_bias, l.vel_bias, lr, momentum, weight_decay);
    if (!l.norm_state.gamma.empty() && !l.grad_gamma.empty())
      sgd_update(l.norm_state.gamma, l.grad_gamma, l.vel_gamma, lr, momentum,
                 weight_decay);
    if (!l.norm_state.beta.empty() && !l.grad_beta.empty())
      sgd_update(l.norm_state.beta, l.grad_beta, l.vel_beta, lr, momentum,
                 weight_decay);
  }
}

LossResult cross_entropy(const Tensor& logits,
                         const std::vector<int64_t>& labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy: logits must be [b, classes]");
  int64_t b = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b)
    throw std::invalid_argument("cross_entropy: labels length mismatch");
  LossResult res;
  res.grad_logits = Tensor({b, K});
  double total = 0.0;
  double inv_b = 1.0 / static_cast<double>(b);
  for (int64_t i = 0; i < b; ++i) {
    int64_t y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= K)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(K) + ")");
    double mx = logits.at2(i, 0);
    for (int64_t j = 1; j < K; ++j) mx = std::max(mx, logits.at2(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < K; ++j) sum += std::exp(logits.at2(i, j) - mx);
    double lse = mx + std::log(sum);
    total += lse - logits.at2(i, y);
    for (int64_t j = 0; j < K; ++j) {
      double p = std::exp(logits.at2(i, j) - mx) / sum;
      res.grad_logits.at2(i, j) = (p - (j == y ? 1.0 : 0.0)) * inv_b;
    }
  }
  res.loss = total * inv_b;
  return res;
}

double accuracy(const Tensor& logits, const std::vector<int64_t>& labels) {
  int64_t b = logits.dim(0), K = logits.dim(1);
  int64_t correct = 0;
  for (int64_t i = 0; i < b; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < K; ++j)
      if (logits.at2(i, j) > logits.at2(i, best)) best = j;
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(b);
}

void TrainConfig::validate() const {
  if (batch_size < 2)
    throw std::invalid_argument("batch_size must be >= 2 (train-mode BN)");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(momentum_sgd >= 0.0 && momentum_sgd < 1.0))
    throw std::invalid_argument("momentum must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (arch == Arch::mlp && hidden.empty())
    throw std::invalid_argument("mlp needs hidden layer widths");
  norm.validate();
  if (placement != PlacementPolicy::none && norm.kind != NormKind::BN)
    throw std::invalid_argument(
        "placement policies apply to a bn base; set norm to bn");
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& perm,
                   int64_t off, int64_t count) {
  Shape s = x.shape();
  s[0] = count;
  int64_t row_sz = x.numel() / x.dim(0);
  Tensor out(s);
  for (int64_t i = 0; i < count; ++i) {
    const double* src = x.data() + perm[static_cast<size_t>(off + i)] * row_sz;
    std::copy(src, src + row_sz, out.data() + i * row_sz);
  }
  return out;
}

// all-zero feature rows (possible after relu) would break the angle
// metrics; nudge them deterministically instead
void floor_zero_rows(Tensor& feats) {
  int64_t n = feats.dim(0), d = feats.dim(1);
  for (int64_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += feats.at2(r, j) * feats.at2(r, j);
    if (std::sqrt(acc) <= 1e-12) feats.at2(r, 0) = 1e-9;
  }
}

}  // namespace

EvalResult evaluate_with_features(LayerStack& stack, const Tensor& x,
                                  const std::vector<int64_t>& y,
                                  int64_t batch_size) {
  int64_t n = x.dim(0);
  int64_t correct = 0;
  Tensor feats;
  for (int64_t off = 0; off < n; off += batch_size) {
    int64_t bs = std::min(batch_size, n - off);
    Tensor xb = x.slice_rows(off, off + bs);
    StackCache cache;
    Tensor logits = stack_forward(stack, xb, &cache);
    for (int64_t i = 0; i < bs; ++i) {
      int64_t best = 0;
      for (int64_t j = 1; j < logits.dim(1); ++j)
        if (logits.at2(i, j) > logits.at2(i, best)) best = j;
      if (best == y[static_cast<size_t>(off + i)]) ++correct;
    }
    if (feats.empty()) feats = Tensor({n, cache.penultimate.dim(1)});
    std::copy(cache.penultimate.data(),
              cache.penultimate.data() + cache.penultimate.numel(),
              feats.data() + off * cache.penultimate.dim(1));
  }
  return {static_cast<double>(correct) / static_cast<double>(n), std::move(feats)};
}

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  data.validate();
  exec::set_threads(cfg.deterministic ? 1 : exec::default_parallel_threads());
  Rng rng(cfg.seed);

  LayerStack stack;
  if (cfg.arch == Arch::mlp) {
    int64_t in_dim = data.x_train.numel() / data.x_train.dim(0);
    stack = make_mlp(in_dim, cfg.hidden, data.num_classes, cfg.norm);
  } else {
    if (data.x_train.rank() != 4)
      throw std::invalid_argument("cnn needs [N,C,H,W] data, got " +
                                  shape_str(data.x_train.shape()));
    stack = make_cnn(data.x_train.dim(1), data.num_classes, cfg.norm);
  }
  if (cfg.placement != PlacementPolicy::none)
    apply_placement(stack, cfg.placement);
  init_params(stack, rng);

  int64_t n = data.x_train.dim(0);
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);

  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    stack.set_mode(NormState::Mode::train);
    rng.shuffle(perm);

    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0, step = 0;
    for (int64_t off = 0; off < n; off += cfg.batch_size) {
      int64_t bs = std::min(cfg.batch_size, n - off);
      if (bs < 2) break;  // a singleton remainder cannot feed train-mode BN
      ++step;
      Tensor xb = gather_rows(data.x_train, perm, off, bs);
      std::vector<int64_t> yb(static_cast<size_t>(bs));
      for (int64_t i = 0; i < bs; ++i)
        yb[static_cast<size_t>(i)] =
            data.y_train[static_cast<size_t>(perm[static_cast<size_t>(off + i)])];

      try {
        StackCache cache;
        Tensor logits = stack_forward(stack, xb, &cache);
        LossResult loss = cross_entropy(logits, yb);
        if (!std::isfinite(loss.loss))
          throw std::runtime_error("non-finite loss");
        loss_sum += loss.loss * static_cast<double>(bs);
        correct += static_cast<int64_t>(
            std::lround(accuracy(logits, yb) * static_cast<double>(bs)));
        seen += bs;

        stack_backward(stack, loss.grad_logits, cache);
        sgd_step(stack, cfg.learning_rate, cfg.momentum_sgd, cfg.weight_decay);
      } catch (const std::exception& e) {
        throw std::runtime_error("training aborted at epoch " +
                                 std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": " + e.what());
      }
    }

    stack.set_mode(NormState::Mode::eval);
    EvalResult tr = evaluate_with_features(stack, data.x_train, data.y_train, 256);
    floor_zero_rows(tr.features);
    LabeledFeatures train_feats{std::move(tr.features), data.y_train,
                                data.num_classes};

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (data.has_test()) {
      EvalResult te = evaluate_with_features(stack, data.x_test, data.y_test, 256);
      floor_zero_rows(te.features);
      LabeledFeatures test_feats{std::move(te.features), data.y_test,
                                 data.num_classes};
      rec.angles = angle_report(train_feats, &test_feats);
      rec.test_acc = te.accuracy;
    } else {
      rec.angles = angle_report(train_feats, nullptr);
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.records.push_back(std::move(rec));
  }
  result.stack = std::move(stack);
  return result;
}

}  // namespace normlab
