#ifndef NORMLAB_MODEL_HPP_
#define NORMLAB_MODEL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "normlab/data.hpp"
#include "normlab/metrics.hpp"
#include "normlab/norm.hpp"
#include "normlab/rng.hpp"

namespace normlab {

// Desk-scale classifier built from a flat list of layers; normalization
// follows each linear/conv layer, before the activation, and the single
// classifier_linear comes last.
struct Layer {
  enum class Kind {
    linear,
    conv3x3,
    relu,
    norm,
    global_avg_pool,
    flatten,
    classifier_linear
  };

  Kind kind = Kind::relu;
  int64_t in_dim = 0, out_dim = 0;  // features (linear) or channels (conv)
  int64_t stride = 1;               // conv only
  Tensor weight, bias;              // conv carries no bias (a norm follows)
  NormSpec norm_spec;
  NormState norm_state;

  // training buffers
  Tensor grad_weight, grad_bias, vel_weight, vel_bias;
  Tensor grad_gamma, grad_beta, vel_gamma, vel_beta;

  static Layer linear(int64_t in, int64_t out);
  static Layer conv3x3(int64_t in_ch, int64_t out_ch, int64_t stride = 1);
  static Layer relu();
  static Layer norm(const NormSpec& spec, int64_t features);
  static Layer global_avg_pool();
  static Layer flatten();
  static Layer classifier(int64_t in, int64_t num_classes);

  const char* kind_name() const;
};

struct LayerStack {
  std::vector<Layer> layers;

  void validate() const;  // exactly one classifier, last
  void set_mode(NormState::Mode m);
  std::vector<int64_t> norm_positions() const;
  int64_t parameter_count() const;
  /// Shapes of learnable parameters in declaration order.
  std::vector<Shape> parameter_shapes() const;
  /// Architecture descriptor (JSON) used by checkpoints; two stacks with
  /// equal descriptors are layout-compatible.
  std::string descriptor() const;
};

LayerStack make_mlp(int64_t in_dim, const std::vector<int64_t>& hidden,
                    int64_t num_classes, const NormSpec& norm);
LayerStack make_cnn(int64_t in_channels, int64_t num_classes,
                    const NormSpec& norm);

/// Gaussian fan-in init for weights; biases zero. Consumes the rng in
/// declaration order so a seed pins every parameter.
void init_params(LayerStack& stack, Rng& rng);

// Which norm positions run the l2 composite instead of plain BN. Base
// positions must be BN/L2BN; selected ones become L2BN, the rest BN.
enum class PlacementPolicy { none, classifier_only, early_stages, late_stages, all };
const char* to_string(PlacementPolicy p);
PlacementPolicy placement_from_string(const std::string& s);
void apply_placement(LayerStack& stack, PlacementPolicy policy);

struct StackCache {
  std::vector<Tensor> inputs;        // input seen by each layer
  std::vector<NormCache> norm_caches;
  Tensor penultimate;                // features entering the classifier
};

/// Forward pass; pass a cache to enable backward. Mode comes from the norm
/// states (set_mode). Shape errors name the offending layer.
Tensor stack_forward(LayerStack& stack, const Tensor& x, StackCache* cache);

/// Backward through the cached forward; fills per-layer gradient buffers
/// and returns the gradient w.r.t. the stack input.
Tensor stack_backward(LayerStack& stack, const Tensor& grad_logits,
                      StackCache& cache);

void zero_grads(LayerStack& stack);

/// v <- momentum*v + grad + wd*param; param <- param - lr*v
void sgd_update(Tensor& param, const Tensor& grad, Tensor& vel, double lr,
                double momentum, double weight_decay);
void sgd_step(LayerStack& stack, double lr, double momentum,
              double weight_decay);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};
/// Mean log-softmax NLL with its analytic gradient.
LossResult cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);
double accuracy(const Tensor& logits, const std::vector<int64_t>& labels);

enum class Arch { mlp, cnn };

struct TrainConfig {
  uint64_t seed = 1;
  int epochs = 10;
  int64_t batch_size = 32;  // >= 2, the BN train-mode requirement
  double learning_rate = 0.1;
  double momentum_sgd = 0.9;
  double weight_decay = 0.0;
  Arch arch = Arch::mlp;
  std::vector<int64_t> hidden = {128, 128};  // mlp widths
  NormSpec norm;                             // kind at every norm position
  PlacementPolicy placement = PlacementPolicy::none;
  bool deterministic = true;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> test_acc{};
  AngleReport angles;
  double wall_ms = 0.0;  // timing only; excluded from determinism checks
};

struct TrainResult {
  std::vector<EpochRecord> records;
  LayerStack stack;
};

/// Full training run. Deterministic mode pins the kernel thread count to 1
/// and makes the records (minus wall_ms) a pure function of config + data.
/// Per-epoch angle metrics are computed on the features entering the
/// classifier, with class centers always taken from the training split.
TrainResult train(const TrainConfig& cfg, const Dataset& data);

struct EvalResult {
  double accuracy = 0.0;
  Tensor features;  // [N, feature_dim], input to the classifier
};
EvalResult evaluate_with_features(LayerStack& stack, const Tensor& x,
                                  const std::vector<int64_t>& y,
                                  int64_t batch_size);

}  // namespace normlab

#endif  // NORMLAB_MODEL_HPP_
