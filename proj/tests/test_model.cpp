#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "normlab/data.hpp"
#include "normlab/exec.hpp"
#include "normlab/gradcheck.hpp"
#include "normlab/model.hpp"

using namespace normlab;

namespace {

// scalar loss of the whole stack as a pure function, for finite differences
double stack_loss(const LayerStack& proto, const Tensor& x,
                  const std::vector<int64_t>& y) {
  LayerStack s = proto;  // running stats mutate, so work on a copy
  StackCache cache;
  Tensor logits = stack_forward(s, x, &cache);
  return cross_entropy(logits, y).loss;
}

// finite-difference gradient of the loss w.r.t. one tensor reachable
// through `edit`, which plants the candidate value into a stack copy
template <typename Edit>
Tensor fd_loss_grad(const LayerStack& proto, const Tensor& x,
                    const std::vector<int64_t>& y, const Tensor& at,
                    Edit&& edit, double h = 1e-5) {
  Tensor grad(at.shape());
  Tensor probe = at;
  for (int64_t i = 0; i < at.numel(); ++i) {
    double orig = probe[i];
    probe[i] = orig + h;
    LayerStack up = proto;
    edit(up, probe);
    probe[i] = orig - h;
    LayerStack dn = proto;
    edit(dn, probe);
    probe[i] = orig;
    StackCache c1, c2;
    double lu = cross_entropy(stack_forward(up, x, &c1), y).loss;
    double ld = cross_entropy(stack_forward(dn, x, &c2), y).loss;
    grad[i] = (lu - ld) / (2.0 * h);
  }
  return grad;
}

void check_stack_gradients(LayerStack& stack, const Tensor& x,
                           const std::vector<int64_t>& y, double tol) {
  stack.set_mode(NormState::Mode::train);
  const LayerStack proto = stack;

  StackCache cache;
  Tensor logits = stack_forward(stack, x, &cache);
  LossResult loss = cross_entropy(logits, y);
  Tensor gin = stack_backward(stack, loss.grad_logits, cache);

  Tensor fd_in = fd_loss_grad(proto, x, y, x,
                              [](LayerStack&, const Tensor&) {},
                              1e-5);
  // input gradient: perturb x directly
  {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
      double orig = probe[i];
      probe[i] = orig + 1e-5;
      double lu = stack_loss(proto, probe, y);
      probe[i] = orig - 1e-5;
      double ld = stack_loss(proto, probe, y);
      probe[i] = orig;
      grad[i] = (lu - ld) / 2e-5;
    }
    CHECK(max_rel_err(gin, grad) <= tol);
  }

  for (size_t k = 0; k < stack.layers.size(); ++k) {
    Layer& l = stack.layers[k];
    INFO("layer ", k, " (", l.kind_name(), ")");
    if (!l.weight.empty()) {
      Tensor fd = fd_loss_grad(proto, x, y, proto.layers[k].weight,
                               [k](LayerStack& s, const Tensor& w) {
                                 s.layers[k].weight = w;
                               });
      CHECK(max_rel_err(l.grad_weight, fd) <= tol);
    }
    if (!l.bias.empty()) {
      Tensor fd = fd_loss_grad(proto, x, y, proto.layers[k].bias,
                               [k](LayerStack& s, const Tensor& b) {
                                 s.layers[k].bias = b;
                               });
      CHECK(max_rel_err(l.grad_bias, fd) <= tol);
    }
    if (!l.norm_state.gamma.empty()) {
      Tensor fdg = fd_loss_grad(proto, x, y, proto.layers[k].norm_state.gamma,
                                [k](LayerStack& s, const Tensor& g) {
                                  s.layers[k].norm_state.gamma = g;
                                });
      CHECK(max_rel_err(l.grad_gamma, fdg) <= tol);
      Tensor fdb = fd_loss_grad(proto, x, y, proto.layers[k].norm_state.beta,
                                [k](LayerStack& s, const Tensor& b) {
                                  s.layers[k].norm_state.beta = b;
                                });
      CHECK(max_rel_err(l.grad_beta, fdb) <= tol);
    }
  }
}

Dataset tiny_blobs(uint64_t seed) {
  BlobSpec bs;
  bs.num_classes = 3;
  bs.dim = 6;
  bs.samples_per_class = 20;
  bs.norm_spread = 4.0;
  bs.seed = seed;
  return make_blobs(bs);
}

bool records_equal_ignoring_wall(const EpochRecord& a, const EpochRecord& b) {
  auto opt_eq = [](const std::optional<double>& x, const std::optional<double>& y) {
    return x.has_value() == y.has_value() && (!x || *x == *y);
  };
  return a.epoch == b.epoch && a.train_loss == b.train_loss &&
         a.train_acc == b.train_acc && opt_eq(a.test_acc, b.test_acc) &&
         a.angles.intra_train == b.angles.intra_train &&
         opt_eq(a.angles.intra_test, b.angles.intra_test) &&
         a.angles.inter == b.angles.inter &&
         a.angles.iir_train == b.angles.iir_train &&
         opt_eq(a.angles.iir_test, b.angles.iir_test);
}

}  // namespace

TEST_CASE("cross entropy basics") {
  {  // equal logits: loss = ln C
    Tensor logits = Tensor::full({2, 5}, 0.3);
    LossResult r = cross_entropy(logits, {1, 4});
    CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  {  // a huge correct-class margin drives the loss to zero
    Tensor logits = Tensor::zeros({1, 3});
    logits.at2(0, 2) = 60.0;
    LossResult r = cross_entropy(logits, {2});
    CHECK(r.loss < 1e-12);
  }
  {  // analytic gradient vs finite differences
    Rng rng(3);
    Tensor logits = randn(rng, {4, 3});
    std::vector<int64_t> y{0, 2, 1, 2};
    LossResult r = cross_entropy(logits, y);
    Tensor fd = fd_gradient(
        [&](const Tensor& lg) {
          Tensor out({1});
          out[0] = cross_entropy(lg, y).loss;
          return out;
        },
        logits, Tensor::ones({1}));
    CHECK(max_rel_err(r.grad_logits, fd) <= 1e-6);
  }
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 3}), {5}),
                  std::invalid_argument);
}

TEST_CASE("sgd update rule") {
  {  // no momentum, no decay: plain gradient step
    Tensor p = Tensor::full({3}, 1.0);
    Tensor g = Tensor::full({3}, 0.5);
    Tensor v;
    sgd_update(p, g, v, 0.1, 0.0, 0.0);
    for (int64_t i = 0; i < 3; ++i)
      CHECK(p[i] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  }
  {  // zero gradients leave parameters alone
    Tensor p = Tensor::full({3}, 2.0);
    Tensor g = Tensor::zeros({3});
    Tensor v;
    sgd_update(p, g, v, 0.1, 0.0, 0.0);
    for (int64_t i = 0; i < 3; ++i) CHECK(p[i] == 2.0);
  }
  {  // two steps at momentum 0.9 on a constant gradient: lr*g*(1 + 1.9)
    Tensor p = Tensor::zeros({1});
    Tensor g = Tensor::full({1}, 1.0);
    Tensor v;
    sgd_update(p, g, v, 0.01, 0.9, 0.0);
    sgd_update(p, g, v, 0.01, 0.9, 0.0);
    CHECK(p[0] == doctest::Approx(-0.01 * 2.9).epsilon(1e-14));
  }
}

TEST_CASE("end-to-end gradients: mlp with bn") {
  Rng rng(11);
  NormSpec norm;
  norm.kind = NormKind::BN;
  LayerStack stack = make_mlp(5, {4}, 3, norm);
  init_params(stack, rng);
  Tensor x = randn(rng, {4, 5});
  check_stack_gradients(stack, x, {0, 1, 2, 1}, 1e-4);
}

TEST_CASE("end-to-end gradients: mlp with l2bn") {
  Rng rng(13);
  NormSpec norm;
  norm.kind = NormKind::L2BN;
  LayerStack stack = make_mlp(5, {4}, 3, norm);
  init_params(stack, rng);
  Tensor x = randn(rng, {4, 5});
  check_stack_gradients(stack, x, {2, 0, 1, 0}, 1e-4);
}

TEST_CASE("end-to-end gradients: small conv net") {
  Rng rng(17);
  NormSpec norm;
  norm.kind = NormKind::L2BN;
  LayerStack stack;
  stack.layers.push_back(Layer::conv3x3(1, 2, 2));
  stack.layers.push_back(Layer::norm(norm, 2));
  stack.layers.push_back(Layer::relu());
  stack.layers.push_back(Layer::global_avg_pool());
  stack.layers.push_back(Layer::classifier(2, 3));
  init_params(stack, rng);
  Tensor x = randn(rng, {3, 1, 4, 4});
  check_stack_gradients(stack, x, {0, 2, 1}, 1e-4);
}

TEST_CASE("end-to-end gradients: conv net with gn") {
  Rng rng(19);
  NormSpec norm;
  norm.kind = NormKind::GN;
  norm.channels_per_group = 2;
  LayerStack stack;
  stack.layers.push_back(Layer::conv3x3(1, 4, 1));
  stack.layers.push_back(Layer::norm(norm, 4));
  stack.layers.push_back(Layer::relu());
  stack.layers.push_back(Layer::global_avg_pool());
  stack.layers.push_back(Layer::classifier(4, 2));
  init_params(stack, rng);
  Tensor x = randn(rng, {2, 1, 3, 3});
  check_stack_gradients(stack, x, {0, 1}, 1e-4);
}

TEST_CASE("deterministic training is bit-reproducible") {
  Dataset data = tiny_blobs(5);
  TrainConfig cfg;
  cfg.seed = 9;
  cfg.epochs = 3;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.05;
  cfg.arch = Arch::mlp;
  cfg.hidden = {16};
  cfg.norm.kind = NormKind::L2BN;
  cfg.deterministic = true;

  TrainResult a = train(cfg, data);
  TrainResult b = train(cfg, data);
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i)
    CHECK(records_equal_ignoring_wall(a.records[i], b.records[i]));
  for (size_t k = 0; k < a.stack.layers.size(); ++k) {
    if (!a.stack.layers[k].weight.empty())
      CHECK(a.stack.layers[k].weight.bit_equal(b.stack.layers[k].weight));
    if (!a.stack.layers[k].norm_state.running_mean.empty())
      CHECK(a.stack.layers[k].norm_state.running_mean.bit_equal(
          b.stack.layers[k].norm_state.running_mean));
  }
}

TEST_CASE("swapping bn for l2bn changes no parameter shapes") {
  NormSpec bn;
  bn.kind = NormKind::BN;
  NormSpec l2bn;
  l2bn.kind = NormKind::L2BN;
  LayerStack a = make_mlp(12, {8, 8}, 4, bn);
  LayerStack b = make_mlp(12, {8, 8}, 4, l2bn);
  CHECK(a.parameter_shapes() == b.parameter_shapes());
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("samples entering the bn stage of a composite share one norm") {
  Rng rng(23);
  NormSpec spec;
  spec.kind = NormKind::L2BN;
  LayerStack stack = make_mlp(10, {6}, 3, spec);
  init_params(stack, rng);
  stack.set_mode(NormState::Mode::train);
  Tensor x = randn(rng, {8, 10}, 0.0, 5.0);
  StackCache cache;
  stack_forward(stack, x, &cache);

  bool found = false;
  for (size_t k = 0; k < stack.layers.size(); ++k) {
    const NormCache& nc = cache.norm_caches[k];
    if (!nc.valid || !nc.l2.has_value()) continue;
    found = true;
    // reconstruct the per-sample norms of the bn-stage input
    const L2StageCache& c = *nc.l2;
    double lo = 1e300, hi = 0.0;
    for (int64_t r = 0; r < c.b; ++r) {
      double acc = 0.0;
      for (int64_t j = 0; j < c.D; ++j)
        acc += c.unit[r * c.D + j] * c.unit[r * c.D + j];
      double norm = std::sqrt(acc) * c.out_scale;
      lo = std::min(lo, norm);
      hi = std::max(hi, norm);
    }
    CHECK(hi - lo <= 1e-10);
  }
  CHECK(found);
}

TEST_CASE("placement policies rewrite the expected positions") {
  NormSpec bn;
  bn.kind = NormKind::BN;
  LayerStack stack = make_mlp(10, {8, 8, 8}, 3, bn);  // three norm positions
  auto kinds = [&]() {
    std::vector<NormKind> v;
    for (int64_t p : stack.norm_positions())
      v.push_back(stack.layers[static_cast<size_t>(p)].norm_spec.kind);
    return v;
  };

  apply_placement(stack, PlacementPolicy::none);
  CHECK(kinds() == std::vector<NormKind>{NormKind::BN, NormKind::BN, NormKind::BN});
  apply_placement(stack, PlacementPolicy::all);
  CHECK(kinds() ==
        std::vector<NormKind>{NormKind::L2BN, NormKind::L2BN, NormKind::L2BN});
  apply_placement(stack, PlacementPolicy::classifier_only);
  CHECK(kinds() == std::vector<NormKind>{NormKind::BN, NormKind::BN, NormKind::L2BN});
  apply_placement(stack, PlacementPolicy::early_stages);
  CHECK(kinds() == std::vector<NormKind>{NormKind::L2BN, NormKind::L2BN, NormKind::BN});
  apply_placement(stack, PlacementPolicy::late_stages);
  CHECK(kinds() == std::vector<NormKind>{NormKind::BN, NormKind::BN, NormKind::L2BN});

  // only a BN base can be rewritten
  NormSpec ln;
  ln.kind = NormKind::LN;
  LayerStack lstack = make_mlp(10, {8}, 3, ln);
  CHECK_THROWS_AS(apply_placement(lstack, PlacementPolicy::all),
                  std::invalid_argument);
}

TEST_CASE("divergent training aborts with epoch and step context") {
  Dataset data = tiny_blobs(7);
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.epochs = 3;
  cfg.batch_size = 10;
  cfg.learning_rate = 1e200;  // guaranteed overflow
  cfg.arch = Arch::mlp;
  cfg.hidden = {8};
  cfg.norm.kind = NormKind::BN;
  try {
    train(cfg, data);
    FAIL("expected divergence abort");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("stack validation and shape errors name the layer") {
  NormSpec bn;
  bn.kind = NormKind::BN;
  LayerStack stack = make_mlp(10, {8}, 3, bn);
  Rng rng(31);
  init_params(stack, rng);
  stack.set_mode(NormState::Mode::train);
  Tensor bad = randn(rng, {4, 7});
  try {
    stack_forward(stack, bad, nullptr);
    FAIL("expected shape error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }

  LayerStack no_classifier;
  no_classifier.layers.push_back(Layer::relu());
  CHECK_THROWS_AS(no_classifier.validate(), std::invalid_argument);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.batch_size = 8;
  cfg.placement = PlacementPolicy::all;
  cfg.norm.kind = NormKind::LN;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.norm.kind = NormKind::BN;
  cfg.validate();
}
