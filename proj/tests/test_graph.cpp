#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>

#include "mspn/graph.hpp"
#include "mspn/rng.hpp"

using namespace mspn;

namespace {

// independent oracle for the conv/pool dimension chain: kernel 3 with pads
// 0,1,1,0 and 2x2 pooling after the first three stages
struct Dims {
  int h, w;
};
std::array<Dims, 4> chain_oracle(int h, int w) {
  const int pad[4] = {0, 1, 1, 0};
  const bool pool[4] = {true, true, true, false};
  std::array<Dims, 4> out{};
  for (int s = 0; s < 4; ++s) {
    h = h + 2 * pad[s] - 3 + 1;
    w = w + 2 * pad[s] - 3 + 1;
    if (pool[s]) {
      h /= 2;
      w /= 2;
    }
    out[s] = {h, w};
  }
  return out;
}

MSPNConfig tiny_cfg() {
  MSPNConfig cfg;
  cfg.conv_channels = {2, 3, 4, 5};
  cfg.fc_widths = {6, 6};
  return cfg;
}

FeatureMapStack<double> random_image(Rng& rng, int w) {
  FeatureMapStack<double> img(1, 32, w);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);
  return img;
}

std::array<Dims, 4> traced_stage_dims(const NetworkGraph<double>& g,
                                      const ForwardTrace<double>& trace) {
  std::array<Dims, 4> out{};
  const char* stages[4] = {"pool1", "pool2", "pool3", "relu4"};
  for (int s = 0; s < 4; ++s) {
    const auto& m = std::get<FeatureMapStack<double>>(trace.value[g.find(stages[s])]);
    out[s] = {m.h, m.w};
  }
  return out;
}

}  // namespace

TEST_CASE("default configuration concatenates a 3456-long descriptor") {
  MSPNConfig cfg;
  CHECK(concat_dim(cfg) == 3456);
  CHECK(256 * 7 == 1792);
  CHECK(384 * 3 == 1152);
  CHECK(512 * 1 == 512);
  CHECK(1792 + 1152 + 512 == 3456);

  MSPNConfig only3 = cfg;
  only3.ssp_enabled = {false, false, true};
  CHECK(concat_dim(only3) == 512);
}

TEST_CASE("stage heights are 15,7,3,1 and widths follow the chain oracle") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 5);
  Rng rng(6);

  const int expected_min = [] {
    for (int w = 1;; ++w) {
      auto d = chain_oracle(32, w);
      bool ok = true;
      int hh = 32, ww = w;
      const int pad[4] = {0, 1, 1, 0};
      const bool pool[4] = {true, true, true, false};
      for (int s = 0; s < 4 && ok; ++s) {
        hh = hh + 2 * pad[s] - 2;
        ww = ww + 2 * pad[s] - 2;
        if (hh < 1 || ww < 1) ok = false;
        if (ok && pool[s]) {
          if (hh < 2 || ww < 2) ok = false;
          hh /= 2;
          ww /= 2;
        }
      }
      if (ok) return w;
      (void)d;
    }
  }();
  CHECK(expected_min == 26);
  CHECK(g.min_input_width() == 26);

  int descriptor = -1;
  for (int w = 26; w <= 200; ++w) {
    ForwardTrace<double> trace;
    forward(g, random_image(rng, w), trace);
    const auto dims = traced_stage_dims(g, trace);
    const auto expect = chain_oracle(32, w);
    CHECK(dims[0].h == 15);
    CHECK(dims[1].h == 7);
    CHECK(dims[2].h == 3);
    CHECK(dims[3].h == 1);
    for (int s = 0; s < 4; ++s) {
      CHECK(dims[s].h == expect[s].h);
      CHECK(dims[s].w == expect[s].w);
    }
    const auto& cat = std::get<FlatVector<double>>(trace.value[g.find("concat")]);
    if (descriptor < 0) descriptor = int(cat.size());
    CHECK(int(cat.size()) == descriptor);  // width-independent
  }
}

TEST_CASE("width 100 walks stage widths 49,24,12,10") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 7);
  Rng rng(8);
  ForwardTrace<double> trace;
  forward(g, random_image(rng, 100), trace);
  const auto dims = traced_stage_dims(g, trace);
  CHECK(dims[0].w == 49);
  CHECK(dims[1].w == 24);
  CHECK(dims[2].w == 12);
  CHECK(dims[3].w == 10);
}

TEST_CASE("minimum width 26 walks 12,6,3,1 and below it errors") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 9);
  Rng rng(10);
  ForwardTrace<double> trace;
  forward(g, random_image(rng, 26), trace);
  const auto dims = traced_stage_dims(g, trace);
  CHECK(dims[0].w == 12);
  CHECK(dims[1].w == 6);
  CHECK(dims[2].w == 3);
  CHECK(dims[3].w == 1);

  try {
    ForwardTrace<double> t2;
    forward(g, random_image(rng, 25), t2);
    FAIL("expected MinWidthError");
  } catch (const MinWidthError& e) {
    CHECK(e.min_width == 26);
    CHECK(e.width == 25);
  }
}

TEST_CASE("zero input with fresh init gives the uniform distribution") {
  auto g = build_mspn<float>(tiny_cfg());
  init_params(g, 11);
  FeatureMapStack<float> zero(1, 32, 40, 0.f);
  auto probs = predict_probs(g, zero);
  double sum = 0;
  for (float p : probs) {
    CHECK(p == doctest::Approx(0.1f).epsilon(1e-6));
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("probabilities sum to one on random inputs") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 12);
  Rng rng(13);
  for (int t = 0; t < 10; ++t) {
    auto probs = predict_probs(g, random_image(rng, rng.uniform_int(26, 120)));
    double sum = 0;
    for (double p : probs) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("fan-out nodes receive the sum of their consumers' gradients") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 14);
  Rng rng(15);
  auto image = random_image(rng, 37);
  const int label = 4;

  ForwardTrace<double> trace;
  auto lf = loss_forward(g, image, label, trace);
  const auto dlogits = softmax_xent_backward(lf.probs, label);

  auto run = [&](const EdgeMask& mask) {
    Gradients<double> grads = Gradients<double>::like(g);
    backward(g, trace, dlogits, grads, mask);
    return grads;
  };

  const Gradients<double> full = run({});
  // pool2 feeds conv3 and ssp-1; pool3 feeds conv4 and ssp-2. Additivity is
  // checked on the nodes whose entire gradient flows through the masked hub.
  const std::vector<std::tuple<const char*, const char*, const char*,
                               std::vector<const char*>>>
      cases = {{"pool2", "conv3", "ssp-1", {"conv1", "conv2"}},
               {"pool3", "conv4", "ssp-2", {"conv3"}}};
  for (const auto& [hub, a, b, upstream] : cases) {
    EdgeMask drop_a{{{g.find(a), g.find(hub)}}};
    EdgeMask drop_b{{{g.find(b), g.find(hub)}}};
    const Gradients<double> via_b = run(drop_a);
    const Gradients<double> via_a = run(drop_b);

    // everything below the hub must satisfy g_full = g_via_a + g_via_b
    for (const char* up : upstream) {
      const int i = g.find(up);
      for (std::size_t j = 0; j < full.node[i].weights.size(); ++j) {
        const double lhs = full.node[i].weights[j];
        const double rhs = via_a.node[i].weights[j] + via_b.node[i].weights[j];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
      }
      for (std::size_t j = 0; j < full.node[i].bias.size(); ++j)
        CHECK(full.node[i].bias[j] ==
              doctest::Approx(via_a.node[i].bias[j] + via_b.node[i].bias[j])
                  .epsilon(1e-12));
    }
  }
}

TEST_CASE("single-consumer graph matches a hand-rolled backward chain") {
  MSPNConfig cfg = tiny_cfg();
  cfg.ssp_enabled = {false, false, true};  // conv2 then has exactly one consumer
  auto g = build_mspn<double>(cfg);
  init_params(g, 16);
  Rng rng(17);
  auto image = random_image(rng, 33);
  const int label = 2;

  ForwardTrace<double> trace;
  auto lf = loss_forward(g, image, label, trace);
  Gradients<double> grads = Gradients<double>::like(g);
  backward(g, trace, softmax_xent_backward(lf.probs, label), grads);

  // replay the same path layer by layer without the graph engine
  const auto& conv1 = std::get<ConvLayer<double>>(g.nodes[g.find("conv1")].layer);
  const auto& conv2 = std::get<ConvLayer<double>>(g.nodes[g.find("conv2")].layer);
  const auto& conv3 = std::get<ConvLayer<double>>(g.nodes[g.find("conv3")].layer);
  const auto& conv4 = std::get<ConvLayer<double>>(g.nodes[g.find("conv4")].layer);
  const auto& fc1 = std::get<FullyConnectedLayer<double>>(g.nodes[g.find("fc1")].layer);
  const auto& fc2 = std::get<FullyConnectedLayer<double>>(g.nodes[g.find("fc2")].layer);
  const auto& fco = std::get<FullyConnectedLayer<double>>(g.nodes[g.find("out")].layer);

  auto c1 = conv_forward(conv1, image);
  auto r1 = relu_forward(c1);
  auto p1 = maxpool_forward(r1);
  auto c2 = conv_forward(conv2, p1.out);
  auto r2 = relu_forward(c2);
  auto p2 = maxpool_forward(r2);
  auto c3 = conv_forward(conv3, p2.out);
  auto r3 = relu_forward(c3);
  auto p3 = maxpool_forward(r3);
  auto c4 = conv_forward(conv4, p3.out);
  auto r4 = relu_forward(c4);
  auto ssp = ssp_forward(SSPLayer{cfg.ssp_mode}, r4);
  auto f1 = fc_forward(fc1, ssp.values);
  auto f1r = relu_forward(f1);
  auto f2 = fc_forward(fc2, f1r);
  auto f2r = relu_forward(f2);
  auto logits = fc_forward(fco, f2r);
  auto sx = softmax_xent_forward(logits, label);
  CHECK(sx.loss == lf.loss);

  auto dlogits = softmax_xent_backward(sx.probs, label);
  auto gout = fc_backward(fco, f2r, dlogits);
  auto gf2r = relu_backward(f2, gout.input);
  auto gf2 = fc_backward(fc2, f1r, gf2r);
  auto gf1r = relu_backward(f1, gf2.input);
  auto gf1 = fc_backward(fc1, ssp.values, gf1r);
  auto gssp = ssp_backward(SSPLayer{cfg.ssp_mode}, gf1.input, r4.n_map, r4.h, r4.w,
                           ssp.argmax);
  auto gr4 = relu_backward(c4, gssp);
  auto gc4 = conv_backward(conv4, p3.out, gr4);
  auto gp3 = maxpool_backward(gc4.input, p3.argmax, r3.h, r3.w);
  auto gr3 = relu_backward(c3, gp3);
  auto gc3 = conv_backward(conv3, p2.out, gr3);
  auto gp2 = maxpool_backward(gc3.input, p2.argmax, r2.h, r2.w);
  auto gr2 = relu_backward(c2, gp2);
  auto gc2 = conv_backward(conv2, p1.out, gr2);

  CHECK(grads.node[g.find("conv2")].weights == gc2.weights);
  CHECK(grads.node[g.find("conv2")].bias == gc2.bias);
  CHECK(grads.node[g.find("conv3")].weights == gc3.weights);
  CHECK(grads.node[g.find("conv4")].weights == gc4.weights);
}

TEST_CASE("zero loss gradient yields zero parameter gradients") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 18);
  Rng rng(19);
  ForwardTrace<double> trace;
  forward(g, random_image(rng, 40), trace);
  Gradients<double> grads = Gradients<double>::like(g);
  backward(g, trace, FlatVector<double>(10, 0.0), grads);
  for (const auto& blob : grads.node) {
    for (double v : blob.weights) CHECK(v == 0.0);
    for (double v : blob.bias) CHECK(v == 0.0);
  }
}

TEST_CASE("backward before forward is a contract violation") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 20);
  ForwardTrace<double> trace;
  Gradients<double> grads = Gradients<double>::like(g);
  CHECK_THROWS_AS(backward(g, trace, FlatVector<double>(10, 0.0), grads),
                  ContractViolation);
}

TEST_CASE("scaling the input scales the descriptor and keeps the class") {
  auto g = build_mspn<double>(tiny_cfg());
  init_params(g, 21);  // fresh init keeps every bias at zero
  Rng rng(22);
  auto image = random_image(rng, 45);
  FeatureMapStack<double> scaled = image;
  const double c = 3.7;
  for (double& v : scaled.data) v *= c;

  ForwardTrace<double> t1, t2;
  const auto& logits1 = forward(g, image, t1);
  const auto& logits2 = forward(g, scaled, t2);

  const auto& cat1 = std::get<FlatVector<double>>(t1.value[g.find("concat")]);
  const auto& cat2 = std::get<FlatVector<double>>(t2.value[g.find("concat")]);
  for (std::size_t i = 0; i < cat1.size(); ++i)
    CHECK(cat2[i] == doctest::Approx(c * cat1[i]).epsilon(1e-9));

  const auto arg1 = std::max_element(logits1.begin(), logits1.end()) - logits1.begin();
  const auto arg2 = std::max_element(logits2.begin(), logits2.end()) - logits2.begin();
  CHECK(arg1 == arg2);
}

TEST_CASE("variant builder follows the study table") {
  CHECK(build_variant<float>("Variant-1", tiny_cfg()).cfg.ssp_enabled ==
        std::array<bool, 3>{true, false, false});
  CHECK(build_variant<float>("Variant-2", tiny_cfg()).cfg.ssp_enabled ==
        std::array<bool, 3>{false, true, false});
  CHECK(build_variant<float>("Variant-3", tiny_cfg()).cfg.ssp_enabled ==
        std::array<bool, 3>{false, false, true});
  CHECK(build_variant<float>("Variant-4", tiny_cfg()).cfg.ssp_enabled ==
        std::array<bool, 3>{false, true, true});
  CHECK(build_variant<float>("Variant-5", tiny_cfg()).cfg.ssp_enabled ==
        std::array<bool, 3>{true, true, false});
  CHECK(build_variant<float>("MSPN", tiny_cfg()).cfg.ssp_enabled ==
        std::array<bool, 3>{true, true, true});

  MSPNConfig cfg;  // default channels
  CHECK(concat_dim(build_variant<float>("Variant-1", cfg).cfg) == 1792);
  int enabled = 0;
  for (bool b : build_variant<float>("MSPN", cfg).cfg.ssp_enabled) enabled += b;
  CHECK(enabled == 3);

  // the starred row narrows fc2 unless the caller overrides widths
  CHECK(build_variant<float>("Variant-3", cfg).cfg.fc_widths[1] == 512);
  CHECK(build_variant<float>("Variant-3", cfg, false).cfg.fc_widths[1] == 1024);

  CHECK_THROWS_AS(build_variant<float>("Variant-6", cfg), ConfigError);
}

TEST_CASE("graph topology satisfies the node-spec invariants") {
  auto g = build_mspn<double>(MSPNConfig{});
  const auto specs = g.spec();
  int outs = 0;
  std::vector<std::string> seen;
  for (const auto& s : specs) {
    if (s.name == "out") ++outs;
    for (const auto& in : s.inputs) {
      // inputs must refer to earlier nodes only
      CHECK(std::find(seen.begin(), seen.end(), in) != seen.end());
    }
    CHECK(std::find(seen.begin(), seen.end(), s.name) == seen.end());
    seen.push_back(s.name);
  }
  CHECK(outs == 1);
  CHECK(g.nodes[g.out_node].name == "out");
}

TEST_CASE("config validation rejects bad setups") {
  MSPNConfig cfg;
  cfg.ssp_enabled = {false, false, false};
  CHECK_THROWS_AS(build_mspn<float>(cfg), ConfigError);

  MSPNConfig h = tiny_cfg();
  h.input_height = 48;
  CHECK_THROWS_AS(build_mspn<float>(h), ConfigError);

  MSPNConfig c = tiny_cfg();
  c.conv_channels[2] = 0;
  CHECK_THROWS_AS(build_mspn<float>(c), ConfigError);
}
