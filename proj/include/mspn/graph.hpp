#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <type_traits>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "mspn/errors.hpp"
#include "mspn/layers.hpp"
#include "mspn/rng.hpp"
#include "mspn/tensor.hpp"

namespace mspn {

enum class NodeKind { kInput, kConv, kRelu, kMaxPool, kSsp, kConcat, kFc, kFlatten };

enum class GraphKind : uint8_t { kMspn = 1, kPatchNet = 2 };

// Topology-only view of a node, used for construction and validation.
struct NodeSpec {
  std::string name;
  NodeKind kind;
  std::vector<std::string> inputs;
};

// Architecture knobs. The convolution chain itself (kernel 3, pads 0/1/1/0,
// 2x2 pooling after the first three stages) is fixed; it is the minimal
// stride-1 chain that maps input height 32 onto stage heights 15, 7, 3, 1.
struct MSPNConfig {
  std::array<int, 4> conv_channels{96, 256, 384, 512};
  std::array<int, 2> fc_widths{1024, 1024};
  PoolMode ssp_mode = PoolMode::kMax;
  std::array<bool, 3> ssp_enabled{true, true, true};
  int input_height = 32;
  int n_classes = 10;
  int in_channels = 1;

  void validate() const {
    for (int c : conv_channels)
      if (c < 1) throw ConfigError("conv channel counts must be >= 1");
    for (int f : fc_widths)
      if (f < 1) throw ConfigError("fc widths must be >= 1");
    if (!ssp_enabled[0] && !ssp_enabled[1] && !ssp_enabled[2])
      throw ConfigError("at least one ssp stage must be enabled");
    if (input_height != 32)
      throw ConfigError("input height must be 32, got " + std::to_string(input_height));
    if (n_classes != 10)
      throw ConfigError("n_classes must be 10, got " + std::to_string(n_classes));
    if (in_channels != 1)
      throw ConfigError("in_channels must be 1, got " + std::to_string(in_channels));
  }
};

namespace chain {

inline constexpr int kKernel = 3;
inline constexpr std::array<int, 4> kPad{0, 1, 1, 0};
inline constexpr std::array<bool, 4> kPooled{true, true, true, false};

struct StageDims {
  int h = 0;
  int w = 0;
};

// Output size of each of the four stages (conv, then pool where present)
// for a given input size, or nullopt when some conv runs out of cells.
inline std::optional<std::array<StageDims, 4>> try_stage_dims(int in_h, int in_w) {
  std::array<StageDims, 4> out{};
  int h = in_h, w = in_w;
  for (int s = 0; s < 4; ++s) {
    h = h + 2 * kPad[s] - kKernel + 1;
    w = w + 2 * kPad[s] - kKernel + 1;
    if (h < 1 || w < 1) return std::nullopt;
    if (kPooled[s]) {
      if (h < 2 || w < 2) return std::nullopt;
      h /= 2;
      w /= 2;
    }
    out[s] = {h, w};
  }
  return out;
}

inline int min_input_width(int in_h = 32) {
  for (int w = 1; w <= 4096; ++w)
    if (try_stage_dims(in_h, w)) return w;
  throw ContractViolation("no feasible input width below 4096");
}

inline std::array<StageDims, 4> stage_dims(int in_h, int in_w) {
  auto d = try_stage_dims(in_h, in_w);
  if (!d) throw MinWidthError(in_w, min_input_width(in_h));
  return *d;
}

}  // namespace chain

// Height of the map each ssp stage pools, for input height 32.
inline std::array<int, 3> ssp_stage_heights(const MSPNConfig& cfg) {
  auto d = chain::stage_dims(cfg.input_height, chain::min_input_width(cfg.input_height));
  return {d[1].h, d[2].h, d[3].h};
}

// Length of the concatenated descriptor. Independent of input width.
inline int concat_dim(const MSPNConfig& cfg) {
  const auto hs = ssp_stage_heights(cfg);
  int dim = 0;
  for (int i = 0; i < 3; ++i)
    if (cfg.ssp_enabled[i]) dim += cfg.conv_channels[i + 1] * hs[i];
  return dim;
}

template <typename T>
using NodeLayer = std::variant<std::monostate, ConvLayer<T>, FullyConnectedLayer<T>, SSPLayer>;

template <typename T>
struct Node {
  std::string name;
  NodeKind kind = NodeKind::kInput;
  std::vector<int> inputs;  // indices of upstream nodes, all < this node's index
  NodeLayer<T> layer;
};

template <typename T>
std::pair<std::vector<T>*, std::vector<T>*> param_vectors(Node<T>& n) {
  if (auto* c = std::get_if<ConvLayer<T>>(&n.layer)) return {&c->weights, &c->bias};
  if (auto* f = std::get_if<FullyConnectedLayer<T>>(&n.layer)) return {&f->weights, &f->bias};
  return {nullptr, nullptr};
}

template <typename T>
std::pair<const std::vector<T>*, const std::vector<T>*> param_vectors(const Node<T>& n) {
  if (auto* c = std::get_if<ConvLayer<T>>(&n.layer)) return {&c->weights, &c->bias};
  if (auto* f = std::get_if<FullyConnectedLayer<T>>(&n.layer)) return {&f->weights, &f->bias};
  return {nullptr, nullptr};
}

// A DAG of layers in topological order. Nodes may feed several consumers;
// backward sums the consumer gradients at such fan-out nodes.
template <typename T>
struct NetworkGraph {
  GraphKind kind = GraphKind::kMspn;
  MSPNConfig cfg;
  std::vector<Node<T>> nodes;
  int out_node = -1;
  std::vector<std::string> class_names;

  int find(const std::string& name) const {
    for (int i = 0; i < int(nodes.size()); ++i)
      if (nodes[i].name == name) return i;
    return -1;
  }

  std::vector<int> parametric_nodes() const {
    std::vector<int> ids;
    for (int i = 0; i < int(nodes.size()); ++i)
      if (nodes[i].kind == NodeKind::kConv || nodes[i].kind == NodeKind::kFc)
        ids.push_back(i);
    return ids;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int i : parametric_nodes()) {
      auto [w, b] = param_vectors(nodes[i]);
      n += w->size() + b->size();
    }
    return n;
  }

  std::vector<NodeSpec> spec() const {
    std::vector<NodeSpec> out;
    out.reserve(nodes.size());
    for (const auto& n : nodes) {
      NodeSpec s{n.name, n.kind, {}};
      for (int j : n.inputs) s.inputs.push_back(nodes[j].name);
      out.push_back(std::move(s));
    }
    return out;
  }

  int min_input_width() const {
    return kind == GraphKind::kPatchNet ? 32 : chain::min_input_width(cfg.input_height);
  }
};

namespace graph_detail {

inline int expected_arity(NodeKind k) {
  switch (k) {
    case NodeKind::kInput: return 0;
    case NodeKind::kConcat: return -1;  // one or more
    default: return 1;
  }
}

template <typename T>
int add_node(NetworkGraph<T>& g, const NodeSpec& spec,
             std::type_identity_t<NodeLayer<T>> layer = std::monostate{}) {
  if (spec.name.empty()) throw ConfigError("graph node with empty name");
  if (g.find(spec.name) >= 0) throw ConfigError("duplicate graph node name: " + spec.name);
  Node<T> n;
  n.name = spec.name;
  n.kind = spec.kind;
  n.layer = std::move(layer);
  for (const auto& in : spec.inputs) {
    int idx = g.find(in);
    if (idx < 0)
      throw ConfigError("node " + spec.name + " references unknown input " + in);
    n.inputs.push_back(idx);  // referenced nodes always precede, so no cycles
  }
  const int arity = expected_arity(spec.kind);
  if (arity >= 0 && int(n.inputs.size()) != arity)
    throw ConfigError("node " + spec.name + " has wrong input count");
  if (arity < 0 && n.inputs.empty())
    throw ConfigError("concat node " + spec.name + " needs at least one input");
  g.nodes.push_back(std::move(n));
  return int(g.nodes.size()) - 1;
}

template <typename T>
void finalize(NetworkGraph<T>& g) {
  int out_count = 0;
  for (int i = 0; i < int(g.nodes.size()); ++i)
    if (g.nodes[i].name == "out") {
      g.out_node = i;
      ++out_count;
    }
  if (out_count != 1) throw ConfigError("graph must contain exactly one node named out");
  if (g.class_names.empty()) {
    g.class_names.resize(g.cfg.n_classes);
    for (int c = 0; c < g.cfg.n_classes; ++c)
      g.class_names[c] = "class-" + std::string(c < 10 ? "0" : "") + std::to_string(c);
  }
}

// Shared conv1..conv4 trunk; returns the names of the three ssp tap points.
template <typename T>
std::array<std::string, 3> add_trunk(NetworkGraph<T>& g) {
  const auto& cc = g.cfg.conv_channels;
  const int k = chain::kKernel;
  add_node(g, {"input", NodeKind::kInput, {}});
  std::string prev = "input";
  int prev_maps = g.cfg.in_channels;
  std::array<std::string, 3> taps;
  for (int s = 0; s < 4; ++s) {
    const std::string cname = "conv" + std::to_string(s + 1);
    add_node(g, {cname, NodeKind::kConv, {prev}},
             ConvLayer<T>(prev_maps, cc[s], k, k, chain::kPad[s], chain::kPad[s]));
    const std::string rname = "relu" + std::to_string(s + 1);
    add_node(g, {rname, NodeKind::kRelu, {cname}});
    prev = rname;
    if (chain::kPooled[s]) {
      const std::string pname = "pool" + std::to_string(s + 1);
      add_node(g, {pname, NodeKind::kMaxPool, {rname}});
      prev = pname;
    }
    prev_maps = cc[s];
    if (s >= 1) taps[s - 1] = prev;  // pool2, pool3, relu4
  }
  return taps;
}

template <typename T>
void add_head(NetworkGraph<T>& g, const std::string& below, int below_dim) {
  add_node(g, {"fc1", NodeKind::kFc, {below}},
           FullyConnectedLayer<T>(below_dim, g.cfg.fc_widths[0]));
  add_node(g, {"fc1-relu", NodeKind::kRelu, {"fc1"}});
  add_node(g, {"fc2", NodeKind::kFc, {"fc1-relu"}},
           FullyConnectedLayer<T>(g.cfg.fc_widths[0], g.cfg.fc_widths[1]));
  add_node(g, {"fc2-relu", NodeKind::kRelu, {"fc2"}});
  add_node(g, {"out", NodeKind::kFc, {"fc2-relu"}},
           FullyConnectedLayer<T>(g.cfg.fc_widths[1], g.cfg.n_classes));
}

}  // namespace graph_detail

// Seeds every parameter from the run seed and the node name, so graphs that
// share a node (and its shape) start from identical weights regardless of
// which variant they belong to.
template <typename T>
void init_params(NetworkGraph<T>& g, uint64_t seed) {
  for (int i : g.parametric_nodes()) {
    Rng r = Rng(seed).child(g.nodes[i].name);
    if (auto* c = std::get_if<ConvLayer<T>>(&g.nodes[i].layer)) c->init(r);
    if (auto* f = std::get_if<FullyConnectedLayer<T>>(&g.nodes[i].layer)) f->init(r);
  }
}

// conv1..conv4 trunk, ssp taps after stages 2, 3 and 4, concatenated
// descriptor, then the fully-connected head.
template <typename T>
NetworkGraph<T> build_mspn(const MSPNConfig& cfg) {
  cfg.validate();
  NetworkGraph<T> g;
  g.kind = GraphKind::kMspn;
  g.cfg = cfg;
  const auto taps = graph_detail::add_trunk(g);
  std::vector<std::string> pooled;
  for (int i = 0; i < 3; ++i) {
    if (!cfg.ssp_enabled[i]) continue;
    const std::string sname = "ssp-" + std::to_string(i + 1);
    graph_detail::add_node(g, {sname, NodeKind::kSsp, {taps[i]}}, SSPLayer{cfg.ssp_mode});
    pooled.push_back(sname);
  }
  graph_detail::add_node(g, {"concat", NodeKind::kConcat, {pooled}});
  graph_detail::add_head(g, "concat", concat_dim(cfg));
  graph_detail::finalize(g);
  return g;
}

// Fixed-input (1x32x32) patch classifier: the same trunk, but conv4's single
// remaining cell per map is flattened straight into the head. No ssp.
template <typename T>
NetworkGraph<T> build_patchnet(const MSPNConfig& cfg) {
  cfg.validate();
  NetworkGraph<T> g;
  g.kind = GraphKind::kPatchNet;
  g.cfg = cfg;
  const auto taps = graph_detail::add_trunk(g);
  graph_detail::add_node(g, {"flatten", NodeKind::kFlatten, {taps[2]}});
  graph_detail::add_head(g, "flatten", cfg.conv_channels[3]);
  graph_detail::finalize(g);
  return g;
}

// Pooling-stage sets per study row. The starred row gets fc2 width 512
// unless the caller overrides fc widths explicitly.
template <typename T>
NetworkGraph<T> build_variant(const std::string& name, MSPNConfig cfg = {},
                              bool apply_starred_fc2 = true) {
  static const std::unordered_map<std::string, std::array<bool, 3>> kSets = {
      {"Variant-1", {true, false, false}},  {"Variant-2", {false, true, false}},
      {"Variant-3", {false, false, true}},  {"Variant-4", {false, true, true}},
      {"Variant-5", {true, true, false}},   {"MSPN", {true, true, true}},
  };
  auto it = kSets.find(name);
  if (it == kSets.end()) throw ConfigError("unknown variant name: " + name);
  cfg.ssp_enabled = it->second;
  if (name == "Variant-3" && apply_starred_fc2) cfg.fc_widths[1] = 512;
  return build_mspn<T>(cfg);
}

inline const std::array<const char*, 6>& variant_names() {
  static const std::array<const char*, 6> names{"Variant-1", "Variant-2", "Variant-3",
                                                "Variant-4", "Variant-5", "MSPN"};
  return names;
}

// ---- forward / backward ----

template <typename T>
using NodeValue = std::variant<FeatureMapStack<T>, FlatVector<T>>;

template <typename T>
struct ForwardTrace {
  std::vector<NodeValue<T>> value;
  std::vector<std::vector<int>> argmax;  // per node, for max pooling and ssp-max
  bool done = false;
};

namespace graph_detail {

template <typename T>
const FeatureMapStack<T>& as_maps(const NodeValue<T>& v, const std::string& who) {
  const auto* m = std::get_if<FeatureMapStack<T>>(&v);
  require(m != nullptr, who + ": expected feature maps");
  return *m;
}

template <typename T>
const FlatVector<T>& as_vec(const NodeValue<T>& v, const std::string& who) {
  const auto* x = std::get_if<FlatVector<T>>(&v);
  require(x != nullptr, who + ": expected a flat vector");
  return *x;
}

template <typename T>
void add_value(std::optional<NodeValue<T>>& acc, NodeValue<T>&& g) {
  if (!acc) {
    acc = std::move(g);
    return;
  }
  if (auto* m = std::get_if<FeatureMapStack<T>>(&*acc)) {
    auto& gm = std::get<FeatureMapStack<T>>(g);
    require(m->same_shape(gm), "gradient fan-in: shape mismatch");
    for (std::size_t i = 0; i < m->data.size(); ++i) m->data[i] += gm.data[i];
  } else {
    auto& av = std::get<FlatVector<T>>(*acc);
    auto& gv = std::get<FlatVector<T>>(g);
    require(av.size() == gv.size(), "gradient fan-in: length mismatch");
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += gv[i];
  }
}

}  // namespace graph_detail

// Runs the graph on one image (n_map=in_channels, h=input_height, any width
// at or above the minimum). Returns the logits; the trace holds every node's
// output for backward.
template <typename T>
const FlatVector<T>& forward(const NetworkGraph<T>& g, const FeatureMapStack<T>& image,
                             ForwardTrace<T>& trace) {
  using graph_detail::as_maps;
  using graph_detail::as_vec;
  image.check_valid("forward");
  require(image.n_map == g.cfg.in_channels, "forward: wrong channel count");
  require(image.h == g.cfg.input_height,
          "forward: input height " + std::to_string(image.h) + " != " +
              std::to_string(g.cfg.input_height));
  if (g.kind == GraphKind::kPatchNet) {
    require(image.w == 32, "forward: patch network accepts exactly 32x32 input");
  } else if (image.w < g.min_input_width()) {
    throw MinWidthError(image.w, g.min_input_width());
  }

  const int n = int(g.nodes.size());
  trace.value.assign(n, NodeValue<T>{});
  trace.argmax.assign(n, {});
  for (int i = 0; i < n; ++i) {
    const Node<T>& nd = g.nodes[i];
    switch (nd.kind) {
      case NodeKind::kInput:
        trace.value[i] = image;
        break;
      case NodeKind::kConv: {
        const auto& c = std::get<ConvLayer<T>>(nd.layer);
        trace.value[i] = conv_forward(c, as_maps(trace.value[nd.inputs[0]], nd.name));
        break;
      }
      case NodeKind::kRelu: {
        const NodeValue<T>& in = trace.value[nd.inputs[0]];
        if (const auto* m = std::get_if<FeatureMapStack<T>>(&in))
          trace.value[i] = relu_forward(*m);
        else
          trace.value[i] = relu_forward(std::get<FlatVector<T>>(in));
        break;
      }
      case NodeKind::kMaxPool: {
        auto r = maxpool_forward(as_maps(trace.value[nd.inputs[0]], nd.name));
        trace.value[i] = std::move(r.out);
        trace.argmax[i] = std::move(r.argmax);
        break;
      }
      case NodeKind::kSsp: {
        const auto& s = std::get<SSPLayer>(nd.layer);
        auto r = ssp_forward(s, as_maps(trace.value[nd.inputs[0]], nd.name));
        trace.value[i] = std::move(r.values);
        trace.argmax[i] = std::move(r.argmax);
        break;
      }
      case NodeKind::kConcat: {
        std::vector<FlatVector<T>> parts;
        parts.reserve(nd.inputs.size());
        for (int j : nd.inputs) parts.push_back(as_vec(trace.value[j], nd.name));
        trace.value[i] = concat(parts);
        break;
      }
      case NodeKind::kFc: {
        const auto& f = std::get<FullyConnectedLayer<T>>(nd.layer);
        trace.value[i] = fc_forward(f, as_vec(trace.value[nd.inputs[0]], nd.name));
        break;
      }
      case NodeKind::kFlatten: {
        const auto& m = as_maps(trace.value[nd.inputs[0]], nd.name);
        require(m.h == 1 && m.w == 1, "flatten: expected 1x1 maps, got " +
                                          std::to_string(m.h) + "x" + std::to_string(m.w));
        trace.value[i] = FlatVector<T>(m.data);
        break;
      }
    }
  }
  trace.done = true;
  return graph_detail::as_vec(trace.value[g.out_node], "out");
}

template <typename T>
struct LossResult {
  FlatVector<T> probs;
  T loss = T(0);
};

template <typename T>
LossResult<T> loss_forward(const NetworkGraph<T>& g, const FeatureMapStack<T>& image,
                           int label, ForwardTrace<T>& trace) {
  const FlatVector<T>& logits = forward(g, image, trace);
  auto r = softmax_xent_forward(logits, label);
  return {std::move(r.probs), r.loss};
}

template <typename T>
FlatVector<T> predict_probs(const NetworkGraph<T>& g, const FeatureMapStack<T>& image) {
  ForwardTrace<T> trace;
  const FlatVector<T>& logits = forward(g, image, trace);
  return softmax_xent_forward(logits, 0).probs;
}

// Parameter gradients, indexed like the graph's nodes. backward() adds into
// these so a minibatch can accumulate over samples.
template <typename T>
struct Gradients {
  struct Blob {
    std::vector<T> weights, bias;
  };
  std::vector<Blob> node;

  static Gradients like(const NetworkGraph<T>& g) {
    Gradients out;
    out.node.resize(g.nodes.size());
    for (int i : g.parametric_nodes()) {
      auto [w, b] = param_vectors(g.nodes[i]);
      out.node[i].weights.assign(w->size(), T(0));
      out.node[i].bias.assign(b->size(), T(0));
    }
    return out;
  }

  void zero() {
    for (auto& blob : node) {
      std::fill(blob.weights.begin(), blob.weights.end(), T(0));
      std::fill(blob.bias.begin(), blob.bias.end(), T(0));
    }
  }

  void add(const Gradients& o) {
    for (std::size_t i = 0; i < node.size(); ++i) {
      for (std::size_t j = 0; j < node[i].weights.size(); ++j)
        node[i].weights[j] += o.node[i].weights[j];
      for (std::size_t j = 0; j < node[i].bias.size(); ++j)
        node[i].bias[j] += o.node[i].bias[j];
    }
  }

  void scale(T s) {
    for (auto& blob : node) {
      for (T& v : blob.weights) v *= s;
      for (T& v : blob.bias) v *= s;
    }
  }
};

// Consumer->producer edges whose gradient contribution should be dropped.
// Test instrumentation for checking fan-in additivity; empty in normal use.
struct EdgeMask {
  std::vector<std::pair<int, int>> skip;
  bool masked(int consumer, int producer) const {
    for (const auto& [c, p] : skip)
      if (c == consumer && p == producer) return true;
    return false;
  }
};

// Walks the DAG in reverse topological order. A node consumed by several
// downstream layers receives the sum of their gradients; consumers are
// processed in decreasing node index, so the accumulation order is fixed.
// Parameter gradients are added into grads; returns d loss / d input image.
template <typename T>
FeatureMapStack<T> backward(const NetworkGraph<T>& g, const ForwardTrace<T>& trace,
                            const FlatVector<T>& grad_logits, Gradients<T>& grads,
                            const EdgeMask& mask = {}) {
  using graph_detail::add_value;
  using graph_detail::as_maps;
  using graph_detail::as_vec;
  require(trace.done && trace.value.size() == g.nodes.size(),
          "backward: run forward first");
  require(grads.node.size() == g.nodes.size(), "backward: gradients not sized for graph");
  require(int(grad_logits.size()) == g.cfg.n_classes, "backward: bad logit gradient");

  const int n = int(g.nodes.size());
  std::vector<std::optional<NodeValue<T>>> acc(n);
  acc[g.out_node] = NodeValue<T>(grad_logits);

  auto send = [&](int consumer, int producer, NodeValue<T>&& gv) {
    if (mask.masked(consumer, producer)) return;
    add_value(acc[producer], std::move(gv));
  };

  FeatureMapStack<T> input_grad;
  for (int i = n - 1; i >= 0; --i) {
    if (!acc[i]) continue;  // node not on any active path to the loss
    const Node<T>& nd = g.nodes[i];
    switch (nd.kind) {
      case NodeKind::kInput:
        input_grad = std::get<FeatureMapStack<T>>(std::move(*acc[i]));
        break;
      case NodeKind::kConv: {
        const auto& c = std::get<ConvLayer<T>>(nd.layer);
        const auto& in = as_maps(trace.value[nd.inputs[0]], nd.name);
        auto cg = conv_backward(c, in, std::get<FeatureMapStack<T>>(*acc[i]));
        for (std::size_t j = 0; j < cg.weights.size(); ++j)
          grads.node[i].weights[j] += cg.weights[j];
        for (std::size_t j = 0; j < cg.bias.size(); ++j)
          grads.node[i].bias[j] += cg.bias[j];
        send(i, nd.inputs[0], NodeValue<T>(std::move(cg.input)));
        break;
      }
      case NodeKind::kRelu: {
        const NodeValue<T>& in = trace.value[nd.inputs[0]];
        if (const auto* m = std::get_if<FeatureMapStack<T>>(&in))
          send(i, nd.inputs[0],
               NodeValue<T>(relu_backward(*m, std::get<FeatureMapStack<T>>(*acc[i]))));
        else
          send(i, nd.inputs[0],
               NodeValue<T>(relu_backward(std::get<FlatVector<T>>(in),
                                          std::get<FlatVector<T>>(*acc[i]))));
        break;
      }
      case NodeKind::kMaxPool: {
        const auto& in = as_maps(trace.value[nd.inputs[0]], nd.name);
        send(i, nd.inputs[0],
             NodeValue<T>(maxpool_backward(std::get<FeatureMapStack<T>>(*acc[i]),
                                           trace.argmax[i], in.h, in.w)));
        break;
      }
      case NodeKind::kSsp: {
        const auto& s = std::get<SSPLayer>(nd.layer);
        const auto& in = as_maps(trace.value[nd.inputs[0]], nd.name);
        send(i, nd.inputs[0],
             NodeValue<T>(ssp_backward(s, std::get<FlatVector<T>>(*acc[i]), in.n_map, in.h,
                                       in.w, trace.argmax[i])));
        break;
      }
      case NodeKind::kConcat: {
        const auto& gv = std::get<FlatVector<T>>(*acc[i]);
        std::vector<std::size_t> sizes;
        sizes.reserve(nd.inputs.size());
        for (int j : nd.inputs)
          sizes.push_back(as_vec(trace.value[j], nd.name).size());
        auto parts = split(gv, sizes);
        for (std::size_t j = 0; j < nd.inputs.size(); ++j)
          send(i, nd.inputs[j], NodeValue<T>(std::move(parts[j])));
        break;
      }
      case NodeKind::kFc: {
        const auto& f = std::get<FullyConnectedLayer<T>>(nd.layer);
        const auto& x = as_vec(trace.value[nd.inputs[0]], nd.name);
        auto fg = fc_backward(f, x, std::get<FlatVector<T>>(*acc[i]));
        for (std::size_t j = 0; j < fg.weights.size(); ++j)
          grads.node[i].weights[j] += fg.weights[j];
        for (std::size_t j = 0; j < fg.bias.size(); ++j)
          grads.node[i].bias[j] += fg.bias[j];
        send(i, nd.inputs[0], NodeValue<T>(std::move(fg.input)));
        break;
      }
      case NodeKind::kFlatten: {
        const auto& in = as_maps(trace.value[nd.inputs[0]], nd.name);
        const auto& gv = std::get<FlatVector<T>>(*acc[i]);
        FeatureMapStack<T> gm(in.n_map, in.h, in.w);
        gm.data = gv;
        send(i, nd.inputs[0], NodeValue<T>(std::move(gm)));
        break;
      }
    }
  }
  return input_grad;
}

}  // namespace mspn
