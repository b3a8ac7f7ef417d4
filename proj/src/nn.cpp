#include "distill_lab/nn.hpp"

#include <bit>
#include <cmath>
#include <random>

#include "distill_lab/seed.hpp"

namespace distill_lab {

Tensor AffineLayer::forward(const Tensor& x) const {
  auto y = linear(x, weight.tensor(), bias.tensor());
  return activation == Activation::relu ? relu(y) : y;
}

FeatureExtractor::FeatureExtractor(std::size_t input_dim, std::vector<AffineLayer> layers)
    : input_dim_(input_dim), layers_(std::move(layers)) {
  if (input_dim_ == 0) throw SpecError("feature extractor input width must be >= 1");
  std::size_t width = input_dim_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].in_dim() != width) {
      throw SpecError("layer " + std::to_string(i) + " expects width " + std::to_string(layers_[i].in_dim()) +
                      " but receives " + std::to_string(width));
    }
    width = layers_[i].out_dim();
  }
}

Tensor FeatureExtractor::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != input_dim_) {
    throw DimensionError("feature extractor expects [n x " + std::to_string(input_dim_) + "], got " +
                         to_string(x.shape()));
  }
  Tensor h = x;
  for (const auto& layer : layers_) h = layer.forward(h);
  return h;
}

Tensor Classifier::forward(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != input_dim()) {
    throw DimensionError("classifier expects [n x " + std::to_string(input_dim()) + "], got " +
                         to_string(z.shape()));
  }
  return linear(z, weight.tensor(), bias.tensor());
}

Connector::Connector(std::vector<ConnectorBlock> blocks) : blocks_(std::move(blocks)) {
  if (blocks_.empty() || blocks_.size() > 3) {
    throw SpecError("connector depth must be 1, 2 or 3, got " + std::to_string(blocks_.size()));
  }
  for (std::size_t i = 1; i < blocks_.size(); ++i) {
    if (blocks_[i].affine.in_dim() != blocks_[i - 1].affine.out_dim()) {
      throw SpecError("connector block " + std::to_string(i) + " width does not chain");
    }
  }
}

Tensor Connector::forward(const Tensor& z, Mode mode) {
  if (z.rank() != 2 || z.dim(1) != input_dim()) {
    throw DimensionError("connector expects [n x " + std::to_string(input_dim()) + "], got " +
                         to_string(z.shape()));
  }
  Tensor h = z;
  for (auto& block : blocks_) {
    h = block.affine.forward(h);
    h = batchnorm1d(h, block.gamma.tensor(), block.beta.tensor(), block.stats, mode);
    if (block.relu) h = relu(h);
  }
  return h;
}

Tensor Connector::forward(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != input_dim()) {
    throw DimensionError("connector expects [n x " + std::to_string(input_dim()) + "], got " +
                         to_string(z.shape()));
  }
  Tensor h = z;
  for (const auto& block : blocks_) {
    auto stats = block.stats;
    h = block.affine.forward(h);
    h = batchnorm1d(h, block.gamma.tensor(), block.beta.tensor(), stats, Mode::eval);
    if (block.relu) h = relu(h);
  }
  return h;
}

void Connector::set_frozen(bool frozen) {
  for (auto& b : blocks_) {
    b.affine.weight.set_frozen(frozen);
    b.affine.bias.set_frozen(frozen);
    b.gamma.set_frozen(frozen);
    b.beta.set_frozen(frozen);
  }
}

ForwardResult Network::forward(const Tensor& x, Mode mode) {
  ForwardResult r;
  r.features = phi.forward(x);
  r.head_input = adapter ? adapter->forward(r.features, mode) : r.features;
  r.logits = g.forward(r.head_input);
  return r;
}

ForwardResult Network::forward(const Tensor& x) const {
  ForwardResult r;
  r.features = phi.forward(x);
  r.head_input = adapter ? static_cast<const Connector&>(*adapter).forward(r.features) : r.features;
  r.logits = g.forward(r.head_input);
  return r;
}

void Network::set_frozen(bool frozen) {
  for (auto& l : phi.layers()) {
    l.weight.set_frozen(frozen);
    l.bias.set_frozen(frozen);
  }
  if (adapter) adapter->set_frozen(frozen);
  g.set_frozen(frozen);
}

void Network::validate() const {
  if (adapter && adapter->input_dim() != phi.feature_dim()) {
    throw SpecError("adapter input width " + std::to_string(adapter->input_dim()) +
                    " does not match feature width " + std::to_string(phi.feature_dim()));
  }
  if (g.input_dim() != head_dim()) {
    throw SpecError("classifier input width " + std::to_string(g.input_dim()) + " does not match " +
                    std::to_string(head_dim()));
  }
}

namespace {

void push_if_trainable(ParamRefs& out, Param& p) {
  if (!p.frozen()) out.push_back(p.tensor());
}

}  // namespace

void append_params(ParamRefs& out, FeatureExtractor& phi) {
  for (auto& l : phi.layers()) {
    push_if_trainable(out, l.weight);
    push_if_trainable(out, l.bias);
  }
}

void append_params(ParamRefs& out, Classifier& g) {
  push_if_trainable(out, g.weight);
  push_if_trainable(out, g.bias);
}

void append_params(ParamRefs& out, Connector& c) {
  for (auto& b : c.blocks()) {
    push_if_trainable(out, b.affine.weight);
    push_if_trainable(out, b.affine.bias);
    push_if_trainable(out, b.gamma);
    push_if_trainable(out, b.beta);
  }
}

void append_params(ParamRefs& out, Network& net) {
  append_params(out, net.phi);
  if (net.adapter) append_params(out, *net.adapter);
  append_params(out, net.g);
}

void for_each_param(const Connector& c, const std::string& prefix,
                    const std::function<void(const std::string&, const Param&)>& fn) {
  for (std::size_t i = 0; i < c.blocks().size(); ++i) {
    const auto& b = c.blocks()[i];
    const std::string p = prefix + std::to_string(i) + ".";
    fn(p + "weight", b.affine.weight);
    fn(p + "bias", b.affine.bias);
    fn(p + "gamma", b.gamma);
    fn(p + "beta", b.beta);
  }
}

void for_each_param(const Network& net, const std::string& prefix,
                    const std::function<void(const std::string&, const Param&)>& fn) {
  for (std::size_t i = 0; i < net.phi.layers().size(); ++i) {
    const auto& l = net.phi.layers()[i];
    fn(prefix + "phi." + std::to_string(i) + ".weight", l.weight);
    fn(prefix + "phi." + std::to_string(i) + ".bias", l.bias);
  }
  if (net.adapter) for_each_param(*net.adapter, prefix + "adapter.", fn);
  fn(prefix + "g.weight", net.g.weight);
  fn(prefix + "g.bias", net.g.bias);
}

AffineLayer make_affine(std::size_t in, std::size_t out, Activation act, std::uint64_t seed) {
  if (in == 0 || out == 0) throw SpecError("layer widths must be >= 1");
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (auto& v : w) v = dist(rng);
  return AffineLayer{Param(Tensor::from({out, in}, std::move(w))), Param(Tensor::zeros({out})), act};
}

Network init_network(const std::vector<std::size_t>& widths, std::size_t classes, std::uint64_t seed) {
  if (widths.empty()) throw SpecError("network width list is empty");
  for (auto w : widths) {
    if (w == 0) throw SpecError("network widths must be >= 1");
  }
  if (classes < 2) throw SpecError("a classifier needs at least 2 classes");
  std::vector<AffineLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.push_back(make_affine(widths[i], widths[i + 1], Activation::relu, derive_seed(seed, i)));
  }
  Network net;
  net.phi = FeatureExtractor(widths.front(), std::move(layers));
  auto head = make_affine(widths.back(), classes, Activation::none, derive_seed(seed, salt::classifier));
  net.g = Classifier{std::move(head.weight), std::move(head.bias)};
  return net;
}

Network init_adapter_network(const std::vector<std::size_t>& widths, std::size_t head_width, std::size_t classes,
                             std::uint64_t seed) {
  auto net = init_network(widths, classes, seed);
  net.adapter = init_connector(net.phi.feature_dim(), head_width, 1, derive_seed(seed, salt::adapter));
  auto head = make_affine(head_width, classes, Activation::none, derive_seed(seed, salt::classifier));
  net.g = Classifier{std::move(head.weight), std::move(head.bias)};
  return net;
}

Connector init_connector(std::size_t in, std::size_t out, std::size_t depth, std::uint64_t seed,
                         std::size_t hidden) {
  if (depth < 1 || depth > 3) throw SpecError("connector depth must be 1, 2 or 3, got " + std::to_string(depth));
  if (hidden == 0) hidden = out;
  std::vector<std::size_t> widths;
  switch (depth) {
    case 1: widths = {in, out}; break;
    case 2: widths = {in, out, out}; break;
    default: widths = {in, hidden, hidden, out}; break;
  }
  std::vector<ConnectorBlock> blocks;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    ConnectorBlock b;
    b.affine = make_affine(widths[i], widths[i + 1], Activation::none, derive_seed(seed, salt::connector + i));
    b.gamma = Param(Tensor::full({widths[i + 1]}, 1.0));
    b.beta = Param(Tensor::zeros({widths[i + 1]}));
    b.stats = BatchNormState<double>::fresh(widths[i + 1]);
    b.relu = true;
    blocks.push_back(std::move(b));
  }
  return Connector(std::move(blocks));
}

namespace {

bool same_values(const Param& a, const Param& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.tensor().data();
  auto y = b.tensor().data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(y[i])) return false;
  }
  return true;
}

}  // namespace

bool same_parameters(const FeatureExtractor& a, const FeatureExtractor& b) {
  if (a.input_dim() != b.input_dim() || a.layers().size() != b.layers().size()) return false;
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    if (!same_values(a.layers()[i].weight, b.layers()[i].weight) ||
        !same_values(a.layers()[i].bias, b.layers()[i].bias)) {
      return false;
    }
  }
  return true;
}

bool same_parameters(const Connector& a, const Connector& b) {
  if (a.depth() != b.depth()) return false;
  for (std::size_t i = 0; i < a.depth(); ++i) {
    const auto& x = a.blocks()[i];
    const auto& y = b.blocks()[i];
    if (!same_values(x.affine.weight, y.affine.weight) || !same_values(x.affine.bias, y.affine.bias) ||
        !same_values(x.gamma, y.gamma) || !same_values(x.beta, y.beta) ||
        x.stats.running_mean != y.stats.running_mean || x.stats.running_var != y.stats.running_var) {
      return false;
    }
  }
  return true;
}

bool same_parameters(const Network& a, const Network& b) {
  if (!same_parameters(a.phi, b.phi)) return false;
  if (a.adapter.has_value() != b.adapter.has_value()) return false;
  if (a.adapter && !same_parameters(*a.adapter, *b.adapter)) return false;
  return same_values(a.g.weight, b.g.weight) && same_values(a.g.bias, b.g.bias);
}

}  // namespace distill_lab
