#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "distill_lab/ops.hpp"
#include "distill_lab/tensor.hpp"

namespace distill_lab {

/// A trainable leaf with value semantics: copying a Param copies its storage,
/// so copying a model never aliases the original's weights. A frozen Param
/// does not require grad and is skipped by the optimizer.
class Param {
 public:
  Param() = default;
  explicit Param(Tensor value) : value_(std::move(value)) {
    if (value_.defined() && value_.is_leaf() && !value_.requires_grad()) value_.set_requires_grad(true);
  }
  Param(const Param& other) : value_(other.value_.defined() ? other.value_.clone() : Tensor{}) {}
  Param& operator=(const Param& other) {
    if (this != &other) value_ = other.value_.defined() ? other.value_.clone() : Tensor{};
    return *this;
  }
  Param(Param&&) noexcept = default;
  Param& operator=(Param&&) noexcept = default;

  const Tensor& tensor() const { return value_; }
  Tensor& tensor() { return value_; }
  const Shape& shape() const { return value_.shape(); }

  bool frozen() const { return !value_.requires_grad(); }
  void set_frozen(bool frozen) { value_.set_requires_grad(!frozen); }

 private:
  Tensor value_;
};

enum class Activation { relu, none };

struct AffineLayer {
  Param weight;  // [out x in]
  Param bias;    // [out]
  Activation activation = Activation::relu;

  std::size_t in_dim() const { return weight.shape().at(1); }
  std::size_t out_dim() const { return weight.shape().at(0); }
  Tensor forward(const Tensor& x) const;
};

/// Stack of affine layers mapping inputs to the latent representation.
/// With no layers it is the identity on `input_dim`-wide inputs.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(std::size_t input_dim, std::vector<AffineLayer> layers);

  Tensor forward(const Tensor& x) const;
  std::size_t input_dim() const { return input_dim_; }
  std::size_t feature_dim() const { return layers_.empty() ? input_dim_ : layers_.back().out_dim(); }
  const std::vector<AffineLayer>& layers() const { return layers_; }
  std::vector<AffineLayer>& layers() { return layers_; }

 private:
  std::size_t input_dim_ = 0;
  std::vector<AffineLayer> layers_;
};

/// Linear map from features to class logits.
struct Classifier {
  Param weight;  // [C x h]
  Param bias;    // [C]

  std::size_t classes() const { return weight.shape().at(0); }
  std::size_t input_dim() const { return weight.shape().at(1); }
  bool frozen() const { return weight.frozen() && bias.frozen(); }
  void set_frozen(bool frozen) {
    weight.set_frozen(frozen);
    bias.set_frozen(frozen);
  }
  Tensor forward(const Tensor& z) const;
};

struct ConnectorBlock {
  AffineLayer affine;  // activation none; normalisation follows
  Param gamma;
  Param beta;
  BatchNormState<double> stats;
  bool relu = true;
};

/// Aligns student features with the teacher's feature space: 1 to 3 blocks
/// of affine -> batchnorm -> (relu).
class Connector {
 public:
  Connector() = default;
  explicit Connector(std::vector<ConnectorBlock> blocks);

  /// Train mode normalises with batch statistics and updates the running ones.
  Tensor forward(const Tensor& z, Mode mode);
  /// Eval-mode forward; leaves the running statistics untouched.
  Tensor forward(const Tensor& z) const;

  std::size_t depth() const { return blocks_.size(); }
  std::size_t input_dim() const { return blocks_.front().affine.in_dim(); }
  std::size_t output_dim() const { return blocks_.back().affine.out_dim(); }
  const std::vector<ConnectorBlock>& blocks() const { return blocks_; }
  std::vector<ConnectorBlock>& blocks() { return blocks_; }
  void set_frozen(bool frozen);

 private:
  std::vector<ConnectorBlock> blocks_;
};

struct ForwardResult {
  Tensor logits;    // o
  Tensor features;  // z = phi(x)
  Tensor head_input;  // what the classifier consumed: adapter(z) when an adapter is present, else z
};

/// f = g o phi, or f = g o adapter o phi for students that reuse a classifier
/// of a different input width (the teacher's, or a jointly trained one).
struct Network {
  FeatureExtractor phi;
  std::optional<Connector> adapter;
  Classifier g;

  ForwardResult forward(const Tensor& x, Mode mode);
  ForwardResult forward(const Tensor& x) const;

  std::size_t classes() const { return g.classes(); }
  /// Width of the representation the classifier sees.
  std::size_t head_dim() const { return adapter ? adapter->output_dim() : phi.feature_dim(); }
  void set_frozen(bool frozen);
  void validate() const;
};

/// Trainable (non-frozen) parameter handles; they alias the model storage.
using ParamRefs = std::vector<Tensor>;

void append_params(ParamRefs& out, FeatureExtractor& phi);
void append_params(ParamRefs& out, Classifier& g);
void append_params(ParamRefs& out, Connector& c);
void append_params(ParamRefs& out, Network& net);

/// Visits every parameter (frozen or not) with its checkpoint name.
void for_each_param(const Network& net, const std::string& prefix,
                    const std::function<void(const std::string&, const Param&)>& fn);
void for_each_param(const Connector& c, const std::string& prefix,
                    const std::function<void(const std::string&, const Param&)>& fn);

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases.
AffineLayer make_affine(std::size_t in, std::size_t out, Activation act, std::uint64_t seed);

/// widths = [input, hidden..., feature_dim]; every phi layer uses relu. A
/// single width gives an identity feature extractor (a linear model).
Network init_network(const std::vector<std::size_t>& widths, std::size_t classes, std::uint64_t seed);

/// A student that owns a head of width `head_width`: phi from `widths`, one
/// adapter block phi -> head_width, and a fresh classifier on top.
Network init_adapter_network(const std::vector<std::size_t>& widths, std::size_t head_width, std::size_t classes,
                             std::uint64_t seed);

/// depth 1: in->out; depth 2: in->out->out; depth 3: in->hidden->hidden->out.
/// hidden = 0 means hidden = out.
Connector init_connector(std::size_t in, std::size_t out, std::size_t depth, std::uint64_t seed,
                         std::size_t hidden = 0);

/// Marks every parameter frozen.
inline void freeze(Network& net) { net.set_frozen(true); }
inline void freeze(Classifier& g) { g.set_frozen(true); }
inline void freeze(Connector& c) { c.set_frozen(true); }

/// Parameter-wise bit equality.
bool same_parameters(const Network& a, const Network& b);
bool same_parameters(const FeatureExtractor& a, const FeatureExtractor& b);
bool same_parameters(const Connector& a, const Connector& b);

}  // namespace distill_lab
