#pragma once

#include <string>
#include <vector>

#include "sevar/layers.hpp"

namespace sevar {

// The five channel-attention variants plus the empty slot. `none` means the
// host block applies no attention at all.
enum class VariantKind { none, se, slow_squeeze, slow_excite, slow_slow, bump };

const char* variant_name(VariantKind kind);
VariantKind variant_from_name(const std::string& name);

enum class Activation { relu, sigmoid };

struct FcDim {
  std::int64_t in;
  std::int64_t out;
  Activation act;

  bool operator==(const FcDim&) const = default;
};

// FC-chain dimension rules. With m = floor(C/r) and, for the Slow variants,
// h = floor(C / floor(r/2)):
//   se:           C->m (relu), m->C (sigmoid)
//   slow_squeeze: C->h, h->m, m->C
//   slow_excite:  C->m, m->h, h->C
//   slow_slow:    C->h, h->m, m->h, h->C
//   bump:         C->m, m->m, m->C
// Intermediate activations are ReLU, the final one sigmoid. Throws
// ReductionTooLarge when floor(C/r) = 0 and InvalidReduction when a Slow
// variant is asked for with r < 2.
std::vector<FcDim> make_dims(VariantKind kind, std::int64_t channels, std::int64_t reduction);

// Total scalar parameters of the chain, biases included.
std::int64_t param_count(const std::vector<FcDim>& dims);

// Variant tag, channel count, reduction ratio and the derived FC chain.
struct AttentionSpec {
  VariantKind kind = VariantKind::none;
  std::int64_t channels = 0;
  std::int64_t reduction = 16;
  std::vector<FcDim> dims;

  AttentionSpec() = default;
  AttentionSpec(VariantKind kind_, std::int64_t channels_, std::int64_t reduction_)
      : kind(kind_),
        channels(channels_),
        reduction(reduction_),
        dims(make_dims(kind_, channels_, reduction_)) {}
};

inline std::int64_t param_count(const AttentionSpec& spec) { return param_count(spec.dims); }

// Squeeze -> FC chain -> excite. Owns one dense layer per chain entry.
template <typename T>
struct AttentionModule {
  AttentionSpec spec;
  std::vector<Dense<T>> fcs;

  AttentionModule() = default;
  AttentionModule(AttentionSpec spec_, Rng& rng) : spec(std::move(spec_)) {
    fcs.reserve(spec.dims.size());
    for (const FcDim& d : spec.dims) fcs.emplace_back(d.in, d.out, rng);
  }

  // z = spatial_mean(u); s = chain(z); return u * s per channel. The final
  // sigmoid keeps every gate strictly inside (0,1). kind == none is the
  // identity.
  VarId forward(Tape<T>& t, VarId u) const {
    if (spec.kind == VariantKind::none) return u;
    const Tensor<T>& uv = t.value(u);
    if (uv.ndim() != 4 || uv.dim(1) != spec.channels) {
      throw ShapeMismatch("attention: input " + shape_str(uv.shape()) + " does not carry " +
                          std::to_string(spec.channels) + " channels");
    }
    VarId s = ag::spatial_mean(t, u);
    for (std::size_t i = 0; i < fcs.size(); ++i) {
      s = fcs[i].forward(t, s);
      s = spec.dims[i].act == Activation::relu ? ag::relu(t, s) : ag::sigmoid(t, s);
    }
    return ag::channel_scale(t, u, s);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (std::size_t i = 0; i < fcs.size(); ++i) {
      fcs[i].collect(prefix + ".fc" + std::to_string(i), out);
    }
  }

  std::int64_t num_params() const { return sevar::param_count(spec); }
};

// Convenience used by tests and the gradcheck command: forward through a
// standalone module outside any host network.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& u, const AttentionModule<T>& module) {
  Tape<T> t;
  VarId uid = t.leaf(u, /*requires_grad=*/false);
  VarId out = module.forward(t, uid);
  return t.value(out);
}

}  // namespace sevar
