#include "sevar/attention.hpp"

#include <array>

namespace sevar {

namespace {
constexpr std::array<const char*, 6> kVariantNames = {
    "none", "se", "slow_squeeze", "slow_excite", "slow_slow", "bump"};
}

const char* variant_name(VariantKind kind) {
  return kVariantNames[static_cast<std::size_t>(kind)];
}

VariantKind variant_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i) {
    if (name == kVariantNames[i]) return static_cast<VariantKind>(i);
  }
  throw InvalidConfig("unknown attention variant '" + name +
                      "' (expected none|se|slow_squeeze|slow_excite|slow_slow|bump)");
}

std::vector<FcDim> make_dims(VariantKind kind, std::int64_t channels, std::int64_t reduction) {
  if (kind == VariantKind::none) return {};
  if (channels < 1 || reduction < 1) {
    throw InvalidReduction("make_dims: channels and reduction must be positive");
  }
  const std::int64_t m = channels / reduction;  // bottleneck width
  if (m < 1) {
    throw ReductionTooLarge("make_dims: floor(" + std::to_string(channels) + "/" +
                            std::to_string(reduction) + ") = 0");
  }
  const bool slow = kind == VariantKind::slow_squeeze || kind == VariantKind::slow_excite ||
                    kind == VariantKind::slow_slow;
  std::int64_t h = 0;  // half-reduction width floor(C / floor(r/2))
  if (slow) {
    if (reduction < 2) {
      throw InvalidReduction("make_dims: slow variants need reduction >= 2");
    }
    h = channels / (reduction / 2);
  }

  const std::int64_t c = channels;
  using A = Activation;
  switch (kind) {
    case VariantKind::se:
      return {{c, m, A::relu}, {m, c, A::sigmoid}};
    case VariantKind::slow_squeeze:
      return {{c, h, A::relu}, {h, m, A::relu}, {m, c, A::sigmoid}};
    case VariantKind::slow_excite:
      return {{c, m, A::relu}, {m, h, A::relu}, {h, c, A::sigmoid}};
    case VariantKind::slow_slow:
      return {{c, h, A::relu}, {h, m, A::relu}, {m, h, A::relu}, {h, c, A::sigmoid}};
    case VariantKind::bump:
      return {{c, m, A::relu}, {m, m, A::relu}, {m, c, A::sigmoid}};
    case VariantKind::none:
      break;
  }
  return {};
}

std::int64_t param_count(const std::vector<FcDim>& dims) {
  std::int64_t total = 0;
  for (const FcDim& d : dims) total += d.in * d.out + d.out;
  return total;
}

}  // namespace sevar
