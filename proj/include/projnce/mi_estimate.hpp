#pragma once

#include <cstddef>
#include <optional>
#include <string>

namespace projnce {

enum class MIMethod { mixed_ksg, oracle_mc, bound_prop1, bound_softnce };

inline std::string to_string(MIMethod m) {
  switch (m) {
    case MIMethod::mixed_ksg: return "mixed_ksg";
    case MIMethod::oracle_mc: return "oracle_mc";
    case MIMethod::bound_prop1: return "bound_prop1";
    case MIMethod::bound_softnce: return "bound_softnce";
  }
  return "unknown";
}

/// A mutual-information value in nats plus how it was obtained.
struct MIEstimate {
  double value = 0.0;
  MIMethod method = MIMethod::mixed_ksg;
  std::size_t k = 0;  // neighbours, mixed_ksg only
  std::size_t n = 0;  // samples (or batches for bounds)
  std::optional<double> std_error;
};

}  // namespace projnce
