#pragma once

#include <string>
#include <string_view>

#include "prunekit/errors.hpp"

namespace prunekit {

enum class Selector { Magnitude, Movement };
enum class Structure { ElementWise, Rank };
enum class Scope { Global, Local };
enum class MaskMode { Shared, Separate, Hybrid };

// Learning-rate groups.
enum class ParamGroup { Weights, Scores, Sigma, Heads };

inline std::string_view to_string(Selector s) { return s == Selector::Magnitude ? "magnitude" : "movement"; }
inline std::string_view to_string(Structure s) { return s == Structure::ElementWise ? "element_wise" : "rank"; }
inline std::string_view to_string(Scope s) { return s == Scope::Global ? "global" : "local"; }
inline std::string_view to_string(MaskMode m) {
  switch (m) {
    case MaskMode::Shared: return "shared";
    case MaskMode::Separate: return "separate";
    case MaskMode::Hybrid: return "hybrid";
  }
  return "?";
}
inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Weights: return "weights";
    case ParamGroup::Scores: return "scores";
    case ParamGroup::Sigma: return "sigma";
    case ParamGroup::Heads: return "heads";
  }
  return "?";
}

inline Selector parse_selector(std::string_view s) {
  if (s == "magnitude") return Selector::Magnitude;
  if (s == "movement") return Selector::Movement;
  throw ConfigError("unknown selector '" + std::string(s) + "'");
}
inline Structure parse_structure(std::string_view s) {
  if (s == "element_wise") return Structure::ElementWise;
  if (s == "rank") return Structure::Rank;
  throw ConfigError("unknown structure '" + std::string(s) + "'");
}
inline Scope parse_scope(std::string_view s) {
  if (s == "global") return Scope::Global;
  if (s == "local") return Scope::Local;
  throw ConfigError("unknown scope '" + std::string(s) + "'");
}
inline MaskMode parse_mask_mode(std::string_view s) {
  if (s == "shared") return MaskMode::Shared;
  if (s == "separate") return MaskMode::Separate;
  if (s == "hybrid") return MaskMode::Hybrid;
  throw ConfigError("unknown mask_mode '" + std::string(s) + "'");
}

}  // namespace prunekit
