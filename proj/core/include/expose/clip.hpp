#pragma once

#include <string>
#include <vector>

#include "expose/types.hpp"

namespace expose {

/// Bookkeeping carried next to a clip. Training code never reads persona or actor.
struct ClipInfo {
  std::string id;
  int persona = -1;  // talking identity the clip is attributed to
  int actor = -1;    // identity that actually produced the expressions
  bool genuine = true;
  bool operator==(const ClipInfo&) const = default;
};

struct Clip {
  ClipInfo info;
  AudioFeatures audio;
  ExpressionSequence expression;
  int length() const { return expression.length(); }
};

}  // namespace expose
