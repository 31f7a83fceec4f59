#pragma once

#include <vector>

#include "contifuse/common.hpp"

namespace contifuse {

/// Architecture hyperparameters.  channel_schedule[l] is the width at scale
/// l (l=0 full resolution after the input projection, l=1..N the encoder
/// outputs at 1/2^l resolution).
struct ModelConfig {
  Dim num_layers = 3;                              // N
  Dim num_states = 7;                              // K transition states
  Dim base_width = 8;                              // C0
  std::vector<Dim> channel_schedule = {8, 16, 32, 64};
  Dim attention_heads = 4;                         // h
  double gdfn_expansion = 2.0;                     // gamma

  Dim stride() const { return Dim(1) << num_layers; }  // input pad granularity

  void validate() const {
    require(num_layers >= 1, "model: num_layers must be >= 1");
    require(num_states >= 1, "model: num_states must be >= 1");
    require(base_width >= 1, "model: base_width must be >= 1");
    require(attention_heads >= 1, "model: attention_heads must be >= 1");
    require(gdfn_expansion > 0, "model: gdfn_expansion must be positive");
    require(Dim(channel_schedule.size()) == num_layers + 1,
            "model: channel_schedule must list num_layers+1 widths");
    require(channel_schedule[0] == base_width,
            "model: channel_schedule[0] must equal base_width");
    for (Dim c : channel_schedule) require(c >= 1, "model: channel widths must be >= 1");
    // Every state embedding C*H*W must split evenly into heads for any input
    // size the padding rule admits, so the width itself must divide.
    for (std::size_t l = 1; l < channel_schedule.size(); ++l)
      require(channel_schedule[l] % attention_heads == 0,
              "model: attention_heads must divide every encoder width");
  }

  /// GDFN hidden half-width at scale l: round(gamma * C), at least 1.
  Dim gdfn_hidden(Dim l) const {
    const double c = gdfn_expansion * double(channel_schedule[std::size_t(l)]);
    Dim h = Dim(c + 0.5);
    return h < 1 ? 1 : h;
  }
};

}  // namespace contifuse
