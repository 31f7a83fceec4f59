#pragma once

#include <cmath>
#include <string>

#include "contifuse/common.hpp"

namespace contifuse {

enum class DecayKind { gaussian, linear };

/// How the decay span maps onto a (K+2)-state stack when building the target
/// matrix.  `corner` picks the span so the (K+1, 0) corner target equals mu
/// (span argument K+2); `literal` passes K+1 unchanged.
enum class SpanConvention { corner, literal };

/// Gaussian decay: exp(-p^2 / (2 sigma)) with sigma chosen so the value is 1
/// at p = 0 and exactly mu at p = s-1.  Requires mu in (0,1) so ln(mu) < 0.
inline double gaussian_decay(double p, double mu, double s) {
  require(mu > 0.0 && mu < 1.0, "gaussian_decay: mu must lie strictly inside (0,1)");
  require(s >= 2.0, "gaussian_decay: span must be >= 2");
  // 1/(2 sigma) = -ln(mu) / (s-1)^2, folded directly into the exponent.
  const double t = p / (s - 1.0);
  return std::exp(t * t * std::log(mu));
}

/// Linear decay: 1 - p (1 - mu) / (s - 1); value 1 at p = 0, mu at p = s-1.
inline double linear_decay(double p, double mu, double s) {
  require(mu > 0.0 && mu < 1.0, "linear_decay: mu must lie strictly inside (0,1)");
  require(s >= 2.0, "linear_decay: span must be >= 2");
  return 1.0 - p * (1.0 - mu) / (s - 1.0);
}

inline double apply_decay(DecayKind kind, double p, double mu, double s) {
  return kind == DecayKind::gaussian ? gaussian_decay(p, mu, s) : linear_decay(p, mu, s);
}

inline DecayKind parse_decay(const std::string& s) {
  if (s == "gaussian") return DecayKind::gaussian;
  if (s == "linear") return DecayKind::linear;
  throw ContractError("unknown decay kind: '" + s + "' (expected gaussian|linear)");
}

inline const char* decay_name(DecayKind k) {
  return k == DecayKind::gaussian ? "gaussian" : "linear";
}

inline SpanConvention parse_span(const std::string& s) {
  if (s == "corner") return SpanConvention::corner;
  if (s == "literal") return SpanConvention::literal;
  throw ContractError("unknown span convention: '" + s + "' (expected corner|literal)");
}

inline const char* span_name(SpanConvention s) {
  return s == SpanConvention::corner ? "corner" : "literal";
}

/// Decay span for a stack with K transition states under the chosen
/// convention.  Targets are evaluated as Omega(|i-j|, mu, span).
inline double decay_span(Dim K, SpanConvention conv) {
  return conv == SpanConvention::corner ? double(K + 2) : double(K + 1);
}

}  // namespace contifuse
