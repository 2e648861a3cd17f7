#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace matekit {

// Every failure the library reports carries one of these codes; callers
// branch on the code, the message is for humans.
enum class Errc {
  // panel
  UnbalancedPanel,
  BadTreatmentCode,
  NonFiniteOutcome,
  TimeVaryingCovariate,
  BadPeriodPair,
  MissingColumn,
  MalformedInput,
  // moverreg
  RankDeficientDesign,
  NoMovers,
  MissingCell,
  Precondition,
  // propensity
  EmptyStratum,
  ContinuousColumn,
  Separation,
  NoConvergence,
  RankDeficientFeatures,
  UnknownSupportPoint,
  // chains
  NoFeasibleChain,
  Overflow,
  // mate
  InfeasibleChain,
  DegenerateDenominator,
  NotBinary,
  AssumptionRequired,
  // gmm
  RouteExplosion,
  SingularSystem,
  SameRoute,
  // simlab
  InvalidSpec,
  InfiniteSupport,
  // cli / config
  BadConfig,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace matekit
