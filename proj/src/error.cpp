#include "matekit/error.hpp"

namespace matekit {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::UnbalancedPanel:
      return "UnbalancedPanel";
    case Errc::BadTreatmentCode:
      return "BadTreatmentCode";
    case Errc::NonFiniteOutcome:
      return "NonFiniteOutcome";
    case Errc::TimeVaryingCovariate:
      return "TimeVaryingCovariate";
    case Errc::BadPeriodPair:
      return "BadPeriodPair";
    case Errc::MissingColumn:
      return "MissingColumn";
    case Errc::MalformedInput:
      return "MalformedInput";
    case Errc::RankDeficientDesign:
      return "RankDeficientDesign";
    case Errc::NoMovers:
      return "NoMovers";
    case Errc::MissingCell:
      return "MissingCell";
    case Errc::Precondition:
      return "Precondition";
    case Errc::EmptyStratum:
      return "EmptyStratum";
    case Errc::ContinuousColumn:
      return "ContinuousColumn";
    case Errc::Separation:
      return "Separation";
    case Errc::NoConvergence:
      return "NoConvergence";
    case Errc::RankDeficientFeatures:
      return "RankDeficientFeatures";
    case Errc::UnknownSupportPoint:
      return "UnknownSupportPoint";
    case Errc::NoFeasibleChain:
      return "NoFeasibleChain";
    case Errc::Overflow:
      return "Overflow";
    case Errc::InfeasibleChain:
      return "InfeasibleChain";
    case Errc::DegenerateDenominator:
      return "DegenerateDenominator";
    case Errc::NotBinary:
      return "NotBinary";
    case Errc::AssumptionRequired:
      return "AssumptionRequired";
    case Errc::RouteExplosion:
      return "RouteExplosion";
    case Errc::SingularSystem:
      return "SingularSystem";
    case Errc::SameRoute:
      return "SameRoute";
    case Errc::InvalidSpec:
      return "InvalidSpec";
    case Errc::InfiniteSupport:
      return "InfiniteSupport";
    case Errc::BadConfig:
      return "BadConfig";
  }
  return "Unknown";
}

}  // namespace matekit
