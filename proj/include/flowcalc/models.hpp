#pragma once

// The three reference compositions built from Ber(1/2), an age-dependent
// ScOdds stage and two binary treatments.

#include <string_view>

#include "flowcalc/dsl.hpp"

namespace flowcalc::models {

inline constexpr std::string_view kModel1 =
    "y = Ber(1/2) | ScOdds(1+age) | ScRisk1(0+trt1) | ScRisk0(0+trt2)";
inline constexpr std::string_view kModel2 =
    "y = Ber(1/2) | ScOdds(1+age) | ScRisk0(0+trt2) | ScRisk1(0+trt1)";
// trt2 enters twice, with coefficient f2.trt2 under ScRisk1 and f3.trt2 under ScRisk0.
inline constexpr std::string_view kModel3 =
    "y = Ber(1/2) | ScOdds(1+age) | ScRisk1(0+trt2) | ScRisk0(0+trt2)";

inline const ModelSpec& model1() {
  static const ModelSpec spec = parse(kModel1);
  return spec;
}

inline const ModelSpec& model2() {
  static const ModelSpec spec = parse(kModel2);
  return spec;
}

inline const ModelSpec& model3() {
  static const ModelSpec spec = parse(kModel3);
  return spec;
}

}  // namespace flowcalc::models
