// Central-difference oracle for tape gradients.

#pragma once

#include "mosaic/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

namespace mosaic {

class OracleViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct BasicGradCheckReport {
  Scalar max_rel_error = 0;
  std::string worst_parameter;
  Index worst_element = -1;
  Scalar worst_analytic = 0;
  Scalar worst_numeric = 0;
  Index elements_checked = 0;
};

using GradCheckReport = BasicGradCheckReport<double>;

template <typename Scalar>
using ScalarFunction = std::function<BasicVar<Scalar>(BasicTape<Scalar>&)>;

template <typename Scalar>
struct BasicGradCheckOptions {
  Scalar step = Scalar(1e-5);
  /// Runs after analytic gradients are collected and before comparison.
  /// Used only to prove that a corrupted gradient is caught.
  std::function<void(std::span<BasicParameter<Scalar>* const>)> tamper;
};

using GradCheckOptions = BasicGradCheckOptions<double>;

/// Compares tape gradients of `f` against central differences over every
/// element of every parameter. Returns the largest
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// `f` must build its graph on the tape it is given, reading parameter values
/// through `tape.parameter(p)`. Parameter values are restored on return.
template <typename Scalar>
BasicGradCheckReport<Scalar> finite_difference_check(const ScalarFunction<Scalar>& f,
                                                     std::span<BasicParameter<Scalar>* const> params,
                                                     const BasicGradCheckOptions<Scalar>& options = {}) {
  const Scalar h = options.step;
  if (!(h > 0)) throw ContractError("finite_difference_check: step must be positive");

  auto evaluate = [&f]() {
    BasicTape<Scalar> tape;
    return f(tape).item();
  };

  const Scalar first = evaluate();
  const Scalar second = evaluate();
  if (first != second) {
    throw OracleViolation("finite_difference_check: function is not deterministic (" + std::to_string(first) +
                          " vs " + std::to_string(second) + ")");
  }

  for (auto* p : params) p->zero_grad();
  {
    BasicTape<Scalar> tape;
    BasicVar<Scalar> loss = f(tape);
    tape.backward(loss);
  }
  if (options.tamper) options.tamper(params);

  BasicGradCheckReport<Scalar> report;
  for (auto* p : params) {
    for (Index i = 0; i < p->value.size(); ++i) {
      Scalar& x = p->value.data()[i];
      const Scalar saved = x;
      x = saved + h;
      const Scalar up = evaluate();
      x = saved - h;
      const Scalar down = evaluate();
      x = saved;

      const Scalar numeric = (up - down) / (2 * h);
      const Scalar analytic = p->grad.data()[i];
      const Scalar denom = std::max({Scalar(1), std::abs(analytic), std::abs(numeric)});
      const Scalar err = std::abs(analytic - numeric) / denom;
      ++report.elements_checked;
      if (report.worst_element < 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = p->name;
        report.worst_element = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace mosaic
