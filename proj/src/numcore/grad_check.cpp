#include "transmatcher/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "transmatcher/numcore/tape.hpp"

namespace transmatcher::nc {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Tensor<double>()>& f) {
  Tape<double> tape(false);
  TapeScope<double> scope(tape);
  const auto loss = f();
  if (loss.numel() != 1) throw UsageError("grad_check: f must return a scalar");
  return {loss.item(), tape.branch_signature()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const ParameterSet<double>& params, const GradCheckOptions& opts) {
  GradCheckReport report;
  for (const auto& p : params.params()) {
    auto t = p.tensor;
    t.zero_grad();
  }
  std::uint64_t base_signature = 0;
  {
    Tape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      loss = f();
    }
    if (loss.numel() != 1) throw UsageError("grad_check: f must return a scalar");
    base_signature = tape.branch_signature();
    tape.backward(loss);
  }

  for (const auto& p : params.params()) {
    auto t = p.tensor;
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                     : std::vector<double>(t.numel(), 0.0);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + opts.step;
      const auto plus = evaluate(f);
      data[i] = saved - opts.step;
      const auto minus = evaluate(f);
      data[i] = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.kinks;
        report.warnings.push_back("non-differentiable point at " + p.name + "[" +
                                  std::to_string(i) + "], excluded");
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opts.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel >= report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = GradCheckEntry{p.name, i, a, numeric, rel};
      }
    }
  }
  report.passed = report.checked > 0 && report.max_rel_err <= opts.rel_tol;
  return report;
}

}  // namespace transmatcher::nc
