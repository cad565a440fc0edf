#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "transmatcher/evalcli/config.hpp"
#include "transmatcher/evalcli/metrics.hpp"
#include "transmatcher/numcore/grad_check.hpp"
#include "transmatcher/trainkit/trainkit.hpp"

namespace transmatcher::evalcli {

/// Mean of every Rank-1 and mAP value in the reports.
double macc(const std::vector<EvalReport>& reports);

/// "<train name>-><test name>".
std::string dataset_pair(const RunConfig& c, const DataSource& test);

template <class T>
std::vector<EvalReport> evaluate_all(variants::Model<T>& model, const RunConfig& c,
                                     std::size_t threads);

/// Per-pattern parameter census: names with numeric components replaced by
/// '*', mapped to (tensor count, scalar count).
using Census = std::map<std::string, std::pair<std::size_t, std::size_t>>;

template <class T>
Census parameter_census(const nc::ParameterSet<T>& params);

/// Human-readable difference, e.g. "+decoder.*.W[2x1024]". Empty if equal.
std::string census_diff(const Census& base, const Census& other);

/// Build one model per repeat (seed + r), train it on the training source and
/// evaluate on every test source.
struct ExperimentResult {
  std::string label;
  matcher::ModelConfig model;
  std::size_t params = 0;
  Census census;
  std::vector<trainkit::TrainHistory> histories;
  std::vector<EvalReport> reports;  // repeats x test sources
  double train_seconds = 0.0;       // mean per repeat
  double eval_seconds = 0.0;
  double macc = 0.0;
};

ExperimentResult run_experiment(const RunConfig& c, const std::string& label, std::ostream* log);

/// The eight flag rows of the component ablation, minimal row first.
struct AblationFlags {
  bool fc1, bn1, mlphead1, mlphead2, prior_embed, pos_embed;
};
const std::array<AblationFlags, 8>& ablation_rows();
matcher::ModelConfig apply_flags(matcher::ModelConfig m, const AblationFlags& f);

/// Tiny gradient-check setting: 12x8 images, two conv blocks, h=3, w=2,
/// d=8, D=16, N=2, H=1.
variants::ModelSpec tiny_spec(matcher::Variant variant);

/// Full pairwise loss of a four-image, two-identity batch (train mode)
/// checked against central differences on every parameter.
nc::GradCheckReport tiny_grad_check(matcher::Variant variant, std::uint64_t seed);

}  // namespace transmatcher::evalcli
