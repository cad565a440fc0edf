#include "transmatcher/evalcli/experiments.hpp"

#include <cctype>
#include <chrono>
#include <sstream>

#include "transmatcher/evalcli/evaluate.hpp"

namespace transmatcher::evalcli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string pattern_of(const std::string& name) {
  std::string out;
  std::size_t i = 0;
  while (i < name.size()) {
    if (std::isdigit(static_cast<unsigned char>(name[i])) && (i == 0 || name[i - 1] == '.')) {
      std::size_t j = i;
      while (j < name.size() && std::isdigit(static_cast<unsigned char>(name[j]))) ++j;
      if (j == name.size() || name[j] == '.') {
        out += '*';
        i = j;
        continue;
      }
    }
    out += name[i++];
  }
  return out;
}

template <class T>
ExperimentResult run_typed(const RunConfig& c, const std::string& label, std::ostream* log) {
  ExperimentResult res;
  res.label = label;
  res.model = c.model.model;
  std::vector<std::string> warnings;
  const Dataset train_set = build_train_set(c, &warnings);
  if (log) {
    for (const auto& w : warnings) *log << "warning: " << w << "\n";
  }
  for (std::size_t r = 0; r < c.repeats; ++r) {
    RunConfig rc = c;
    rc.seed = c.seed + r;
    rc.train.seed = rc.seed;
    variants::Model<T> model(rc.model, rc.seed);
    if (r == 0) {
      res.params = model.params().scalar_count();
      res.census = parameter_census(model.params());
    }
    auto t0 = Clock::now();
    res.histories.push_back(trainkit::train(model, std::span<const Image>(train_set.images), rc.train));
    res.train_seconds += seconds_since(t0);
    t0 = Clock::now();
    auto reports = evaluate_all(model, rc, eval_threads());
    res.eval_seconds += seconds_since(t0);
    if (log) {
      *log << label << " seed " << rc.seed << ":";
      for (const auto& rep : reports) *log << " " << rep.dataset_pair << " R1 " << rep.rank1 << " mAP " << rep.mAP;
      *log << "\n";
    }
    res.reports.insert(res.reports.end(), reports.begin(), reports.end());
  }
  res.train_seconds /= static_cast<double>(c.repeats);
  res.eval_seconds /= static_cast<double>(c.repeats);
  res.macc = macc(res.reports);
  return res;
}

}  // namespace

double macc(const std::vector<EvalReport>& reports) {
  if (reports.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : reports) s += r.rank1 + r.mAP;
  return s / (2.0 * static_cast<double>(reports.size()));
}

std::string dataset_pair(const RunConfig& c, const DataSource& test) {
  return (c.train_data.name.empty() ? std::string("train") : c.train_data.name) + "->" + test.name;
}

template <class T>
std::vector<EvalReport> evaluate_all(variants::Model<T>& model, const RunConfig& c,
                                     std::size_t threads) {
  std::vector<EvalReport> out;
  for (const auto& src : c.test) {
    const auto [q, g] = build_test_split(src, c);
    auto rep = evaluate(model, q, g, threads);
    rep.dataset_pair = dataset_pair(c, src);
    out.push_back(std::move(rep));
  }
  return out;
}

template <class T>
Census parameter_census(const nc::ParameterSet<T>& params) {
  Census c;
  for (const auto& p : params.params()) {
    auto& e = c[pattern_of(p.name)];
    ++e.first;
    e.second += p.tensor.numel();
  }
  return c;
}

std::string census_diff(const Census& base, const Census& other) {
  std::ostringstream out;
  auto emit = [&](char sign, const std::string& name, std::size_t tensors, std::size_t scalars) {
    if (out.tellp() > 0) out << ' ';
    out << sign << name << '[' << tensors << 'x' << scalars << ']';
  };
  for (const auto& [name, e] : other) {
    auto it = base.find(name);
    if (it == base.end()) {
      emit('+', name, e.first, e.second);
    } else if (it->second != e) {
      emit('~', name, e.first, e.second);
    }
  }
  for (const auto& [name, e] : base) {
    if (!other.count(name)) emit('-', name, e.first, e.second);
  }
  return out.str();
}

ExperimentResult run_experiment(const RunConfig& c, const std::string& label, std::ostream* log) {
  return c.precision == 32 ? run_typed<float>(c, label, log) : run_typed<double>(c, label, log);
}

const std::array<AblationFlags, 8>& ablation_rows() {
  static const std::array<AblationFlags, 8> rows{{
      {false, false, false, true, false, false},
      {false, false, true, true, false, false},
      {false, true, true, true, false, false},
      {true, false, true, true, false, false},
      {true, true, true, true, false, false},
      {true, true, true, true, true, false},
      {true, true, true, true, false, true},
      {true, true, true, true, true, true},
  }};
  return rows;
}

matcher::ModelConfig apply_flags(matcher::ModelConfig m, const AblationFlags& f) {
  m.fc1 = f.fc1;
  m.bn1 = f.bn1;
  m.mlphead1 = f.mlphead1;
  m.mlphead2 = f.mlphead2;
  m.prior_embed = f.prior_embed;
  m.pos_embed = f.pos_embed;
  return m;
}

variants::ModelSpec tiny_spec(matcher::Variant variant) {
  variants::ModelSpec s;
  s.backbone = {{4, 8}, 8, 3};
  s.image_height = 12;
  s.image_width = 8;
  s.model.d = 8;
  s.model.D = 16;
  s.model.H = 1;
  s.model.N = 2;
  s.model.h = 3;
  s.model.w = 2;
  s.model.variant = variant;
  return s;
}

nc::GradCheckReport tiny_grad_check(matcher::Variant variant, std::uint64_t seed) {
  variants::Model<double> model(tiny_spec(variant), seed);
  nc::Rng rng(nc::Rng(seed).fork(17));
  std::vector<Image> images;
  const std::vector<int> labels{1, 1, 2, 2};
  for (int label : labels) {
    Image im(12, 8);
    for (auto& v : im.data) v = static_cast<float>(rng.uniform());
    im.identity_label = label;
    images.push_back(std::move(im));
  }
  std::vector<const Image*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  auto loss = [&] {
    const auto f = model.features(ptrs);
    return trainkit::pairwise_bce_loss(model.score(f, f, true), std::span<const int>(labels));
  };
  return nc::grad_check(loss, model.params());
}

template std::vector<EvalReport> evaluate_all(variants::Model<float>&, const RunConfig&, std::size_t);
template std::vector<EvalReport> evaluate_all(variants::Model<double>&, const RunConfig&, std::size_t);
template Census parameter_census(const nc::ParameterSet<float>&);
template Census parameter_census(const nc::ParameterSet<double>&);

}  // namespace transmatcher::evalcli
