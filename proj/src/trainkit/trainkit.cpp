#include "transmatcher/trainkit/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "transmatcher/numcore/ops.hpp"
#include "transmatcher/numcore/optim.hpp"
#include "transmatcher/numcore/tape.hpp"

namespace transmatcher::trainkit {

using backbone::Image;
using nc::Tensor;

void TrainConfig::validate() const {
  if (instances_per_class == 0 || batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (batch_size % instances_per_class != 0) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " is not divisible by K = " +
                      std::to_string(instances_per_class));
  }
  if (classes_per_batch() < 2) throw ConfigError("a batch needs at least 2 identities");
  if (!(clip_norm > 0)) throw ConfigError("clip norm must be positive");
  if (lr_backbone < 0 || lr_new < 0) throw ConfigError("learning rates must be non-negative");
}

nc::LrMap learning_rates(const TrainConfig& c, std::size_t epoch) {
  const double f = epoch >= c.decay_epoch ? c.decay_factor : 1.0;
  return {{nc::kBackboneGroup, c.lr_backbone * f}, {nc::kNewGroup, c.lr_new * f}};
}

std::vector<int> class_labels(std::span<const Image> images) {
  std::vector<int> labels;
  for (const auto& im : images) labels.push_back(im.identity_label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

ClassGraph nearest_classes(std::vector<int> labels, const std::vector<std::vector<double>>& means,
                           std::size_t classes_per_batch) {
  const std::size_t n = labels.size();
  if (n < classes_per_batch) {
    throw ConfigError("dataset has " + std::to_string(n) + " identities but a batch needs " +
                      std::to_string(classes_per_batch));
  }
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : means[i]) s += v * v;
    norms[i] = std::sqrt(s);
  }
  ClassGraph g;
  g.labels = std::move(labels);
  g.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> sims;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < means[i].size(); ++k) dot += means[i][k] * means[j][k];
      const double denom = norms[i] * norms[j];
      sims.emplace_back(denom > 0 ? dot / denom : 0.0, j);
    }
    std::stable_sort(sims.begin(), sims.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; k + 1 < classes_per_batch; ++k) g.neighbors[i].push_back(sims[k].second);
  }
  return g;
}

template <class T>
ClassGraph build_class_graph(std::span<const Image> images, variants::Model<T>& model,
                             std::size_t classes_per_batch) {
  auto labels = class_labels(images);
  std::map<int, std::size_t> index;
  for (std::size_t c = 0; c < labels.size(); ++c) index[labels[c]] = c;
  const std::size_t d = model.spec().model.d;
  std::vector<std::vector<double>> means(labels.size(), std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(labels.size(), 0);

  nc::NoTapeScope<T> no_tape;
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    std::vector<const Image*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&images[i]);
    auto emb = nc::l2_normalize_rows(nc::mean_axis(model.features(ptrs), 1));
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t c = index.at(images[i].identity_label);
      for (std::size_t k = 0; k < d; ++k) means[c][k] += emb[(i - start) * d + k];
      ++counts[c];
    }
  }
  for (std::size_t c = 0; c < labels.size(); ++c)
    for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
  return nearest_classes(std::move(labels), means, classes_per_batch);
}

Sampler::Sampler(std::span<const Image> images, const TrainConfig& config)
    : K_(config.instances_per_class), labels_(class_labels(images)) {
  config.validate();
  std::map<int, std::size_t> index;
  for (std::size_t c = 0; c < labels_.size(); ++c) index[labels_[c]] = c;
  members_.resize(labels_.size());
  for (std::size_t i = 0; i < images.size(); ++i) members_[index.at(images[i].identity_label)].push_back(i);
  pools_.resize(labels_.size());
  warned_.assign(labels_.size(), false);
  if (labels_.size() < config.classes_per_batch()) {
    throw ConfigError("dataset has " + std::to_string(labels_.size()) +
                      " identities but a batch needs " + std::to_string(config.classes_per_batch()));
  }
}

std::vector<std::size_t> Sampler::draw(std::size_t cls, nc::Rng& rng) {
  const auto& members = members_[cls];
  std::vector<std::size_t> out;
  if (members.size() < K_) {
    if (!warned_[cls]) {
      warned_[cls] = true;
      warnings_.push_back("identity " + std::to_string(labels_[cls]) + " has " +
                          std::to_string(members.size()) + " images (< K = " + std::to_string(K_) +
                          "); sampling with replacement");
    }
    for (std::size_t k = 0; k < K_; ++k) out.push_back(members[rng.below(members.size())]);
    return out;
  }
  auto& pool = pools_[cls];
  while (out.size() < K_) {
    if (pool.empty()) {
      pool = members;
      rng.shuffle(pool);
      // Images already taken for this batch go to the front (drawn last).
      std::stable_partition(pool.begin(), pool.end(), [&](std::size_t i) {
        return std::find(out.begin(), out.end(), i) != out.end();
      });
    }
    out.push_back(pool.back());
    pool.pop_back();
  }
  return out;
}

std::vector<Batch> Sampler::epoch(const ClassGraph& graph, nc::Rng& rng) {
  if (graph.labels != labels_) throw std::invalid_argument("class graph was built for other data");
  std::vector<std::size_t> anchors(labels_.size());
  std::iota(anchors.begin(), anchors.end(), 0);
  rng.shuffle(anchors);
  std::vector<Batch> batches;
  for (const std::size_t a : anchors) {
    Batch b;
    std::vector<std::size_t> roster{a};
    roster.insert(roster.end(), graph.neighbors[a].begin(), graph.neighbors[a].end());
    for (const std::size_t c : roster) {
      b.roster.push_back(labels_[c]);
      for (const std::size_t i : draw(c, rng)) {
        b.image_indices.push_back(i);
        b.labels.push_back(labels_[c]);
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

template <class T>
Tensor<T> pairwise_bce_loss(const Tensor<T>& scores, std::span<const int> labels) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1) || scores.dim(0) != labels.size()) {
    throw nc::DimensionError("pairwise loss needs a square score matrix over the batch labels, got " +
                             nc::shape_str(scores.shape()));
  }
  const std::size_t B = labels.size();
  std::vector<int> y(B * B, 0);
  std::size_t npos = 0, nneg = 0;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      const bool pos = labels[i] == labels[j];
      y[i * B + j] = pos;
      (pos ? npos : nneg) += 1;
    }
  }
  if (npos == 0 || nneg == 0) {
    throw std::invalid_argument("pairwise loss needs both positive and negative pairs");
  }
  std::vector<T> w(B * B, T(0));
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (i != j) w[i * B + j] = y[i * B + j] ? T(0.5) / T(npos) : T(0.5) / T(nneg);
    }
  }
  auto per_pair = nc::bce_with_logits(nc::reshape(scores, {B * B}), std::span<const int>(y));
  return nc::sum(nc::mul(per_pair, Tensor<T>({B * B}, std::move(w))));
}

template <class T>
TrainHistory train(variants::Model<T>& model, std::span<const Image> images,
                   const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  TrainHistory hist;
  if (config.epochs == 0) return hist;
  Sampler sampler(images, config);
  nc::Sgd<T> sgd(config.momentum);
  auto& params = model.params();
  nc::Rng root(config.seed);
  std::size_t step = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto lrs = learning_rates(config, e);
    nc::Rng epoch_rng = root.fork(e);
    const auto graph = build_class_graph(images, model, config.classes_per_batch());
    const auto batches = sampler.epoch(graph, epoch_rng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      std::vector<Image> flipped;
      flipped.reserve(batch.image_indices.size());
      std::vector<const Image*> ptrs;
      for (const std::size_t i : batch.image_indices) {
        if (config.flip_augment && epoch_rng.bernoulli(0.5)) {
          flipped.push_back(images[i].flipped());
          ptrs.push_back(&flipped.back());
        } else {
          ptrs.push_back(&images[i]);
        }
      }
      double loss_value = 0.0;
      try {
        nc::Tape<T> tape;
        nc::TapeScope<T> scope(tape);
        auto feats = model.features(ptrs);
        auto scores = model.score(feats, feats, true);
        auto loss = pairwise_bce_loss(scores, std::span<const int>(batch.labels));
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) throw nc::NonFiniteError("loss is not finite");
        params.zero_grad();
        tape.backward(loss);
      } catch (const nc::NonFiniteError& err) {
        throw TrainError("training diverged at step " + std::to_string(step) + ": " + err.what(),
                         step);
      }
      hist.grad_norms.push_back(nc::clip_grad_norm(params, config.clip_norm));
      hist.clipped_norms.push_back(nc::global_grad_norm(params));
      {
        nc::NoTapeScope<T> no_tape;
        sgd.step(params, lrs);
      }
      hist.step_losses.push_back(loss_value);
      loss_sum += loss_value;
      ++step;
    }
    EpochRecord rec{e + 1, loss_sum / static_cast<double>(batches.size()), lrs.at(nc::kNewGroup)};
    hist.epochs.push_back(rec);
    if (progress) progress(rec);
  }
  params.zero_grad();
  hist.warnings = sampler.warnings();
  return hist;
}

#define TM_INSTANTIATE_TRAINKIT(T)                                                             \
  template ClassGraph build_class_graph(std::span<const Image>, variants::Model<T>&,           \
                                        std::size_t);                                          \
  template Tensor<T> pairwise_bce_loss(const Tensor<T>&, std::span<const int>);                \
  template TrainHistory train(variants::Model<T>&, std::span<const Image>, const TrainConfig&, \
                              const ProgressFn&);

TM_INSTANTIATE_TRAINKIT(float)
TM_INSTANTIATE_TRAINKIT(double)

}  // namespace transmatcher::trainkit
