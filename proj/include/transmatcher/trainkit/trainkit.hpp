#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "transmatcher/backbone/image.hpp"
#include "transmatcher/numcore/optim.hpp"
#include "transmatcher/numcore/parameter.hpp"
#include "transmatcher/numcore/random.hpp"
#include "transmatcher/variants/variants.hpp"

namespace transmatcher::trainkit {

using nc::ConfigError;

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t instances_per_class = 4;
  std::size_t epochs = 15;
  double lr_backbone = 0.0005;
  double lr_new = 0.005;
  double decay_factor = 0.1;
  /// Epochs before the first decayed one (1-based epochs 1..decay_epoch run at
  /// the base rate).
  std::size_t decay_epoch = 10;
  double clip_norm = 4.0;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  bool flip_augment = true;

  std::size_t classes_per_batch() const { return batch_size / instances_per_class; }
  void validate() const;
};

/// Learning rates of epoch e (0-based).
nc::LrMap learning_rates(const TrainConfig& config, std::size_t epoch);

/// Distinct identity labels in ascending order; class c is labels[c].
std::vector<int> class_labels(std::span<const backbone::Image> images);

struct ClassGraph {
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> neighbors;  // class index lists
};

/// Nearest (P - 1) classes of every class by cosine similarity of the
/// class-mean embeddings; equal similarities are ordered by class index.
/// embeddings [n, e] holds one row per class.
ClassGraph nearest_classes(std::vector<int> labels, const std::vector<std::vector<double>>& means,
                           std::size_t classes_per_batch);

/// Class-mean of the mean-pooled, L2-normalized backbone features under the
/// current model, then the neighbor table.
template <class T>
ClassGraph build_class_graph(std::span<const backbone::Image> images, variants::Model<T>& model,
                             std::size_t classes_per_batch);

struct Batch {
  std::vector<std::size_t> image_indices;
  std::vector<int> labels;
  std::vector<int> roster;  // identities, anchor first
};

/// Anchor-plus-neighbors identity sampler. Each class owns a shuffled pool of
/// its images that is drawn without replacement and refilled when exhausted.
class Sampler {
 public:
  Sampler(std::span<const backbone::Image> images, const TrainConfig& config);

  /// One batch per class, anchors in random order.
  std::vector<Batch> epoch(const ClassGraph& graph, nc::Rng& rng);

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::vector<std::size_t> draw(std::size_t cls, nc::Rng& rng);

  std::size_t K_;
  std::vector<int> labels_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::vector<std::size_t>> pools_;
  std::vector<bool> warned_;
  std::vector<std::string> warnings_;
};

/// 1/2 mean BCE over positive pairs + 1/2 mean BCE over negative pairs of a
/// square score matrix; the diagonal is ignored.
template <class T>
nc::Tensor<T> pairwise_bce_loss(const nc::Tensor<T>& scores, std::span<const int> labels);

class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double lr = 0.0;        // new-layer rate
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::vector<double> grad_norms;       // before clipping
  std::vector<double> clipped_norms;    // after clipping
  std::vector<std::string> warnings;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

template <class T>
TrainHistory train(variants::Model<T>& model, std::span<const backbone::Image> images,
                   const TrainConfig& config, const ProgressFn& progress = {});

// Checkpoints ---------------------------------------------------------------

struct CheckpointHeader {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// Little-endian: "TMCK", u32 version, u64 config hash, u64 seed, u64 count,
/// then per entry u8 kind (0 parameter, 1 buffer), u32 name length, name,
/// u32 rank, u64 dims, f64 values.
template <class T>
void save_checkpoint(const std::string& path, const nc::ParameterSet<T>& params,
                     const CheckpointHeader& header);

/// Loads values into an existing registry; every name and shape must match.
template <class T>
CheckpointHeader load_checkpoint(const std::string& path, nc::ParameterSet<T>& params);

}  // namespace transmatcher::trainkit
