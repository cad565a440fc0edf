#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace transmatcher::evalcli {

struct RetrievalEntry {
  int identity = 0;
  int camera = 0;  // 0 disables same-camera exclusion
  std::string image_id;
};

struct EvalReport {
  std::string dataset_pair;
  double rank1 = 0.0;
  double mAP = 0.0;
  std::vector<double> cmc;
  std::vector<double> average_precision;  // per evaluated query
  std::size_t queries = 0;
  std::size_t dropped = 0;  // no positive left after exclusion
  std::string config_hash;
  std::string checkpoint_hash;
  double wall_seconds = 0.0;
};

/// Gallery order for one query: descending score, ties by image id ascending.
/// Gallery entries sharing the query's identity and (non-zero) camera are
/// removed.
std::vector<std::size_t> rank_gallery(std::span<const double> scores, const RetrievalEntry& query,
                                      const std::vector<RetrievalEntry>& gallery);

/// Single-query Rank-1 / CMC / non-interpolated mAP from a row-major
/// [queries x gallery] score matrix.
EvalReport compute_metrics(std::span<const double> scores, const std::vector<RetrievalEntry>& queries,
                           const std::vector<RetrievalEntry>& gallery);

/// Threshold that a fraction `rate` of the given negative scores exceed:
/// sorted[n - floor(rate * n) - 1]. Needs at least ceil(1 / rate) samples.
double far_threshold(std::vector<double> negatives, double rate);

/// Fraction of scores strictly above the threshold.
double acceptance_rate(std::span<const double> scores, double threshold);

}  // namespace transmatcher::evalcli
