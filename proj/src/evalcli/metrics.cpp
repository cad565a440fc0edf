#include "transmatcher/evalcli/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace transmatcher::evalcli {

std::vector<std::size_t> rank_gallery(std::span<const double> scores, const RetrievalEntry& q,
                                      const std::vector<RetrievalEntry>& gallery) {
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    const auto& g = gallery[j];
    if (q.camera != 0 && g.identity == q.identity && g.camera == q.camera) continue;
    order.push_back(j);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return gallery[a].image_id < gallery[b].image_id;
  });
  return order;
}

EvalReport compute_metrics(std::span<const double> scores, const std::vector<RetrievalEntry>& queries,
                           const std::vector<RetrievalEntry>& gallery) {
  const std::size_t ng = gallery.size();
  if (scores.size() != queries.size() * ng) {
    throw std::invalid_argument("score matrix does not match the query and gallery sizes");
  }
  EvalReport r;
  r.queries = queries.size();
  r.cmc.assign(ng, 0.0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto order = rank_gallery(scores.subspan(i * ng, ng), queries[i], gallery);
    double hits = 0.0, precision_sum = 0.0;
    std::size_t first = order.size();
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (gallery[order[k]].identity != queries[i].identity) continue;
      if (first == order.size()) first = k;
      hits += 1.0;
      precision_sum += hits / static_cast<double>(k + 1);
    }
    if (hits == 0.0) {
      ++r.dropped;
      continue;
    }
    ++valid;
    r.average_precision.push_back(precision_sum / hits);
    for (std::size_t k = first; k < ng; ++k) r.cmc[k] += 1.0;
  }
  if (valid > 0) {
    for (auto& c : r.cmc) c /= static_cast<double>(valid);
    r.mAP = std::accumulate(r.average_precision.begin(), r.average_precision.end(), 0.0) /
            static_cast<double>(valid);
    r.rank1 = r.cmc.empty() ? 0.0 : r.cmc[0];
  }
  return r;
}

double far_threshold(std::vector<double> negatives, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) throw std::invalid_argument("rate must lie in (0, 1)");
  const auto need = static_cast<std::size_t>(std::ceil(1.0 / rate - 1e-9));
  if (negatives.size() < need) {
    throw std::invalid_argument("far_threshold needs at least " + std::to_string(need) +
                                " negative scores, got " + std::to_string(negatives.size()));
  }
  std::sort(negatives.begin(), negatives.end());
  const std::size_t n = negatives.size();
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n)));
  return negatives[n - k - 1];
}

double acceptance_rate(std::span<const double> scores, double threshold) {
  if (scores.empty()) return 0.0;
  const auto above = std::count_if(scores.begin(), scores.end(), [&](double s) { return s > threshold; });
  return static_cast<double>(above) / static_cast<double>(scores.size());
}

}  // namespace transmatcher::evalcli
