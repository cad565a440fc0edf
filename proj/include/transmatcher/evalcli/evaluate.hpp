#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "transmatcher/evalcli/dataset.hpp"
#include "transmatcher/evalcli/metrics.hpp"
#include "transmatcher/variants/variants.hpp"

namespace transmatcher::evalcli {

/// Worker threads for evaluation fan-out from TRANSMATCHER_THREADS (default 1).
std::size_t eval_threads();

std::vector<RetrievalEntry> entries_of(const Dataset& ds);

/// Eval-mode [B, hw, d] feature maps (no autodiff).
template <class T>
nc::Tensor<T> extract_features(variants::Model<T>& model, std::span<const Image> images);

/// Row-major [queries x gallery] eval-mode logits.
template <class T>
std::vector<double> score_matrix(variants::Model<T>& model, const nc::Tensor<T>& query_maps,
                                 const nc::Tensor<T>& gallery_maps, std::size_t threads = 1);

template <class T>
EvalReport evaluate(variants::Model<T>& model, const Dataset& query, const Dataset& gallery,
                    std::size_t threads = 1);

/// GMP-selected local scores (every layer, both directions) of all
/// query/gallery pairs with different identities. TransMatcher only.
template <class T>
std::vector<double> negative_local_scores(variants::Model<T>& model, const Dataset& query,
                                          const Dataset& gallery);

}  // namespace transmatcher::evalcli
