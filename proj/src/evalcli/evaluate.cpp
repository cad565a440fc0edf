#include "transmatcher/evalcli/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "transmatcher/numcore/ops.hpp"
#include "transmatcher/numcore/tape.hpp"

namespace transmatcher::evalcli {

using nc::Tensor;

std::size_t eval_threads() {
  const char* v = std::getenv("TRANSMATCHER_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end && *end == '\0' && n > 0) ? static_cast<std::size_t>(n) : 1;
}

std::vector<RetrievalEntry> entries_of(const Dataset& ds) {
  std::vector<RetrievalEntry> out;
  for (const auto& im : ds.images) out.push_back({im.identity_label, im.camera_id, im.image_id});
  return out;
}

template <class T>
Tensor<T> extract_features(variants::Model<T>& model, std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("no images to extract features from");
  nc::NoTapeScope<T> no_tape;
  constexpr std::size_t chunk = 64;
  std::vector<Tensor<T>> parts;
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    std::vector<const Image*> ptrs;
    for (std::size_t i = s; i < std::min(images.size(), s + chunk); ++i) ptrs.push_back(&images[i]);
    parts.push_back(model.features(ptrs));
  }
  return parts.size() == 1 ? parts[0] : nc::concat(parts, 0);
}

template <class T>
std::vector<double> score_matrix(variants::Model<T>& model, const Tensor<T>& qmaps,
                                 const Tensor<T>& gmaps, std::size_t threads) {
  const std::size_t nq = qmaps.dim(0), ng = gmaps.dim(0);
  constexpr std::size_t qchunk = 8;
  const std::size_t blocks = (nq + qchunk - 1) / qchunk;
  std::vector<double> out(nq * ng);
  auto work = [&](std::size_t worker, std::size_t stride) {
    nc::NoTapeScope<T> no_tape;
    for (std::size_t b = worker; b < blocks; b += stride) {
      const std::size_t q0 = b * qchunk, q1 = std::min(nq, q0 + qchunk);
      auto s = model.score(nc::slice(qmaps, 0, q0, q1), gmaps, false);
      for (std::size_t i = 0; i < (q1 - q0) * ng; ++i) out[q0 * ng + i] = static_cast<double>(s[i]);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, blocks));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  return out;
}

template <class T>
EvalReport evaluate(variants::Model<T>& model, const Dataset& query, const Dataset& gallery,
                    std::size_t threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto qmaps = extract_features(model, query.images);
  const auto gmaps = extract_features(model, gallery.images);
  const auto scores = score_matrix(model, qmaps, gmaps, threads);
  auto report = compute_metrics(scores, entries_of(query), entries_of(gallery));
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

template <class T>
std::vector<double> negative_local_scores(variants::Model<T>& model, const Dataset& query,
                                          const Dataset& gallery) {
  auto* tm = model.transmatcher();
  if (!tm) throw std::invalid_argument("local matching scores exist only for TransMatcher");
  const auto qmaps = extract_features(model, query.images);
  const auto gmaps = extract_features(model, gallery.images);
  nc::NoTapeScope<T> no_tape;
  std::vector<double> out;
  const std::size_t ng = gallery.images.size();
  for (std::size_t qi = 0; qi < query.images.size(); ++qi) {
    matcher::DecoderState<T> st;
    tm->forward(nc::slice(qmaps, 0, qi, qi + 1), gmaps, false, &st);
    for (std::size_t gi = 0; gi < ng; ++gi) {
      if (query.images[qi].identity_label == gallery.images[gi].identity_label) continue;
      for (const auto& L : st.layers) {
        for (std::size_t i = 0; i < L.hw; ++i) {
          out.push_back(static_cast<double>(L.fwd_values[gi * L.hw + i]));
          out.push_back(static_cast<double>(L.rev_values[gi * L.hw + i]));
        }
      }
    }
  }
  return out;
}

#define TM_INSTANTIATE_EVAL(T)                                                                   \
  template Tensor<T> extract_features(variants::Model<T>&, std::span<const Image>);              \
  template std::vector<double> score_matrix(variants::Model<T>&, const Tensor<T>&,               \
                                            const Tensor<T>&, std::size_t);                      \
  template EvalReport evaluate(variants::Model<T>&, const Dataset&, const Dataset&, std::size_t); \
  template std::vector<double> negative_local_scores(variants::Model<T>&, const Dataset&,        \
                                                     const Dataset&);

TM_INSTANTIATE_EVAL(float)
TM_INSTANTIATE_EVAL(double)

}  // namespace transmatcher::evalcli
