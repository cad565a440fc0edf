#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "transmatcher/evalcli/dataset.hpp"
#include "transmatcher/evalcli/evaluate.hpp"
#include "transmatcher/evalcli/metrics.hpp"
#include "transmatcher/numcore/random.hpp"

using namespace transmatcher;
using namespace transmatcher::evalcli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("tm_evalcli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<RetrievalEntry> entries(std::vector<int> ids) {
  std::vector<RetrievalEntry> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "g%03zu", i);
    out.push_back({ids[i], 0, buf});
  }
  return out;
}

// Precision at each relevant position, counted by pairwise comparison instead
// of sorting.
double ap_by_counting(const std::vector<double>& s, const std::vector<int>& ids, int q) {
  double total = 0;
  int relevant = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (ids[i] != q) continue;
    ++relevant;
    std::size_t ahead = 0, rel_ahead = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j == i) continue;
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) {
        ++ahead;
        rel_ahead += ids[j] == q;
      }
    }
    total += static_cast<double>(rel_ahead + 1) / static_cast<double>(ahead + 1);
  }
  return total / relevant;
}

}  // namespace

TEST(Synthetic, DeterministicForSeed) {
  const auto a = generate_synthetic(easy_preset(3)), b = generate_synthetic(easy_preset(3));
  const auto c = generate_synthetic(easy_preset(4));
  ASSERT_EQ(a.images.size(), 256u);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].data, b.images[i].data);
    EXPECT_EQ(a.images[i].image_id, b.images[i].image_id);
  }
  EXPECT_NE(a.images[0].data, c.images[0].data);
  for (const auto& im : a.images) {
    EXPECT_NO_THROW(im.validate());
    for (float v : im.data) EXPECT_FLOAT_EQ(v * 255.0f, std::round(v * 255.0f));
  }
}

TEST(Synthetic, NoiselessImagesDifferOnlyByTranslation) {
  auto spec = easy_preset(5);
  spec.n_identities = 4;
  spec.images_per_identity = 6;
  spec.brightness = 0;
  spec.noise_sigma = 0;
  const auto ds = generate_synthetic(spec);
  const int m = 2 * spec.max_shift;
  for (std::size_t id = 0; id < 4; ++id) {
    const auto& ref = ds.images[6 * id];
    for (std::size_t k = 1; k < 6; ++k) {
      const auto& im = ds.images[6 * id + k];
      bool found = false;
      for (int dy = -m; dy <= m && !found; ++dy)
        for (int dx = -m; dx <= m && !found; ++dx) {
          bool same = true;
          for (std::size_t c = 0; c < 3 && same; ++c)
            for (int y = 0; y < static_cast<int>(im.height) && same; ++y)
              for (int x = 0; x < static_cast<int>(im.width) && same; ++x) {
                const int sy = y + dy, sx = x + dx;
                if (sy < 0 || sx < 0 || sy >= static_cast<int>(im.height) || sx >= static_cast<int>(im.width))
                  continue;
                same = im.at(c, y, x) == ref.at(c, sy, sx);
              }
          found = same;
        }
      EXPECT_TRUE(found) << "identity " << id << " image " << k;
    }
  }
}

TEST(Synthetic, MeanColorNearestNeighborSeparates) {
  const auto ds = generate_synthetic(easy_preset());
  std::vector<std::array<double, 3>> mean(ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& im = ds.images[i];
    const std::size_t n = im.height * im.width;
    for (std::size_t c = 0; c < 3; ++c)
      mean[i][c] = std::accumulate(im.data.begin() + c * n, im.data.begin() + (c + 1) * n, 0.0) / n;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      if (j == i) continue;
      double d = 0;
      for (std::size_t c = 0; c < 3; ++c) d += (mean[i][c] - mean[j][c]) * (mean[i][c] - mean[j][c]);
      if (d < best) best = d, arg = j;
    }
    correct += ds.images[arg].identity_label == ds.images[i].identity_label;
  }
  EXPECT_GT(static_cast<double>(correct) / mean.size(), 0.9);
}

TEST(Synthetic, ShiftedPresetIsAnotherDomain) {
  const auto a = easy_preset(), b = shifted_preset();
  EXPECT_NE(a.domain_tag, b.domain_tag);
  EXPECT_NE(a.background, b.background);
  EXPECT_GT(b.noise_sigma, a.noise_sigma);
  EXPECT_GT(b.max_shift, a.max_shift);
  EXPECT_THROW(preset_by_name("hard", 1), std::invalid_argument);
  auto zero = a;
  zero.n_identities = 0;
  EXPECT_THROW(generate_synthetic(zero), std::invalid_argument);
}

TEST(Synthetic, QueryGallerySplitIsDisjointAndCovering) {
  const auto [q, g] = split_query_gallery(generate_synthetic(easy_preset()), 2);
  EXPECT_EQ(q.images.size(), 32u);
  EXPECT_EQ(g.images.size(), 224u);
  std::set<std::string> gid;
  std::set<int> glabels;
  for (const auto& im : g.images) gid.insert(im.image_id), glabels.insert(im.identity_label);
  for (const auto& im : q.images) {
    EXPECT_FALSE(gid.count(im.image_id));
    EXPECT_TRUE(glabels.count(im.identity_label));
  }
}

TEST(MarketNames, ParsesStandardConvention) {
  const auto n = parse_market_name("0001_c1s1_000151_00.jpg");
  ASSERT_TRUE(n);
  EXPECT_EQ(n->identity, 1);
  EXPECT_EQ(n->camera, 1);
  EXPECT_EQ(n->sequence, 1);
  EXPECT_EQ(n->frame, 151);
  EXPECT_EQ(parse_market_name("-1_c3s2_000100_01.png")->identity, -1);
  EXPECT_FALSE(parse_market_name("person.png"));
  EXPECT_FALSE(parse_market_name("0001_c1_000151_00.jpg"));
  EXPECT_EQ(parse_market_name(market_name(42, 3, 7) + ".png")->camera, 3);
}

TEST(ImageIo, PngRoundTripIsExact) {
  const auto dir = fresh_dir("png");
  const auto ds = generate_synthetic(shifted_preset(2));
  const auto& im = ds.images[5];
  write_png((dir / "x.png").string(), im);
  const auto back = read_png((dir / "x.png").string());
  EXPECT_EQ(back.height, im.height);
  EXPECT_EQ(back.width, im.width);
  EXPECT_EQ(back.data, im.data);
  EXPECT_THROW(read_png((dir / "missing.png").string()), std::runtime_error);
}

TEST(ImageIo, DirectoryRoundTripKeepsLabels) {
  const auto dir = fresh_dir("dir");
  auto spec = easy_preset();
  spec.n_identities = 3;
  spec.images_per_identity = 2;
  const auto ds = generate_synthetic(spec);
  save_directory(ds, dir.string());
  std::ofstream(dir / "notes.txt") << "x";
  const auto res = load_directory(dir.string());
  ASSERT_EQ(res.dataset.images.size(), 6u);
  EXPECT_EQ(res.skipped, 1u);
  EXPECT_EQ(res.warnings.size(), 1u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(res.dataset.images[i].identity_label, ds.images[i].identity_label);
    EXPECT_EQ(res.dataset.images[i].data, ds.images[i].data);
  }
}

TEST(ImageIo, EmptyDirectoryWarns) {
  const auto res = load_directory(fresh_dir("empty").string());
  EXPECT_TRUE(res.dataset.images.empty());
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_NE(res.warnings[0].find("no images"), std::string::npos);
}

TEST(ImageIo, DuplicateNamesListed) {
  const auto dir = fresh_dir("dups");
  Image im(4, 4);
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  write_png((dir / "a" / "0001_c1s1_000001_00.png").string(), im);
  write_png((dir / "b" / "0001_c1s1_000001_00.png").string(), im);
  try {
    load_directory(dir.string());
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("0001_c1s1_000001_00.png"), std::string::npos);
  }
}

TEST(Metrics, SinglePositiveAtTop) {
  const std::vector<double> s{0.9, 0.1, 0.2};
  const auto r = compute_metrics(s, entries({1}), entries({1, 2, 3}));
  EXPECT_EQ(r.rank1, 1.0);
  EXPECT_EQ(r.mAP, 1.0);
}

TEST(Metrics, PositivesAtRanksOneAndThree) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5};
  const auto r = compute_metrics(s, entries({1}), entries({1, 2, 1, 3, 4}));
  EXPECT_NEAR(r.mAP, (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.mAP, 0.8333, 1e-4);
}

TEST(Metrics, MatchesCountingOracleOnSmallGalleries) {
  nc::Rng rng(6);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::vector<int> ids(n);
      std::vector<double> s(n);
      for (std::size_t i = 0; i < n; ++i) {
        ids[i] = (mask >> i) & 1 ? 1 : 2;
        s[i] = std::round(rng.uniform(0, 4));  // exercise ties
      }
      const auto r = compute_metrics(s, entries({1}), entries(ids));
      EXPECT_NEAR(r.mAP, ap_by_counting(s, ids, 1), 1e-12);
      std::size_t top = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (s[i] > s[top]) top = i;
      EXPECT_EQ(r.rank1, ids[top] == 1 ? 1.0 : 0.0);
    }
  }
}

TEST(Metrics, GalleryOrderInvariantAndConsistent) {
  nc::Rng rng(7);
  const std::size_t nq = 5, ng = 12;
  std::vector<int> qid{1, 2, 3, 4, 1}, gid;
  for (std::size_t i = 0; i < ng; ++i) gid.push_back(1 + static_cast<int>(i % 4));
  std::vector<double> s(nq * ng);
  for (auto& v : s) v = std::round(rng.uniform(0, 5));
  const auto gal = entries(gid);
  const auto r = compute_metrics(s, entries(qid), gal);
  EXPECT_EQ(r.rank1, r.cmc[0]);
  EXPECT_NEAR(r.mAP, std::accumulate(r.average_precision.begin(), r.average_precision.end(), 0.0) / nq, 1e-15);
  for (std::size_t k = 1; k < r.cmc.size(); ++k) EXPECT_GE(r.cmc[k], r.cmc[k - 1]);
  for (int t = 0; t < 5; ++t) {
    std::vector<std::size_t> perm(ng);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<RetrievalEntry> pg;
    std::vector<double> ps(nq * ng);
    for (std::size_t j = 0; j < ng; ++j) {
      pg.push_back(gal[perm[j]]);
      for (std::size_t i = 0; i < nq; ++i) ps[i * ng + j] = s[i * ng + perm[j]];
    }
    const auto rp = compute_metrics(ps, entries(qid), pg);
    EXPECT_EQ(rp.rank1, r.rank1);
    EXPECT_DOUBLE_EQ(rp.mAP, r.mAP);
  }
}

TEST(Metrics, SameCameraExclusionAndDroppedQueries) {
  std::vector<RetrievalEntry> q{{1, 1, "q0"}, {2, 1, "q1"}};
  std::vector<RetrievalEntry> g{{1, 1, "a"}, {1, 2, "b"}, {2, 1, "c"}, {3, 2, "d"}};
  const std::vector<double> s{9, 1, 5, 2, /**/ 0, 0, 9, 1};
  const auto order = rank_gallery(std::span<const double>(s.data(), 4), q[0], g);
  EXPECT_EQ(order, (std::vector<std::size_t>{2, 3, 1}));
  const auto r = compute_metrics(s, q, g);
  EXPECT_EQ(r.queries, 2u);
  EXPECT_EQ(r.dropped, 1u);
  EXPECT_EQ(r.rank1, 0.0);
  EXPECT_NEAR(r.mAP, 1.0 / 3.0, 1e-15);
}

TEST(Metrics, RandomScoresGiveChanceRankOne) {
  nc::Rng rng(8);
  const int ids = 16;
  std::vector<int> qid, gid;
  for (int i = 0; i < ids; ++i) {
    qid.push_back(i);
    for (int k = 0; k < 4; ++k) gid.push_back(i);
  }
  double r1 = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> s(qid.size() * gid.size());
    for (auto& v : s) v = rng.uniform(0, 1);
    r1 += compute_metrics(s, entries(qid), entries(gid)).rank1;
  }
  EXPECT_NEAR(r1 / trials, 1.0 / ids, 0.01);
}

TEST(FarThreshold, SmallExample) {
  const double t = far_threshold({4, 1, 3, 2}, 0.5);
  const std::vector<double> s{1, 2, 3, 4};
  EXPECT_EQ(acceptance_rate(s, t), 0.5);
  EXPECT_EQ(t, 2.0);
}

TEST(FarThreshold, MatchesSortOracleAndIsMonotone) {
  nc::Rng rng(9);
  std::vector<double> v(20000);
  for (auto& x : v) x = rng.normal();
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double prev = -1e300;
  for (double rate : {0.1, 0.01, 0.005, 0.001, 0.0005}) {
    const double t = far_threshold(v, rate);
    const auto k = static_cast<std::size_t>(std::floor(rate * v.size()));
    EXPECT_EQ(t, sorted[k]);
    EXPECT_EQ(acceptance_rate(v, t), static_cast<double>(k) / v.size());
    EXPECT_GE(t, prev);
    prev = t;
  }
  EXPECT_NEAR(acceptance_rate(v, far_threshold(v, 0.001)), 0.001, 1e-12);
}

TEST(FarThreshold, InsufficientSamplesReportsCount) {
  try {
    far_threshold(std::vector<double>(999, 0.0), 0.001);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("1000"), std::string::npos);
  }
  EXPECT_NO_THROW(far_threshold(std::vector<double>(1000, 0.0), 0.001));
}

TEST(Evaluate, UntrainedModelWithPermutedLabelsIsAtChance) {
  auto spec = easy_preset(3);
  spec.n_identities = 8;
  spec.images_per_identity = 5;
  const auto [q, g] = split_query_gallery(generate_synthetic(spec), 1);
  variants::ModelSpec ms;
  variants::Model<float> model(ms, 1);
  const auto qf = extract_features(model, std::span<const Image>(q.images));
  const auto gf = extract_features(model, std::span<const Image>(g.images));
  const auto s = score_matrix(model, qf, gf, 2);
  EXPECT_EQ(s, score_matrix(model, qf, gf, 1));
  const auto direct = evaluate(model, q, g);
  EXPECT_EQ(direct.rank1, compute_metrics(s, entries_of(q), entries_of(g)).rank1);
  nc::Rng rng(10);
  auto gal = entries_of(g);
  double r1 = 0;
  const int trials = 300;
  for (int t = 0; t < trials; ++t) {
    std::vector<int> labels;
    for (const auto& e : gal) labels.push_back(e.identity);
    rng.shuffle(labels);
    for (std::size_t i = 0; i < gal.size(); ++i) gal[i].identity = labels[i];
    r1 += compute_metrics(s, entries_of(q), gal).rank1;
  }
  EXPECT_NEAR(r1 / trials, 1.0 / 8, 0.03);
}

TEST(Evaluate, NegativeLocalScoresCountAndIdentityFilter) {
  auto spec = easy_preset(3);
  spec.n_identities = 3;
  spec.images_per_identity = 2;
  const auto [q, g] = split_query_gallery(generate_synthetic(spec), 1);
  variants::ModelSpec ms;
  variants::Model<double> model(ms, 1);
  const auto neg = negative_local_scores(model, q, g);
  // 6 negative pairs × N layers × 2 directions × hw.
  EXPECT_EQ(neg.size(), 6u * 2u * 2u * 12u);
  ms.model.variant = matcher::Variant::plain_embed;
  variants::Model<double> plain(ms, 1);
  EXPECT_THROW(negative_local_scores(plain, q, g), std::invalid_argument);
}
