#include "transmatcher/evalcli/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "transmatcher/evalcli/config.hpp"
#include "transmatcher/evalcli/evaluate.hpp"
#include "transmatcher/evalcli/experiments.hpp"
#include "transmatcher/numcore/ops.hpp"
#include "transmatcher/numcore/tape.hpp"

namespace transmatcher::evalcli {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::optional<int> precision;
  std::string out = ".";
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> repeats;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration");
  sub->add_option("--seed", c.seed, "Seed for initialization, sampling and data");
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--variant", c.variant, "transmatcher, transformer_cat, transformer_cross or plain_embed");
  sub->add_option("--precision", c.precision, "Floating-point width")->check(CLI::IsMember({32, 64}));
}

RunConfig resolve(const Common& o, std::optional<RunConfig> base = std::nullopt) {
  RunConfig c = !o.config.empty() ? load_config(o.config) : base ? *base : RunConfig::defaults();
  if (o.seed) c.seed = *o.seed;
  if (!o.variant.empty()) c.model.model.variant = matcher::parse_variant(o.variant);
  if (o.precision) c.precision = *o.precision;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.repeats) c.repeats = *o.repeats;
  c.finalize();
  return c;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& c, json extra) {
  json m = {{"command", command},
            {"config", config_to_json(c)},
            {"config_hash", hex64(config_hash(c))},
            {"seed", c.seed},
            {"precision", c.precision},
            {"variant", matcher::variant_name(c.model.model.variant)},
            {"metric_convention", "single-query; non-interpolated average precision"}};
  m.update(extra);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// Config for a stored checkpoint: explicit --config, else the manifest next to it.
RunConfig checkpoint_config(const Common& o, const std::string& checkpoint) {
  if (!o.config.empty()) return resolve(o);
  const fs::path manifest = fs::path(checkpoint).parent_path() / "manifest.json";
  std::ifstream in(manifest);
  if (!in) {
    throw ConfigError("no --config given and no manifest.json next to '" + checkpoint + "'");
  }
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse '" + manifest.string() + "': " + e.what());
  }
  if (!m.contains("config")) throw ConfigError("'" + manifest.string() + "' has no config");
  return resolve(o, config_from_json(m.at("config")));
}

template <class F>
auto with_precision(int precision, F&& f) {
  return precision == 32 ? f(float{}) : f(double{});
}

// gen-data -------------------------------------------------------------------

struct GenOptions {
  std::string preset = "easy";
  std::size_t identities = 16, images = 16, queries = 0;
  int first_label = 1;
  std::size_t height = 48, width = 16;
};

int cmd_gen_data(const Common& o, const GenOptions& g, std::ostream& out) {
  SyntheticSpec s = preset_by_name(g.preset, o.seed.value_or(g.preset == "shifted" ? 11 : 7));
  s.n_identities = g.identities;
  s.images_per_identity = g.images;
  s.first_label = g.first_label;
  s.height = g.height;
  s.width = g.width;
  if (g.queries >= g.images && g.queries > 0) throw ConfigError("--queries-per-identity leaves no gallery");
  const Dataset ds = generate_synthetic(s);
  const fs::path dir = prepare_out(o.out);
  if (g.queries > 0) {
    const auto [q, gal] = split_query_gallery(ds, g.queries);
    save_directory(q, (dir / "query").string());
    save_directory(gal, (dir / "gallery").string());
  } else {
    save_directory(ds, (dir / "images").string());
  }
  json m = {{"command", "gen-data"},
            {"seed", s.seed},
            {"synthetic",
             {{"preset", g.preset},
              {"identities", s.n_identities},
              {"images_per_identity", s.images_per_identity},
              {"first_label", s.first_label},
              {"height", s.height},
              {"width", s.width},
              {"domain_tag", s.domain_tag},
              {"queries_per_identity", g.queries}}}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  out << "wrote " << ds.images.size() << " images (" << s.n_identities << " identities, domain "
      << s.domain_tag << ") to " << dir.string() << "\n";
  return kExitOk;
}

// train ----------------------------------------------------------------------

template <class T>
int cmd_train(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  std::vector<std::string> warnings;
  const Dataset ds = build_train_set(c, &warnings);
  variants::Model<T> model(c.model, c.seed);
  out << "training " << matcher::variant_name(c.model.model.variant) << " (" << model.params().scalar_count()
      << " parameters) on " << ds.images.size() << " images for " << c.train.epochs << " epochs\n";
  const auto t0 = Clock::now();
  auto history = trainkit::train(model, std::span<const Image>(ds.images), c.train,
                                 [&](const trainkit::EpochRecord& r) {
                                   out << "epoch " << r.epoch << "/" << c.train.epochs << "  loss "
                                       << fixed(r.mean_loss, 6) << "  lr " << r.lr << "\n";
                                   out.flush();
                                 });
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const fs::path ckpt = dir / "checkpoint.bin";
  trainkit::save_checkpoint(ckpt.string(), model.params(), {config_hash(c), c.seed});
  std::string csv = "epoch,mean_loss,lr\n";
  for (const auto& e : history.epochs) csv += std::to_string(e.epoch) + "," + num(e.mean_loss) + "," + num(e.lr) + "\n";
  write_text(dir / "loss_history.csv", csv);
  warnings.insert(warnings.end(), history.warnings.begin(), history.warnings.end());
  write_manifest(dir, "train", c,
                 {{"checkpoint", {{"file", "checkpoint.bin"}, {"git_sha1", git_blob_hash_file(ckpt.string())}}},
                  {"parameters", model.params().scalar_count()},
                  {"train_images", ds.images.size()},
                  {"train_seconds", secs},
                  {"warnings", warnings},
                  {"outputs", {"checkpoint.bin", "loss_history.csv", "manifest.json"}}});
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  out << "trained in " << fixed(secs, 1) << " s; checkpoint " << ckpt.string() << "\n";
  return kExitOk;
}

// eval -----------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint, query_dir, gallery_dir;
};

std::string report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream s;
  s << std::left << std::setw(28) << "dataset_pair" << std::right << std::setw(9) << "Rank-1"
    << std::setw(9) << "Rank-5" << std::setw(9) << "Rank-10" << std::setw(9) << "mAP" << std::setw(9)
    << "queries" << std::setw(9) << "dropped" << std::setw(9) << "seconds" << "\n";
  for (const auto& r : reports) {
    auto cmc = [&](std::size_t k) { return r.cmc.size() > k ? r.cmc[k] : (r.cmc.empty() ? 0.0 : r.cmc.back()); };
    s << std::left << std::setw(28) << r.dataset_pair << std::right << std::setw(9) << fixed(r.rank1)
      << std::setw(9) << fixed(cmc(4)) << std::setw(9) << fixed(cmc(9)) << std::setw(9) << fixed(r.mAP)
      << std::setw(9) << r.queries << std::setw(9) << r.dropped << std::setw(9) << fixed(r.wall_seconds, 2)
      << "\n";
  }
  return s.str();
}

template <class T>
int cmd_eval(RunConfig c, const EvalOptions& e, const fs::path& dir, std::ostream& out, std::ostream& err) {
  variants::Model<T> model(c.model, c.seed);
  const auto header = trainkit::load_checkpoint(e.checkpoint, model.params());
  const std::string ckpt_hash = git_blob_hash_file(e.checkpoint);
  if (header.config_hash != config_hash(c)) {
    err << "warning: checkpoint was written under config " << hex64(header.config_hash)
        << ", evaluating with " << hex64(config_hash(c)) << "\n";
  }
  if (!e.query_dir.empty() || !e.gallery_dir.empty()) {
    DataSource src;
    src.name = "directory";
    src.query_dir = e.query_dir;
    src.gallery_dir = e.gallery_dir;
    c.test = {src};
    c.finalize();
  }
  auto reports = evaluate_all(model, c, eval_threads());
  std::string csv = "metric,dataset_pair,value\n";
  for (auto& r : reports) {
    r.config_hash = hex64(config_hash(c));
    r.checkpoint_hash = ckpt_hash;
    auto cmc = [&](std::size_t k) { return r.cmc.size() > k ? r.cmc[k] : (r.cmc.empty() ? 0.0 : r.cmc.back()); };
    csv += "rank1," + r.dataset_pair + "," + num(r.rank1) + "\n";
    csv += "rank5," + r.dataset_pair + "," + num(cmc(4)) + "\n";
    csv += "rank10," + r.dataset_pair + "," + num(cmc(9)) + "\n";
    csv += "mAP," + r.dataset_pair + "," + num(r.mAP) + "\n";
    csv += "queries," + r.dataset_pair + "," + std::to_string(r.queries) + "\n";
    csv += "dropped," + r.dataset_pair + "," + std::to_string(r.dropped) + "\n";
  }
  write_text(dir / "eval_report.csv", csv);
  json per = json::object();
  double wall = 0;
  for (const auto& r : reports) {
    per[r.dataset_pair] = {{"rank1", r.rank1}, {"mAP", r.mAP}, {"seconds", r.wall_seconds}};
    wall += r.wall_seconds;
  }
  write_manifest(dir, "eval", c,
                 {{"checkpoint", {{"file", fs::absolute(e.checkpoint).string()}, {"git_sha1", ckpt_hash}}},
                  {"checkpoint_config_hash", hex64(header.config_hash)},
                  {"results", per},
                  {"wall_seconds", wall},
                  {"outputs", {"eval_report.csv", "manifest.json"}}});
  out << report_table(reports);
  out << "mAcc " << fixed(macc(reports)) << "\n";
  return kExitOk;
}

// export-matches ---------------------------------------------------------------

struct ExportOptions {
  std::string checkpoint, pairs, test;
  std::optional<double> far, threshold;
};

std::vector<std::pair<std::string, std::string>> read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open pair list '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "query_id,gallery_id") throw ConfigError("pair list must start with 'query_id,gallery_id'");
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw ConfigError("pair list line " + std::to_string(lineno) + " is not 'query_id,gallery_id'");
    }
    out.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return out;
}

template <class T>
int cmd_export(const RunConfig& c, const ExportOptions& e, const fs::path& dir, std::ostream& out) {
  if (c.model.model.variant != matcher::Variant::transmatcher) {
    throw ConfigError("export-matches needs the transmatcher variant");
  }
  variants::Model<T> model(c.model, c.seed);
  trainkit::load_checkpoint(e.checkpoint, model.params());
  const DataSource* src = &c.test.front();
  if (!e.test.empty()) {
    src = nullptr;
    for (const auto& t : c.test)
      if (t.name == e.test) src = &t;
    if (!src) throw ConfigError("no test source named '" + e.test + "'");
  }
  const auto [q, g] = build_test_split(*src, c);
  const double rate = e.far.value_or(c.far_rate);
  const auto negatives = negative_local_scores(model, q, g);
  const double thr = e.threshold ? *e.threshold : far_threshold(negatives, rate);
  const double realized = acceptance_rate(negatives, thr);

  std::map<std::string, const Image*> by_id;
  for (const auto* ds : {&q, &g})
    for (const auto& im : ds->images) by_id[im.image_id] = &im;
  std::vector<std::pair<std::string, std::string>> pairs;
  if (!e.pairs.empty()) {
    pairs = read_pairs(e.pairs);
    for (const auto& [a, b] : pairs) {
      for (const auto& id : {a, b})
        if (!by_id.count(id)) throw ConfigError("image '" + id + "' is not in test source '" + src->name + "'");
    }
  } else {
    for (const auto& qi : q.images)
      for (const auto& gi : g.images)
        if (qi.identity_label == gi.identity_label) pairs.emplace_back(qi.image_id, gi.image_id);
  }

  auto* tm = model.transmatcher();
  std::vector<matcher::PairScore> scored;
  std::size_t matches = 0;
  {
    nc::NoTapeScope<T> no_tape;
    for (const auto& [a, b] : pairs) {
      const Image* ims[2] = {by_id.at(a), by_id.at(b)};
      const auto f = model.features(std::span<const Image* const>(ims, 2));
      matcher::DecoderState<T> st;
      tm->forward(nc::slice(f, 0, 0, 1), nc::slice(f, 0, 1, 2), false, &st);
      scored.push_back(matcher::make_pair_score(st, 0, 0, a, b, thr));
      matches += scored.back().matches.size();
    }
  }
  std::ofstream f(dir / "matches.csv", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write matches.csv");
  matcher::write_matches_csv(f, scored, c.model.model.w);
  f.close();
  write_manifest(dir, "export-matches", c,
                 {{"checkpoint", {{"file", fs::absolute(e.checkpoint).string()},
                                  {"git_sha1", git_blob_hash_file(e.checkpoint)}}},
                  {"test_source", src->name},
                  {"far_rate", rate},
                  {"threshold", thr},
                  {"negative_local_scores", negatives.size()},
                  {"realized_far", realized},
                  {"pairs", pairs.size()},
                  {"matches", matches},
                  {"outputs", {"matches.csv", "manifest.json"}}});
  out << "threshold " << num(thr) << " (rate " << rate << ", realized " << fixed(realized * 1000, 3)
      << " per mille over " << negatives.size() << " negative local scores)\n";
  out << pairs.size() << " pairs, " << matches << " correspondences -> " << (dir / "matches.csv").string() << "\n";
  return kExitOk;
}

// grad-check -------------------------------------------------------------------

int cmd_grad_check(const Common& o, std::ostream& out) {
  const auto variant = o.variant.empty() ? matcher::Variant::transmatcher : matcher::parse_variant(o.variant);
  const auto t0 = Clock::now();
  const auto rep = tiny_grad_check(variant, o.seed.value_or(1));
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  out << "grad-check " << matcher::variant_name(variant) << " (tiny config, float64, central differences)\n"
      << "entries checked   " << rep.checked << "\n"
      << "kink entries      " << rep.kinks << "\n"
      << "max relative err  " << rep.max_rel_err << "\n"
      << "worst             " << rep.worst.param << "[" << rep.worst.index << "] autodiff " << rep.worst.autodiff
      << " numeric " << rep.worst.numeric << "\n"
      << "seconds           " << fixed(secs, 2) << "\n";
  for (const auto& w : rep.warnings) out << "warning: " << w << "\n";
  out << (rep.passed ? "PASS" : "FAIL") << "\n";
  return rep.passed ? kExitOk : kExitRuntime;
}

// bench-variants ---------------------------------------------------------------

std::string result_header(const RunConfig& c, bool csv) {
  std::ostringstream s;
  for (const auto& t : c.test) {
    const std::string p = dataset_pair(c, t);
    if (csv) {
      s << "," << p << " rank1," << p << " mAP";
    } else {
      s << std::setw(12) << (t.name + " R1") << std::setw(12) << (t.name + " mAP");
    }
  }
  return s.str();
}

// Mean over repeats per test source.
std::vector<std::pair<double, double>> per_source(const ExperimentResult& r, std::size_t sources) {
  std::vector<std::pair<double, double>> m(sources);
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    m[i % sources].first += r.reports[i].rank1;
    m[i % sources].second += r.reports[i].mAP;
  }
  const double n = static_cast<double>(r.reports.size() / sources);
  for (auto& v : m) v.first /= n, v.second /= n;
  return m;
}

int cmd_bench(const RunConfig& c, bool presets, const fs::path& dir, std::ostream& out) {
  struct Row {
    matcher::Variant v;
    bool preset;
  };
  std::vector<Row> rows;
  for (auto v : {matcher::Variant::transmatcher, matcher::Variant::transformer_cat,
                 matcher::Variant::transformer_cross, matcher::Variant::plain_embed})
    rows.push_back({v, false});
  if (presets) {
    for (auto v : {matcher::Variant::transformer_cat, matcher::Variant::transformer_cross,
                   matcher::Variant::transmatcher})
      rows.push_back({v, true});
  }
  std::ostringstream table;
  table << std::left << std::setw(24) << "method" << std::right << std::setw(6) << "d" << std::setw(6) << "D"
        << std::setw(4) << "N" << std::setw(9) << "params" << std::setw(10) << "train s" << std::setw(9)
        << "eval s" << result_header(c, false) << std::setw(9) << "mAcc" << "\n";
  std::string csv = "method,preset,d,D,N,params,train_seconds,eval_seconds" + result_header(c, true) + ",mAcc\n";
  json summary = json::array();
  for (const auto& row : rows) {
    RunConfig rc = c;
    rc.model.model.variant = row.v;
    if (row.preset) {
      rc.model.model.d = 128;
      rc.model.model.D = 512;
      rc.model.model.N = 2;
    }
    rc.finalize();
    const std::string label = matcher::variant_name(row.v) + (row.preset ? std::string("@small") : "");
    out << "running " << label << "\n";
    out.flush();
    const auto r = run_experiment(rc, label, &out);
    const auto& m = rc.model.model;
    const auto ps = per_source(r, rc.test.size());
    table << std::left << std::setw(24) << label << std::right << std::setw(6) << m.d << std::setw(6) << m.D
          << std::setw(4) << m.N << std::setw(9) << r.params << std::setw(10) << fixed(r.train_seconds, 1)
          << std::setw(9) << fixed(r.eval_seconds, 1);
    csv += matcher::variant_name(row.v) + "," + (row.preset ? "1" : "0") + "," + std::to_string(m.d) + "," +
           std::to_string(m.D) + "," + std::to_string(m.N) + "," + std::to_string(r.params) + "," +
           num(r.train_seconds) + "," + num(r.eval_seconds);
    for (const auto& [r1, ap] : ps) {
      table << std::setw(12) << fixed(r1) << std::setw(12) << fixed(ap);
      csv += "," + num(r1) + "," + num(ap);
    }
    table << std::setw(9) << fixed(r.macc) << "\n";
    csv += "," + num(r.macc) + "\n";
    summary.push_back({{"method", label}, {"params", r.params}, {"mAcc", r.macc}, {"train_seconds", r.train_seconds}});
  }
  write_text(dir / "bench_variants.csv", csv);
  write_manifest(dir, "bench-variants", c,
                 {{"rows", summary}, {"outputs", {"bench_variants.csv", "manifest.json"}}});
  out << table.str();
  return kExitOk;
}

// ablate -------------------------------------------------------------------------

int cmd_ablate(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  if (c.model.model.variant != matcher::Variant::transmatcher) {
    throw ConfigError("ablate applies to the transmatcher variant only");
  }
  std::ostringstream table;
  table << " FC1 BN1 MLP1 MLP2 Prior  Pos   params     mAcc  census vs. minimal\n";
  std::string csv = "fc1,bn1,mlphead1,mlphead2,prior_embed,pos_embed,params,census,mAcc\n";
  Census base;
  json summary = json::array();
  auto mark = [](bool b) { return b ? "x" : "."; };
  for (std::size_t i = 0; i < ablation_rows().size(); ++i) {
    const auto& f = ablation_rows()[i];
    RunConfig rc = c;
    rc.model.model = apply_flags(rc.model.model, f);
    rc.finalize();
    out << "running row " << i + 1 << "/" << ablation_rows().size() << "\n";
    out.flush();
    const auto r = run_experiment(rc, "row" + std::to_string(i + 1), &out);
    if (i == 0) base = r.census;
    const std::string diff = census_diff(base, r.census);
    char line[160];
    std::snprintf(line, sizeof line, "  %s   %s    %s    %s    %s    %s %8zu  %7.4f  ", mark(f.fc1), mark(f.bn1),
                  mark(f.mlphead1), mark(f.mlphead2), mark(f.prior_embed), mark(f.pos_embed), r.params, r.macc);
    table << line << (diff.empty() ? "-" : diff) << "\n";
    csv += std::to_string(f.fc1) + "," + std::to_string(f.bn1) + "," + std::to_string(f.mlphead1) + "," +
           std::to_string(f.mlphead2) + "," + std::to_string(f.prior_embed) + "," + std::to_string(f.pos_embed) +
           "," + std::to_string(r.params) + "," + diff + "," + num(r.macc) + "\n";
    summary.push_back({{"row", i + 1}, {"params", r.params}, {"census", diff}, {"mAcc", r.macc}});
  }
  write_text(dir / "ablation.csv", csv);
  write_manifest(dir, "ablate", c, {{"rows", summary}, {"outputs", {"ablation.csv", "manifest.json"}}});
  out << table.str();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TransMatcher desk-scale trainer and evaluator", "transmatcher"};
  app.require_subcommand(1);

  Common gen_o, train_o, eval_o, export_o, grad_o, bench_o, ablate_o;
  GenOptions gen;
  auto* s_gen = app.add_subcommand("gen-data", "Render a synthetic identity dataset to PNG files");
  add_common(s_gen, gen_o);
  s_gen->add_option("--preset", gen.preset, "easy or shifted")->check(CLI::IsMember({"easy", "shifted"}));
  s_gen->add_option("--identities", gen.identities);
  s_gen->add_option("--images", gen.images, "Images per identity");
  s_gen->add_option("--first-label", gen.first_label);
  s_gen->add_option("--queries-per-identity", gen.queries, "Write query/ and gallery/ instead of images/");
  s_gen->add_option("--height", gen.height);
  s_gen->add_option("--width", gen.width);

  auto* s_train = app.add_subcommand("train", "Train a model and write checkpoint.bin and loss_history.csv");
  add_common(s_train, train_o);
  s_train->add_option("--epochs", train_o.epochs);

  EvalOptions ev;
  auto* s_eval = app.add_subcommand("eval", "Evaluate a checkpoint and write eval_report.csv");
  add_common(s_eval, eval_o);
  s_eval->add_option("--checkpoint", ev.checkpoint)->required();
  s_eval->add_option("--query-dir", ev.query_dir);
  s_eval->add_option("--gallery-dir", ev.gallery_dir);

  bool no_presets = false;
  auto* s_bench = app.add_subcommand("bench-variants", "Train and compare all scorer variants");
  add_common(s_bench, bench_o);
  s_bench->add_option("--epochs", bench_o.epochs);
  s_bench->add_option("--repeats", bench_o.repeats);
  s_bench->add_flag("--no-presets", no_presets, "Skip the d=128/D=512/N=2 rows");

  ExportOptions ex;
  auto* s_export = app.add_subcommand("export-matches", "Write per-pair local correspondences to matches.csv");
  add_common(s_export, export_o);
  s_export->add_option("--checkpoint", ex.checkpoint)->required();
  s_export->add_option("--pairs", ex.pairs, "CSV with header query_id,gallery_id");
  s_export->add_option("--test", ex.test, "Test source name");
  s_export->add_option("--far", ex.far, "False acceptance rate for the threshold");
  s_export->add_option("--threshold", ex.threshold, "Fixed local-score threshold");

  auto* s_grad = app.add_subcommand("grad-check", "Finite-difference check of the tiny configuration");
  add_common(s_grad, grad_o);

  auto* s_ablate = app.add_subcommand("ablate", "Run the eight component-ablation rows");
  add_common(s_ablate, ablate_o);
  s_ablate->add_option("--epochs", ablate_o.epochs);
  s_ablate->add_option("--repeats", ablate_o.repeats);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (s_gen->parsed()) return cmd_gen_data(gen_o, gen, out);
    if (s_train->parsed()) {
      const RunConfig c = resolve(train_o);
      const fs::path dir = prepare_out(train_o.out);
      return with_precision(c.precision, [&](auto t) { return cmd_train<decltype(t)>(c, dir, out); });
    }
    if (s_eval->parsed()) {
      const RunConfig c = checkpoint_config(eval_o, ev.checkpoint);
      const fs::path dir = prepare_out(eval_o.out);
      return with_precision(c.precision, [&](auto t) { return cmd_eval<decltype(t)>(c, ev, dir, out, err); });
    }
    if (s_export->parsed()) {
      const RunConfig c = checkpoint_config(export_o, ex.checkpoint);
      const fs::path dir = prepare_out(export_o.out);
      return with_precision(c.precision, [&](auto t) { return cmd_export<decltype(t)>(c, ex, dir, out); });
    }
    if (s_grad->parsed()) return cmd_grad_check(grad_o, out);
    if (s_bench->parsed()) {
      const RunConfig c = resolve(bench_o);
      return cmd_bench(c, !no_presets, prepare_out(bench_o.out), out);
    }
    if (s_ablate->parsed()) {
      const RunConfig c = resolve(ablate_o);
      return cmd_ablate(c, prepare_out(ablate_o.out), out);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace transmatcher::evalcli
