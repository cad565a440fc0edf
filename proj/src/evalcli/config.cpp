#include "transmatcher/evalcli/config.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace transmatcher::evalcli {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + where_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

DataSource read_source(const json& j, const std::string& where, DataSource s) {
  Section r(j, where);
  r.get("name", s.name);
  r.get("preset", s.preset);
  r.get("seed", s.seed);
  r.get("identities", s.identities);
  r.get("images_per_identity", s.images_per_identity);
  r.get("first_label", s.first_label);
  r.get("queries_per_identity", s.queries_per_identity);
  r.get("directory", s.directory);
  r.get("query_dir", s.query_dir);
  r.get("gallery_dir", s.gallery_dir);
  r.finish();
  return s;
}

json write_source(const DataSource& s) {
  return {{"name", s.name},
          {"preset", s.preset},
          {"seed", s.seed},
          {"identities", s.identities},
          {"images_per_identity", s.images_per_identity},
          {"first_label", s.first_label},
          {"queries_per_identity", s.queries_per_identity},
          {"directory", s.directory},
          {"query_dir", s.query_dir},
          {"gallery_dir", s.gallery_dir}};
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.train.lr_backbone = 0.05;
  c.train.lr_new = 0.05;
  c.train_data.name = "easy";
  DataSource heldout;
  heldout.name = "heldout";
  heldout.seed = 1007;
  heldout.first_label = 1001;
  DataSource shifted;
  shifted.name = "shifted";
  shifted.preset = "shifted";
  shifted.seed = 11;
  shifted.first_label = 2001;
  c.test = {heldout, shifted};
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
  if (repeats == 0) throw ConfigError("repeats must be at least 1");
  if (!(far_rate > 0 && far_rate < 1)) throw ConfigError("far_rate must lie in (0, 1)");
  model.backbone.out_dim = model.model.d;
  const std::size_t s = model.backbone.total_stride();
  model.model.h = model.image_height / s;
  model.model.w = model.image_width / s;
  model.validate();
  train.seed = seed;
  train.validate();
  std::set<std::string> names;
  for (const auto& t : test) {
    if (t.name.empty()) throw ConfigError("every test source needs a name");
    if (!names.insert(t.name).second) throw ConfigError("duplicate test source '" + t.name + "'");
    if (t.synthetic() && t.queries_per_identity >= t.images_per_identity) {
      throw ConfigError("test source '" + t.name + "' leaves no gallery images");
    }
    if (!t.synthetic() && (t.query_dir.empty() || t.gallery_dir.empty())) {
      throw ConfigError("test source '" + t.name + "' needs both query_dir and gallery_dir");
    }
  }
}

RunConfig config_from_json(const json& j) {
  RunConfig c = RunConfig::defaults();
  Section top(j, "config");
  top.get("seed", c.seed);
  top.get("precision", c.precision);
  top.get("repeats", c.repeats);
  top.get("far_rate", c.far_rate);

  if (top.has("model")) {
    Section m(top.at("model"), "model");
    auto& mc = c.model.model;
    std::string variant = matcher::variant_name(mc.variant);
    m.get("variant", variant);
    mc.variant = matcher::parse_variant(variant);
    m.get("d", mc.d);
    m.get("D", mc.D);
    m.get("H", mc.H);
    m.get("N", mc.N);
    m.get("fc1", mc.fc1);
    m.get("bn1", mc.bn1);
    m.get("mlphead1", mc.mlphead1);
    m.get("mlphead2", mc.mlphead2);
    m.get("prior_embed", mc.prior_embed);
    m.get("pos_embed", mc.pos_embed);
    m.get("use_raw_first_pair", mc.use_raw_first_pair);
    m.get("fuse_after_bn3", mc.fuse_after_bn3);
    m.get("encoder_final_norm", mc.encoder_final_norm);
    m.get("shared_qk_fc", mc.shared_qk_fc);
    m.get("multiscale_fusion", mc.multiscale_fusion);
    m.finish();
  }
  if (top.has("backbone")) {
    Section b(top.at("backbone"), "backbone");
    b.get("block_channels", c.model.backbone.block_channels);
    b.get("kernel", c.model.backbone.kernel);
    b.finish();
  }
  if (top.has("image")) {
    Section im(top.at("image"), "image");
    im.get("height", c.model.image_height);
    im.get("width", c.model.image_width);
    im.finish();
  }
  if (top.has("train")) {
    Section t(top.at("train"), "train");
    auto& tc = c.train;
    t.get("batch_size", tc.batch_size);
    t.get("instances_per_class", tc.instances_per_class);
    t.get("epochs", tc.epochs);
    t.get("lr_backbone", tc.lr_backbone);
    t.get("lr_new", tc.lr_new);
    t.get("decay_factor", tc.decay_factor);
    t.get("decay_epoch", tc.decay_epoch);
    t.get("clip_norm", tc.clip_norm);
    t.get("momentum", tc.momentum);
    t.get("flip_augment", tc.flip_augment);
    t.finish();
  }
  if (top.has("train_data")) c.train_data = read_source(top.at("train_data"), "train_data", c.train_data);
  if (top.has("test")) {
    const json& arr = top.at("test");
    if (!arr.is_array()) throw ConfigError("test must be an array");
    c.test.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      DataSource s;
      s.seed = 1007 + i;
      s.first_label = 1001 + 1000 * static_cast<int>(i);
      c.test.push_back(read_source(arr[i], "test[" + std::to_string(i) + "]", s));
    }
  }
  top.finish();
  c.finalize();
  return c;
}

json config_to_json(const RunConfig& c) {
  const auto& mc = c.model.model;
  const auto& tc = c.train;
  json tests = json::array();
  for (const auto& t : c.test) tests.push_back(write_source(t));
  return {{"seed", c.seed},
          {"precision", c.precision},
          {"repeats", c.repeats},
          {"far_rate", c.far_rate},
          {"model",
           {{"variant", matcher::variant_name(mc.variant)},
            {"d", mc.d},
            {"D", mc.D},
            {"H", mc.H},
            {"N", mc.N},
            {"fc1", mc.fc1},
            {"bn1", mc.bn1},
            {"mlphead1", mc.mlphead1},
            {"mlphead2", mc.mlphead2},
            {"prior_embed", mc.prior_embed},
            {"pos_embed", mc.pos_embed},
            {"use_raw_first_pair", mc.use_raw_first_pair},
            {"fuse_after_bn3", mc.fuse_after_bn3},
            {"encoder_final_norm", mc.encoder_final_norm},
            {"shared_qk_fc", mc.shared_qk_fc},
            {"multiscale_fusion", mc.multiscale_fusion}}},
          {"backbone",
           {{"block_channels", c.model.backbone.block_channels}, {"kernel", c.model.backbone.kernel}}},
          {"image", {{"height", c.model.image_height}, {"width", c.model.image_width}}},
          {"train",
           {{"batch_size", tc.batch_size},
            {"instances_per_class", tc.instances_per_class},
            {"epochs", tc.epochs},
            {"lr_backbone", tc.lr_backbone},
            {"lr_new", tc.lr_new},
            {"decay_factor", tc.decay_factor},
            {"decay_epoch", tc.decay_epoch},
            {"clip_norm", tc.clip_norm},
            {"momentum", tc.momentum},
            {"flip_augment", tc.flip_augment}}},
          {"train_data", write_source(c.train_data)},
          {"test", tests}};
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string git_blob_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string git_blob_hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return git_blob_hash(ss.str());
}

SyntheticSpec synthetic_spec(const DataSource& src, const RunConfig& c) {
  SyntheticSpec s = preset_by_name(src.preset, src.seed);
  s.n_identities = src.identities;
  s.images_per_identity = src.images_per_identity;
  s.first_label = src.first_label;
  s.height = c.model.image_height;
  s.width = c.model.image_width;
  return s;
}

namespace {

Dataset from_directory(const std::string& dir, std::vector<std::string>* warnings) {
  auto res = load_directory(dir);
  if (warnings) warnings->insert(warnings->end(), res.warnings.begin(), res.warnings.end());
  return std::move(res.dataset);
}

}  // namespace

Dataset build_train_set(const RunConfig& c, std::vector<std::string>* warnings) {
  Dataset ds = c.train_data.directory.empty() ? generate_synthetic(synthetic_spec(c.train_data, c))
                                              : from_directory(c.train_data.directory, warnings);
  ds.split = "train";
  if (!c.train_data.name.empty()) ds.name = c.train_data.name;
  return ds;
}

std::pair<Dataset, Dataset> build_test_split(const DataSource& src, const RunConfig& c,
                                             std::vector<std::string>* warnings) {
  std::pair<Dataset, Dataset> qg;
  if (src.synthetic()) {
    qg = split_query_gallery(generate_synthetic(synthetic_spec(src, c)), src.queries_per_identity);
  } else {
    qg.first = from_directory(src.query_dir, warnings);
    qg.second = from_directory(src.gallery_dir, warnings);
    qg.first.split = "query";
    qg.second.split = "gallery";
  }
  qg.first.name = qg.second.name = src.name;
  return qg;
}

}  // namespace transmatcher::evalcli
