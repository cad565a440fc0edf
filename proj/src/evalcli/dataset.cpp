#include "transmatcher/evalcli/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <regex>
#include <stdexcept>

#include "transmatcher/numcore/random.hpp"

namespace transmatcher::evalcli {

namespace fs = std::filesystem;

void SyntheticSpec::validate() const {
  if (n_identities == 0) throw std::invalid_argument("synthetic spec needs at least one identity");
  if (images_per_identity == 0) throw std::invalid_argument("synthetic spec needs images per identity");
  if (height < 16 || width < 8) throw std::invalid_argument("synthetic images must be at least 16x8");
  if (max_shift < 0 || brightness < 0 || brightness >= 1 || noise_sigma < 0 || occlusion_prob < 0 ||
      occlusion_prob > 1) {
    throw std::invalid_argument("synthetic nuisance ranges are invalid");
  }
  if (first_label < 0) throw std::invalid_argument("identity labels must be non-negative");
}

SyntheticSpec easy_preset(std::uint64_t seed) {
  SyntheticSpec s;
  s.seed = seed;
  return s;
}

SyntheticSpec shifted_preset(std::uint64_t seed) {
  SyntheticSpec s;
  s.seed = seed;
  s.domain_tag = "B";
  s.background = {0.3, 0.38, 0.28};
  s.channel_gain = {1.1, 0.95, 0.8};
  s.max_shift = 3;
  s.brightness = 0.25;
  s.noise_sigma = 0.05;
  s.occlusion_prob = 0.2;
  return s;
}

SyntheticSpec preset_by_name(const std::string& name, std::uint64_t seed) {
  if (name == "easy") return easy_preset(seed);
  if (name == "shifted") return shifted_preset(seed);
  throw std::invalid_argument("unknown synthetic preset '" + name + "'");
}

namespace {

using Color = std::array<double, 3>;

struct Latent {
  Color head, torso, legs, accessory;
  double body_frac, head_frac, torso_frac;
  bool accessory_left;
  double accessory_pos;
};

Latent draw_latent(nc::Rng& rng) {
  auto color = [&] {
    return Color{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
  };
  Latent l;
  l.head = color();
  l.torso = color();
  l.legs = color();
  l.accessory = color();
  l.body_frac = rng.uniform(0.4, 0.65);
  l.head_frac = rng.uniform(0.12, 0.2);
  l.torso_frac = rng.uniform(0.25, 0.38);
  l.accessory_left = rng.bernoulli(0.5);
  l.accessory_pos = rng.uniform(0.0, 1.0);
  return l;
}

float quantize(double v) {
  const long k = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(k) / 255.0f;
}

long iround(double v) { return std::lround(v); }

Image render(const SyntheticSpec& spec, const Latent& L, nc::Rng& rng) {
  const long H = static_cast<long>(spec.height), W = static_cast<long>(spec.width);
  const long dx = spec.max_shift ? static_cast<long>(rng.below(2 * spec.max_shift + 1)) - spec.max_shift : 0;
  const long dy = spec.max_shift ? static_cast<long>(rng.below(2 * spec.max_shift + 1)) - spec.max_shift : 0;
  const double bright = spec.brightness > 0 ? rng.uniform(1 - spec.brightness, 1 + spec.brightness) : 1.0;

  std::vector<double> px(3 * H * W);
  for (int c = 0; c < 3; ++c)
    for (long i = 0; i < H * W; ++i) px[c * H * W + i] = spec.background[c];
  auto rect = [&](long y0, long y1, long x0, long x1, const Color& col, double gain) {
    for (long y = std::max(0L, y0); y < std::min(H, y1); ++y)
      for (long x = std::max(0L, x0); x < std::min(W, x1); ++x)
        for (int c = 0; c < 3; ++c) px[(c * H + y) * W + x] = col[c] * gain;
  };

  const long margin = iround(0.04 * H);
  const long body_w = std::max(3L, iround(L.body_frac * W));
  const long head_w = std::max(2L, body_w - iround(0.15 * W));
  const long head_h = iround(L.head_frac * H), torso_h = iround(L.torso_frac * H);
  const long cx = W / 2 + dx;
  const long top = margin + dy;
  const long bottom = H - margin + dy;
  rect(top, top + head_h, cx - head_w / 2, cx - head_w / 2 + head_w, L.head, bright);
  rect(top + head_h, top + head_h + torso_h, cx - body_w / 2, cx - body_w / 2 + body_w, L.torso, bright);
  const long legs_w = std::max(2L, body_w - 2);
  rect(top + head_h + torso_h, bottom, cx - legs_w / 2, cx - legs_w / 2 + legs_w, L.legs, bright);
  const long acc = std::max(2L, iround(0.2 * W));
  const long acc_y = top + head_h + iround(L.accessory_pos * std::max(1L, torso_h - acc));
  const long acc_x = L.accessory_left ? cx - body_w / 2 - acc / 2 : cx - body_w / 2 + body_w - acc / 2;
  rect(acc_y, acc_y + acc, acc_x, acc_x + acc, L.accessory, bright);

  if (spec.occlusion_prob > 0 && rng.bernoulli(spec.occlusion_prob)) {
    const long oh = iround(rng.uniform(0.12, 0.22) * H);
    const long oy = static_cast<long>(rng.below(static_cast<std::size_t>(H - oh)));
    const double g = rng.uniform(0.1, 0.9);
    rect(oy, oy + oh, 0, W, Color{g, g, g}, 1.0);
  }

  Image im(spec.height, spec.width);
  for (int c = 0; c < 3; ++c) {
    for (long i = 0; i < H * W; ++i) {
      double v = px[c * H * W + i];
      if (spec.noise_sigma > 0) v += spec.noise_sigma * rng.normal();
      im.data[c * H * W + i] = quantize(v * spec.channel_gain[c]);
    }
  }
  im.domain_tag = spec.domain_tag;
  im.camera_id = 0;
  return im;
}

}  // namespace

std::string market_name(int identity, int camera, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d_c%ds1_%06d_00", identity, camera, frame);
  return buf;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.name = "synthetic-" + spec.domain_tag;
  ds.split = "all";
  ds.domain_tag = spec.domain_tag;
  for (std::size_t id = 0; id < spec.n_identities; ++id) {
    nc::Rng latent_rng = nc::Rng(spec.seed).fork(2 * id + 1);
    const Latent L = draw_latent(latent_rng);
    const int label = spec.first_label + static_cast<int>(id);
    for (std::size_t k = 0; k < spec.images_per_identity; ++k) {
      nc::Rng img_rng = nc::Rng(spec.seed).fork(1'000'003ULL * (id + 1) + 2 * k);
      Image im = render(spec, L, img_rng);
      im.identity_label = label;
      im.image_id = market_name(label, 0, static_cast<int>(k));
      ds.images.push_back(std::move(im));
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_query_gallery(const Dataset& all, std::size_t per_identity) {
  Dataset q{all.name, "query", all.domain_tag, {}};
  Dataset g{all.name, "gallery", all.domain_tag, {}};
  std::map<int, std::size_t> seen;
  for (const auto& im : all.images) {
    auto& n = seen[im.identity_label];
    (n < per_identity ? q : g).images.push_back(im);
    ++n;
  }
  return {std::move(q), std::move(g)};
}

std::optional<MarketName> parse_market_name(const std::string& filename) {
  static const std::regex re(R"(^(-?\d+)_c(\d+)s(\d+)_(\d+)_(\d+)\.[A-Za-z]+$)");
  std::smatch m;
  if (!std::regex_match(filename, m, re)) return std::nullopt;
  try {
    return MarketName{std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), std::stoi(m[4])};
  } catch (const std::out_of_range&) {
    return std::nullopt;
  }
}

LoadResult load_directory(const std::string& path) {
  if (!fs::is_directory(path)) throw std::runtime_error("'" + path + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, std::vector<std::string>> by_name;
  for (const auto& f : files) by_name[f.filename().string()].push_back(f.string());
  std::string dups;
  for (const auto& [name, paths] : by_name) {
    if (paths.size() > 1) dups += (dups.empty() ? "" : ", ") + name;
  }
  if (!dups.empty()) throw std::runtime_error("duplicate file names in '" + path + "': " + dups);

  LoadResult res;
  res.dataset.name = fs::path(path).filename().string();
  res.dataset.split = res.dataset.name;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const auto parsed = parse_market_name(name);
    if (!parsed) {
      res.warnings.push_back("skipping '" + name + "': name does not parse as identity_cameraSequence_frame");
      ++res.skipped;
      continue;
    }
    if (parsed->identity < 0) {
      res.warnings.push_back("skipping '" + name + "': junk identity");
      ++res.skipped;
      continue;
    }
    std::string ext = f.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png") {
      res.warnings.push_back("skipping '" + name + "': only PNG images are supported");
      ++res.skipped;
      continue;
    }
    try {
      Image im = read_png(f.string());
      im.identity_label = parsed->identity;
      im.camera_id = parsed->camera;
      im.image_id = f.stem().string();
      res.dataset.images.push_back(std::move(im));
    } catch (const std::exception& err) {
      res.warnings.push_back("skipping '" + name + "': " + err.what());
      ++res.skipped;
    }
  }
  if (res.dataset.images.empty()) res.warnings.push_back("no images loaded from '" + path + "'");
  return res;
}

void save_directory(const Dataset& dataset, const std::string& path) {
  fs::create_directories(path);
  for (const auto& im : dataset.images) write_png((fs::path(path) / (im.image_id + ".png")).string(), im);
}

void write_png(const std::string& path, const Image& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  const std::size_t H = image.height, W = image.width;
  std::vector<png_byte> buf(3 * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        buf[(y * W + x) * 3 + c] =
            static_cast<png_byte>(std::lround(std::clamp(image.at(c, y, x), 0.0f, 1.0f) * 255.0f));
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write '" + path + "': " + img.message);
  }
}

Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error(std::string("cannot read PNG: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error(std::string("cannot decode PNG: ") + img.message);
  }
  Image im(img.height, img.width);
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        im.at(c, y, x) = static_cast<float>(buf[(y * im.width + x) * 3 + c]) / 255.0f;
  return im;
}

}  // namespace transmatcher::evalcli
