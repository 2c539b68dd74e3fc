#include "tmpa/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "tmpa/image_io.hpp"

namespace tmpa {

namespace synthdetail {

namespace {

constexpr double kPi = 3.14159265358979323846;

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

double hash01(uint64_t key) { return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53; }

}  // namespace

FigureParams identity_params(uint64_t dataset_seed, int identity) {
  Rng rng(derive_seed(dataset_seed, {hash_string("idparams"), static_cast<uint64_t>(identity)}));
  FigureParams p;
  p.torso_w = rng.uniform(0.40, 0.62);
  p.torso_h = rng.uniform(0.22, 0.34);
  p.head_r = rng.uniform(0.12, 0.20);
  p.leg_w = rng.uniform(0.09, 0.16);
  p.leg_len = rng.uniform(0.20, 0.32);
  p.leg_gap = rng.uniform(0.03, 0.10);
  p.hue_torso = rng.uniform01();
  p.sat_torso = rng.uniform(0.70, 1.0);
  p.val_torso = rng.uniform(0.40, 0.95);
  p.hue_leg = rng.uniform01();
  p.sat_leg = rng.uniform(0.5, 1.0);
  p.val_leg = rng.uniform(0.25, 0.90);
  p.stripe_freq = 1.0 + rng.uniform_int(5);
  p.stripe_phase = rng.uniform(0.0, 2.0 * kPi);
  p.stripe_amp = rng.uniform(0.05, 0.30);
  p.ir_offset = rng.uniform(-0.15, 0.15);
  return p;
}

Jitter sample_jitter(uint64_t dataset_seed, int identity, int index, Modality m) {
  Rng rng(derive_seed(dataset_seed, {hash_string("jitter"), static_cast<uint64_t>(identity),
                                     static_cast<uint64_t>(index), static_cast<uint64_t>(m)}));
  Jitter j;
  j.dx = rng.uniform(-0.10, 0.10);
  j.dy = rng.uniform(-0.10, 0.10);
  j.scale = rng.uniform(0.90, 1.10);
  return j;
}

Tensor render_canvas(const SynthSpec& spec, int identity, int index, const Jitter& jit) {
  const int h = spec.height, w = spec.width;
  const FigureParams p = identity_params(spec.seed, identity);

  // Background is shared by the visible and infrared captures of one
  // (identity, index): base + gradient + tint + deterministic hash noise.
  Rng bg(derive_seed(spec.seed, {hash_string("bg"), static_cast<uint64_t>(identity),
                                 static_cast<uint64_t>(index)}));
  const double base = bg.uniform(0.25, 0.75);
  const double gx = bg.uniform(-0.20, 0.20);
  const double gy = bg.uniform(-0.20, 0.20);
  const double tint[3] = {bg.uniform(-0.06, 0.06), bg.uniform(-0.06, 0.06),
                          bg.uniform(-0.06, 0.06)};
  const uint64_t bg_key = bg.next_u64();

  const double cx = (0.5 + jit.dx) * w;
  const double cy = (0.5 + jit.dy) * h;
  const double s = jit.scale;

  const double head_x = cx, head_y = cy - 0.30 * h * s, head_r = p.head_r * w * s;
  const double torso_x0 = cx - 0.5 * p.torso_w * w * s, torso_x1 = cx + 0.5 * p.torso_w * w * s;
  const double torso_y0 = cy - 0.22 * h * s;
  const double torso_y1 = torso_y0 + p.torso_h * h * s;
  const double leg_y1 = torso_y1 + p.leg_len * h * s;
  const double leg_off = (0.5 * p.leg_gap + 0.5 * p.leg_w) * w * s;
  const double leg_hw = 0.5 * p.leg_w * w * s;

  double torso_rgb[3], leg_rgb[3];
  hsv_to_rgb(p.hue_torso, p.sat_torso, p.val_torso, torso_rgb[0], torso_rgb[1], torso_rgb[2]);
  hsv_to_rgb(p.hue_leg, p.sat_leg, p.val_leg, leg_rgb[0], leg_rgb[1], leg_rgb[2]);
  const double head_rgb[3] = {0.83, 0.68, 0.55};

  Tensor img(Shape{3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double noise =
          (hash01(bg_key ^ (static_cast<uint64_t>(y) * 131071ull + static_cast<uint64_t>(x))) -
           0.5) *
          0.05;
      double rgb[3];
      for (int c = 0; c < 3; ++c) {
        rgb[c] = base + gx * (px / w - 0.5) + gy * (py / h - 0.5) + tint[c] + noise;
      }
      const bool in_left_leg = py >= torso_y1 && py < leg_y1 && px >= cx - leg_off - leg_hw &&
                               px < cx - leg_off + leg_hw;
      const bool in_right_leg = py >= torso_y1 && py < leg_y1 && px >= cx + leg_off - leg_hw &&
                                px < cx + leg_off + leg_hw;
      if (in_left_leg || in_right_leg) {
        for (int c = 0; c < 3; ++c) rgb[c] = leg_rgb[c];
      }
      if (py >= torso_y0 && py < torso_y1 && px >= torso_x0 && px < torso_x1) {
        const double stripe =
            1.0 + p.stripe_amp * std::sin(2.0 * kPi * p.stripe_freq * (py - torso_y0) /
                                              std::max(1.0, torso_y1 - torso_y0) +
                                          p.stripe_phase);
        for (int c = 0; c < 3; ++c) rgb[c] = torso_rgb[c] * stripe;
      }
      const double ddx = px - head_x, ddy = py - head_y;
      if (ddx * ddx + ddy * ddy <= head_r * head_r) {
        for (int c = 0; c < 3; ++c) rgb[c] = head_rgb[c];
      }
      for (int c = 0; c < 3; ++c)
        img[(static_cast<int64_t>(c) * h + y) * w + x] = std::min(1.0, std::max(0.0, rgb[c]));
    }
  }
  return img;
}

Tensor to_infrared(const Tensor& rgb, double offset) {
  const int h = rgb.dim(1), w = rgb.dim(2);
  Tensor out(rgb.shape());
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t e = 0; e < plane; ++e) {
    double lum = 0.3 * rgb[e] + 0.6 * rgb[plane + e] + 0.1 * rgb[2 * plane + e] + offset;
    lum = std::min(1.0, std::max(0.0, lum));
    out[e] = lum;
    out[plane + e] = lum;
    out[2 * plane + e] = lum;
  }
  return out;
}

}  // namespace synthdetail

namespace {

Tensor add_noise_clamped(const Tensor& img, double sigma, Rng& rng) {
  if (sigma == 0.0) return img;
  Tensor out(img.shape());
  for (int64_t e = 0; e < img.size(); ++e)
    out[e] = std::min(1.0, std::max(0.0, img[e] + sigma * rng.normal()));
  return out;
}

}  // namespace

std::vector<int> SynthDataset::train_identities() const {
  std::vector<int> ids;
  for (int i = 0; i < spec.num_train_ids; ++i) ids.push_back(i);
  return ids;
}

std::vector<int> SynthDataset::test_identities() const {
  std::vector<int> ids;
  for (int i = 0; i < spec.num_test_ids; ++i) ids.push_back(spec.num_train_ids + i);
  return ids;
}

std::vector<const SynthImage*> SynthDataset::select(Split split, Modality modality) const {
  std::vector<const SynthImage*> out;
  for (const auto& im : images)
    if (im.split == split && im.modality == modality) out.push_back(&im);
  return out;
}

std::vector<const SynthImage*> SynthDataset::select_train(Modality modality) const {
  return select(Split::train, modality);
}

SynthDataset generate(const SynthSpec& spec) {
  TMPA_CHECK(spec.num_train_ids >= 2 && spec.num_test_ids >= 2, "need at least two identities");
  TMPA_CHECK(spec.imgs_per_id >= 2, "need at least two images per identity per modality");
  TMPA_CHECK(spec.height > 0 && spec.width > 0, "bad image dimensions");
  SynthDataset ds;
  ds.spec = spec;
  const int total_ids = spec.num_train_ids + spec.num_test_ids;
  for (int id = 0; id < total_ids; ++id) {
    const bool is_train = id < spec.num_train_ids;
    const auto params = synthdetail::identity_params(spec.seed, id);
    for (int idx = 0; idx < spec.imgs_per_id; ++idx) {
      Split split = Split::train;
      if (!is_train) split = idx < spec.imgs_per_id / 2 ? Split::query : Split::gallery;
      for (Modality m : {Modality::visible, Modality::infrared}) {
        auto jit = synthdetail::sample_jitter(spec.seed, id, idx, m);
        Tensor canvas = synthdetail::render_canvas(spec, id, idx, jit);
        if (m == Modality::infrared) canvas = synthdetail::to_infrared(canvas, params.ir_offset);
        Rng noise(derive_seed(spec.seed, {hash_string("noise"), static_cast<uint64_t>(id),
                                          static_cast<uint64_t>(idx), static_cast<uint64_t>(m)}));
        SynthImage im;
        im.pixels = add_noise_clamped(canvas, spec.noise_sigma, noise);
        im.identity = id;
        im.modality = m;
        im.split = split;
        im.index = idx;
        ds.images.push_back(std::move(im));
      }
    }
  }
  return ds;
}

Batch pk_sample(const SynthDataset& ds, int p, int k, Rng& rng) {
  TMPA_CHECK(p >= 2, "pk_sample needs p >= 2 (triplet losses need negatives)");
  TMPA_CHECK(k >= 1, "pk_sample needs k >= 1");
  TMPA_CHECK(p <= ds.spec.num_train_ids, "pk_sample: not enough training identities");
  TMPA_CHECK(k <= ds.spec.imgs_per_id, "pk_sample: not enough images per identity");

  std::vector<int> ids = ds.train_identities();
  rng.shuffle(ids);
  ids.resize(static_cast<size_t>(p));

  // Deterministic layout: images are stored as [identity][index][modality].
  auto image_at = [&](int id, int idx, Modality m) -> const SynthImage& {
    const size_t pos = (static_cast<size_t>(id) * ds.spec.imgs_per_id + idx) * 2 +
                       static_cast<size_t>(m);
    const SynthImage& im = ds.images[pos];
    TMPA_CHECK(im.identity == id && im.index == idx && im.modality == m,
               "dataset image layout mismatch");
    return im;
  };

  const int n = p * k;
  const int h = ds.spec.height, w = ds.spec.width;
  Batch batch;
  batch.x_v = Tensor(Shape{n, 3, h, w});
  batch.x_i = Tensor(Shape{n, 3, h, w});
  batch.labels.resize(static_cast<size_t>(n));
  const int64_t stride = static_cast<int64_t>(3) * h * w;
  for (int j = 0; j < p; ++j) {
    std::vector<int> idx_v(static_cast<size_t>(ds.spec.imgs_per_id));
    std::vector<int> idx_i(static_cast<size_t>(ds.spec.imgs_per_id));
    for (int i = 0; i < ds.spec.imgs_per_id; ++i) idx_v[static_cast<size_t>(i)] = idx_i[static_cast<size_t>(i)] = i;
    rng.shuffle(idx_v);
    rng.shuffle(idx_i);
    for (int r = 0; r < k; ++r) {
      const int row = j * k + r;
      const SynthImage& iv = image_at(ids[static_cast<size_t>(j)], idx_v[static_cast<size_t>(r)],
                                      Modality::visible);
      const SynthImage& ii = image_at(ids[static_cast<size_t>(j)], idx_i[static_cast<size_t>(r)],
                                      Modality::infrared);
      for (int64_t e = 0; e < stride; ++e) {
        batch.x_v[row * stride + e] = iv.pixels[e];
        batch.x_i[row * stride + e] = ii.pixels[e];
      }
      batch.labels[static_cast<size_t>(row)] = ids[static_cast<size_t>(j)];  // dense: train ids are 0..P-1
    }
  }
  return batch;
}

namespace {

const char* modality_name(Modality m) { return m == Modality::visible ? "visible" : "infrared"; }
const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    default: return "gallery";
  }
}

Modality modality_from(const std::string& s) {
  TMPA_CHECK(s == "visible" || s == "infrared", "bad modality tag: " + s);
  return s == "visible" ? Modality::visible : Modality::infrared;
}

Split split_from(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  TMPA_CHECK(s == "gallery", "bad split tag: " + s);
  return Split::gallery;
}

}  // namespace

void save_dataset(const SynthDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream labels(fs::path(dir) / "labels.csv");
  TMPA_CHECK(labels.good(), "cannot write labels.csv under " + dir);
  labels << "path,identity,modality,split\n";
  for (const auto& im : ds.images) {
    std::ostringstream name;
    name << "images/" << split_name(im.split) << "_" << im.identity << "_"
         << modality_name(im.modality) << "_" << im.index << ".ppm";
    write_ppm((fs::path(dir) / name.str()).string(), im.pixels);
    labels << name.str() << "," << im.identity << "," << modality_name(im.modality) << ","
           << split_name(im.split) << "\n";
  }
  std::ofstream spec(fs::path(dir) / "spec.txt");
  spec << "num_train_ids = " << ds.spec.num_train_ids << "\n";
  spec << "num_test_ids = " << ds.spec.num_test_ids << "\n";
  spec << "imgs_per_id = " << ds.spec.imgs_per_id << "\n";
  spec << "height = " << ds.spec.height << "\n";
  spec << "width = " << ds.spec.width << "\n";
  spec << "seed = " << ds.spec.seed << "\n";
  spec << "noise_sigma = " << ds.spec.noise_sigma << "\n";
}

SynthDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream spec_in(fs::path(dir) / "spec.txt");
  TMPA_CHECK(spec_in.good(), "cannot read spec.txt under " + dir);
  SynthDataset ds;
  std::string line;
  while (std::getline(spec_in, line)) {
    std::istringstream ls(line);
    std::string key, eq, value;
    if (!(ls >> key >> eq >> value)) continue;
    if (key == "num_train_ids") ds.spec.num_train_ids = std::stoi(value);
    else if (key == "num_test_ids") ds.spec.num_test_ids = std::stoi(value);
    else if (key == "imgs_per_id") ds.spec.imgs_per_id = std::stoi(value);
    else if (key == "height") ds.spec.height = std::stoi(value);
    else if (key == "width") ds.spec.width = std::stoi(value);
    else if (key == "seed") ds.spec.seed = std::stoull(value);
    else if (key == "noise_sigma") ds.spec.noise_sigma = std::stod(value);
  }
  std::ifstream labels(fs::path(dir) / "labels.csv");
  TMPA_CHECK(labels.good(), "cannot read labels.csv under " + dir);
  std::getline(labels, line);  // header
  std::map<std::pair<int, int>, int> counters;  // (identity, modality) -> next index
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string path, identity, modality, split;
    std::getline(ls, path, ',');
    std::getline(ls, identity, ',');
    std::getline(ls, modality, ',');
    std::getline(ls, split, ',');
    SynthImage im;
    im.pixels = read_ppm((fs::path(dir) / path).string());
    im.identity = std::stoi(identity);
    im.modality = modality_from(modality);
    im.split = split_from(split);
    im.index = counters[{im.identity, static_cast<int>(im.modality)}]++;
    ds.images.push_back(std::move(im));
  }
  TMPA_CHECK(!ds.images.empty(), "dataset under " + dir + " is empty");
  return ds;
}

}  // namespace tmpa
