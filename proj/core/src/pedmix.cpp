#include "tmpa/pedmix.hpp"

#include <cmath>

namespace tmpa {

int RegionMap::count(Region r) const {
  int c = 0;
  for (Region x : region_of)
    if (x == r) ++c;
  return c;
}

int PatchMask::popcount() const {
  int c = 0;
  for (uint8_t x : keep) c += x;
  return c;
}

namespace {

struct GridRect {
  int r0, r1, c0, c1;  // half-open patch ranges
  bool contains(int gy, int gx) const { return gy >= r0 && gy < r1 && gx >= c0 && gx < c1; }
};

GridRect centered_rect(int grid_h, int grid_w, Frac2 frac) {
  int rh = static_cast<int>(std::lround(frac.first * grid_h));
  int rw = static_cast<int>(std::lround(frac.second * grid_w));
  rh = std::min(rh, grid_h);
  rw = std::min(rw, grid_w);
  int r0 = (grid_h - rh) / 2;
  int c0 = (grid_w - rw) / 2;
  return {r0, r0 + rh, c0, c0 + rw};
}

}  // namespace

RegionMap partition_regions(int h, int w, int patch_size, Frac2 phi1, Frac2 phi2) {
  TMPA_CHECK(patch_size > 0, "patch size must be positive");
  TMPA_CHECK(h % patch_size == 0 && w % patch_size == 0,
             "image dimensions must be divisible by the patch size");
  TMPA_CHECK(phi1.first >= 0 && phi1.second >= 0 && phi2.first <= 1.0 + 1e-12 &&
                 phi2.second <= 1.0 + 1e-12,
             "rectangle fractions must lie in [0,1]");
  TMPA_CHECK(phi1.first <= phi2.first && phi1.second <= phi2.second,
             "phi1 fractions must not exceed phi2 fractions");
  RegionMap map;
  map.grid_h = h / patch_size;
  map.grid_w = w / patch_size;
  map.patch_size = patch_size;
  map.phi1 = phi1;
  map.phi2 = phi2;
  GridRect rect1 = centered_rect(map.grid_h, map.grid_w, phi1);
  GridRect rect2 = centered_rect(map.grid_h, map.grid_w, phi2);
  map.region_of.resize(static_cast<size_t>(map.grid_h) * map.grid_w);
  for (int gy = 0; gy < map.grid_h; ++gy) {
    for (int gx = 0; gx < map.grid_w; ++gx) {
      Region r = Region::outer;
      if (rect1.contains(gy, gx)) {
        r = Region::center;
      } else if (rect2.contains(gy, gx)) {
        r = Region::sub_center;
      }
      map.region_of[static_cast<size_t>(gy) * map.grid_w + gx] = r;
    }
  }
  return map;
}

PatchMask sample_masks(const RegionMap& map, const MixRatios& ratios, Rng& rng) {
  TMPA_CHECK(ratios.a_c >= 0 && ratios.a_c <= 1 && ratios.a_s >= 0 && ratios.a_s <= 1 &&
                 ratios.a_o >= 0 && ratios.a_o <= 1,
             "mask-out ratios must lie in [0,1]");
  PatchMask mask;
  mask.grid_h = map.grid_h;
  mask.grid_w = map.grid_w;
  mask.keep.assign(static_cast<size_t>(map.num_patches()), 0);
  const Region regions[3] = {Region::center, Region::sub_center, Region::outer};
  const double ratio_of[3] = {ratios.a_c, ratios.a_s, ratios.a_o};
  for (int r = 0; r < 3; ++r) {
    std::vector<int> idx;
    for (int i = 0; i < map.num_patches(); ++i)
      if (map.region_of[static_cast<size_t>(i)] == regions[r]) idx.push_back(i);
    if (idx.empty()) continue;
    rng.shuffle(idx);
    const int kept = static_cast<int>(std::floor(ratio_of[r] * static_cast<double>(idx.size())));
    for (int i = 0; i < kept; ++i) mask.keep[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
  }
  return mask;
}

namespace {

Tensor mix_one(const Tensor& src, const Tensor& other, const PatchMask& mask, int patch_size) {
  const int h = src.dim(1), w = src.dim(2);
  Tensor out(src.shape());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      const int gy = y / patch_size;
      for (int x = 0; x < w; ++x) {
        const int gx = x / patch_size;
        const bool keep = mask.at(gy, gx) != 0;
        out[(static_cast<int64_t>(c) * h + y) * w + x] =
            keep ? src[(static_cast<int64_t>(c) * h + y) * w + x]
                 : other[(static_cast<int64_t>(c) * h + y) * w + x];
      }
    }
  }
  return out;
}

}  // namespace

std::pair<Tensor, Tensor> mix_pair(const ImagePair& pair, const PatchMask& mask_v,
                                   const PatchMask& mask_i) {
  TMPA_CHECK(pair.x_v.ndim() == 3 && pair.x_v.dim(0) == 3, "visible image must be [3,H,W]");
  TMPA_CHECK(pair.x_v.shape() == pair.x_i.shape(), "paired images must share dimensions");
  const int h = pair.x_v.dim(1), w = pair.x_v.dim(2);
  TMPA_CHECK(mask_v.grid_h == mask_i.grid_h && mask_v.grid_w == mask_i.grid_w,
             "mask grids must agree");
  TMPA_CHECK(mask_v.grid_h > 0 && h % mask_v.grid_h == 0 && w % mask_v.grid_w == 0,
             "mask grid does not tile the image");
  const int patch_h = h / mask_v.grid_h;
  const int patch_w = w / mask_v.grid_w;
  TMPA_CHECK(patch_h == patch_w, "patches must be square");
  Tensor mixed_v = mix_one(pair.x_v, pair.x_i, mask_v, patch_h);
  Tensor mixed_i = mix_one(pair.x_i, pair.x_v, mask_i, patch_h);
  return {std::move(mixed_v), std::move(mixed_i)};
}

Tensor concat_mixed(const std::vector<Tensor>& batch_v, const std::vector<Tensor>& batch_i) {
  TMPA_CHECK(!batch_v.empty() && batch_v.size() == batch_i.size(),
             "mixed batches must be non-empty and equally long");
  const Shape& img = batch_v.front().shape();
  const int n = static_cast<int>(batch_v.size());
  Tensor out(Shape{2 * n, img[0], img[1], img[2]});
  const int64_t stride = batch_v.front().size();
  for (int i = 0; i < n; ++i) {
    TMPA_CHECK(batch_v[static_cast<size_t>(i)].shape() == img &&
                   batch_i[static_cast<size_t>(i)].shape() == img,
               "all images in the batch must share a shape");
    for (int64_t e = 0; e < stride; ++e) {
      out[static_cast<int64_t>(i) * stride + e] = batch_v[static_cast<size_t>(i)][e];
      out[static_cast<int64_t>(n + i) * stride + e] = batch_i[static_cast<size_t>(i)][e];
    }
  }
  return out;
}

Tensor channel_augment(const Tensor& x, Rng& rng) {
  TMPA_CHECK(x.ndim() == 3 && x.dim(0) == 3, "channel_augment expects a [3,H,W] image");
  if (!rng.bernoulli(0.5)) return x;
  const int ch = rng.uniform_int(3);
  const int64_t plane = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  for (int c = 0; c < 3; ++c)
    for (int64_t e = 0; e < plane; ++e) out[c * plane + e] = x[ch * plane + e];
  return out;
}

Tensor mask_to_pixels(const PatchMask& mask, int patch_size) {
  Tensor out(Shape{mask.grid_h * patch_size, mask.grid_w * patch_size});
  for (int y = 0; y < out.dim(0); ++y)
    for (int x = 0; x < out.dim(1); ++x)
      out[static_cast<int64_t>(y) * out.dim(1) + x] =
          mask.at(y / patch_size, x / patch_size) ? 1.0 : 0.0;
  return out;
}

}  // namespace tmpa
