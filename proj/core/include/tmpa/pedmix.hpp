#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tmpa/rng.hpp"
#include "tmpa/tensor.hpp"

namespace tmpa {

// Region-based cross-modality augmentation. Images are split into a patch
// grid; two centered rectangles assign every patch to the center, sub-center
// or outer region; per-region binary masks decide which patches keep the
// source modality and which take the identity-paired opposite modality.

enum class Region : uint8_t { center = 0, sub_center = 1, outer = 2 };

using Frac2 = std::pair<double, double>;  // (height_frac, width_frac)

struct RegionMap {
  int grid_h = 0;
  int grid_w = 0;
  int patch_size = 0;
  std::vector<Region> region_of;  // row-major, grid_h * grid_w
  Frac2 phi1{1.0, 1.0};
  Frac2 phi2{1.0, 1.0};

  Region at(int gy, int gx) const { return region_of[static_cast<size_t>(gy) * grid_w + gx]; }
  int count(Region r) const;
  int num_patches() const { return grid_h * grid_w; }
};

// Mask-out ratios per region: the fraction of patches that keep the source
// modality.
struct MixRatios {
  double a_c = 0.65;
  double a_s = 0.70;
  double a_o = 0.75;
};

struct PatchMask {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<uint8_t> keep;  // 1 = keep source-modality patch

  uint8_t at(int gy, int gx) const { return keep[static_cast<size_t>(gy) * grid_w + gx]; }
  int popcount() const;
};

// Identity-paired visible/infrared images, [3,H,W] each.
struct ImagePair {
  Tensor x_v;
  Tensor x_i;
  int identity = 0;
};

// Assigns every patch of an h x w image to a region. Rectangles are centered
// on the grid; a fraction f spans lround(f * grid_extent) patches, with the
// extra margin row/column (odd margins) going to the bottom/right.
RegionMap partition_regions(int h, int w, int patch_size, Frac2 phi1, Frac2 phi2);

// Per region i, exactly floor(A_i * |r_i|) patches chosen uniformly at random
// keep the source modality. Deterministic given the generator state, and for
// a fixed shuffle the kept set grows monotonically with A_i.
PatchMask sample_masks(const RegionMap& map, const MixRatios& ratios, Rng& rng);

// Applies Eq-style binary patch mixing: output pixels come verbatim from one
// of the two inputs. mask_v drives the mixed visible image, mask_i the mixed
// infrared image.
std::pair<Tensor, Tensor> mix_pair(const ImagePair& pair, const PatchMask& mask_v,
                                   const PatchMask& mask_i);

// Batch concatenation, visible half first; index i and N+i share an identity.
Tensor concat_mixed(const std::vector<Tensor>& batch_v, const std::vector<Tensor>& batch_i);

// Random channel exchange: with probability 0.5 the image is returned
// unchanged, otherwise all three channels are replaced by one of them.
Tensor channel_augment(const Tensor& x, Rng& rng);

// Patch-grid mask expanded to pixel resolution, for PGM dumps.
Tensor mask_to_pixels(const PatchMask& mask, int patch_size);

}  // namespace tmpa
