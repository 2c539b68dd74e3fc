#pragma once

#include <string>
#include <vector>

#include "tmpa/rng.hpp"
#include "tmpa/tensor.hpp"

namespace tmpa {

// Procedurally generated two-modality person dataset. Every identity gets a
// deterministic body/color/texture parameter vector; each sample renders the
// figure with per-image jitter on a per-sample background. Infrared samples
// collapse color to luminance, add an identity-specific intensity offset and
// Gaussian noise.

struct SynthSpec {
  int num_train_ids = 32;
  int num_test_ids = 16;
  int imgs_per_id = 8;  // per modality
  int height = 48;
  int width = 24;
  uint64_t seed = 1;
  double noise_sigma = 0.05;
};

enum class Modality : uint8_t { visible = 0, infrared = 1 };
enum class Split : uint8_t { train = 0, query = 1, gallery = 2 };

struct SynthImage {
  Tensor pixels;  // [3,H,W], values in [0,1]
  int identity = 0;
  Modality modality = Modality::visible;
  Split split = Split::train;
  int index = 0;  // capture index within (identity, modality)
};

struct SynthDataset {
  SynthSpec spec;
  std::vector<SynthImage> images;

  std::vector<int> train_identities() const;
  std::vector<int> test_identities() const;
  // Images filtered by split/modality, in generation order.
  std::vector<const SynthImage*> select(Split split, Modality modality) const;
  std::vector<const SynthImage*> select_train(Modality modality) const;
};

// Identity-aligned PK mini-batch: index i of the visible and infrared halves
// shares an identity. N = p * k rows per modality.
struct Batch {
  Tensor x_v;  // [N,3,H,W]
  Tensor x_i;  // [N,3,H,W]
  std::vector<int> labels;  // [N], dense class ids in [0, P_train)
};

SynthDataset generate(const SynthSpec& spec);

// Samples p identities and k images per modality per identity, uniformly
// without replacement. Labels are dense train-class indices.
Batch pk_sample(const SynthDataset& ds, int p, int k, Rng& rng);

// Directory persistence: images as binary PPM, labels.csv with
// (path,identity,modality,split) rows and spec.txt recording the generator.
void save_dataset(const SynthDataset& ds, const std::string& dir);
SynthDataset load_dataset(const std::string& dir);

// Internals exposed for verification.
namespace synthdetail {

struct FigureParams {
  double torso_w, torso_h, head_r, leg_w, leg_len, leg_gap;
  double hue_torso, sat_torso, val_torso;
  double hue_leg, sat_leg, val_leg;
  double stripe_freq, stripe_phase, stripe_amp;
  double ir_offset;
};

struct Jitter {
  double dx = 0.0, dy = 0.0, scale = 1.0;
};

FigureParams identity_params(uint64_t dataset_seed, int identity);
Jitter sample_jitter(uint64_t dataset_seed, int identity, int index, Modality m);
// Figure over background, before any modality transform or noise.
Tensor render_canvas(const SynthSpec& spec, int identity, int index, const Jitter& jit);
Tensor to_infrared(const Tensor& rgb, double offset);

}  // namespace synthdetail

}  // namespace tmpa
