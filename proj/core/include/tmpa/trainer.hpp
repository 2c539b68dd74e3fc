#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "tmpa/config.hpp"
#include "tmpa/model.hpp"
#include "tmpa/objective.hpp"
#include "tmpa/pedmix.hpp"
#include "tmpa/synthdata.hpp"

namespace tmpa {

struct TrainConfig {
  int epochs = 60;
  int steps_per_epoch = 8;
  double lr0 = 0.1;
  double momentum = 0.9;
  std::vector<std::pair<int, double>> milestones = {{20, 0.1}, {50, 0.01}};  // epoch -> factor
  LossWeights weights;
  MixRatios ratios;
  int patch_size = 6;
  Frac2 phi1 = {2.0 / 3.0, 1.0 / 3.0};
  Frac2 phi2 = {5.0 / 6.0, 2.0 / 3.0};
  int pk_p = 8;
  int pk_k = 4;
  uint64_t seed = 1;
  bool enable_pedmix = true;
  bool enable_mft = true;
  bool enable_channel_aug = false;

  void validate() const;
};

TrainConfig train_config_from(const KvConfig& kv);
SynthSpec synth_spec_from(const KvConfig& kv);
// Canonical snapshot of a training setup; stored inside checkpoints.
KvConfig to_kv(const TrainConfig& cfg, const SynthSpec& spec);

// lr0 scaled by the factor of the latest milestone <= epoch.
double lr_at(int epoch, const TrainConfig& cfg);

struct StepLosses {
  double l_id = 0.0, l_wrt = 0.0, l_mss = 0.0, l_msi = 0.0, l_mft = 0.0, l_total = 0.0;
};

// The full loss graph for one already-augmented batch. x_v/x_i may be invalid
// handles when the transfer stack is disabled.
struct ForwardLosses {
  Value l_id, l_wrt, l_mss, l_msi, l_mfe, l_mft, l_total;
};
ForwardLosses forward_losses(Tape& t, Model& m, const ModelVars& vars, Value x_hat, Value x_v,
                             Value x_i, const std::vector<int>& labels, const TrainConfig& cfg,
                             bool training);

struct Checkpoint {
  Model model;
  std::map<std::string, Tensor> momentum;  // keyed by parameter name
  int epoch = 0;              // epochs completed
  std::string config_text;    // resolved configuration snapshot
};

// One SGD step over an identity-aligned PK batch: augmentation (channel
// exchange + patch mixing) -> feature extraction -> transfer/fusion when
// enabled -> losses -> backward -> momentum update. `rng` drives the
// augmentation draws. Throws on a non-finite loss with the component values
// in the message.
StepLosses train_step(Model& m, std::map<std::string, Tensor>& momentum, const Batch& batch,
                      const TrainConfig& cfg, double lr, Rng& rng);

// Full loop. Every epoch draws steps from per-(seed,epoch,step) derived
// streams, so interrupting after any epoch and resuming from its checkpoint
// is bitwise identical to the uninterrupted run. When out_dir is non-empty,
// writes loss.csv plus a checkpoint per epoch and final.tmpa.
Checkpoint train(const SynthDataset& ds, const TrainConfig& cfg, const std::string& out_dir,
                 const Checkpoint* resume = nullptr, std::ostream* progress = nullptr);

// Loss CSV column header: epoch,step,l_id,l_wrt,l_mss,l_msi,l_mft,l_total
extern const char* const kLossCsvHeader;

}  // namespace tmpa
