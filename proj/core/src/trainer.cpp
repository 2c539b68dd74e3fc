#include "tmpa/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tmpa/mfe.hpp"
#include "tmpa/mft.hpp"
#include "tmpa/serialize.hpp"

namespace tmpa {

const char* const kLossCsvHeader = "epoch,step,l_id,l_wrt,l_mss,l_msi,l_mft,l_total";

void TrainConfig::validate() const {
  TMPA_CHECK(epochs >= 0 && steps_per_epoch >= 1, "bad schedule lengths");
  TMPA_CHECK(lr0 > 0.0 && momentum >= 0.0 && momentum < 1.0, "bad optimizer constants");
  int prev = -1;
  for (const auto& [epoch, factor] : milestones) {
    TMPA_CHECK(epoch > prev, "milestones must be sorted ascending");
    TMPA_CHECK(factor > 0.0 && factor <= 1.0, "milestone factors must lie in (0,1]");
    prev = epoch;
  }
  weights.validate();
  TMPA_CHECK(pk_p >= 2 && pk_k >= 1, "bad batch composition");
  TMPA_CHECK(patch_size > 0, "bad patch size");
}

namespace {

std::vector<std::pair<int, double>> parse_milestones(const std::string& text) {
  std::vector<std::pair<int, double>> out;
  if (text.empty() || text == "none") return out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    size_t colon = item.find(':');
    TMPA_CHECK(colon != std::string::npos, "milestone entry needs epoch:factor, got " + item);
    out.emplace_back(std::stoi(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
  }
  return out;
}

}  // namespace

TrainConfig train_config_from(const KvConfig& kv) {
  TrainConfig cfg;
  cfg.epochs = kv.get_int("epochs");
  cfg.steps_per_epoch = kv.get_int("steps_per_epoch");
  cfg.lr0 = kv.get_double("lr0");
  cfg.momentum = kv.get_double("momentum");
  cfg.milestones = parse_milestones(kv.get("lr_milestones"));
  cfg.weights.alpha = kv.get_double("alpha");
  cfg.weights.beta = kv.get_double("beta");
  cfg.weights.lambda1 = kv.get_double("lambda1");
  cfg.weights.lambda2 = kv.get_double("lambda2");
  cfg.weights.lambda3 = kv.get_double("lambda3");
  cfg.weights.rho = kv.get_double("rho");
  cfg.ratios.a_c = kv.get_double("mix.a_c");
  cfg.ratios.a_s = kv.get_double("mix.a_s");
  cfg.ratios.a_o = kv.get_double("mix.a_o");
  cfg.patch_size = kv.get_int("patch_size");
  cfg.phi1 = {kv.get_double("phi1.h"), kv.get_double("phi1.w")};
  cfg.phi2 = {kv.get_double("phi2.h"), kv.get_double("phi2.w")};
  cfg.pk_p = kv.get_int("pk.p");
  cfg.pk_k = kv.get_int("pk.k");
  cfg.seed = kv.get_u64("seed");
  cfg.enable_pedmix = kv.get_bool("enable_pedmix");
  cfg.enable_mft = kv.get_bool("enable_mft");
  cfg.enable_channel_aug = kv.get_bool("enable_channel_aug");
  cfg.validate();
  return cfg;
}

SynthSpec synth_spec_from(const KvConfig& kv) {
  SynthSpec spec;
  spec.num_train_ids = kv.get_int("data.num_ids");
  spec.num_test_ids = kv.get_int("data.test_ids");
  spec.imgs_per_id = kv.get_int("data.imgs_per_id");
  spec.height = kv.get_int("data.height");
  spec.width = kv.get_int("data.width");
  spec.seed = kv.get_u64("seed");
  spec.noise_sigma = kv.get_double("data.noise_sigma");
  return spec;
}

KvConfig to_kv(const TrainConfig& cfg, const SynthSpec& spec) {
  KvConfig kv = KvConfig::defaults();
  kv.set_int("seed", static_cast<int64_t>(cfg.seed));
  kv.set_int("data.num_ids", spec.num_train_ids);
  kv.set_int("data.test_ids", spec.num_test_ids);
  kv.set_int("data.imgs_per_id", spec.imgs_per_id);
  kv.set_int("data.height", spec.height);
  kv.set_int("data.width", spec.width);
  kv.set_double("data.noise_sigma", spec.noise_sigma);
  kv.set_int("epochs", cfg.epochs);
  kv.set_int("steps_per_epoch", cfg.steps_per_epoch);
  kv.set_double("lr0", cfg.lr0);
  kv.set_double("momentum", cfg.momentum);
  std::ostringstream ms;
  for (size_t i = 0; i < cfg.milestones.size(); ++i) {
    if (i) ms << ",";
    ms << cfg.milestones[i].first << ":" << format_double(cfg.milestones[i].second);
  }
  kv.set("lr_milestones", cfg.milestones.empty() ? "none" : ms.str());
  kv.set_double("alpha", cfg.weights.alpha);
  kv.set_double("beta", cfg.weights.beta);
  kv.set_double("lambda1", cfg.weights.lambda1);
  kv.set_double("lambda2", cfg.weights.lambda2);
  kv.set_double("lambda3", cfg.weights.lambda3);
  kv.set_double("rho", cfg.weights.rho);
  kv.set_double("mix.a_c", cfg.ratios.a_c);
  kv.set_double("mix.a_s", cfg.ratios.a_s);
  kv.set_double("mix.a_o", cfg.ratios.a_o);
  kv.set_int("patch_size", cfg.patch_size);
  kv.set_double("phi1.h", cfg.phi1.first);
  kv.set_double("phi1.w", cfg.phi1.second);
  kv.set_double("phi2.h", cfg.phi2.first);
  kv.set_double("phi2.w", cfg.phi2.second);
  kv.set_int("pk.p", cfg.pk_p);
  kv.set_int("pk.k", cfg.pk_k);
  kv.set_bool("enable_pedmix", cfg.enable_pedmix);
  kv.set_bool("enable_mft", cfg.enable_mft);
  kv.set_bool("enable_channel_aug", cfg.enable_channel_aug);
  return kv;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  TMPA_CHECK(epoch >= 0, "epoch must be nonnegative");
  double factor = 1.0;
  for (const auto& [milestone, f] : cfg.milestones)
    if (epoch >= milestone) factor = f;
  return cfg.lr0 * factor;
}

namespace {

Tensor slice_image(const Tensor& batch, int row) {
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const int64_t stride = static_cast<int64_t>(c) * h * w;
  Tensor img(Shape{c, h, w});
  for (int64_t e = 0; e < stride; ++e) img[e] = batch[row * stride + e];
  return img;
}

}  // namespace

ForwardLosses forward_losses(Tape& t, Model& m, const ModelVars& vars, Value x_hat, Value x_v,
                             Value x_i, const std::vector<int>& labels, const TrainConfig& cfg,
                             bool training) {
  std::vector<int> labels2n = labels;
  labels2n.insert(labels2n.end(), labels.begin(), labels.end());

  ForwardLosses fl;
  Value f_c{};
  if (cfg.enable_mft) {
    TMPA_CHECK(x_v.valid() && x_i.valid(), "transfer stack needs the original modality batches");
    FeatureBundle bundle = extract(t, m, vars, x_hat, x_v, x_i, labels, training);
    fl.l_mss = mss_loss(t, bundle, cfg.weights.rho);
    fl.l_msi = msi_loss(t, m, vars, bundle, training);
    fl.l_mfe = mfe_loss(t, fl.l_msi, fl.l_mss, cfg.weights.lambda1);
    Projections proj = project_qkv(t, vars, bundle);
    TransferOut att = transfer(t, proj);
    ConvBranchOut conv = conv_branches(t, m, vars, proj, training);
    auto [gen_v, gen_i] = compose_specific(t, att, conv.f_conv_v, conv.f_conv_i);
    fl.l_mft = mft_loss(t, m, vars, gen_v, gen_i, labels, training);
    f_c = fuse_complete(t, bundle, gen_v, gen_i, conv.f_conv_sh, cfg.weights.lambda2,
                        cfg.weights.lambda3);
  } else {
    Value f_sh = extractor_forward(t, vars.e_sh, m.e_sh, x_hat, training);
    Value v_sh = ops::conv2d(t, f_sh, vars.w_v, 1, 0);
    f_c = branch_forward(t, vars.conv_sh, m.conv_sh, v_sh, training);
  }
  Value pooled = ops::global_avg_pool(t, f_c);
  fl.l_id = id_loss(t, m, vars, pooled, labels2n, training);
  DistanceMatrix dm = build_distances(t, pooled, labels2n);
  fl.l_wrt = wrt_loss(t, dm);
  fl.l_total = total_loss(t, fl.l_id, fl.l_wrt, fl.l_mfe, fl.l_mft, cfg.weights);
  return fl;
}

StepLosses train_step(Model& m, std::map<std::string, Tensor>& momentum, const Batch& batch,
                      const TrainConfig& cfg, double lr, Rng& rng) {
  cfg.validate();
  const int n = batch.x_v.dim(0);
  const int h = batch.x_v.dim(2), w = batch.x_v.dim(3);

  // ---- augmentation (plain tensor work, off the tape) ----
  std::vector<Tensor> imgs_v, imgs_i;
  imgs_v.reserve(static_cast<size_t>(n));
  imgs_i.reserve(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    imgs_v.push_back(slice_image(batch.x_v, j));
    imgs_i.push_back(slice_image(batch.x_i, j));
  }
  if (cfg.enable_channel_aug) {
    for (int j = 0; j < n; ++j) imgs_v[static_cast<size_t>(j)] = channel_augment(imgs_v[static_cast<size_t>(j)], rng);
  }
  Tensor x_hat_t;
  if (cfg.enable_pedmix) {
    RegionMap map = partition_regions(h, w, cfg.patch_size, cfg.phi1, cfg.phi2);
    std::vector<Tensor> mixed_v, mixed_i;
    for (int j = 0; j < n; ++j) {
      PatchMask mask_v = sample_masks(map, cfg.ratios, rng);
      PatchMask mask_i = sample_masks(map, cfg.ratios, rng);
      ImagePair pair{imgs_v[static_cast<size_t>(j)], imgs_i[static_cast<size_t>(j)],
                     batch.labels[static_cast<size_t>(j)]};
      auto [mv, mi] = mix_pair(pair, mask_v, mask_i);
      mixed_v.push_back(std::move(mv));
      mixed_i.push_back(std::move(mi));
    }
    x_hat_t = concat_mixed(mixed_v, mixed_i);
  } else {
    x_hat_t = concat_mixed(imgs_v, imgs_i);
  }
  Tensor x_v_t(batch.x_v.shape()), x_i_t(batch.x_i.shape());
  {
    const int64_t stride = static_cast<int64_t>(3) * h * w;
    for (int j = 0; j < n; ++j)
      for (int64_t e = 0; e < stride; ++e) {
        x_v_t[j * stride + e] = imgs_v[static_cast<size_t>(j)][e];
        x_i_t[j * stride + e] = imgs_i[static_cast<size_t>(j)][e];
      }
  }

  // ---- forward / backward ----
  Tape t;
  ModelVars vars = make_vars(t, m, true, cfg.enable_mft);
  Value x_hat = t.leaf(std::move(x_hat_t));
  Value x_v{}, x_i{};
  if (cfg.enable_mft) {
    x_v = t.leaf(std::move(x_v_t));
    x_i = t.leaf(std::move(x_i_t));
  }
  ForwardLosses fl = forward_losses(t, m, vars, x_hat, x_v, x_i, batch.labels, cfg, true);

  StepLosses out;
  if (cfg.enable_mft) {
    out.l_mss = t.val(fl.l_mss)[0];
    out.l_msi = t.val(fl.l_msi)[0];
    out.l_mft = t.val(fl.l_mft)[0];
  }
  Value l_total = fl.l_total;
  out.l_id = t.val(fl.l_id)[0];
  out.l_wrt = t.val(fl.l_wrt)[0];
  out.l_total = t.val(l_total)[0];
  if (!std::isfinite(out.l_total)) {
    std::ostringstream os;
    os << "non-finite loss: l_id=" << out.l_id << " l_wrt=" << out.l_wrt << " l_mss=" << out.l_mss
       << " l_msi=" << out.l_msi << " l_mft=" << out.l_mft << " l_total=" << out.l_total;
    throw std::runtime_error(os.str());
  }

  t.backward(l_total);

  // ---- SGD with momentum ----
  std::map<std::string, Tensor*> by_name;
  m.for_each_param([&](const std::string& name, Tensor& p) { by_name[name] = &p; });
  for (const auto& [name, leaf] : vars.named) {
    const Tensor& g = t.grad(leaf);
    Tensor& p = *by_name.at(name);
    auto it = momentum.find(name);
    if (it == momentum.end()) it = momentum.emplace(name, Tensor(p.shape())).first;
    Tensor& v = it->second;
    for (int64_t e = 0; e < p.size(); ++e) {
      v[e] = cfg.momentum * v[e] + g[e];
      p[e] -= lr * v[e];
    }
  }
  return out;
}

Checkpoint train(const SynthDataset& ds, const TrainConfig& cfg, const std::string& out_dir,
                 const Checkpoint* resume, std::ostream* progress) {
  cfg.validate();
  TMPA_CHECK(ds.spec.height % cfg.patch_size == 0 && ds.spec.width % cfg.patch_size == 0,
             "image dimensions must be divisible by the patch size");
  TMPA_CHECK(cfg.pk_p <= ds.spec.num_train_ids && cfg.pk_k <= ds.spec.imgs_per_id,
             "batch composition infeasible for this dataset");

  Checkpoint ckpt;
  if (resume) {
    ckpt = *resume;
    TMPA_CHECK(ckpt.model.cfg.num_classes == ds.spec.num_train_ids,
               "resumed checkpoint classifies a different identity count");
  } else {
    ModelConfig mc;
    mc.num_classes = ds.spec.num_train_ids;
    ckpt.model = Model::init(mc, cfg.seed);
    ckpt.epoch = 0;
  }
  ckpt.config_text = to_kv(cfg, ds.spec).resolved_text();

  namespace fs = std::filesystem;
  std::ofstream loss_csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const bool fresh = ckpt.epoch == 0;
    loss_csv.open(fs::path(out_dir) / "loss.csv", fresh ? std::ios::trunc : std::ios::app);
    if (fresh) loss_csv << kLossCsvHeader << "\n";
  }

  for (int epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      Rng rng(derive_seed(cfg.seed, {hash_string("step"), static_cast<uint64_t>(epoch),
                                     static_cast<uint64_t>(step)}));
      Batch batch = pk_sample(ds, cfg.pk_p, cfg.pk_k, rng);
      StepLosses losses;
      try {
        losses = train_step(ckpt.model, ckpt.momentum, batch, cfg, lr, rng);
      } catch (const std::runtime_error& e) {
        std::ostringstream os;
        os << "training aborted at epoch " << epoch << " step " << step << ": " << e.what();
        throw std::runtime_error(os.str());
      }
      if (loss_csv.is_open()) {
        loss_csv << epoch << "," << step << "," << format_double(losses.l_id) << ","
                 << format_double(losses.l_wrt) << "," << format_double(losses.l_mss) << ","
                 << format_double(losses.l_msi) << "," << format_double(losses.l_mft) << ","
                 << format_double(losses.l_total) << "\n";
      }
      if (progress && step == cfg.steps_per_epoch - 1) {
        (*progress) << "epoch " << epoch << " lr " << lr << " l_total " << losses.l_total
                    << "\n";
      }
    }
    ckpt.epoch = epoch + 1;
    if (!out_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.tmpa", ckpt.epoch);
      save_checkpoint(ckpt, (fs::path(out_dir) / name).string());
    }
  }
  if (!out_dir.empty()) save_checkpoint(ckpt, (fs::path(out_dir) / "final.tmpa").string());
  return ckpt;
}

}  // namespace tmpa
