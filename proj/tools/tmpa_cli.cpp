// tmpa: dataset generation, augmentation preview, training, retrieval
// evaluation, gradient checking and one-dimensional config sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tmpa/evalkit.hpp"
#include "tmpa/gradsuite.hpp"
#include "tmpa/image_io.hpp"
#include "tmpa/serialize.hpp"
#include "tmpa/trainer.hpp"

namespace fs = std::filesystem;
using namespace tmpa;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
  std::string out = "out";
  std::string checkpoint;
  std::string mode;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "configuration file (key = value lines)");
  cmd->add_option("--set", o.sets, "override a config key, e.g. --set mix.a_c=0.6")
      ->take_all();
  cmd->add_option("--seed", o.seed, "override the seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  cmd->add_option("--mode", o.mode, "search direction: v2i or i2v");
}

std::string normalize_mode(const std::string& mode) {
  if (mode == "v2i" || mode == "visible-to-infrared") return "v2i";
  if (mode == "i2v" || mode == "infrared-to-visible") return "i2v";
  TMPA_CHECK(false, "unknown mode: " + mode + " (expected v2i or i2v)");
  return "";
}

KvConfig resolve_config(const CommonOpts& o) {
  KvConfig kv = KvConfig::defaults();
  if (!o.config_path.empty()) kv.merge_file(o.config_path);
  for (const auto& s : o.sets) kv.set_kv(s);
  if (!o.seed.empty()) kv.set("seed", o.seed);
  if (!o.mode.empty()) kv.set("eval.mode", normalize_mode(o.mode));
  return kv;
}

void print_config(const KvConfig& kv) {
  std::cout << "# resolved configuration\n" << kv.resolved_text() << "# end configuration\n";
}

int thread_budget() {
  const char* env = std::getenv("TMPA_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n > 0 ? n : 1;
}

SynthDataset dataset_from(const KvConfig& kv) {
  const std::string dir = kv.get("data.dir");
  if (!dir.empty()) return load_dataset(dir);
  return generate(synth_spec_from(kv));
}

Metrics evaluate_checkpoint(Checkpoint& ckpt, const SynthDataset& ds, const std::string& mode) {
  KvConfig snap = KvConfig::defaults();
  snap.merge_text(ckpt.config_text);
  const bool use_mft = snap.get_bool("enable_mft");
  const double lambda2 = snap.get_double("lambda2");
  const double lambda3 = snap.get_double("lambda3");
  const Modality query_mod = mode == "v2i" ? Modality::visible : Modality::infrared;
  const Modality gallery_mod = mode == "v2i" ? Modality::infrared : Modality::visible;
  auto queries = ds.select(Split::query, query_mod);
  auto gallery = ds.select(Split::gallery, gallery_mod);
  const int threads = thread_budget();
  EmbeddingSet q = embed(ckpt.model, use_mft, lambda2, lambda3, queries, query_mod, threads);
  EmbeddingSet g = embed(ckpt.model, use_mft, lambda2, lambda3, gallery, gallery_mod, threads);
  return cmc_map(q, g);
}

int cmd_gen_data(const CommonOpts& o) {
  KvConfig kv = resolve_config(o);
  print_config(kv);
  SynthDataset ds = generate(synth_spec_from(kv));
  save_dataset(ds, o.out);
  std::cout << "wrote " << ds.images.size() << " images to " << o.out << "\n";
  return 0;
}

int cmd_augment(const CommonOpts& o, const std::string& vis_path, const std::string& ir_path) {
  KvConfig kv = resolve_config(o);
  print_config(kv);
  TrainConfig cfg = train_config_from(kv);
  Tensor x_v = read_ppm(vis_path);
  Tensor x_i = read_ppm(ir_path);
  TMPA_CHECK(x_v.shape() == x_i.shape(), "paired images must share dimensions");
  Rng rng(derive_seed(cfg.seed, {hash_string("augment")}));
  if (cfg.enable_channel_aug) x_v = channel_augment(x_v, rng);
  RegionMap map =
      partition_regions(x_v.dim(1), x_v.dim(2), cfg.patch_size, cfg.phi1, cfg.phi2);
  PatchMask mask_v = sample_masks(map, cfg.ratios, rng);
  PatchMask mask_i = sample_masks(map, cfg.ratios, rng);
  auto [mixed_v, mixed_i] = mix_pair({x_v, x_i, 0}, mask_v, mask_i);
  fs::create_directories(o.out);
  write_ppm((fs::path(o.out) / "mixed_visible.ppm").string(), mixed_v);
  write_ppm((fs::path(o.out) / "mixed_infrared.ppm").string(), mixed_i);
  write_pgm((fs::path(o.out) / "mask_visible.pgm").string(),
            mask_to_pixels(mask_v, cfg.patch_size));
  write_pgm((fs::path(o.out) / "mask_infrared.pgm").string(),
            mask_to_pixels(mask_i, cfg.patch_size));
  std::cout << "wrote mixed images and masks to " << o.out << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  KvConfig kv = resolve_config(o);
  print_config(kv);
  TrainConfig cfg = train_config_from(kv);
  SynthDataset ds = dataset_from(kv);
  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!o.checkpoint.empty()) {
    resume = load_checkpoint(o.checkpoint);
    resume_ptr = &resume;
    std::cout << "resuming from " << o.checkpoint << " at epoch " << resume.epoch << "\n";
  }
  Checkpoint final = train(ds, cfg, o.out, resume_ptr, &std::cout);
  std::cout << "final checkpoint: " << (fs::path(o.out) / "final.tmpa").string() << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o) {
  TMPA_CHECK(!o.checkpoint.empty(), "eval needs --checkpoint");
  KvConfig kv = resolve_config(o);
  print_config(kv);
  Checkpoint ckpt = load_checkpoint(o.checkpoint);
  SynthDataset ds = dataset_from(kv);
  const std::string mode = normalize_mode(kv.get("eval.mode"));
  Metrics m = evaluate_checkpoint(ckpt, ds, mode);
  std::cout << render_metrics_table(m);
  fs::create_directories(o.out);
  std::ofstream csv(fs::path(o.out) / "metrics.csv");
  csv << metrics_csv(m);
  if (kv.get_bool("eval.export_embeddings")) {
    KvConfig snap = KvConfig::defaults();
    snap.merge_text(ckpt.config_text);
    const bool use_mft = snap.get_bool("enable_mft");
    const double l2w = snap.get_double("lambda2"), l3w = snap.get_double("lambda3");
    const Modality qm = mode == "v2i" ? Modality::visible : Modality::infrared;
    const Modality gm = mode == "v2i" ? Modality::infrared : Modality::visible;
    write_embeddings_csv((fs::path(o.out) / "embeddings_query.csv").string(),
                         embed(ckpt.model, use_mft, l2w, l3w, ds.select(Split::query, qm), qm,
                               thread_budget()));
    write_embeddings_csv((fs::path(o.out) / "embeddings_gallery.csv").string(),
                         embed(ckpt.model, use_mft, l2w, l3w, ds.select(Split::gallery, gm), gm,
                               thread_budget()));
  }
  std::cout << "metrics written to " << (fs::path(o.out) / "metrics.csv").string() << "\n";
  return 0;
}

int cmd_gradcheck(const CommonOpts& o) {
  KvConfig kv = resolve_config(o);
  print_config(kv);
  GradSuiteResult r = run_gradient_suite();
  print_gradient_suite(r, std::cout);
  return r.passed ? 0 : 1;
}

int cmd_sweep(const CommonOpts& o, const std::string& key, const std::string& values_csv) {
  TMPA_CHECK(!key.empty() && !values_csv.empty(), "sweep needs --key and --values");
  KvConfig base = resolve_config(o);
  print_config(base);
  std::vector<std::string> values;
  {
    std::istringstream in(values_csv);
    std::string item;
    while (std::getline(in, item, ',')) values.push_back(item);
  }
  TMPA_CHECK(!values.empty(), "sweep needs at least one value");
  fs::create_directories(o.out);
  std::ofstream csv(fs::path(o.out) / "sweep.csv");
  csv << "key,value,rank1,rank10,rank20,map\n";
  for (size_t i = 0; i < values.size(); ++i) {
    KvConfig kv = base;
    kv.set(key, values[i]);
    TrainConfig cfg = train_config_from(kv);
    SynthDataset ds = dataset_from(kv);
    const std::string run_dir = (fs::path(o.out) / ("sweep_" + std::to_string(i))).string();
    std::cout << "=== " << key << " = " << values[i] << "\n";
    Checkpoint ckpt = train(ds, cfg, run_dir, nullptr, &std::cout);
    Metrics m = evaluate_checkpoint(ckpt, ds, normalize_mode(kv.get("eval.mode")));
    std::cout << render_metrics_table(m);
    csv << key << "," << values[i] << "," << format_double(m.rank(1)) << ","
        << format_double(m.rank(10)) << "," << format_double(m.rank(20)) << ","
        << format_double(m.map) << "\n";
    csv.flush();
  }
  std::cout << "sweep results written to " << (fs::path(o.out) / "sweep.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-modality person re-identification pipeline"};
  app.require_subcommand(1);

  CommonOpts gen_o, aug_o, train_o, eval_o, grad_o, sweep_o;
  std::string aug_vis, aug_ir, sweep_key, sweep_values;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic two-modality dataset");
  add_common(gen, gen_o);
  CLI::App* aug = app.add_subcommand("augment", "mix one visible/infrared pair and dump masks");
  add_common(aug, aug_o);
  aug->add_option("visible", aug_vis, "visible image (binary PPM)")->required();
  aug->add_option("infrared", aug_ir, "infrared image (binary PPM)")->required();
  CLI::App* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_o);
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint (CMC / mAP)");
  add_common(ev, eval_o);
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gc, grad_o);
  CLI::App* sw = app.add_subcommand("sweep", "train+eval across one config key");
  add_common(sw, sweep_o);
  sw->add_option("--key", sweep_key, "config key to vary")->required();
  sw->add_option("--values", sweep_values, "comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad usage
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o);
    if (aug->parsed()) return cmd_augment(aug_o, aug_vis, aug_ir);
    if (tr->parsed()) return cmd_train(train_o);
    if (ev->parsed()) return cmd_eval(eval_o);
    if (gc->parsed()) return cmd_gradcheck(grad_o);
    if (sw->parsed()) return cmd_sweep(sweep_o, sweep_key, sweep_values);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
