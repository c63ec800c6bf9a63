#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xtra/config.hpp"
#include "xtra/cost.hpp"
#include "xtra/data.hpp"
#include "xtra/generation.hpp"
#include "xtra/masking.hpp"
#include "xtra/probes.hpp"
#include "xtra/trainer.hpp"

namespace {

using json = nlohmann::json;

xtra::Dataset subset(const xtra::Dataset& d, const std::vector<std::size_t>& idx) {
  xtra::Dataset out;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  out.num_classes = d.num_classes;
  for (std::size_t i : idx) {
    out.images.push_back(d.images[i]);
    out.labels.push_back(d.labels[i]);
  }
  return out;
}

void apply_overrides(xtra::ConfigMap& map, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw xtra::ContractError("--set expects key=value, got '" + kv + "'");
    }
    map[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
}

std::string sibling_config(const std::string& checkpoint) {
  return (std::filesystem::path(checkpoint).parent_path() / "config.toml").string();
}

struct MaskArgs {
  std::string grid;
  std::size_t block = 1;
  std::string pattern = "raster";
  std::uint64_t seed = 0;
  std::string format = "ascii";
};

int run_mask(const MaskArgs& a) {
  const std::size_t x = a.grid.find('x');
  if (x == std::string::npos) {
    throw xtra::ContractError("--grid expects RxC, e.g. 4x4");
  }
  const std::size_t rows = std::stoul(a.grid.substr(0, x));
  const std::size_t cols = std::stoul(a.grid.substr(x + 1));
  xtra::BlockLayout base = xtra::BlockLayout::create(rows, cols, 1, 1, a.block);
  xtra::BlockLayout layout = xtra::BlockLayout::create(
      rows, cols, 1, 1, a.block,
      xtra::make_block_order(base.blocks, xtra::parse_block_pattern(a.pattern),
                             a.seed));
  const xtra::AttentionMask mask = xtra::build_block_causal_mask(layout);
  if (a.format == "ascii") {
    std::cout << xtra::mask_to_ascii(mask);
  } else if (a.format == "pbm") {
    std::cout << xtra::mask_to_pbm(mask);
  } else {
    throw xtra::ContractError("--format must be ascii or pbm");
  }
  return 0;
}

struct SynthArgs {
  std::size_t classes = 4;
  std::size_t count = 512;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  std::size_t channels = 3;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const xtra::Dataset d =
      xtra::synth_dataset(a.classes, a.count, a.size, a.seed, a.channels);
  xtra::save_xid(d, a.out);
  std::cout << "wrote " << d.size() << " images (" << d.channels << "x"
            << d.height << "x" << d.width << ", " << d.num_classes
            << " classes) to " << a.out << "\n";
  return 0;
}

struct PretrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::vector<std::string> sets;
};

int run_pretrain(const PretrainArgs& a) {
  xtra::ConfigMap map = xtra::load_flat_toml(a.config);
  apply_overrides(map, a.sets);
  const xtra::ModelConfig mc = xtra::model_config_from(map);
  const xtra::TrainConfig tc = xtra::train_config_from(map);
  const xtra::Dataset data = xtra::load_xid(a.data);

  std::filesystem::create_directories(a.out);
  {
    std::ofstream f(a.out + "/config.toml");
    f << xtra::to_toml(mc, tc);
  }
  const xtra::TrainLog log = xtra::pretrain(mc, tc, data, a.out, a.resume);
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    std::cout << "epoch " << e + log.start_step / log.steps_per_epoch
              << " mean loss " << log.epoch_loss[e] << "\n";
  }
  json j;
  j["epoch_loss"] = log.epoch_loss;
  j["step_loss"] = log.step_loss;
  j["final_checkpoint"] = log.final_checkpoint;
  std::ofstream f(a.out + "/train_log.json");
  f << j.dump(2) << "\n";
  std::cout << "final checkpoint: " << log.final_checkpoint << "\n";
  return 0;
}

struct ProbeArgs {
  std::string mode = "attentive";
  std::string checkpoint;
  std::string data;
  std::string test_data;
  std::string config;
  std::string out;
  double split = 0.8;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

int run_probe(const ProbeArgs& a) {
  const std::string config_path =
      a.config.empty() ? sibling_config(a.checkpoint) : a.config;
  const xtra::ConfigMap map = xtra::load_flat_toml(config_path);
  const xtra::ModelConfig mc = xtra::model_config_from(map);
  const xtra::ModelParameters params = xtra::load_parameters(mc, a.checkpoint);

  xtra::Dataset train = xtra::load_xid(a.data);
  xtra::Dataset test;
  if (!a.test_data.empty()) {
    test = xtra::load_xid(a.test_data);
  } else {
    const auto perm = xtra::epoch_permutation(train.size(), a.seed, 0);
    const auto cut = static_cast<std::size_t>(a.split * static_cast<double>(train.size()));
    std::vector<std::size_t> tr(perm.begin(), perm.begin() + cut);
    std::vector<std::size_t> te(perm.begin() + cut, perm.end());
    test = subset(train, te);
    train = subset(train, tr);
  }

  xtra::ProbeConfig pc;
  pc.mode = xtra::parse_probe_mode(a.mode);
  pc.seed = a.seed;
  if (a.epochs > 0) pc.epochs = a.epochs;
  if (a.batch_size > 0) pc.batch_size = a.batch_size;
  const xtra::ProbeResult res = xtra::run_probe(mc, params, train, test, pc);

  json j;
  j["mode"] = xtra::probe_mode_name(res.mode);
  j["lr_grid"] = res.lr_grid;
  j["best_lr"] = res.best_lr;
  j["accuracy"] = res.accuracy;
  j["accuracies"] = res.accuracies;
  std::ofstream f(a.out);
  if (!f) throw xtra::FormatError("probe: cannot open '" + a.out + "' for writing");
  f << j.dump(2) << "\n";
  std::cout << "mode " << xtra::probe_mode_name(res.mode) << " best_lr "
            << res.best_lr << " accuracy " << res.accuracy << "\n";
  return 0;
}

struct GenerateArgs {
  std::string checkpoint;
  std::string data;
  std::string config;
  std::size_t count = 4;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  const std::string config_path =
      a.config.empty() ? sibling_config(a.checkpoint) : a.config;
  const xtra::ConfigMap map = xtra::load_flat_toml(config_path);
  const xtra::ModelConfig mc = xtra::model_config_from(map);
  const xtra::ModelParameters params = xtra::load_parameters(mc, a.checkpoint);
  const xtra::Dataset data = xtra::load_xid(a.data);
  const xtra::BlockLayout layout = mc.layout();
  const xtra::AttentionMask mask = xtra::build_block_causal_mask(layout);

  const std::size_t n = std::min(a.count, data.size());
  if (n == 0) throw xtra::ContractError("generate: no images to render");
  std::vector<xtra::Tensor> originals, recons;
  for (std::size_t i = 0; i < n; ++i) {
    xtra::Tensor img = xtra::image_to_f32(data, i);
    img = xtra::bilinear_resize(img, layout.image_h, layout.image_w);
    const auto pred = xtra::teacher_forced_predict(mc, params, img, mask);
    recons.push_back(xtra::reconstruct_image(mc, pred, img));
    originals.push_back(std::move(img));
  }
  xtra::render_grid(originals, recons, a.out);
  std::cout << "wrote " << n << " image pairs to " << a.out << "\n";
  return 0;
}

struct CostArgs {
  double params = 1;
  double samples = 1;
  double epochs = 1;
  double views = 1;
  double tokens = 1;
};

int run_cost(const CostArgs& a) {
  const double cost =
      xtra::estimate_cost({a.params, a.samples, a.epochs, a.views, a.tokens});
  std::printf("%.3g\n", cost);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xtra: auto-regressive vision pre-training with block causal masking"};
  app.require_subcommand(1);
  std::function<int()> run;

  MaskArgs mask_args;
  auto* mask = app.add_subcommand("mask", "dump a block causal attention mask");
  mask->add_option("--grid", mask_args.grid, "token grid RxC, e.g. 4x4")->required();
  mask->add_option("--block", mask_args.block, "block side in tokens (k)")->required();
  mask->add_option("--pattern", mask_args.pattern, "raster|random");
  mask->add_option("--seed", mask_args.seed, "seed for the random pattern");
  mask->add_option("--format", mask_args.format, "ascii|pbm");
  mask->callback([&] { run = [&] { return run_mask(mask_args); }; });

  auto* dataset = app.add_subcommand("dataset", "dataset utilities");
  dataset->require_subcommand(1);
  SynthArgs synth_args;
  auto* synth = dataset->add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--classes", synth_args.classes, "number of classes");
  synth->add_option("--count", synth_args.count, "number of images");
  synth->add_option("--size", synth_args.size, "image side in pixels");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--channels", synth_args.channels, "image channels");
  synth->add_option("--out", synth_args.out, "output .xid path")->required();
  synth->callback([&] { run = [&] { return run_synth(synth_args); }; });

  PretrainArgs pre_args;
  auto* pre = app.add_subcommand("pretrain", "run next-block pre-training");
  pre->add_option("--config", pre_args.config, "flat TOML config")->required();
  pre->add_option("--data", pre_args.data, "training .xid dataset")->required();
  pre->add_option("--out", pre_args.out, "output directory")->required();
  pre->add_option("--resume", pre_args.resume, "checkpoint to resume from");
  pre->add_option("--set", pre_args.sets, "override config keys, key=value");
  pre->callback([&] { run = [&] { return run_pretrain(pre_args); }; });

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand("probe", "frozen-trunk probing");
  probe->add_option("--mode", probe_args.mode, "linear|attentive");
  probe->add_option("--checkpoint", probe_args.checkpoint, "trained checkpoint")->required();
  probe->add_option("--data", probe_args.data, "training .xid dataset")->required();
  probe->add_option("--test-data", probe_args.test_data, "held-out .xid dataset");
  probe->add_option("--config", probe_args.config, "model config (default: beside checkpoint)");
  probe->add_option("--out", probe_args.out, "report JSON path")->required();
  probe->add_option("--split", probe_args.split, "train fraction when no --test-data");
  probe->add_option("--epochs", probe_args.epochs, "probe training epochs");
  probe->add_option("--batch-size", probe_args.batch_size, "probe batch size");
  probe->add_option("--seed", probe_args.seed, "probe seed");
  probe->callback([&] { run = [&] { return run_probe(probe_args); }; });

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "teacher-forced block predictions");
  gen->add_option("--checkpoint", gen_args.checkpoint, "trained checkpoint")->required();
  gen->add_option("--data", gen_args.data, ".xid dataset")->required();
  gen->add_option("--config", gen_args.config, "model config (default: beside checkpoint)");
  gen->add_option("--count", gen_args.count, "number of images");
  gen->add_option("--out", gen_args.out, "output .ppm path")->required();
  gen->callback([&] { run = [&] { return run_generate(gen_args); }; });

  CostArgs cost_args;
  auto* cost = app.add_subcommand("cost", "pre-training cost estimate (1e22 units)");
  cost->add_option("--params", cost_args.params, "parameter count")->required();
  cost->add_option("--samples", cost_args.samples, "sample count")->required();
  cost->add_option("--epochs", cost_args.epochs, "epoch count")->required();
  cost->add_option("--views", cost_args.views, "views per sample")->required();
  cost->add_option("--tokens", cost_args.tokens, "tokens per sample")->required();
  cost->callback([&] { run = [&] { return run_cost(cost_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (argc < 2) std::cerr << app.help();
    return 1;
  }

  try {
    return run ? run() : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
