#include <gnerf/gnerf.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace gnerf;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractError("bad number '" + item + "' in '" + s + "'");
    }
  }
  return out;
}

Vec3 parse_point(const std::string& s) {
  const auto v = parse_list(s);
  if (v.size() != 3) throw ContractError("expected x,y,z but got '" + s + "'");
  return {v[0], v[1], v[2]};
}

eval::Segment parse_segment(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ContractError("segment must look like x0,y0,z0:x1,y1,z1");
  return {parse_point(s.substr(0, colon)), parse_point(s.substr(colon + 1))};
}

// An intrinsics.txt next to the images or in one of the parent directories.
data::Intrinsics find_intrinsics(fs::path dir, const data::Intrinsics& fallback) {
  dir = fs::absolute(dir);
  for (int i = 0; i < 4 && !dir.empty(); ++i, dir = dir.parent_path()) {
    if (fs::exists(dir / "intrinsics.txt")) return data::read_intrinsics(dir / "intrinsics.txt");
    if (dir == dir.parent_path()) break;
  }
  return fallback;
}

field::InstanceCode<float> pick_code(const train::Checkpoint& ck, const std::string& instance, const std::string& code_file) {
  if (!code_file.empty()) return train::load_code(code_file);
  return ck.code(ck.find_instance(instance));
}

void write_image(const fs::path& path, const Image& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_png(path.string(), img);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts radiance fields on procedural toy objects"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a toy-car dataset");
  std::string gen_out;
  data::DatasetSpec spec;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--instances", spec.train_instances, "Training instances")->check(CLI::PositiveNumber);
  gen->add_option("--test-instances", spec.test_instances, "Held-out instances")->check(CLI::NonNegativeNumber);
  gen->add_option("--views", spec.views, "Views per instance")->check(CLI::PositiveNumber);
  gen->add_option("--res", spec.resolution, "Image width and height")->check(CLI::PositiveNumber);
  gen->add_option("--seed", spec.seed, "Random seed");

  // train
  auto* tr = app.add_subcommand("train", "Train a model and the training codes");
  std::string tr_data, tr_out, tr_metrics, tr_baseline;
  field::ModelConfig mc;
  train::TrainConfig tc;
  int tr_ckpt_every = 0;
  bool tr_match = true;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--experts", mc.experts, "Number of experts")->check(CLI::PositiveNumber);
  tr->add_option("--iters", tc.iterations, "Iterations")->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", tc.seed, "Random seed");
  tr->add_option("--baseline", tr_baseline, "Use a gating baseline instead of hindsight selection")
      ->check(CLI::IsMember({"foresight"}));
  tr->add_flag("!--no-match", tr_match, "Do not resize the baseline experts to match the parameter count");
  tr->add_option("--tau-max", tc.temperature.tau_max, "Initial temperature");
  tr->add_option("--tau-min", tc.temperature.tau_min, "Final temperature");
  tr->add_option("--tmax-frac", tc.temperature.anneal_fraction, "Annealing length as a fraction of training");
  tr->add_option("--batch", tc.batch_rays, "Rays per step");
  tr->add_option("--samples", tc.samples, "Samples per ray");
  tr->add_option("--near", tc.near, "Near bound along each ray");
  tr->add_option("--far", tc.far, "Far bound along each ray");
  tr->add_option("--lr", tc.model_lr, "Initial model learning rate");
  tr->add_option("--code-lr", tc.code_lr, "Initial code learning rate");
  tr->add_option("--threads", tc.threads, "Worker threads");
  tr->add_option("--metrics", tr_metrics, "CSV file for training metrics");
  tr->add_option("--checkpoint-every", tr_ckpt_every, "Save every N iterations");

  // render
  auto* rd = app.add_subcommand("render", "Render one view");
  std::string rd_ckpt, rd_instance = "0", rd_code, rd_pose, rd_out;
  rd->add_option("--ckpt", rd_ckpt, "Checkpoint")->required();
  rd->add_option("--instance", rd_instance, "Training instance id or index");
  rd->add_option("--code", rd_code, "Code file from `optimize` (overrides --instance)");
  rd->add_option("--pose", rd_pose, "Camera-to-world pose file")->required();
  rd->add_option("--out", rd_out, "Output PNG")->required();

  // optimize
  auto* op = app.add_subcommand("optimize", "Fit a code to an unseen instance");
  std::string op_ckpt, op_images, op_out;
  train::LatentConfig lc;
  std::vector<std::size_t> op_views;
  op->add_option("--ckpt", op_ckpt, "Checkpoint")->required();
  op->add_option("--images", op_images, "Instance directory with rgb/ and pose/")->required();
  op->add_option("--iters", lc.iterations, "Iterations")->check(CLI::NonNegativeNumber);
  op->add_option("--lr", lc.lr, "Initial learning rate");
  op->add_option("--views", op_views, "View indices to fit (default: all)");
  op->add_option("--seed", lc.seed, "Random seed");
  op->add_option("--out", op_out, "Output code file")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Score held-out instances");
  std::string ev_ckpt, ev_data, ev_report, ev_split = "test";
  std::size_t ev_inputs = 1;
  eval::Protocol protocol;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--input-views", ev_inputs, "Views used for code fitting (0..k-1)")->check(CLI::PositiveNumber);
  ev->add_option("--iters", protocol.latent.iterations, "Code fitting iterations");
  ev->add_option("--lr", protocol.latent.lr, "Code fitting learning rate");
  ev->add_option("--split", ev_split, "test (held-out protocol) or train (trained codes)")
      ->check(CLI::IsMember({"test", "train"}));
  ev->add_option("--report", ev_report, "CSV report")->required();

  // decompose
  auto* dc = app.add_subcommand("decompose", "Per-expert renders");
  std::string dc_ckpt, dc_instance = "0", dc_code, dc_pose, dc_out;
  dc->add_option("--ckpt", dc_ckpt, "Checkpoint")->required();
  dc->add_option("--instance", dc_instance, "Training instance id or index");
  dc->add_option("--code", dc_code, "Code file (overrides --instance)");
  dc->add_option("--pose", dc_pose, "Camera-to-world pose file")->required();
  dc->add_option("--out", dc_out, "Output directory")->required();

  // probe
  auto* pb = app.add_subcommand("probe", "Density continuity along a segment");
  std::string pb_ckpt, pb_instance = "0", pb_segment, pb_steps = "1e-2,5e-3,2.5e-3", pb_report;
  pb->add_option("--ckpt", pb_ckpt, "Checkpoint")->required();
  pb->add_option("--instance", pb_instance, "Training instance id or index");
  pb->add_option("--segment", pb_segment, "x0,y0,z0:x1,y1,z1")->required();
  pb->add_option("--steps", pb_steps, "Comma-separated, decreasing step sizes");
  pb->add_option("--report", pb_report, "JSON report")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto d = data::render_dataset(spec, gen_out);
      std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test instances to " << gen_out << "\n";
    } else if (tr->parsed()) {
      const auto ds = data::load_dataset(tr_data);
      if (!tr_baseline.empty()) {
        if (tr_match) mc = field::matched_baseline(mc);
        else mc.routing = field::Routing::foresight;
      }
      mc.validate();
      tc.validate();
      auto ck = train::Checkpoint::initial(mc, tc, train::instance_ids(ds.train));
      std::ofstream csv;
      train::TrainHooks hooks;
      if (!tr_metrics.empty()) {
        csv.open(tr_metrics);
        if (!csv) throw IoError("cannot write " + tr_metrics);
        hooks.csv = &csv;
      }
      hooks.checkpoint_every = tr_ckpt_every;
      hooks.checkpoint_path = tr_out;
      hooks.on_metrics = [](const train::TrainMetrics& m) {
        std::cout << "iter " << m.iteration << " loss " << m.loss << " tau " << m.tau << " util";
        for (double u : m.utilization) std::cout << " " << u;
        std::cout << "\n";
      };
      std::cout << "parameters " << ck.model.parameter_count() << " (" << field::to_string(mc.routing) << ")\n";
      train::train(ck, ds, tc, hooks);
      ck.save(tr_out);
    } else if (rd->parsed()) {
      const auto ck = train::Checkpoint::load(rd_ckpt);
      const auto code = pick_code(ck, rd_instance, rd_code);
      const auto cam = ck.intrinsics.camera(render::read_pose(rd_pose));
      write_image(rd_out, render::render_image(field::make_evaluator(ck.model, code), cam, ck.train_config.render_config(false)));
    } else if (op->parsed()) {
      const auto ck = train::Checkpoint::load(op_ckpt);
      const auto k = find_intrinsics(op_images, ck.intrinsics);
      const auto iv = data::load_instance(op_images, &k);
      if (op_views.empty())
        for (std::size_t v = 0; v < iv.view_count(); ++v) op_views.push_back(v);
      const auto obs = train::Observation::from_views(iv, k, op_views);
      const auto fit = train::optimize_latents(ck, obs, lc, ck.train_config);
      if (!fit.loss.empty()) std::cout << "loss " << fit.loss.front() << " -> " << fit.loss.back() << "\n";
      train::save_code(op_out, fit.code);
    } else if (ev->parsed()) {
      const auto ck = train::Checkpoint::load(ev_ckpt);
      const auto ds = data::load_dataset(ev_data);
      eval::EvalReport rep;
      if (ev_split == "train") {
        rep = eval::evaluate_training(ck, ds.train, ds.intrinsics);
      } else {
        protocol.input_views.clear();
        for (std::size_t v = 0; v < ev_inputs; ++v) protocol.input_views.push_back(v);
        rep = eval::evaluate_heldout(ck, ds.test, ds.intrinsics, protocol);
      }
      std::ofstream f(ev_report);
      if (!f) throw IoError("cannot write " + ev_report);
      rep.write_csv(f);
      std::cout << "mean PSNR " << rep.mean_psnr << " dB, SSIM " << rep.mean_ssim << "\n";
    } else if (dc->parsed()) {
      const auto ck = train::Checkpoint::load(dc_ckpt);
      const auto code = pick_code(ck, dc_instance, dc_code);
      const auto cam = ck.intrinsics.camera(render::read_pose(dc_pose));
      const auto d = eval::render_decomposition(ck.model, code, cam, ck.train_config.render_config(false));
      const fs::path out = dc_out;
      write_image(out / "full.png", d.full);
      for (std::size_t n = 0; n < d.expert_images.size(); ++n) {
        write_image(out / ("expert_" + std::to_string(n) + ".png"), d.expert_images[n]);
        std::cout << "expert " << n << " foreground " << d.foreground_fraction(static_cast<int>(n)) << "\n";
      }
    } else if (pb->parsed()) {
      const auto ck = train::Checkpoint::load(pb_ckpt);
      const auto code = ck.code(ck.find_instance(pb_instance));
      const auto rep = eval::probe_continuity(field::make_evaluator(ck.model, code), parse_segment(pb_segment), parse_list(pb_steps));
      std::ofstream f(pb_report);
      if (!f) throw IoError("cannot write " + pb_report);
      f << rep.to_json().dump(2) << "\n";
      std::cout << rep.verdict << "\n";
    }
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
