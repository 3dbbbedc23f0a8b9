#pragma once

#include <gnerf/data/dataset.hpp>
#include <gnerf/nn/adamw.hpp>
#include <gnerf/nn/checkpoint.hpp>
#include <gnerf/nn/lr_schedule.hpp>
#include <gnerf/train/loss.hpp>
#include <gnerf/train/schedule.hpp>
#include <gnerf/train/step.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace gnerf::train {

struct TrainConfig {
  int batch_rays = 1024;
  int iterations = 5000;
  int samples = 64;
  double near = 0.5;
  double far = 3.5;
  bool white_background = true;
  double model_lr = 1.3e-3;
  double code_lr = 1.3e-3;
  double lr_decay = 0.1;  // reached at the final iteration
  double code_init_std = 0.01;
  TemperatureSchedule temperature;
  nn::AdamWConfig adam;
  std::uint64_t seed = 0;
  int chunk_rays = 128;
  int threads = 1;
  double crop_fraction = 0.0;  // > 0: sample only the central crop ...
  double crop_share = 0.0;     // ... for this share of the iterations
  int log_every = 100;

  void validate() const {
    require(batch_rays >= 1, "train config: batch size must be >= 1");
    require(iterations >= 0, "train config: iterations must be >= 0");
    require(samples >= 1 && chunk_rays >= 1 && threads >= 1, "train config: samples, chunk and threads must be >= 1");
    require(near >= 0 && near < far, "train config: need 0 <= near < far");
    temperature.validate();
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "batch_rays = " << batch_rays << "\niterations = " << iterations << "\nsamples = " << samples
       << "\nnear = " << near << "\nfar = " << far << "\nwhite_background = " << white_background
       << "\nmodel_lr = " << model_lr << "\ncode_lr = " << code_lr << "\nlr_decay = " << lr_decay
       << "\ncode_init_std = " << code_init_std << "\ntau_max = " << temperature.tau_max
       << "\ntau_min = " << temperature.tau_min << "\ntmax_frac = " << temperature.anneal_fraction
       << "\nbeta1 = " << adam.beta1 << "\nbeta2 = " << adam.beta2 << "\neps = " << adam.eps
       << "\nweight_decay = " << adam.weight_decay << "\nseed = " << seed << "\ncrop_fraction = " << crop_fraction
       << "\ncrop_share = " << crop_share << "\n";
    return os.str();
  }

  static TrainConfig from_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string key, eq, val;
    while (is >> key >> eq >> val) {
      if (key == "batch_rays") c.batch_rays = std::stoi(val);
      else if (key == "iterations") c.iterations = std::stoi(val);
      else if (key == "samples") c.samples = std::stoi(val);
      else if (key == "near") c.near = std::stod(val);
      else if (key == "far") c.far = std::stod(val);
      else if (key == "white_background") c.white_background = val == "1";
      else if (key == "model_lr") c.model_lr = std::stod(val);
      else if (key == "code_lr") c.code_lr = std::stod(val);
      else if (key == "lr_decay") c.lr_decay = std::stod(val);
      else if (key == "code_init_std") c.code_init_std = std::stod(val);
      else if (key == "tau_max") c.temperature.tau_max = std::stod(val);
      else if (key == "tau_min") c.temperature.tau_min = std::stod(val);
      else if (key == "tmax_frac") c.temperature.anneal_fraction = std::stod(val);
      else if (key == "beta1") c.adam.beta1 = std::stod(val);
      else if (key == "beta2") c.adam.beta2 = std::stod(val);
      else if (key == "eps") c.adam.eps = std::stod(val);
      else if (key == "weight_decay") c.adam.weight_decay = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "crop_fraction") c.crop_fraction = std::stod(val);
      else if (key == "crop_share") c.crop_share = std::stod(val);
    }
    return c;
  }

  render::RenderConfig render_config(bool stratified) const {
    return {samples, stratified, white_background, chunk_rays, near, far};
  }
};

/// Trained (or initial) state: model, one code pair per training instance, optimizer
/// state and the configs that produced it.
struct Checkpoint {
  field::MoEParams<float> model;
  Mat<float> shape_codes;    // shape_code x M
  Mat<float> texture_codes;  // texture_code x M
  std::vector<std::string> instance_ids;
  nn::AdamWState<field::MoEParams<float>> model_opt;
  nn::CodeTableOptimizer<float> shape_opt;
  nn::CodeTableOptimizer<float> texture_opt;
  std::int64_t iteration = 0;
  TrainConfig train_config;
  data::Intrinsics intrinsics;  // cameras of the training data

  int instance_count() const { return static_cast<int>(shape_codes.cols()); }

  field::InstanceCode<float> code(int m) const {
    require(m >= 0 && m < instance_count(), "checkpoint: instance index out of range");
    return {shape_codes.col(m), texture_codes.col(m), m};
  }

  int find_instance(const std::string& id) const {
    for (std::size_t i = 0; i < instance_ids.size(); ++i)
      if (instance_ids[i] == id) return static_cast<int>(i);
    try {
      const int m = std::stoi(id);
      if (m >= 0 && m < instance_count()) return m;
    } catch (const std::exception&) {
    }
    throw ContractError("checkpoint: unknown instance '" + id + "'");
  }

  /// Mean of the trained codes: the starting point for an unseen instance.
  field::InstanceCode<float> mean_code() const {
    require(instance_count() > 0, "checkpoint: no trained codes");
    return {shape_codes.rowwise().mean(), texture_codes.rowwise().mean(), -1};
  }

  static Checkpoint initial(const field::ModelConfig& mc, const TrainConfig& tc, const std::vector<std::string>& ids) {
    Checkpoint c;
    c.model = field::MoEParams<float>::init(mc, tc.seed);
    const auto M = static_cast<Eigen::Index>(ids.size());
    c.shape_codes.resize(mc.shape_code, M);
    c.texture_codes.resize(mc.texture_code, M);
    Rng rng(derive_seed(tc.seed, {0x636f646573ull}));
    for (Eigen::Index i = 0; i < c.shape_codes.size(); ++i)
      c.shape_codes.data()[i] = static_cast<float>(tc.code_init_std * rng.normal());
    for (Eigen::Index i = 0; i < c.texture_codes.size(); ++i)
      c.texture_codes.data()[i] = static_cast<float>(tc.code_init_std * rng.normal());
    c.instance_ids = ids;
    c.model_opt = nn::AdamWState<field::MoEParams<float>>::for_params(c.model, tc.adam);
    c.shape_opt = nn::CodeTableOptimizer<float>::for_table(c.shape_codes, tc.adam);
    c.texture_opt = nn::CodeTableOptimizer<float>::for_table(c.texture_codes, tc.adam);
    c.train_config = tc;
    return c;
  }

  nn::TensorArchive to_archive() const {
    nn::TensorArchive a;
    a.meta["format"] = "gnerf-checkpoint";
    a.meta["model_config"] = model.config.to_text();
    a.meta["train_config"] = train_config.to_text();
    a.meta["iteration"] = std::to_string(iteration);
    std::ostringstream k;
    k.precision(17);
    k << intrinsics.focal << " " << intrinsics.cx << " " << intrinsics.cy << " " << intrinsics.width << " " << intrinsics.height;
    a.meta["intrinsics"] = k.str();
    a.meta["adam.model.step"] = std::to_string(model_opt.step);
    std::string ids, steps_s, steps_t;
    for (std::size_t i = 0; i < instance_ids.size(); ++i) {
      ids += (i ? "," : "") + instance_ids[i];
      steps_s += (i ? "," : "") + std::to_string(shape_opt.steps[i]);
      steps_t += (i ? "," : "") + std::to_string(texture_opt.steps[i]);
    }
    a.meta["instances"] = ids;
    a.meta["adam.codes.shape.steps"] = steps_s;
    a.meta["adam.codes.texture.steps"] = steps_t;
    auto& self = const_cast<Checkpoint&>(*this);
    nn::archive_params(a, "model.", self.model);
    nn::archive_params(a, "adam.m.", self.model_opt.first_moment);
    nn::archive_params(a, "adam.v.", self.model_opt.second_moment);
    a.put("codes.shape", shape_codes);
    a.put("codes.texture", texture_codes);
    a.put("adam.codes.shape.m", shape_opt.first_moment);
    a.put("adam.codes.shape.v", shape_opt.second_moment);
    a.put("adam.codes.texture.m", texture_opt.first_moment);
    a.put("adam.codes.texture.v", texture_opt.second_moment);
    return a;
  }

  static Checkpoint from_archive(const nn::TensorArchive& a) {
    if (a.meta.count("format") == 0 || a.meta.at("format") != "gnerf-checkpoint") throw IoError("not a gnerf checkpoint");
    Checkpoint c;
    const auto mc = field::ModelConfig::from_text(a.meta_at("model_config"));
    c.train_config = TrainConfig::from_text(a.meta_at("train_config"));
    c.model = field::MoEParams<float>::zeros(mc);
    nn::restore_params(a, "model.", c.model);
    c.model_opt = nn::AdamWState<field::MoEParams<float>>::for_params(c.model, c.train_config.adam);
    nn::restore_params(a, "adam.m.", c.model_opt.first_moment);
    nn::restore_params(a, "adam.v.", c.model_opt.second_moment);
    c.model_opt.step = std::stoll(a.meta_at("adam.model.step"));
    c.iteration = std::stoll(a.meta_at("iteration"));
    std::istringstream k(a.meta_at("intrinsics"));
    if (!(k >> c.intrinsics.focal >> c.intrinsics.cx >> c.intrinsics.cy >> c.intrinsics.width >> c.intrinsics.height))
      throw IoError("checkpoint: malformed intrinsics");
    c.shape_codes = a.get_matrix<float>("codes.shape");
    c.texture_codes = a.get_matrix<float>("codes.texture");
    auto split = [](const std::string& s) {
      std::vector<std::string> out;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(item);
      return out;
    };
    c.instance_ids = split(a.meta_at("instances"));
    if (static_cast<Eigen::Index>(c.instance_ids.size()) != c.shape_codes.cols() ||
        c.texture_codes.cols() != c.shape_codes.cols())
      throw IoError("checkpoint: code count does not match instance count");
    c.shape_opt = nn::CodeTableOptimizer<float>::for_table(c.shape_codes, c.train_config.adam);
    c.texture_opt = nn::CodeTableOptimizer<float>::for_table(c.texture_codes, c.train_config.adam);
    a.get("adam.codes.shape.m", c.shape_opt.first_moment);
    a.get("adam.codes.shape.v", c.shape_opt.second_moment);
    a.get("adam.codes.texture.m", c.texture_opt.first_moment);
    a.get("adam.codes.texture.v", c.texture_opt.second_moment);
    const auto ss = split(a.meta_at("adam.codes.shape.steps"));
    const auto ts = split(a.meta_at("adam.codes.texture.steps"));
    for (std::size_t i = 0; i < c.instance_ids.size() && i < ss.size() && i < ts.size(); ++i) {
      c.shape_opt.steps[i] = std::stoll(ss[i]);
      c.texture_opt.steps[i] = std::stoll(ts[i]);
    }
    c.model.validate();
    return c;
  }

  void save(const std::string& path) const { to_archive().save(path); }
  static Checkpoint load(const std::string& path) { return from_archive(nn::TensorArchive::load(path)); }
};

struct TrainMetrics {
  std::int64_t iteration = 0;
  double loss = 0;
  double tau = 0;
  double lr = 0;
  std::vector<double> utilization;
};

/// Runs `fn(chunk)` for every chunk on up to `threads` workers. Callers write per-chunk
/// results and reduce them in chunk order, so the outcome never depends on scheduling.
inline void for_each_chunk(std::size_t chunks, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(chunks, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += workers) fn(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Draws B training rays uniformly over (instance, view, pixel).
inline RayBatch<float> sample_training_rays(const std::vector<data::InstanceViews>& instances,
                                            const data::Intrinsics& k, const TrainConfig& cfg, std::int64_t it) {
  Rng rng(derive_seed(cfg.seed, {0x72617973ull, static_cast<std::uint64_t>(it)}));
  const bool crop = cfg.crop_fraction > 0 && it < static_cast<std::int64_t>(cfg.crop_share * cfg.iterations);
  RayBatch<float> rb;
  rb.target.resize(3, cfg.batch_rays);
  for (int b = 0; b < cfg.batch_rays; ++b) {
    const auto m = static_cast<int>(rng.below(instances.size()));
    const auto& iv = instances[static_cast<std::size_t>(m)];
    const auto v = static_cast<std::size_t>(rng.below(iv.view_count()));
    int u, w;
    if (crop) {
      const int cw = std::max(1, static_cast<int>(k.width * cfg.crop_fraction));
      const int ch = std::max(1, static_cast<int>(k.height * cfg.crop_fraction));
      u = (k.width - cw) / 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cw)));
      w = (k.height - ch) / 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(ch)));
    } else {
      u = static_cast<int>(rng.below(static_cast<std::uint64_t>(k.width)));
      w = static_cast<int>(rng.below(static_cast<std::uint64_t>(k.height)));
    }
    rb.rays.push_back(render::generate_ray(k.camera(iv.poses[v]), u, w, cfg.near, cfg.far));
    Rng jitter(derive_seed(cfg.seed, {0x6a6974ull, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(b)}));
    rb.samples.push_back(render::sample_depths(rb.rays.back(), cfg.samples, &jitter));
    rb.instance.push_back(m);
    for (int c = 0; c < 3; ++c) rb.target(c, b) = iv.images[v].at(u, w, c);
  }
  return rb;
}

/// Gumbel noise for `samples` points of ray `ray` at iteration `it` (experts x samples).
inline Mat<float> ray_noise(std::uint64_t seed, std::int64_t it, std::size_t ray, int experts, int samples) {
  Rng rng(derive_seed(seed, {0x67756d62656cull, static_cast<std::uint64_t>(it), ray}));
  Mat<float> g(experts, samples);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<float>(field::gumbel_from_uniform(rng.uniform()));
  return g;
}

struct StepResult {
  double loss = 0;
  double balance = 0;
  std::vector<long> expert_counts;
};

/// One optimisation step over a ray batch: chunked forward/backward, ordered reduction,
/// then AdamW on the model and on the codes of the instances in the batch.
inline StepResult train_step(Checkpoint& ck, const RayBatch<float>& rb, double tau, double lr_model, double lr_code,
                             const TrainConfig& cfg, std::int64_t it) {
  const auto& model = ck.model;
  const int N = model.expert_count();
  const std::size_t B = rb.size();
  const std::size_t chunk = static_cast<std::size_t>(cfg.chunk_rays);
  const std::size_t chunks = (B + chunk - 1) / chunk;
  std::vector<BatchGrads<float>> grads(chunks);
  std::vector<BatchStats> stats(chunks);
  for_each_chunk(chunks, cfg.threads, [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(B, lo + chunk);
    RayBatch<float> sub;
    sub.target = rb.target.middleCols(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo));
    std::size_t points = 0;
    for (std::size_t r = lo; r < hi; ++r) {
      sub.rays.push_back(rb.rays[r]);
      sub.samples.push_back(rb.samples[r]);
      sub.instance.push_back(rb.instance[r]);
      points += rb.samples[r].depth.size();
    }
    Mat<float> noise(N, static_cast<Eigen::Index>(points));
    Eigen::Index off = 0;
    for (std::size_t r = lo; r < hi; ++r) {
      const int ns = static_cast<int>(rb.samples[r].depth.size());
      noise.middleCols(off, ns) = ray_noise(cfg.seed, it, r, N, ns);
      off += ns;
    }
    grads[c] = BatchGrads<float>::zeros(model, ck.shape_codes.cols());
    const double share = static_cast<double>(hi - lo) / static_cast<double>(B);
    const double balance_scale = model.config.routing == field::Routing::foresight ? model.config.balance_weight * share : 0.0;
    stats[c] = batch_loss_and_grad<float>(model, ck.shape_codes, ck.texture_codes, sub,
                                          field::Selection<float>{field::SelectionMode::stochastic, tau, &noise},
                                          cfg.white_background, 1.0 / static_cast<double>(B), balance_scale, &grads[c]);
  });

  StepResult out;
  out.expert_counts.assign(static_cast<std::size_t>(N), 0);
  for (std::size_t c = 0; c < chunks; ++c) {
    if (c > 0) grads[0].add(grads[c]);
    out.loss += stats[c].squared_error;
    const std::size_t lo = c * chunk, hi = std::min(B, lo + chunk);
    out.balance += stats[c].balance * static_cast<double>(hi - lo) / static_cast<double>(B);
    for (int n = 0; n < N; ++n) out.expert_counts[static_cast<std::size_t>(n)] += stats[c].expert_counts[static_cast<std::size_t>(n)];
  }
  out.loss /= static_cast<double>(B);
  if (!std::isfinite(out.loss) || !std::isfinite(out.balance)) {
    std::ostringstream os;
    os << "train: non-finite loss at iteration " << it << " (photometric " << out.loss << ", balance " << out.balance
       << ", tau " << tau << ", lr " << lr_model << ")";
    throw std::runtime_error(os.str());
  }
  auto& g = grads[0];
  nn::adamw_step<float>(ck.model, g.model, ck.model_opt, lr_model);
  std::set<int> touched(rb.instance.begin(), rb.instance.end());
  const std::vector<int> cols(touched.begin(), touched.end());
  ck.shape_opt.step(ck.shape_codes, g.shape, cols, lr_code);
  ck.texture_opt.step(ck.texture_codes, g.texture, cols, lr_code);
  return out;
}

struct TrainHooks {
  std::function<void(const TrainMetrics&)> on_metrics;
  std::ostream* csv = nullptr;  // iteration,loss,tau,util_0..util_{N-1},lr
  std::string checkpoint_path;
  int checkpoint_every = 0;
};

/// Joint optimisation of model and training codes. Resumes from `ck.iteration`.
inline void train(Checkpoint& ck, const data::Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!ds.train.empty(), "train: dataset has no training instances");
  require(static_cast<std::size_t>(ck.instance_count()) == ds.train.size(),
          "train: checkpoint code count does not match the training set");
  ck.intrinsics = ds.intrinsics;
  const int N = ck.model.expert_count();
  if (hooks.csv && ck.iteration == 0) {
    *hooks.csv << "iteration,loss,tau";
    for (int n = 0; n < N; ++n) *hooks.csv << ",util_" << n;
    *hooks.csv << ",lr\n";
  }
  std::vector<long> window(static_cast<std::size_t>(N), 0);
  double window_loss = 0;
  int window_steps = 0;
  for (std::int64_t it = ck.iteration; it < cfg.iterations; ++it) {
    const double t = cfg.iterations > 0 ? static_cast<double>(it) / cfg.iterations : 0.0;
    const double tau = temperature_at(t, cfg.temperature);
    const double lr_m = nn::lr_at(it, {cfg.model_lr, cfg.lr_decay, cfg.iterations});
    const double lr_c = nn::lr_at(it, {cfg.code_lr, cfg.lr_decay, cfg.iterations});
    const auto rb = sample_training_rays(ds.train, ds.intrinsics, cfg, it);
    const auto res = train_step(ck, rb, tau, lr_m, lr_c, cfg, it);
    ck.iteration = it + 1;
    for (int n = 0; n < N; ++n) window[static_cast<std::size_t>(n)] += res.expert_counts[static_cast<std::size_t>(n)];
    window_loss += res.loss;
    ++window_steps;
    if (cfg.log_every > 0 && (ck.iteration % cfg.log_every == 0 || ck.iteration == cfg.iterations)) {
      TrainMetrics m;
      m.iteration = ck.iteration;
      m.loss = window_loss / window_steps;
      m.tau = tau;
      m.lr = lr_m;
      double total = 0;
      for (long c : window) total += static_cast<double>(c);
      for (long c : window) m.utilization.push_back(total > 0 ? static_cast<double>(c) / total : 0.0);
      if (hooks.csv) {
        *hooks.csv << m.iteration << "," << std::setprecision(8) << m.loss << "," << m.tau;
        for (double u : m.utilization) *hooks.csv << "," << u;
        *hooks.csv << "," << m.lr << "\n";
      }
      if (hooks.on_metrics) hooks.on_metrics(m);
      std::fill(window.begin(), window.end(), 0);
      window_loss = 0;
      window_steps = 0;
    }
    if (hooks.checkpoint_every > 0 && !hooks.checkpoint_path.empty() && ck.iteration % hooks.checkpoint_every == 0)
      ck.save(hooks.checkpoint_path);
  }
}

inline std::vector<std::string> instance_ids(const std::vector<data::InstanceViews>& v) {
  std::vector<std::string> ids;
  for (const auto& iv : v) ids.push_back(iv.id);
  return ids;
}

}  // namespace gnerf::train
