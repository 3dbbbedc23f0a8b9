#pragma once

#include <gnerf/eval/metrics.hpp>
#include <gnerf/train/latent.hpp>

#include <iomanip>
#include <ostream>
#include <sstream>

namespace gnerf::eval {

struct ViewScore {
  std::size_t view = 0;
  double psnr = 0;
  double ssim = 0;
};

struct MetricReport {
  std::string instance;
  std::vector<ViewScore> views;
  double mean_psnr = 0;
  double mean_ssim = 0;
  std::string config_hash;

  std::size_t view_count() const { return views.size(); }

  void finalize() {
    mean_psnr = mean_ssim = 0;
    for (const auto& v : views) {
      mean_psnr += v.psnr;
      mean_ssim += v.ssim;
    }
    if (!views.empty()) {
      mean_psnr /= static_cast<double>(views.size());
      mean_ssim /= static_cast<double>(views.size());
    }
  }
};

struct EvalReport {
  std::vector<MetricReport> instances;
  double mean_psnr = 0;  // over all scored views
  double mean_ssim = 0;
  std::string config_hash;

  void finalize() {
    double p = 0, s = 0;
    std::size_t n = 0;
    for (auto& r : instances) {
      r.finalize();
      for (const auto& v : r.views) {
        p += v.psnr;
        s += v.ssim;
        ++n;
      }
    }
    mean_psnr = n ? p / static_cast<double>(n) : 0.0;
    mean_ssim = n ? s / static_cast<double>(n) : 0.0;
  }

  /// instance,view,psnr,ssim,config_hash; per-instance rows use view "mean", the final
  /// row uses instance "all".
  void write_csv(std::ostream& os) const {
    os << "instance,view,psnr,ssim,config_hash\n" << std::setprecision(10);
    for (const auto& r : instances) {
      for (const auto& v : r.views) os << r.instance << "," << v.view << "," << v.psnr << "," << v.ssim << "," << config_hash << "\n";
      os << r.instance << ",mean," << r.mean_psnr << "," << r.mean_ssim << "," << config_hash << "\n";
    }
    os << "all,mean," << mean_psnr << "," << mean_ssim << "," << config_hash << "\n";
  }
};

inline std::string config_hash(const train::Checkpoint& ck) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0')
     << field::fnv1a(ck.model.config.to_text() + ck.train_config.to_text());
  return os.str();
}

/// Renders the views of one instance (noise-free) and scores those not in `skip`.
inline MetricReport score_views(const field::MoEParams<float>& model, const field::InstanceCode<float>& code,
                                const data::InstanceViews& iv, const data::Intrinsics& k, const render::RenderConfig& rc,
                                const std::vector<std::size_t>& skip = {}) {
  MetricReport rep;
  rep.instance = iv.id;
  const auto field = field::make_evaluator(model, code);
  for (std::size_t v = 0; v < iv.view_count(); ++v) {
    if (std::find(skip.begin(), skip.end(), v) != skip.end()) continue;
    const Image img = render::render_image(field, k.camera(iv.poses[v]), rc);
    rep.views.push_back({v, psnr(img, iv.images[v]), ssim(img, iv.images[v])});
  }
  rep.finalize();
  return rep;
}

struct Protocol {
  std::vector<std::size_t> input_views{0};
  train::LatentConfig latent;
};

/// Held-out protocol: fit a code to each unseen instance from the input views, then score
/// the remaining views.
inline EvalReport evaluate_heldout(const train::Checkpoint& ck, const std::vector<data::InstanceViews>& instances,
                                   const data::Intrinsics& k, const Protocol& protocol) {
  require(!instances.empty(), "evaluate: no instances");
  require(!protocol.input_views.empty(), "evaluate: no input views");
  const auto rc = ck.train_config.render_config(false);
  EvalReport out;
  out.config_hash = config_hash(ck);
  for (const auto& iv : instances) {
    if (iv.view_count() <= protocol.input_views.size())
      throw ContractError("evaluate: instance " + iv.id + " has no views left to score");
    const auto obs = train::Observation::from_views(iv, k, protocol.input_views);
    auto lc = protocol.latent;
    lc.seed = derive_seed(lc.seed, {field::fnv1a(iv.id)});
    const auto fit = train::optimize_latents(ck, obs, lc, ck.train_config);
    auto rep = score_views(ck.model, fit.code, iv, k, rc, protocol.input_views);
    rep.config_hash = out.config_hash;
    out.instances.push_back(std::move(rep));
  }
  out.finalize();
  return out;
}

/// Scores the training instances with their trained codes on every view.
inline EvalReport evaluate_training(const train::Checkpoint& ck, const std::vector<data::InstanceViews>& instances,
                                    const data::Intrinsics& k) {
  const auto rc = ck.train_config.render_config(false);
  EvalReport out;
  out.config_hash = config_hash(ck);
  for (const auto& iv : instances) {
    auto rep = score_views(ck.model, ck.code(ck.find_instance(iv.id)), iv, k, rc);
    rep.config_hash = out.config_hash;
    out.instances.push_back(std::move(rep));
  }
  out.finalize();
  return out;
}

}  // namespace gnerf::eval
