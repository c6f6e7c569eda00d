#include "latdyn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace latdyn {

using nlohmann::json;

void TrainConfig::validate(std::size_t dataset_size, std::size_t dataset_length) const {
  if (epochs < 1 || batch_size < 1 || sequence_length < 1) {
    throw std::invalid_argument("train config: epochs, batch_size and sequence_length must be >= 1");
  }
  if (sequence_length > dataset_length) {
    throw std::invalid_argument("train config: sequence_length " +
                                std::to_string(sequence_length) + " exceeds trajectory length " +
                                std::to_string(dataset_length));
  }
  if (validation_trajectories >= dataset_size) {
    throw std::invalid_argument("train config: validation_trajectories leaves no training data");
  }
  if (!(learning_rate > 0.0) || !(grad_clip > 0.0)) {
    throw std::invalid_argument("train config: learning_rate and grad_clip must be > 0");
  }
  if (!(kl_start > 0.0 && kl_start <= 1.0)) {
    throw std::invalid_argument("train config: kl_start must be in (0, 1]");
  }
  model.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"sequence_length", c.sequence_length},
           {"learning_rate", c.learning_rate},
           {"seed", c.seed},
           {"kl_anneal_epochs", c.kl_anneal_epochs},
           {"kl_start", c.kl_start},
           {"grad_clip", c.grad_clip},
           {"validation_trajectories", c.validation_trajectories},
           {"verify_elbo_identity", c.verify_elbo_identity},
           {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "sequence_length") c.sequence_length = value.get<std::size_t>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "kl_anneal_epochs") c.kl_anneal_epochs = value.get<std::size_t>();
    else if (key == "kl_start") c.kl_start = value.get<double>();
    else if (key == "grad_clip") c.grad_clip = value.get<double>();
    else if (key == "validation_trajectories") c.validation_trajectories = value.get<std::size_t>();
    else if (key == "verify_elbo_identity") c.verify_elbo_identity = value.get<bool>();
    else if (key == "model") c.model = value.get<ModelConfig>();
    else throw std::invalid_argument("unknown train config key: " + key);
  }
}

namespace {

Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  }
  return m;
}

// Filtered beliefs of one sequence, kept as graph nodes.
struct GraphFilter {
  std::vector<ad::Var> pred_mean, pred_cov;
  std::vector<ad::Var> filt_mean, filt_cov;
  std::vector<ad::Var> a_mat, b_mat, c_mat;
};

}  // namespace

ElboResult elbo(ad::ParamBinder& bind, const Model& model, std::span<const SequenceView> batch,
                std::mt19937_64& rng, double latent_weight) {
  if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
  const auto& cfg = model.config;
  const std::size_t len = batch.front().length;
  const Eigen::Index n = cfg.state_dim;
  const Eigen::Index pixels = static_cast<Eigen::Index>(cfg.image_size) * cfg.image_size;
  for (const auto& v : batch) {
    if (v.length != len || v.length == 0 || v.trajectory == nullptr ||
        v.start + v.length > v.trajectory->length()) {
      throw std::invalid_argument("elbo: sequence views must share a valid length");
    }
  }
  const auto frames = static_cast<Eigen::Index>(batch.size() * len);

  ad::Graph& g = bind.graph();
  const VaeCodec codec = model.codec();
  const DynamicsNet dyn = model.dynamics();

  Eigen::MatrixXd x(pixels, frames);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t k = 0; k < len; ++k) {
      const Image& img = batch[b].trajectory->images[batch[b].start + k];
      if (img.pixels.size() != pixels) throw std::invalid_argument("elbo: image size mismatch");
      x.col(static_cast<Eigen::Index>(b * len + k)) = img.pixels;
    }
  }
  const ad::Var images = g.constant(std::move(x));

  // Recognition sample and reconstruction for every frame at once.
  const auto enc = codec.encode(bind, images);
  const ad::Var eps_a = g.constant(standard_normal(cfg.measurement_dim, frames, rng));
  const ad::Var a_tilde = enc.mean + ad::cwise_mul(ad::exp(enc.log_std), eps_a);
  const ad::Var log_recon = codec.log_likelihood(codec.decode_logits(bind, a_tilde), images);
  const ad::Var log_q = ad::diag_gaussian_logpdf(a_tilde, enc.mean, enc.log_std);

  const ad::Var log_q_var = bind("noise.log_q");
  const ad::Var log_r_var = bind("noise.log_r");
  const ad::Var log_prior_var = bind("noise.log_prior");
  const ad::Var q_cov = ad::diag(ad::exp(log_q_var));
  const ad::Var r_cov = ad::diag(ad::exp(log_r_var));
  const ad::Var prior_cov = ad::diag(ad::exp(log_prior_var));
  const ad::Var q_log_std = 0.5 * log_q_var;
  const ad::Var r_log_std = 0.5 * log_r_var;
  const ad::Var prior_log_std = 0.5 * log_prior_var;
  const ad::Var zero_n = g.constant(Eigen::MatrixXd::Zero(n, 1));
  const ad::Var eye_n = g.constant(Eigen::MatrixXd::Identity(n, n));

  ElboResult result;
  result.traces.resize(batch.size());
  ad::Var latent_total = g.constant(0.0);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const SequenceView& view = batch[b];
    ElboTrace& trace = result.traces[b];
    std::vector<ad::Var> a_k(len), u_k(len);
    for (std::size_t k = 0; k < len; ++k) {
      a_k[k] = ad::slice_cols(a_tilde, static_cast<Eigen::Index>(b * len + k), 1);
      const Eigen::VectorXd& u = view.trajectory->controls[view.start + k];
      u_k[k] = g.constant(Eigen::MatrixXd(u));
      trace.a_sample.push_back(a_k[k].value().col(0));
      trace.controls.push_back(u);
    }

    // Forward filter; the GRU is driven by the filtered means.
    GraphFilter f;
    ad::Var h = g.constant(Eigen::MatrixXd(dyn.initial_hidden()));
    auto mix = dyn.mix(bind, dyn.mixture_weights(bind, h));
    ad::Var mean = zero_n;
    ad::Var cov = prior_cov;
    for (std::size_t k = 0; k < len; ++k) {
      const ad::Var c = mix.C;
      f.pred_mean.push_back(mean);
      f.pred_cov.push_back(cov);
      f.c_mat.push_back(c);
      const ad::Var pct = cov * ad::transpose(c);
      const ad::Var s = ad::symmetrize(c * pct + r_cov);
      const ad::Var gain = pct * ad::inverse(s);
      const ad::Var m_f = mean + gain * (a_k[k] - c * mean);
      const ad::Var i_kc = eye_n - gain * c;
      const ad::Var p_f = ad::symmetrize(i_kc * cov * ad::transpose(i_kc) +
                                         gain * r_cov * ad::transpose(gain));
      f.filt_mean.push_back(m_f);
      f.filt_cov.push_back(p_f);
      if (k + 1 < len) {
        h = dyn.gru(bind, m_f, u_k[k], h);
        mix = dyn.mix(bind, dyn.mixture_weights(bind, h));
        f.a_mat.push_back(mix.A);
        f.b_mat.push_back(mix.B);
        mean = mix.A * m_f + mix.B * u_k[k];
        cov = ad::symmetrize(mix.A * p_f * ad::transpose(mix.A) + q_cov);
      }
    }

    // Backward sampling from the joint posterior and its exact log density.
    const Eigen::MatrixXd eps_z = standard_normal(n, static_cast<Eigen::Index>(len), rng);
    std::vector<ad::Var> z(len);
    z[len - 1] = f.filt_mean[len - 1] +
                 ad::cholesky(f.filt_cov[len - 1]) * g.constant(Eigen::MatrixXd(eps_z.col(len - 1)));
    ad::Var log_post = ad::gaussian_logpdf(z[len - 1], f.filt_mean[len - 1], f.filt_cov[len - 1]);
    for (std::size_t k = len - 1; k-- > 0;) {
      const ad::Var gain = f.filt_cov[k] * ad::transpose(f.a_mat[k]) * ad::inverse(f.pred_cov[k + 1]);
      const ad::Var c_mean = f.filt_mean[k] + gain * (z[k + 1] - f.pred_mean[k + 1]);
      const ad::Var c_cov =
          ad::symmetrize(f.filt_cov[k] - gain * f.pred_cov[k + 1] * ad::transpose(gain));
      z[k] = c_mean + ad::cholesky(c_cov) * g.constant(Eigen::MatrixXd(eps_z.col(k)));
      log_post = log_post + ad::gaussian_logpdf(z[k], c_mean, c_cov);
    }

    // ln p(a~, z~ | u) with the constant measurement noise.
    ad::Var log_joint = ad::diag_gaussian_logpdf(z[0], zero_n, prior_log_std);
    for (std::size_t k = 0; k < len; ++k) {
      log_joint = log_joint + ad::diag_gaussian_logpdf(a_k[k], f.c_mat[k] * z[k], r_log_std);
      if (k + 1 < len) {
        log_joint = log_joint + ad::diag_gaussian_logpdf(
                                    z[k + 1], f.a_mat[k] * z[k] + f.b_mat[k] * u_k[k], q_log_std);
      }
    }
    latent_total = latent_total + log_joint - log_post;

    trace.log_joint = log_joint.item();
    trace.log_posterior = log_post.item();
    for (std::size_t k = 0; k < len; ++k) {
      trace.z_sample.push_back(z[k].value().col(0));
      StepModel step;
      step.C = f.c_mat[k].value();
      if (k + 1 < len) {
        step.A = f.a_mat[k].value();
        step.B = f.b_mat[k].value();
      } else {
        step.A = Eigen::MatrixXd::Identity(n, n);
        step.B = Eigen::MatrixXd::Zero(n, cfg.control_dim);
      }
      trace.steps.push_back(std::move(step));
    }
  }

  const double count = static_cast<double>(batch.size());
  const ad::Var latent = latent_total - log_q;
  const ad::Var bound = log_recon + latent_weight * latent;
  result.loss = (-1.0 / count) * bound;
  result.bound = (log_recon.item() + latent.item()) / count;
  return result;
}

double elbo_identity_gap(const ElboTrace& trace, const Model& model) {
  const FilterResult filt =
      kalman_filter(trace.a_sample, trace.controls, trace.steps, model.prior(), model.noise());
  return std::abs((trace.log_joint - trace.log_posterior) - filt.log_marginal);
}

double reconstruction_mse(const Model& model, std::span<const Trajectory> data) {
  const VaeCodec codec = model.codec();
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& traj : data) {
    Eigen::MatrixXd x(codec.config().pixels(), static_cast<Eigen::Index>(traj.length()));
    for (std::size_t k = 0; k < traj.length(); ++k) x.col(static_cast<Eigen::Index>(k)) = traj.images[k].pixels;
    const Eigen::MatrixXd xhat = codec.decode_means(model.store, codec.encode_means(model.store, x));
    total += (x - xhat).squaredNorm();
    count += static_cast<std::size_t>(x.size());
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

NoveltyBaseline compute_baseline(const Model& model, std::span<const Trajectory> data) {
  const VaeCodec codec = model.codec();
  NoveltyBaseline out;
  double total = 0.0;
  for (const auto& traj : data) {
    Eigen::MatrixXd x(codec.config().pixels(), static_cast<Eigen::Index>(traj.length()));
    for (std::size_t k = 0; k < traj.length(); ++k) x.col(static_cast<Eigen::Index>(k)) = traj.images[k].pixels;
    const Eigen::MatrixXd xhat = codec.decode_means(model.store, codec.encode_means(model.store, x));
    total += (x - xhat).colwise().squaredNorm().sum();
    out.n_images += traj.length();
  }
  out.mean_train_loss = out.n_images == 0 ? 0.0 : total / static_cast<double>(out.n_images);
  return out;
}

Model train(std::span<const Trajectory> dataset, const TrainConfig& cfg, TrainStats* stats,
            const EpochCallback& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const std::size_t traj_len = dataset.front().length();
  cfg.validate(dataset.size(), traj_len);
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t n_train = dataset.size() - cfg.validation_trajectories;
  const auto train_split = dataset.first(n_train);
  const auto val_split = dataset.subspan(n_train);

  Model model(cfg.model, cfg.seed);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0xE1B0));
  ad::AdamConfig adam;
  adam.lr = cfg.learning_rate;

  TrainStats local;
  ad::ParamStore last_good = model.store;
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<std::size_t> start_dist(0, traj_len - cfg.sequence_length);

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !model.diverged; ++epoch) {
    double weight = 1.0;
    if (cfg.kl_anneal_epochs > 0 && epoch <= cfg.kl_anneal_epochs) {
      weight = cfg.kl_start + (1.0 - cfg.kl_start) * static_cast<double>(epoch - 1) /
                                  static_cast<double>(cfg.kl_anneal_epochs);
    }
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t first = 0; first < n_train; first += cfg.batch_size) {
      const std::size_t last = std::min(n_train, first + cfg.batch_size);
      std::vector<SequenceView> views;
      for (std::size_t i = first; i < last; ++i) {
        views.push_back({&train_split[order[i]], start_dist(rng), cfg.sequence_length});
      }
      try {
        ad::Graph graph;
        ad::ParamBinder bind(graph, model.store);
        const ElboResult res = elbo(bind, model, views, rng, weight);
        if (!std::isfinite(res.bound)) throw std::runtime_error("non-finite bound");
        if (cfg.verify_elbo_identity) {
          for (const auto& tr : res.traces) {
            local.max_identity_gap = std::max(local.max_identity_gap, elbo_identity_gap(tr, model));
          }
        }
        model.store.zero_grad();
        graph.backward(res.loss);
        model.store.clip_grad_norm(cfg.grad_clip);
        ad::adam_step(model.store, adam);
        loss_sum += -res.bound;
        ++loss_count;
        ++local.batches;
      } catch (const std::runtime_error&) {
        model.store = last_good;
        model.diverged = true;
        break;
      }
    }
    if (model.diverged) break;
    last_good = model.store;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rec.val_mse = reconstruction_mse(model, val_split);
    model.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  model.baseline = compute_baseline(model, train_split);
  local.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (stats != nullptr) *stats = local;
  return model;
}

}  // namespace latdyn
