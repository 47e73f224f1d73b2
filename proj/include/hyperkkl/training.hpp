#pragma once

// Phase 1 (autonomous maps), Phase 2 (hypernetwork or static injection) and
// the curriculum baseline, with the loss pieces they share.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hyperkkl/dynamics.hpp"
#include "hyperkkl/error.hpp"
#include "hyperkkl/hypernet.hpp"
#include "hyperkkl/kkl.hpp"
#include "hyperkkl/model.hpp"
#include "hyperkkl/optim.hpp"
#include "hyperkkl/rng.hpp"
#include "hyperkkl/signals.hpp"
#include "hyperkkl/tape.hpp"

namespace hyperkkl {

struct TrainConfig {
  int epochs = 2000;
  int decoder_epochs = -1;  // Phase 1 decoder stage; negative means `epochs`
  int steps_per_epoch = 1;
  int batch = 256;
  double lr = 1e-3;
  double lambda = 0.1;
  double clip = 1.0;
  std::uint64_t seed = 0;
  int collocation = 256;
  bool normalize = true;
  int width = 150;
  int hidden_layers = 3;
  double label_discard = 0.2;
  double data_weight = 1.0;  // Phase 2 dynamic: weight of the latent data fit
  int rollout = 5;           // Phase 2 static: observer steps per sample
  std::optional<int> latent_dim;
  std::optional<Activation> activation;

  void validate() const {
    require(epochs >= 0, "epochs must be non-negative");
    require(steps_per_epoch >= 1, "steps_per_epoch must be at least 1");
    require(batch >= 1, "batch size must be at least 1");
    require(lr > 0.0, "learning rate must be positive");
    require(lambda >= 0.0, "lambda must be non-negative");
    require(clip > 0.0, "clip norm must be positive");
    require(collocation >= 0, "collocation count must be non-negative");
    require(width >= 1 && hidden_layers >= 1, "map width and depth must be positive");
    require(label_discard >= 0.0 && label_discard < 1.0, "label discard fraction must be in [0, 1)");
    require(data_weight >= 0.0, "data weight must be non-negative");
    require(rollout >= 1, "rollout must be at least 1 step");
  }
  int decoder_stage_epochs() const { return decoder_epochs < 0 ? epochs : decoder_epochs; }
};

struct CurriculumConfig {
  double epsilon = 0.01;
  int patience = 10;
  int level_budget = 500;

  void validate() const {
    require(epsilon > 0.0 && epsilon < 1.0, "plateau threshold must be in (0, 1)");
    require(patience >= 1, "patience must be at least 1");
    require(level_budget >= 1, "level budget must be at least 1 epoch");
  }
};

/// One epoch of the training log. loss_rec holds the data-side terms (data fit
/// or reconstruction); loss_total = loss_rec + lambda * loss_pde.
struct LogRow {
  std::string stage;
  int epoch = 0;
  double loss_rec = 0.0;
  double loss_pde = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;  // post-clip, averaged over the epoch's steps
  int level = 0;
};

struct TrainResult {
  ObserverModel model;
  std::vector<LogRow> log;
  std::vector<int> level_epochs;  // curriculum: epoch at which each level started
};

/// Non-finite loss during training. Carries the parameters of the last good step.
class TrainingDiverged : public NumericDomainError {
 public:
  TrainingDiverged(const std::string& what, ObserverModel last_good)
      : NumericDomainError(what), last_good_(std::move(last_good)) {}
  const ObserverModel& last_good() const { return last_good_; }

 private:
  ObserverModel last_good_;
};

// ---- vector-field normalization ------------------------------------------------

/// max(1, 95th percentile (nearest rank) of the row norms of `f`).
inline double vector_field_scale(const Mat& f) {
  require(f.rows() >= 1, "vector-field scale needs a non-empty batch");
  std::vector<double> norms(static_cast<std::size_t>(f.rows()));
  for (Eigen::Index i = 0; i < f.rows(); ++i) norms[static_cast<std::size_t>(i)] = f.row(i).norm();
  std::sort(norms.begin(), norms.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(norms.size())));
  return std::max(1.0, norms[std::max<std::size_t>(rank, 1) - 1]);
}

struct NormalizedField {
  Mat f;
  double scale = 1.0;
};

inline NormalizedField normalize_vector_field(const Mat& f) {
  const double s = vector_field_scale(f);
  return {f / s, s};
}

// ---- samples ---------------------------------------------------------------------

/// First retained sample index once the latent transient is dropped.
inline long label_start(Eigen::Index length, double discard) {
  return std::min<long>(static_cast<long>(std::ceil(discard * static_cast<double>(length))),
                        static_cast<long>(length) - 1);
}

/// Latent labels along one trajectory: z' = A z + B h(x) from z(0) = 0 with the
/// noise-free outputs of the recorded states.
inline Mat latent_labels(const ObserverMatrices& obs, const SystemSpec& sys, const Trajectory& tr) {
  Mat y(tr.length(), sys.n_y);
  for (Eigen::Index k = 0; k < tr.length(); ++k) y.row(k) = sys.output(tr.states.row(k).transpose()).transpose();
  return simulate_latent(obs, y, tr.dt, nullptr);
}

/// Observer latent driven by the measured (noisy) outputs.
inline Mat observer_latent(const ObserverMatrices& obs, const Trajectory& tr) {
  return simulate_latent(obs, tr.outputs, tr.dt, nullptr);
}

struct SampleRef {
  int traj = 0;
  long k = 0;
};

struct TrajData {
  const Trajectory* tr = nullptr;
  Mat z;  // labels or observer latent, rows aligned with tr->states
};

inline Mat gather_rows(const std::vector<TrajData>& data, const std::vector<SampleRef>& refs, bool latent,
                       long shift = 0) {
  const Mat& first = latent ? data.front().z : data.front().tr->states;
  Mat out(static_cast<Eigen::Index>(refs.size()), first.cols());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const TrajData& d = data[static_cast<std::size_t>(refs[i].traj)];
    out.row(static_cast<Eigen::Index>(i)) = (latent ? d.z : d.tr->states).row(refs[i].k + shift);
  }
  return out;
}

inline Mat gather_inputs(const std::vector<TrajData>& data, const std::vector<SampleRef>& refs, long shift = 0) {
  Mat out(static_cast<Eigen::Index>(refs.size()), data.front().tr->inputs.cols());
  for (std::size_t i = 0; i < refs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        data[static_cast<std::size_t>(refs[i].traj)].tr->inputs.row(refs[i].k + shift);
  return out;
}

inline std::vector<Mat> gather_windows(const std::vector<TrajData>& data, const std::vector<SampleRef>& refs, int w,
                                       long shift = 0) {
  std::vector<Mat> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(window_at(data[static_cast<std::size_t>(r.traj)].tr->inputs, r.k + shift, w));
  return out;
}

/// All (trajectory, k) with start <= k and k + tail < length.
inline std::vector<SampleRef> sample_pool(const std::vector<TrajData>& data, double discard, long tail) {
  std::vector<SampleRef> pool;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Eigen::Index n = data[i].tr->length();
    for (long k = label_start(n, discard); k + tail < n; ++k) pool.push_back({static_cast<int>(i), k});
  }
  require(!pool.empty(), "no training samples left after the transient discard");
  return pool;
}

inline std::vector<SampleRef> draw_batch(const std::vector<SampleRef>& pool, int batch, CounterRng& rng) {
  std::vector<SampleRef> out(static_cast<std::size_t>(batch));
  for (auto& r : out) r = pool[rng.below(pool.size())];
  return out;
}

inline Mat collocation_points(const SystemSpec& sys, int count, CounterRng& rng) {
  Mat x(count, sys.n_x);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < sys.n_x; ++j) x(i, j) = rng.uniform(sys.domain[j].lo, sys.domain[j].hi);
  return x;
}

// ---- losses ----------------------------------------------------------------------

struct LossParts {
  Tape::Var total, rec, pde;
};

inline void check_finite(const Tape& t, const LossParts& l) {
  if (!std::isfinite(t.scalar(l.rec))) throw NumericDomainError("non-finite loss in the reconstruction term");
  if (!std::isfinite(t.scalar(l.pde))) throw NumericDomainError("non-finite loss in the PDE term");
}

/// Mean squared row error.
inline Tape::Var mse_rows(Tape& t, Tape::Var a, const Mat& target) { return mean_sq(t, t.sub(a, t.constant(target))); }

/// Autonomous objective: mean ||x - T*(T(x))||^2 + lambda * (autonomous residual on `x_pde`).
/// lambda = 0 is the plain autoencoder objective.
inline LossParts autonomous_total_loss(Tape& t, const KklMaps& maps, const MlpVars& theta, const MlpVars& phi,
                                       const ObserverMatrices& obs, const SystemSpec& sys, const Mat& x,
                                       const Mat& x_pde, double lambda, double vf_scale = 1.0) {
  const Tape::Var rec = mse_rows(t, decode(t, maps, phi, encode(t, maps, theta, x).z), x);
  const Tape::Var pde = autonomous_pde_residual(t, maps, theta, obs, sys, x_pde, vf_scale);
  LossParts l{t.add(rec, t.scale(pde, lambda)), rec, pde};
  check_finite(t, l);
  return l;
}

/// One Phase 2 dynamic minibatch: states at t_k, inputs u(t_k), windows ending at
/// k and k+1 and (optionally) latent labels at k.
struct DynamicBatch {
  Mat x, u;
  std::vector<Mat> win_prev, win_next;
  std::optional<Mat> z;
};

/// Dynamic objective for hypernetwork parameters psi with the base maps frozen:
/// rec (through the conditioned decoder) + data_weight * label fit + lambda * dynamic residual.
inline LossParts dynamic_total_loss(Tape& t, const ObserverModel& base, const ParamStore& psi,
                                    const HyperNetSpec& spec, const DynamicBatch& b, double lambda, double dt,
                                    double data_weight = 0.0) {
  const auto n = static_cast<Eigen::Index>(b.x.rows());
  require(b.win_prev.size() == static_cast<std::size_t>(n) && b.win_next.size() == b.win_prev.size(),
          "dynamic batch needs one window pair per state");
  std::vector<Mat> all = b.win_prev;
  all.insert(all.end(), b.win_next.begin(), b.win_next.end());
  const Vec gates = window_gates(all, spec.tau);
  const Tape::Var ctx = hyper_context(t, psi, spec, all);
  const Tape::Var d_enc = hyper_head(t, psi, spec, true, ctx, gates);
  const Tape::Var d_dec = hyper_head(t, psi, spec, false, t.slice_rows(ctx, 0, n), gates.head(n));

  MlpVars th_prev = mlp_vars(t, base.theta, kEnc, base.maps.encoder, false);
  MlpVars th_next = th_prev;
  th_prev.delta = t.slice_cols(d_enc, 0, n);
  th_next.delta = t.slice_cols(d_enc, n, n);
  MlpVars ph = mlp_vars(t, base.phi, kDec, base.maps.decoder, false);
  ph.delta = d_dec;

  const SystemSpec sys = base.system_spec();
  const DynamicResidual res =
      dynamic_pde_residual(t, base.maps, th_prev, th_next, base.obs, sys, b.x, b.u, dt, base.vf_scale);
  Tape::Var rec = mse_rows(t, decode(t, base.maps, ph, res.enc_prev.z), b.x);
  if (b.z && data_weight > 0.0) {
    const double ls = base.maps.latent_scale;
    const Tape::Var fit = t.scale(mse_rows(t, res.enc_prev.z, *b.z), 1.0 / (ls * ls));
    rec = t.add(rec, t.scale(fit, data_weight));
  }
  LossParts l{t.add(rec, t.scale(res.loss, lambda)), rec, res.loss};
  check_finite(t, l);
  return l;
}

/// One Phase 2 static minibatch: R-step observer segments starting at a state.
struct StaticBatch {
  Mat x0;                          // B x n_x states at t_k
  Mat u0;                          // B x m inputs at t_k
  std::vector<Mat> y;              // R entries, B x n_y measured outputs at t_{k+j}
  std::vector<Mat> x_next;         // R entries, B x n_x states at t_{k+j+1}
  std::vector<std::vector<Mat>> windows;  // R entries of B windows ending at k+j
};

/// Static objective for injection parameters xi with the base frozen:
/// observer-rollout reconstruction + lambda * pointwise injection residual
///   || (dT/dx) f(x, u) - A T - B h - inj(T(x), ctx) ||^2 / vf_scale^2.
inline LossParts static_total_loss(Tape& t, const ObserverModel& base, const ParamStore& xi,
                                   const InjectionSpec& spec, const StaticBatch& b, double lambda, double dt) {
  const auto n = static_cast<Eigen::Index>(b.x0.rows());
  const auto steps = static_cast<int>(b.y.size());
  require(steps >= 1 && b.windows.size() == b.y.size() && b.x_next.size() == b.y.size(),
          "static batch needs matching rollout entries");
  const SystemSpec sys = base.system_spec();
  const double ls = base.maps.latent_scale;

  // Frozen encoder values and the residual the injection should absorb.
  Mat z0, target;
  {
    Tape scratch;
    const FieldBatch fb = eval_fields(sys, b.x0, b.u0);
    const EncodeOut e = encode(scratch, base.maps, mlp_vars(scratch, base.theta, kEnc, base.maps.encoder, false),
                               b.x0, fb.f);
    z0 = scratch.value(e.z);
    target = scratch.value(*e.z_dot) - z0 * base.obs.A.transpose() - fb.h * base.obs.B.transpose();
  }

  std::vector<Mat> all;
  for (const auto& w : b.windows) all.insert(all.end(), w.begin(), w.end());
  const Vec gates = window_gates(all, spec.tau);
  const Tape::Var ctx = lstm_forward(t, xi, kInjLstm, spec.lstm, windows_to_steps(all), true);
  const MlpVars mlp = mlp_vars(t, xi, kInjMlp, spec.mlp, true);
  auto inj = [&](Tape::Var z, int j) {
    return static_injection(t, mlp, spec, z, t.slice_rows(ctx, static_cast<Eigen::Index>(j) * n, n),
                            gates.segment(static_cast<Eigen::Index>(j) * n, n), ls);
  };

  Tape::Var z = t.constant(z0);
  const Tape::Var res = t.sub(t.constant(target), inj(z, 0));
  const Tape::Var pde = mean_sq(t, base.vf_scale == 1.0 ? res : t.scale(res, 1.0 / base.vf_scale));

  const Tape::Var at = t.constant(base.obs.A);
  const MlpVars ph = mlp_vars(t, base.phi, kDec, base.maps.decoder, false);
  std::optional<Tape::Var> rec;
  for (int j = 0; j < steps; ++j) {
    const Tape::Var by = t.constant(b.y[static_cast<std::size_t>(j)] * base.obs.B.transpose());
    auto rhs = [&](Tape::Var zs) { return t.add(t.add(t.matmul_nt(zs, at), by), inj(zs, j)); };
    const Tape::Var k1 = rhs(z);
    const Tape::Var k2 = rhs(t.add(z, t.scale(k1, 0.5 * dt)));
    const Tape::Var k3 = rhs(t.add(z, t.scale(k2, 0.5 * dt)));
    const Tape::Var k4 = rhs(t.add(z, t.scale(k3, dt)));
    const Tape::Var sum = t.add(t.add(k1, t.scale(k2, 2.0)), t.add(t.scale(k3, 2.0), k4));
    z = t.add(z, t.scale(sum, dt / 6.0));
    const Tape::Var err = mse_rows(t, decode(t, base.maps, ph, z), b.x_next[static_cast<std::size_t>(j)]);
    rec = rec ? t.add(*rec, err) : err;
  }
  const Tape::Var rec_mean = t.scale(*rec, 1.0 / steps);
  LossParts l{t.add(rec_mean, t.scale(pde, lambda)), rec_mean, pde};
  check_finite(t, l);
  return l;
}

// ---- plateau ---------------------------------------------------------------------

/// True iff the best loss of the last p entries improves on the best loss before
/// them by a relative amount below eps.
inline bool plateau_detect(const std::vector<double>& history, double eps, int p) {
  require(p >= 1, "patience must be at least 1");
  if (history.size() < static_cast<std::size_t>(p) + 1)
    throw ContractViolation("plateau_detect needs at least p + 1 entries");
  const auto split = history.end() - p;
  const double before = *std::min_element(history.begin(), split);
  const double in = *std::min_element(split, history.end());
  return (before - in) / std::max(before, 1e-12) < eps;
}

// ---- optimizer loop ----------------------------------------------------------------

namespace detail {

struct EpochAcc {
  double rec = 0, pde = 0, total = 0, grad = 0;
  int steps = 0;
};

/// Runs one stage: `step(epoch, s, tape)` records the loss for step s of the
/// epoch; gradients of `params` are clipped and applied with Adam.
/// `on_epoch` may stop the stage early by returning false.
template <class StepFn, class EpochFn>
int run_stage(const std::string& stage, int epochs, const TrainConfig& cfg, ParamStore& params, double lambda,
              StepFn&& step, std::vector<LogRow>& log, int level, const std::function<ObserverModel()>& snapshot,
              EpochFn&& on_epoch, AdamState* shared_state = nullptr) {
  AdamState local;
  AdamState& st = shared_state ? *shared_state : local;
  AdamConfig ac;
  ac.lr = cfg.lr;
  int done = 0;
  for (int e = 0; e < epochs; ++e) {
    EpochAcc acc;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      Tape t;
      LossParts l;
      try {
        l = step(e, s, t);
      } catch (const NumericDomainError& err) {
        throw TrainingDiverged(stage + " epoch " + std::to_string(e + 1) + ": " + err.what(), snapshot());
      }
      t.backward(l.total);
      ParamStore g = t.gradients_for(params);
      if (!g.flat().allFinite())
        throw TrainingDiverged(stage + " epoch " + std::to_string(e + 1) + ": non-finite gradient", snapshot());
      clip_grad_norm(g, cfg.clip);
      adam_step(st, params, g, ac);
      acc.rec += t.scalar(l.rec);
      acc.pde += t.scalar(l.pde);
      acc.total += t.scalar(l.total);
      acc.grad += global_norm(g);
      ++acc.steps;
    }
    const double inv = 1.0 / acc.steps;
    LogRow row{stage, static_cast<int>(log.size()) + 1, acc.rec * inv, acc.pde * inv, 0.0, acc.grad * inv, level};
    row.loss_total = row.loss_rec + lambda * row.loss_pde;
    log.push_back(row);
    ++done;
    if (!on_epoch(e, row)) break;
  }
  return done;
}

inline bool keep_going(int, const LogRow&) { return true; }

inline std::vector<TrajData> with_labels(const TrajectorySet& set, const ObserverMatrices& obs, const SystemSpec& sys) {
  std::vector<TrajData> out;
  for (const auto& tr : set.trajectories) out.push_back({&tr, latent_labels(obs, sys, tr)});
  return out;
}

inline std::uint64_t stage_tag(int stage, int epoch, int step, int steps_per_epoch) {
  return (static_cast<std::uint64_t>(stage) << 40) +
         static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(steps_per_epoch) +
         static_cast<std::uint64_t>(step);
}

inline void require_system(const TrajectorySet& set, const std::string& system) {
  if (set.system != system)
    throw ContractViolation("dataset is for '" + set.system + "' but the model is for '" + system + "'");
}

}  // namespace detail

// ---- Phase 1 -------------------------------------------------------------------------

/// Autonomous pretraining: encoder on label fit + PDE residual, then decoder on
/// reconstruction with the encoder frozen.
inline TrainResult phase1_train(const TrajectorySet& data, const TrainConfig& cfg) {
  cfg.validate();
  require(!data.trajectories.empty(), "Phase 1 needs a non-empty dataset");
  for (const auto& tr : data.trajectories)
    if (!tr.inputs.isZero(0.0)) throw ContractViolation("Phase 1 needs a zero-input dataset");
  const SystemSpec sys = systems::by_name(data.system);

  TrainResult res;
  ObserverModel& m = res.model;
  m.system = sys.name;
  m.variant = Variant::autonomous;
  m.obs = build_observer_matrices(sys.n_x, sys.n_y, cfg.latent_dim);
  m.maps = make_maps(sys, m.obs.n_z, cfg.width, cfg.hidden_layers);
  if (cfg.activation) {
    m.maps.encoder.hidden = *cfg.activation;
    m.maps.decoder.hidden = *cfg.activation;
  }
  m.train_seeds.push_back({data.seed_lo(), data.seed_hi()});

  const std::vector<TrajData> td = detail::with_labels(data, m.obs, sys);
  const std::vector<SampleRef> pool = sample_pool(td, cfg.label_discard, 0);
  const Mat xs_all = gather_rows(td, pool, false);
  const Mat zs_all = gather_rows(td, pool, true);
  m.maps.latent_scale = std::max(1e-6, std::sqrt(zs_all.squaredNorm() / static_cast<double>(zs_all.size())));
  if (cfg.normalize) m.vf_scale = vector_field_scale(eval_fields(sys, xs_all, Mat::Zero(xs_all.rows(), sys.m)).f);

  m.theta = make_encoder_params(m.maps);
  m.phi = make_decoder_params(m.maps);
  {
    CounterRng r0(cfg.seed, Channel::init_weights, 0), r1(cfg.seed, Channel::init_weights, 1);
    init_mlp(m.theta, kEnc, m.maps.encoder, r0);
    init_mlp(m.phi, kDec, m.maps.decoder, r1);
  }
  const auto snapshot = [&] { return m; };
  const double ls2 = m.maps.latent_scale * m.maps.latent_scale;

  detail::run_stage(
      "encoder", cfg.epochs, cfg, m.theta, cfg.lambda,
      [&](int e, int s, Tape& t) {
        CounterRng br(cfg.seed, Channel::batch, detail::stage_tag(1, e, s, cfg.steps_per_epoch));
        CounterRng cr(cfg.seed, Channel::collocation, detail::stage_tag(1, e, s, cfg.steps_per_epoch));
        const auto refs = draw_batch(pool, cfg.batch, br);
        const MlpVars th = mlp_vars(t, m.theta, kEnc, m.maps.encoder, true);
        const Tape::Var fit =
            t.scale(mse_rows(t, encode(t, m.maps, th, gather_rows(td, refs, false)).z, gather_rows(td, refs, true)),
                    1.0 / ls2);
        const Tape::Var pde = cfg.collocation > 0
                                  ? autonomous_pde_residual(t, m.maps, th, m.obs, sys,
                                                            collocation_points(sys, cfg.collocation, cr), m.vf_scale)
                                  : t.constant(Mat::Zero(1, 1));
        LossParts l{t.add(fit, t.scale(pde, cfg.lambda)), fit, pde};
        check_finite(t, l);
        return l;
      },
      res.log, 0, snapshot, detail::keep_going);

  detail::run_stage(
      "decoder", cfg.decoder_stage_epochs(), cfg, m.phi, 0.0,
      [&](int e, int s, Tape& t) {
        CounterRng br(cfg.seed, Channel::batch, detail::stage_tag(2, e, s, cfg.steps_per_epoch));
        const auto refs = draw_batch(pool, cfg.batch, br);
        const Mat x = gather_rows(td, refs, false);
        const Tape::Var z = t.constant(encode(m.maps, m.theta, x));
        const Tape::Var rec = mse_rows(t, decode(t, m.maps, mlp_vars(t, m.phi, kDec, m.maps.decoder, true), z), x);
        LossParts l{rec, rec, t.constant(Mat::Zero(1, 1))};
        check_finite(t, l);
        return l;
      },
      res.log, 0, snapshot, detail::keep_going);
  return res;
}

// ---- Phase 2 -------------------------------------------------------------------------

struct Phase2Options {
  HyperNetSpec hyper;           // dynamic: lstm, window, rank, chunk_size, tau (targets filled in)
  int injection_width = 64;     // static injection MLP width
  std::function<void(const ParamStore&)> gate_probe;  // test hook, called mid-training
};

inline void require_base(const ObserverModel& base) {
  if (base.variant != Variant::autonomous) throw ContractViolation("Phase 2 needs an autonomous base checkpoint");
}

/// Verifies that a zero-input window yields exactly zero deltas.
inline void check_zero_gate(const ParamStore& psi, const HyperNetSpec& spec) {
  const Mat zero = Mat::Zero(spec.window, spec.lstm.input);
  const Vec h = lstm_final_state(psi, kHyperLstm, spec.lstm, zero);
  const Deltas d = generate_deltas(psi, spec, h, zero, kEnc, kDec);
  if (!d.encoder.flat().isZero(0.0) || !d.decoder.flat().isZero(0.0))
    throw InternalError("zero-input window produced a non-zero hypernetwork delta");
}

inline TrainResult phase2_dynamic(const ObserverModel& base, const std::vector<const TrajectorySet*>& data,
                                  const TrainConfig& cfg, const Phase2Options& opt = {}) {
  cfg.validate();
  require_base(base);
  require(!data.empty(), "Phase 2 needs at least one forced dataset");
  const SystemSpec sys = base.system_spec();
  const double dt = data.front()->dt;

  TrainResult res;
  ObserverModel& m = res.model;
  m = base;
  m.variant = Variant::dynamic_hyper;
  HyperNetSpec spec = opt.hyper;
  spec.enc_target = base.maps.encoder;
  spec.dec_target = base.maps.decoder;
  m.psi = make_hypernet_params(spec);
  {
    CounterRng r(cfg.seed, Channel::init_weights, 2);
    init_hypernet(m.psi, spec, r);
  }
  m.hyper = spec;

  std::vector<TrajData> td;
  for (const TrajectorySet* set : data) {
    detail::require_system(*set, base.system);
    require(set->dt == dt, "all Phase 2 datasets must share dt");
    m.train_seeds.push_back({set->seed_lo(), set->seed_hi()});
    for (const auto& tr : set->trajectories) td.push_back({&tr, latent_labels(base.obs, sys, tr)});
  }
  const std::vector<SampleRef> pool = sample_pool(td, cfg.label_discard, 1);
  const int mid = cfg.epochs / 2;

  detail::run_stage(
      "dynamic", cfg.epochs, cfg, m.psi, cfg.lambda,
      [&](int e, int s, Tape& t) {
        CounterRng br(cfg.seed, Channel::batch, detail::stage_tag(3, e, s, cfg.steps_per_epoch));
        const auto refs = draw_batch(pool, cfg.batch, br);
        DynamicBatch b{gather_rows(td, refs, false), gather_inputs(td, refs), gather_windows(td, refs, spec.window),
                       gather_windows(td, refs, spec.window, 1), gather_rows(td, refs, true)};
        return dynamic_total_loss(t, base, m.psi, spec, b, cfg.lambda, dt, cfg.data_weight);
      },
      res.log, 0, [&] { return m; },
      [&](int e, const LogRow&) {
        if (e == mid) {
          check_zero_gate(m.psi, spec);
          if (opt.gate_probe) opt.gate_probe(m.psi);
        }
        return true;
      });
  return res;
}

inline TrainResult phase2_static(const ObserverModel& base, const std::vector<const TrajectorySet*>& data,
                                 const TrainConfig& cfg, const Phase2Options& opt = {}) {
  cfg.validate();
  require_base(base);
  require(!data.empty(), "Phase 2 needs at least one forced dataset");
  const SystemSpec sys = base.system_spec();
  const double dt = data.front()->dt;

  TrainResult res;
  ObserverModel& m = res.model;
  m = base;
  m.variant = Variant::static_hyper;
  const InjectionSpec spec =
      make_injection_spec(base.obs.n_z, opt.hyper.lstm.hidden, opt.injection_width, opt.hyper.window, opt.hyper.tau);
  spec.validate(base.obs.n_z);
  m.xi = make_injection_params(spec);
  {
    CounterRng r(cfg.seed, Channel::init_weights, 3);
    init_injection(m.xi, spec, r);
  }
  m.injection = spec;

  std::vector<TrajData> td;
  for (const TrajectorySet* set : data) {
    detail::require_system(*set, base.system);
    require(set->dt == dt, "all Phase 2 datasets must share dt");
    m.train_seeds.push_back({set->seed_lo(), set->seed_hi()});
    for (const auto& tr : set->trajectories) td.push_back({&tr, Mat()});
  }
  const int r_steps = cfg.rollout;
  const std::vector<SampleRef> pool = sample_pool(td, cfg.label_discard, r_steps);

  detail::run_stage(
      "static", cfg.epochs, cfg, m.xi, cfg.lambda,
      [&](int e, int s, Tape& t) {
        CounterRng br(cfg.seed, Channel::batch, detail::stage_tag(4, e, s, cfg.steps_per_epoch));
        const auto refs = draw_batch(pool, cfg.batch, br);
        StaticBatch b;
        b.x0 = gather_rows(td, refs, false);
        b.u0 = gather_inputs(td, refs);
        for (int j = 0; j < r_steps; ++j) {
          Mat y(static_cast<Eigen::Index>(refs.size()), sys.n_y);
          for (std::size_t i = 0; i < refs.size(); ++i)
            y.row(static_cast<Eigen::Index>(i)) = td[static_cast<std::size_t>(refs[i].traj)].tr->outputs.row(refs[i].k + j);
          b.y.push_back(std::move(y));
          b.x_next.push_back(gather_rows(td, refs, false, j + 1));
          b.windows.push_back(gather_windows(td, refs, spec.window, j));
        }
        return static_total_loss(t, base, m.xi, spec, b, cfg.lambda, dt);
      },
      res.log, 0, [&] { return m; }, detail::keep_going);
  return res;
}

// ---- curriculum ------------------------------------------------------------------------

/// One level's (observer latent, state) pairs.
struct LevelData {
  int level = 0;
  std::vector<TrajData> traj;
  std::vector<SampleRef> pool;
};

/// Groups forced trajectories by signal difficulty level (zero-input ones are
/// skipped); levels come out in increasing order.
inline std::vector<LevelData> curriculum_levels(const ObserverMatrices& obs,
                                                const std::vector<const TrajectorySet*>& data, double discard) {
  std::vector<LevelData> levels;
  for (int lv = 1; lv <= kCurriculumLevels; ++lv) {
    LevelData d;
    d.level = lv;
    for (const TrajectorySet* set : data)
      for (const auto& tr : set->trajectories)
        if (difficulty(tr.signal, set->dt, set->horizon).level == lv) d.traj.push_back({&tr, observer_latent(obs, tr)});
    if (d.traj.empty()) continue;
    d.pool = sample_pool(d.traj, discard, 0);
    levels.push_back(std::move(d));
  }
  return levels;
}

/// Decoder-only training through the given levels in order; each level runs
/// until plateau_detect fires on its epoch losses or its budget is spent.
inline TrainResult train_decoder_levels(const ObserverModel& base, const std::vector<LevelData>& levels,
                                        const TrainConfig& cfg, const CurriculumConfig& cc) {
  cfg.validate();
  cc.validate();
  require_base(base);
  require(!levels.empty(), "curriculum needs at least one non-empty level");
  for (std::size_t i = 1; i < levels.size(); ++i)
    require(levels[i].level > levels[i - 1].level, "curriculum levels must be in increasing order");

  TrainResult res;
  ObserverModel& m = res.model;
  m = base;
  m.variant = Variant::curriculum;
  AdamState st;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const LevelData& lv = levels[li];
    res.level_epochs.push_back(static_cast<int>(res.log.size()) + 1);
    std::vector<double> history;
    detail::run_stage(
        "curriculum", cc.level_budget, cfg, m.phi, 0.0,
        [&](int e, int s, Tape& t) {
          CounterRng br(cfg.seed, Channel::batch,
                        detail::stage_tag(5 + static_cast<int>(li), e, s, cfg.steps_per_epoch));
          const auto refs = draw_batch(lv.pool, cfg.batch, br);
          const Tape::Var z = t.constant(gather_rows(lv.traj, refs, true));
          const Tape::Var rec = mse_rows(t, decode(t, m.maps, mlp_vars(t, m.phi, kDec, m.maps.decoder, true), z),
                                         gather_rows(lv.traj, refs, false));
          LossParts l{rec, rec, t.constant(Mat::Zero(1, 1))};
          check_finite(t, l);
          return l;
        },
        res.log, lv.level, [&] { return m; },
        [&](int, const LogRow& row) {
          history.push_back(row.loss_total);
          return !(history.size() > static_cast<std::size_t>(cc.patience) &&
                   plateau_detect(history, cc.epsilon, cc.patience));
        },
        &st);
  }
  return res;
}

inline TrainResult curriculum_train(const ObserverModel& base, const std::vector<const TrajectorySet*>& data,
                                    const TrainConfig& cfg, const CurriculumConfig& cc) {
  for (const TrajectorySet* set : data) detail::require_system(*set, base.system);
  TrainResult res = train_decoder_levels(base, curriculum_levels(base.obs, data, cfg.label_discard), cfg, cc);
  for (const TrajectorySet* set : data) res.model.train_seeds.push_back({set->seed_lo(), set->seed_hi()});
  return res;
}

}  // namespace hyperkkl
