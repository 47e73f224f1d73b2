#pragma once

// KKL observer machinery: the latent pair (A, B), latent simulation, the
// encoder/decoder maps and the autonomous and time-varying PDE residuals.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hyperkkl/dynamics.hpp"
#include "hyperkkl/error.hpp"
#include "hyperkkl/nn.hpp"
#include "hyperkkl/param_store.hpp"
#include "hyperkkl/tape.hpp"

namespace hyperkkl {

struct ObserverMatrices {
  Mat A;
  Mat B;
  int n_z = 0;
};

struct HurwitzReport {
  bool hurwitz = false;
  double abscissa = 0.0;  // max real part of the eigenvalues
};

inline HurwitzReport check_hurwitz(const Mat& a) {
  require(a.rows() == a.cols() && a.rows() > 0, "check_hurwitz needs a non-empty square matrix");
  Eigen::EigenSolver<Mat> es(a, false);
  if (es.info() != Eigen::Success) throw NumericDomainError("eigenvalue iteration did not converge");
  const double abscissa = es.eigenvalues().real().maxCoeff();
  return {abscissa < -1e-9, abscissa};
}

/// Rank of the Krylov matrix [B AB ... A^{n-1}B].
inline Eigen::Index controllability_rank(const Mat& a, const Mat& b) {
  require(a.rows() == a.cols() && b.rows() == a.rows(), "controllability: dimension mismatch");
  const Eigen::Index n = a.rows(), k = b.cols();
  Mat krylov(n, n * k);
  Mat blk = b;
  for (Eigen::Index i = 0; i < n; ++i) {
    krylov.middleCols(i * k, k) = blk;
    blk = a * blk;
  }
  // Column scaling keeps the powers of A comparable before rank revealing.
  for (Eigen::Index c = 0; c < krylov.cols(); ++c) {
    const double nrm = krylov.col(c).norm();
    if (nrm > 0.0) krylov.col(c) /= nrm;
  }
  Eigen::FullPivLU<Mat> lu(krylov);
  lu.setThreshold(1e-12);
  return lu.rank();
}

inline int latent_dim(int n_x, int n_y) { return n_y * (2 * n_x + 1); }

/// A = diag(-1, ..., -n_z), B all ones. `n_z_override` is for experiments and
/// still has to pass the Hurwitz and controllability checks.
inline ObserverMatrices build_observer_matrices(int n_x, int n_y, std::optional<int> n_z_override = std::nullopt) {
  require(n_x >= 1 && n_y >= 1, "observer needs n_x, n_y >= 1");
  const int n_z = n_z_override.value_or(latent_dim(n_x, n_y));
  require(n_z >= 1, "latent dimension must be positive");
  ObserverMatrices obs;
  obs.n_z = n_z;
  obs.A = Mat::Zero(n_z, n_z);
  for (int i = 0; i < n_z; ++i) obs.A(i, i) = -(i + 1.0);
  obs.B = Mat::Ones(n_z, n_y);
  if (!check_hurwitz(obs.A).hurwitz) throw InternalError("constructed A is not Hurwitz");
  if (controllability_rank(obs.A, obs.B) != n_z) throw InternalError("constructed (A, B) is not controllable");
  return obs;
}

// ---- latent simulation ----------------------------------------------------------

/// Extra latent drift added inside each RK4 stage: (step index, stage latent, dz).
using LatentInjection = std::function<void(long, const Vec&, Vec&)>;

/// RK4 integration of z' = A z + B y_k (+ injection) with y and u held constant
/// over each step. Row k of the result is z(t_k).
inline Mat simulate_latent(const ObserverMatrices& obs, const Mat& y_seq, double dt,
                           const LatentInjection& inject = nullptr, std::optional<Vec> z0 = std::nullopt) {
  require(y_seq.rows() >= 1, "latent simulation needs at least one sample");
  require(y_seq.cols() == obs.B.cols(), "output width does not match B");
  require(dt > 0.0, "latent simulation needs dt > 0");
  const Eigen::Index n = y_seq.rows();
  Mat z(n, obs.n_z);
  Vec cur = z0.value_or(Vec::Zero(obs.n_z));
  require(cur.size() == obs.n_z, "initial latent has wrong size");
  z.row(0) = cur.transpose();
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    const Vec by = obs.B * y_seq.row(k).transpose();
    auto rhs = [&](const Vec& zs) {
      Vec d = obs.A * zs + by;
      if (inject) inject(static_cast<long>(k), zs, d);
      return d;
    };
    const Vec k1 = rhs(cur);
    const Vec k2 = rhs(cur + 0.5 * dt * k1);
    const Vec k3 = rhs(cur + 0.5 * dt * k2);
    const Vec k4 = rhs(cur + dt * k3);
    cur = cur + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!cur.allFinite()) throw NumericDomainError("latent state became non-finite at step " + std::to_string(k + 1));
    z.row(k + 1) = cur.transpose();
  }
  return z;
}

/// Input injection phi(u) that depends only on the current input sample.
inline LatentInjection plain_input_injection(const Mat& u_seq, std::function<Vec(const Vec&)> phi) {
  return [&u_seq, phi = std::move(phi)](long k, const Vec&, Vec& dz) { dz += phi(u_seq.row(k).transpose()); };
}

// ---- encoder / decoder -----------------------------------------------------------

/// Encoder T: x -> z and decoder T*: z -> x. Both networks work on scaled
/// coordinates: T(x) = latent_scale * enc(x / state_scale) and
/// T*(z) = state_scale * dec(z / latent_scale).
struct KklMaps {
  MlpSpec encoder;
  MlpSpec decoder;
  Vec state_scale;
  double latent_scale = 1.0;

  int n_x() const { return encoder.input(); }
  int n_z() const { return encoder.output(); }

  void validate() const {
    encoder.validate();
    decoder.validate();
    require(decoder.input() == encoder.output() && decoder.output() == encoder.input(),
            "decoder must mirror encoder dimensions");
    require(state_scale.size() == encoder.input(), "state scale has wrong length");
    require(latent_scale > 0.0, "latent scale must be positive");
  }
};

inline KklMaps make_maps(const SystemSpec& sys, int n_z, int width, int hidden_layers = 3) {
  KklMaps maps;
  maps.encoder.widths.push_back(sys.n_x);
  maps.decoder.widths.push_back(n_z);
  for (int i = 0; i < hidden_layers; ++i) {
    maps.encoder.widths.push_back(width);
    maps.decoder.widths.push_back(width);
  }
  maps.encoder.widths.push_back(n_z);
  maps.decoder.widths.push_back(sys.n_x);
  maps.state_scale.resize(sys.n_x);
  for (int i = 0; i < sys.n_x; ++i)
    maps.state_scale[i] = std::max(std::abs(sys.domain[i].lo), std::abs(sys.domain[i].hi));
  maps.validate();
  return maps;
}

inline const std::string kEnc = "enc";
inline const std::string kDec = "dec";

inline ParamStore make_encoder_params(const KklMaps& maps) {
  ParamStore p;
  add_mlp_params(p, kEnc, maps.encoder);
  return p;
}
inline ParamStore make_decoder_params(const KklMaps& maps) {
  ParamStore p;
  add_mlp_params(p, kDec, maps.decoder);
  return p;
}

/// Batched T(x); rows are samples.
inline Mat encode(const KklMaps& maps, const ParamStore& theta, const Mat& x) {
  require(x.cols() == maps.n_x(), "encode: state width mismatch");
  const Mat xs = x * maps.state_scale.cwiseInverse().asDiagonal();
  return maps.latent_scale * mlp_forward(theta, kEnc, maps.encoder, xs);
}

inline Mat decode(const KklMaps& maps, const ParamStore& phi, const Mat& z) {
  require(z.cols() == maps.n_z(), "decode: latent width mismatch");
  return mlp_forward(phi, kDec, maps.decoder, Mat(z / maps.latent_scale)) * maps.state_scale.asDiagonal();
}

inline Vec encode(const KklMaps& maps, const ParamStore& theta, const Vec& x) {
  return encode(maps, theta, Mat(x.transpose())).row(0).transpose();
}
inline Vec decode(const KklMaps& maps, const ParamStore& phi, const Vec& z) {
  return decode(maps, phi, Mat(z.transpose())).row(0).transpose();
}

/// Single-sample decoder with an optional weights-only perturbation.
/// Evaluation uses this path for every step so estimates never depend on batching.
inline Vec decode_row(const KklMaps& maps, const ParamStore& phi, const Vec& z, const double* weight_delta = nullptr) {
  const MlpSpec& spec = maps.decoder;
  Vec h = z / maps.latent_scale;
  for (int l = 0; l < spec.layers(); ++l) {
    const auto w = phi.view(weight_name(kDec, l));
    Vec a = phi.view(bias_name(kDec, l)).row(0).transpose();
    if (weight_delta) {
      Eigen::Map<const RowMat> dw(weight_delta + spec.weight_offset(l), w.rows(), w.cols());
      a.noalias() += (w + dw) * h;
    } else {
      a.noalias() += w * h;
    }
    if (l + 1 < spec.layers() && spec.hidden == Activation::tanh) a = a.array().tanh().matrix();
    h = std::move(a);
  }
  return h.cwiseProduct(maps.state_scale);
}

struct EncodeOut {
  Tape::Var z;
  std::optional<Tape::Var> z_dot;  // (dT/dx) * x_dot per row
};

/// Records T(x) for a batch and, given x_dot, its Jacobian-vector product.
inline EncodeOut encode(Tape& t, const KklMaps& maps, const MlpVars& theta, const Mat& x,
                        const std::optional<Mat>& x_dot = std::nullopt) {
  require(x.cols() == maps.n_x(), "encode: state width mismatch");
  const auto inv = maps.state_scale.cwiseInverse().asDiagonal();
  std::optional<Tape::Var> xd;
  if (x_dot) xd = t.constant(*x_dot * inv);
  const MlpOut out = mlp_forward(t, maps.encoder, theta, t.constant(x * inv), xd);
  EncodeOut r{t.scale(out.y, maps.latent_scale), std::nullopt};
  if (out.y_dot) r.z_dot = t.scale(*out.y_dot, maps.latent_scale);
  return r;
}

inline Tape::Var decode(Tape& t, const KklMaps& maps, const MlpVars& phi, Tape::Var z) {
  const Tape::Var y = mlp_forward(t, maps.decoder, phi, t.scale(z, 1.0 / maps.latent_scale)).y;
  return t.scale_cols(y, maps.state_scale);
}

// ---- PDE residuals ---------------------------------------------------------------

/// Per-row f(x, u) and h(x) for a batch of states.
struct FieldBatch {
  Mat f;
  Mat h;
};

inline FieldBatch eval_fields(const SystemSpec& sys, const Mat& x, const Mat& u) {
  require(x.cols() == sys.n_x, "field batch: state width mismatch");
  require(u.rows() == x.rows() && u.cols() == sys.m, "field batch: input shape mismatch");
  FieldBatch fb{Mat(x.rows(), sys.n_x), Mat(x.rows(), sys.n_y)};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vec xi = x.row(i).transpose();
    fb.f.row(i) = eval_vector_field(sys, xi, u.row(i).transpose()).transpose();
    fb.h.row(i) = sys.output(xi).transpose();
  }
  return fb;
}

/// Rows (dT/dx) f + extra - A T - B h, all divided by `vf_scale`.
inline Tape::Var pde_residual_rows(Tape& t, const ObserverMatrices& obs, const EncodeOut& enc, const Mat& h,
                                   std::optional<Tape::Var> extra, double vf_scale) {
  Tape::Var r = t.sub(*enc.z_dot, t.matmul_nt(enc.z, t.constant(obs.A)));
  r = t.sub(r, t.constant(h * obs.B.transpose()));
  if (extra) r = t.add(r, *extra);
  return vf_scale == 1.0 ? r : t.scale(r, 1.0 / vf_scale);
}

inline Tape::Var mean_sq(Tape& t, Tape::Var rows) {
  return t.scale(t.sum_squares(rows), 1.0 / static_cast<double>(t.value(rows).rows()));
}

/// mean_i || (dT/dx)(x_i) f(x_i, 0) - A T(x_i) - B h(x_i) ||^2 / vf_scale^2.
inline Tape::Var autonomous_pde_residual(Tape& t, const KklMaps& maps, const MlpVars& theta,
                                         const ObserverMatrices& obs, const SystemSpec& sys, const Mat& x,
                                         double vf_scale = 1.0) {
  require(x.rows() >= 1, "residual batch is empty");
  const FieldBatch fb = eval_fields(sys, x, Mat::Zero(x.rows(), sys.m));
  const EncodeOut enc = encode(t, maps, theta, x, fb.f);
  const Tape::Var loss = mean_sq(t, pde_residual_rows(t, obs, enc, fb.h, std::nullopt, vf_scale));
  if (!std::isfinite(t.scalar(loss))) throw NumericDomainError("autonomous PDE residual is non-finite");
  return loss;
}

/// Scalar value of the autonomous residual for a plain parameter store.
inline double autonomous_pde_residual(const KklMaps& maps, const ParamStore& theta, const ObserverMatrices& obs,
                                      const SystemSpec& sys, const Mat& x, double vf_scale = 1.0) {
  Tape t;
  return t.scalar(autonomous_pde_residual(t, maps, mlp_vars(t, theta, kEnc, maps.encoder, false), obs, sys, x, vf_scale));
}

/// Time-varying residual with the temporal derivative replaced by the
/// difference of the encoder under two adjacent input windows:
///   (dT/dx)(x; th_prev) f(x, u_t) + [T(x; th_next) - T(x; th_prev)] / dt - A T(x; th_prev) - B h(x).
/// `theta_prev` / `theta_next` carry the per-sample weight deltas of the
/// windows ending at t and t + dt.
struct DynamicResidual {
  Tape::Var loss;
  EncodeOut enc_prev;
};

inline DynamicResidual dynamic_pde_residual(Tape& t, const KklMaps& maps, const MlpVars& theta_prev,
                                            const MlpVars& theta_next, const ObserverMatrices& obs,
                                            const SystemSpec& sys, const Mat& x, const Mat& u_t, double dt,
                                            double vf_scale = 1.0) {
  require(x.rows() >= 1, "residual batch is empty");
  require(dt > 0.0, "temporal step must be positive");
  const FieldBatch fb = eval_fields(sys, x, u_t);
  const EncodeOut prev = encode(t, maps, theta_prev, x, fb.f);
  const EncodeOut next = encode(t, maps, theta_next, x);
  const Tape::Var temporal = t.scale(t.sub(next.z, prev.z), 1.0 / dt);
  const Tape::Var loss = mean_sq(t, pde_residual_rows(t, obs, prev, fb.h, temporal, vf_scale));
  if (!std::isfinite(t.scalar(loss))) throw NumericDomainError("dynamic PDE residual is non-finite");
  return {loss, prev};
}

}  // namespace hyperkkl
