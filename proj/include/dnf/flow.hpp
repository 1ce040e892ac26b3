#pragma once

// Affine coupling normalizing flows with a standard Gaussian base.
//
// A flow maps base points z0 ~ N(0, I) through K coupling layers and then a
// fixed per-coordinate affine output map (identity unless the flow lives on
// a design box). Point batches are (d x B) matrices, one column per point.

#include "dnf/mlp.hpp"

#include <functional>
#include <vector>

namespace dnf {

struct CouplingLayer {
  std::vector<int> fixed;        // coordinates passed through and fed to the conditioners
  std::vector<int> transformed;  // coordinates scaled and shifted
  MlpParams scale_net;
  MlpParams shift_net;
  double s_max = 4.0;
};

/// x = shift + scale * z, applied after the last coupling layer.
struct OutputMap {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;

  static OutputMap identity(int dim);
  /// Maps [-half_span_sigmas, half_span_sigmas]^d onto the box [lower, upper].
  static OutputMap for_box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, double half_span_sigmas = 3.0);
  double log_abs_det() const;
};

struct NormalizingFlow {
  int dim = 0;
  std::vector<CouplingLayer> layers;
  OutputMap output;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  std::size_t parameter_count() const;
};

struct FlowTrainConfig {
  int layers = 8;
  std::vector<int> hidden{32, 32};
  int batch = 128;
  int steps = 1000;
  AdamSettings adam{};
  std::uint64_t seed = 0;
  double s_max = 4.0;
  /// Fraction of the steps over which the target log-density is tempered
  /// from `anneal_start` times its value up to its full value. 0 disables.
  double anneal_fraction = 0.5;
  double anneal_start = 0.05;

  void validate() const;
};

/// Coupling layers with alternating masks, conditioner output layers zeroed:
/// the flow is exactly the base Gaussian pushed through `output`.
NormalizingFlow make_identity_flow(int dim, const FlowTrainConfig& config, const OutputMap& output);

struct FlowPoint {
  std::vector<double> point;
  double log_det = 0.0;
};

struct FlowBatch {
  Eigen::MatrixXd points;     // d x B
  Eigen::RowVectorXd log_det;  // 1 x B
};

/// z0 -> x together with log|det dx/dz0|.
FlowPoint flow_forward(const NormalizingFlow& flow, std::span<const double> z0);
FlowBatch flow_forward_batch(const NormalizingFlow& flow, const Eigen::MatrixXd& z0);

/// x -> z0 together with log|det dz0/dx| (the negative of the forward log-det).
FlowPoint flow_inverse(const NormalizingFlow& flow, std::span<const double> x);
FlowBatch flow_inverse_batch(const NormalizingFlow& flow, const Eigen::MatrixXd& x);

double flow_log_density(const NormalizingFlow& flow, std::span<const double> x);
Eigen::RowVectorXd flow_log_density_batch(const NormalizingFlow& flow, const Eigen::MatrixXd& x);

double standard_normal_log_pdf(std::span<const double> z);

/// Forward images of n standard Gaussian draws; deterministic given seed.
std::vector<std::vector<double>> sample_flow(const NormalizingFlow& flow, std::size_t n, std::uint64_t seed);

/// Unnormalized log target with gradient, evaluated on a batch.
/// Receives x (d x B) and fills values (1 x B) and gradients (d x B).
using LogTarget = std::function<void(const Eigen::MatrixXd& x, Eigen::RowVectorXd& values, Eigen::MatrixXd& gradients)>;

struct FlowTrainResult {
  NormalizingFlow flow;
  /// Monte Carlo free energy estimate (untempered target) per step.
  std::vector<double> objective;

  double initial_objective_mean() const;  // first decile
  double final_objective_mean() const;    // last decile
};

/// Minimizes E_q0[ln q0(z0)] - E_q0[target(z_K)] - E_q0[ln |det dz_K/dz0|] from an identity start.
/// Throws ad::NumericalFailure if the objective becomes non-finite.
FlowTrainResult train_flow(const LogTarget& target, int dim, const FlowTrainConfig& config,
                           const OutputMap& output);
FlowTrainResult train_flow(const LogTarget& target, int dim, const FlowTrainConfig& config);

struct FlowObjective {
  double objective = 0.0;
  Eigen::VectorXd gradient;  // d objective / d parameters, flatten() order
};

/// Monte Carlo free energy on a fixed base batch z0 (d x B) and its parameter gradient.
FlowObjective flow_free_energy(const NormalizingFlow& flow, const Eigen::MatrixXd& z0, const LogTarget& target);

nlohmann::json to_json(const NormalizingFlow& flow);
NormalizingFlow flow_from_json(const nlohmann::json& j);

}  // namespace dnf
