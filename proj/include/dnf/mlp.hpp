#pragma once

// Feed-forward networks, the design dataset, and surrogate training.

#include "dnf/tape.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dnf {

/// Affine layer W x + b. W is (out x in).
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Swish on every hidden layer, identity on the last one.
struct MlpParams {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  std::size_t parameter_count() const;

  /// Throws std::invalid_argument unless shapes chain and every value is finite.
  void validate() const;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
};

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpParams init_mlp(int input_dim, const std::vector<int>& hidden, int output_dim, std::mt19937_64& rng);

/// Same shape as init_mlp but with the output layer zeroed.
MlpParams init_mlp_zero_output(int input_dim, const std::vector<int>& hidden, int output_dim,
                               std::mt19937_64& rng);

/// Scalar network output at a single point.
double mlp_forward(const MlpParams& params, std::span<const double> x);

/// Batched evaluation: x is (d x B); returns (out x B).
Eigen::MatrixXd mlp_forward_batch(const MlpParams& params, const Eigen::MatrixXd& x);

/// Tape handles for a network's parameters, in layer order (W0, b0, W1, b1, ...).
struct MlpVars {
  std::vector<ad::Var> vars;
};

MlpVars mlp_on_tape(ad::Tape& tape, const MlpParams& params, bool requires_grad);
ad::Var mlp_apply(ad::Tape& tape, const MlpVars& vars, ad::Var x);
/// Gradient of the tape output w.r.t. the network parameters, flattened like MlpParams::flatten().
Eigen::VectorXd collect_grad(const ad::Tape& tape, const MlpVars& vars);

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(int dim) : dim_(dim) {}

  /// Rejects duplicate inputs (exact equality), wrong dimension and non-finite values.
  void add(std::vector<double> x, double y);
  bool contains(std::span<const double> x) const;

  std::size_t size() const { return outputs_.size(); }
  bool empty() const { return outputs_.empty(); }
  int dim() const { return dim_; }
  const std::vector<std::vector<double>>& inputs() const { return inputs_; }
  const std::vector<double>& outputs() const { return outputs_; }

  Eigen::MatrixXd input_matrix() const;  // d x N
  Eigen::RowVectorXd output_row() const;  // 1 x N

 private:
  int dim_ = 0;
  std::vector<std::vector<double>> inputs_;
  std::vector<double> outputs_;
};

/// Zero-mean / unit-variance conditioning for inputs and the scalar output.
struct Standardizer {
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_std;
  double output_mean = 0.0;
  double output_std = 1.0;

  static Standardizer fit(const Dataset& data);
  static Standardizer identity(int dim);

  Eigen::MatrixXd transform_inputs(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd inverse_inputs(const Eigen::MatrixXd& u) const;
  double transform_output(double y) const { return (y - output_mean) / output_std; }
  double inverse_output(double v) const { return v * output_std + output_mean; }
};

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;

  explicit AdamState(Eigen::Index n = 0) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

/// One bias-corrected Adam update, in place.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient, AdamState& state,
               const AdamSettings& settings);

struct TrainConfig {
  std::vector<int> hidden{64, 64, 64};
  AdamSettings adam{};
  int batch_size = 0;  // 0 means full batch
  int epochs = 3000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingInfo {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int epochs = 0;
  std::uint64_t seed = 0;
};

/// Trained MLP plus the data conditioning it was fit with. G(x) in raw units.
struct SurrogateModel {
  MlpParams params;
  Standardizer scaler;
  TrainingInfo info;

  int dim() const { return params.input_dim(); }
  double evaluate(std::span<const double> x) const;
  /// x is (d x B), raw units. Returns 1 x B raw outputs.
  Eigen::RowVectorXd evaluate_batch(const Eigen::MatrixXd& x) const;
  /// Values and input gradients dG/dx for a batch (d x B).
  void evaluate_with_gradient(const Eigen::MatrixXd& x, Eigen::RowVectorXd& values,
                              Eigen::MatrixXd& gradients) const;
};

/// (1/N) sum (y_i - NN(x_i))^2, on the data exactly as given.
double mse_loss(const MlpParams& params, const Dataset& data);

struct LossAndGrad {
  double loss = 0.0;
  MlpParams gradient;  // same shapes as the parameters
};

/// mse_loss and its gradient by reverse-mode accumulation.
LossAndGrad mse_loss_grad(const MlpParams& params, const Dataset& data);

/// Full-batch (or mini-batch) Adam fit on standardized data. Deterministic given config.seed.
SurrogateModel train_surrogate(const Dataset& data, const TrainConfig& config);

nlohmann::json to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SurrogateModel& model);
SurrogateModel surrogate_from_json(const nlohmann::json& j);

}  // namespace dnf
