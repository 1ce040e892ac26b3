#include "dnf/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dnf {

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.weight.rows() != l.bias.size()) {
      throw std::invalid_argument("layer " + std::to_string(k) + ": bias length does not match weight rows");
    }
    if (k + 1 < layers.size() && l.weight.rows() != layers[k + 1].weight.cols()) {
      throw std::invalid_argument("layer " + std::to_string(k) + ": output width does not match next layer input");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw std::invalid_argument("layer " + std::to_string(k) + ": non-finite parameter");
    }
  }
}

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  for (const auto& l : layers) {
    out.segment(pos, l.weight.size()) = l.weight.reshaped();
    pos += l.weight.size();
    out.segment(pos, l.bias.size()) = l.bias;
    pos += l.bias.size();
  }
  return out;
}

void MlpParams::assign(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw std::invalid_argument("flat parameter vector has wrong length");
  }
  Eigen::Index pos = 0;
  for (auto& l : layers) {
    l.weight.reshaped() = flat.segment(pos, l.weight.size());
    pos += l.weight.size();
    l.bias = flat.segment(pos, l.bias.size());
    pos += l.bias.size();
  }
}

MlpParams init_mlp(int input_dim, const std::vector<int>& hidden, int output_dim, std::mt19937_64& rng) {
  if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("network widths must be positive");
  MlpParams p;
  int fan_in = input_dim;
  auto make = [&](int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer l{Eigen::MatrixXd(out, fan_in), Eigen::VectorXd(out)};
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = u(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(rng);
    p.layers.push_back(std::move(l));
    fan_in = out;
  };
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden width must be positive");
    make(h);
  }
  make(output_dim);
  return p;
}

MlpParams init_mlp_zero_output(int input_dim, const std::vector<int>& hidden, int output_dim,
                               std::mt19937_64& rng) {
  MlpParams p = init_mlp(input_dim, hidden, output_dim, rng);
  p.layers.back().weight.setZero();
  p.layers.back().bias.setZero();
  return p;
}

Eigen::MatrixXd mlp_forward_batch(const MlpParams& params, const Eigen::MatrixXd& x) {
  if (params.layers.empty()) throw std::invalid_argument("network has no layers");
  if (x.rows() != params.input_dim()) {
    throw std::invalid_argument("input dimension " + std::to_string(x.rows()) + " does not match network input " +
                                std::to_string(params.input_dim()));
  }
  Eigen::MatrixXd a = x;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& l = params.layers[k];
    Eigen::MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    if (k + 1 < params.layers.size()) {
      a = (z.array() / (1.0 + (-z.array()).exp())).matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

double mlp_forward(const MlpParams& params, std::span<const double> x) {
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::MatrixXd out = mlp_forward_batch(params, xv);
  if (out.rows() != 1) throw std::invalid_argument("mlp_forward expects a scalar-output network");
  return out(0, 0);
}

MlpVars mlp_on_tape(ad::Tape& tape, const MlpParams& params, bool requires_grad) {
  MlpVars v;
  for (const auto& l : params.layers) {
    v.vars.push_back(tape.leaf(l.weight, requires_grad));
    v.vars.push_back(tape.leaf(l.bias, requires_grad));
  }
  return v;
}

ad::Var mlp_apply(ad::Tape& tape, const MlpVars& vars, ad::Var x) {
  const std::size_t n_layers = vars.vars.size() / 2;
  ad::Var a = x;
  for (std::size_t k = 0; k < n_layers; ++k) {
    ad::Var z = tape.add_bias(tape.matmul(vars.vars[2 * k], a), vars.vars[2 * k + 1]);
    a = (k + 1 < n_layers) ? tape.swish(z) : z;
  }
  return a;
}

Eigen::VectorXd collect_grad(const ad::Tape& tape, const MlpVars& vars) {
  Eigen::Index n = 0;
  for (auto v : vars.vars) n += tape.value(v).size();
  Eigen::VectorXd out(n);
  Eigen::Index pos = 0;
  for (auto v : vars.vars) {
    Eigen::MatrixXd g = tape.grad(v);
    out.segment(pos, g.size()) = g.reshaped();
    pos += g.size();
  }
  return out;
}

// ---------------------------------------------------------------- Dataset

void Dataset::add(std::vector<double> x, double y) {
  if (dim_ == 0) dim_ = static_cast<int>(x.size());
  if (static_cast<int>(x.size()) != dim_ || dim_ == 0) {
    throw std::invalid_argument("dataset input has dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(dim_));
  }
  if (!std::isfinite(y) || !std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); })) {
    throw std::invalid_argument("dataset entries must be finite");
  }
  if (contains(x)) throw std::invalid_argument("duplicate input rejected");
  inputs_.push_back(std::move(x));
  outputs_.push_back(y);
}

bool Dataset::contains(std::span<const double> x) const {
  return std::any_of(inputs_.begin(), inputs_.end(),
                     [&](const auto& row) { return std::equal(row.begin(), row.end(), x.begin(), x.end()); });
}

Eigen::MatrixXd Dataset::input_matrix() const {
  Eigen::MatrixXd m(dim_, static_cast<Eigen::Index>(inputs_.size()));
  for (std::size_t i = 0; i < inputs_.size(); ++i)
    for (int r = 0; r < dim_; ++r) m(r, static_cast<Eigen::Index>(i)) = inputs_[i][r];
  return m;
}

Eigen::RowVectorXd Dataset::output_row() const {
  return Eigen::Map<const Eigen::RowVectorXd>(outputs_.data(), static_cast<Eigen::Index>(outputs_.size()));
}

// ---------------------------------------------------------------- Standardizer

Standardizer Standardizer::fit(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("cannot standardize an empty dataset");
  const Eigen::MatrixXd x = data.input_matrix();
  const Eigen::RowVectorXd y = data.output_row();
  const double n = static_cast<double>(data.size());
  Standardizer s;
  s.input_mean = x.rowwise().mean();
  s.input_std = ((x.colwise() - s.input_mean).array().square().rowwise().sum() / n).sqrt().matrix();
  for (Eigen::Index i = 0; i < s.input_std.size(); ++i) {
    if (!(s.input_std(i) > 0.0)) s.input_std(i) = 1.0;
  }
  s.output_mean = y.mean();
  s.output_std = std::sqrt((y.array() - s.output_mean).square().sum() / n);
  if (!(s.output_std > 0.0)) s.output_std = 1.0;
  return s;
}

Standardizer Standardizer::identity(int dim) {
  Standardizer s;
  s.input_mean = Eigen::VectorXd::Zero(dim);
  s.input_std = Eigen::VectorXd::Ones(dim);
  return s;
}

Eigen::MatrixXd Standardizer::transform_inputs(const Eigen::MatrixXd& x) const {
  return (x.colwise() - input_mean).array().colwise() / input_std.array();
}

Eigen::MatrixXd Standardizer::inverse_inputs(const Eigen::MatrixXd& u) const {
  return (u.array().colwise() * input_std.array()).matrix().colwise() + input_mean;
}

// ---------------------------------------------------------------- Adam

void AdamSettings::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in (0,1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient, AdamState& state,
               const AdamSettings& s) {
  if (gradient.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.step += 1;
  state.m = s.beta1 * state.m + (1.0 - s.beta1) * gradient;
  state.v = s.beta2 * state.v + (1.0 - s.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
  params.array() -= s.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + s.epsilon);
}

void TrainConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("at least one hidden layer is required");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("hidden widths must be positive");
  adam.validate();
  if (batch_size < 0) throw std::invalid_argument("batch size must be non-negative");
  if (epochs < 1) throw std::invalid_argument("epoch count must be positive");
}

// ---------------------------------------------------------------- Surrogate

double SurrogateModel::evaluate(std::span<const double> x) const {
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  return evaluate_batch(xv)(0);
}

Eigen::RowVectorXd SurrogateModel::evaluate_batch(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out = mlp_forward_batch(params, scaler.transform_inputs(x));
  return (out.row(0).array() * scaler.output_std + scaler.output_mean).matrix();
}

void SurrogateModel::evaluate_with_gradient(const Eigen::MatrixXd& x, Eigen::RowVectorXd& values,
                                            Eigen::MatrixXd& gradients) const {
  ad::Tape tape;
  const MlpVars vars = mlp_on_tape(tape, params, false);
  const ad::Var u = tape.leaf(scaler.transform_inputs(x), true);
  const ad::Var out = mlp_apply(tape, vars, u);
  tape.backward(tape.sum(out));
  values = (tape.value(out).row(0).array() * scaler.output_std + scaler.output_mean).matrix();
  // dG/dx = output_std * dNN/du / input_std
  gradients = (tape.grad(u).array().colwise() / scaler.input_std.array()).matrix() * scaler.output_std;
}

namespace {

void check_data(const MlpParams& params, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  if (data.dim() != params.input_dim()) throw std::invalid_argument("dataset dimension does not match network");
}

ad::Var mse_on_tape(ad::Tape& tape, const MlpVars& vars, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) {
  const ad::Var xin = tape.leaf(x, false);
  const ad::Var target = tape.leaf(y, false);
  const ad::Var pred = mlp_apply(tape, vars, xin);
  return tape.mean(tape.square(tape.sub(target, pred)));
}

}  // namespace

double mse_loss(const MlpParams& params, const Dataset& data) {
  check_data(params, data);
  const Eigen::MatrixXd pred = mlp_forward_batch(params, data.input_matrix());
  return (data.output_row() - pred.row(0)).squaredNorm() / static_cast<double>(data.size());
}

LossAndGrad mse_loss_grad(const MlpParams& params, const Dataset& data) {
  check_data(params, data);
  ad::Tape tape;
  const MlpVars vars = mlp_on_tape(tape, params, true);
  const ad::Var loss = mse_on_tape(tape, vars, data.input_matrix(), data.output_row());
  tape.backward(loss);
  LossAndGrad out{tape.value(loss)(0, 0), params};
  out.gradient.assign(collect_grad(tape, vars));
  return out;
}

SurrogateModel train_surrogate(const Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.size() < 2) throw std::invalid_argument("surrogate training needs at least two points");
  for (double y : data.outputs())
    if (!std::isfinite(y)) throw std::invalid_argument("non-finite training target");

  SurrogateModel model;
  model.scaler = Standardizer::fit(data);
  std::mt19937_64 rng(config.seed);
  model.params = init_mlp(data.dim(), config.hidden, 1, rng);

  const Eigen::MatrixXd x = model.scaler.transform_inputs(data.input_matrix());
  const Eigen::RowVectorXd y =
      ((data.output_row().array() - model.scaler.output_mean) / model.scaler.output_std).matrix();
  const auto n = static_cast<Eigen::Index>(data.size());
  const bool full_batch = config.batch_size == 0 || config.batch_size >= n;

  auto standardized_loss = [&](const MlpParams& p) {
    return (y - mlp_forward_batch(p, x).row(0)).squaredNorm() / static_cast<double>(n);
  };

  Eigen::VectorXd theta = model.params.flatten();
  AdamState state(theta.size());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  model.info.initial_loss = standardized_loss(model.params);
  double best_loss = model.info.initial_loss;
  Eigen::VectorXd best_theta = theta;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (full_batch) {
      ad::Tape tape;
      const MlpVars vars = mlp_on_tape(tape, model.params, true);
      const ad::Var loss = mse_on_tape(tape, vars, x, y);
      tape.backward(loss);
      const double value = tape.value(loss)(0, 0);
      if (value < best_loss) {
        best_loss = value;
        best_theta = theta;
      }
      adam_step(theta, collect_grad(tape, vars), state, config.adam);
      model.params.assign(theta);
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < n; start += config.batch_size) {
        const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
        Eigen::MatrixXd xb(x.rows(), len);
        Eigen::RowVectorXd yb(len);
        for (Eigen::Index i = 0; i < len; ++i) {
          xb.col(i) = x.col(order[static_cast<std::size_t>(start + i)]);
          yb(i) = y(order[static_cast<std::size_t>(start + i)]);
        }
        ad::Tape tape;
        const MlpVars vars = mlp_on_tape(tape, model.params, true);
        tape.backward(mse_on_tape(tape, vars, xb, yb));
        adam_step(theta, collect_grad(tape, vars), state, config.adam);
        model.params.assign(theta);
      }
    }
  }
  const double last = standardized_loss(model.params);
  if (!std::isfinite(last)) throw ad::NumericalFailure("surrogate training diverged");
  if (last <= best_loss) {
    best_loss = last;
  } else {
    model.params.assign(best_theta);
  }
  model.info.final_loss = best_loss;
  model.info.epochs = config.epochs;
  model.info.seed = config.seed;
  return model;
}

// ---------------------------------------------------------------- JSON

nlohmann::json to_json(const MlpParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers) {
    std::vector<double> w(l.weight.data(), l.weight.data() + l.weight.size());
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"weight_col_major", w}, {"bias", b}});
  }
  return {{"layers", layers}, {"hidden_activation", "swish"}, {"output_activation", "identity"}};
}

MlpParams mlp_from_json(const nlohmann::json& j) {
  MlpParams p;
  for (const auto& lj : j.at("layers")) {
    const auto rows = lj.at("rows").get<Eigen::Index>();
    const auto cols = lj.at("cols").get<Eigen::Index>();
    const auto w = lj.at("weight_col_major").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw std::invalid_argument("layer parameter count does not match its shape");
    }
    p.layers.push_back({Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols),
                        Eigen::Map<const Eigen::VectorXd>(b.data(), rows)});
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const SurrogateModel& model) {
  const auto& s = model.scaler;
  return {{"format", "dnf-surrogate"},
          {"version", 1},
          {"network", to_json(model.params)},
          {"standardizer",
           {{"input_mean", std::vector<double>(s.input_mean.data(), s.input_mean.data() + s.input_mean.size())},
            {"input_std", std::vector<double>(s.input_std.data(), s.input_std.data() + s.input_std.size())},
            {"output_mean", s.output_mean},
            {"output_std", s.output_std}}},
          {"training",
           {{"initial_loss", model.info.initial_loss},
            {"final_loss", model.info.final_loss},
            {"epochs", model.info.epochs},
            {"seed", model.info.seed}}}};
}

SurrogateModel surrogate_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dnf-surrogate") throw std::invalid_argument("not a surrogate checkpoint");
  if (j.at("version").get<int>() != 1) throw std::invalid_argument("unsupported surrogate checkpoint version");
  SurrogateModel m;
  m.params = mlp_from_json(j.at("network"));
  const auto& sj = j.at("standardizer");
  const auto mean = sj.at("input_mean").get<std::vector<double>>();
  const auto sd = sj.at("input_std").get<std::vector<double>>();
  m.scaler.input_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.scaler.input_std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  m.scaler.output_mean = sj.at("output_mean").get<double>();
  m.scaler.output_std = sj.at("output_std").get<double>();
  const auto& tj = j.at("training");
  m.info.initial_loss = tj.at("initial_loss").get<double>();
  m.info.final_loss = tj.at("final_loss").get<double>();
  m.info.epochs = tj.at("epochs").get<int>();
  m.info.seed = tj.at("seed").get<std::uint64_t>();
  return m;
}

}  // namespace dnf
