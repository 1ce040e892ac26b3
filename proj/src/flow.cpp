#include "dnf/flow.hpp"

#include "dnf/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace dnf {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// Squashed log-scale and shift of one coupling layer for conditioning rows `a`.
void conditioner(const CouplingLayer& layer, const Eigen::MatrixXd& a, Eigen::MatrixXd& log_scale,
                 Eigen::MatrixXd& shift) {
  const Eigen::MatrixXd raw = mlp_forward_batch(layer.scale_net, a);
  log_scale = layer.s_max * (raw.array() / layer.s_max).tanh();
  shift = mlp_forward_batch(layer.shift_net, a);
}

Eigen::MatrixXd to_matrix(std::span<const double> x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

}  // namespace

OutputMap OutputMap::identity(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

OutputMap OutputMap::for_box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, double half_span_sigmas) {
  if (lower.size() != upper.size() || !(half_span_sigmas > 0.0)) throw std::invalid_argument("bad box map");
  if (((upper - lower).array() <= 0.0).any()) throw std::invalid_argument("box lower bound must be below upper");
  return {0.5 * (lower + upper), 0.5 * (upper - lower) / half_span_sigmas};
}

double OutputMap::log_abs_det() const { return scale.array().abs().log().sum(); }

std::size_t NormalizingFlow::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.scale_net.parameter_count() + l.shift_net.parameter_count();
  return n;
}

Eigen::VectorXd NormalizingFlow::flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  for (const auto& l : layers) {
    for (const MlpParams* net : {&l.scale_net, &l.shift_net}) {
      Eigen::VectorXd f = net->flatten();
      out.segment(pos, f.size()) = f;
      pos += f.size();
    }
  }
  return out;
}

void NormalizingFlow::assign(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) throw std::invalid_argument("flow parameter length");
  Eigen::Index pos = 0;
  for (auto& l : layers) {
    for (MlpParams* net : {&l.scale_net, &l.shift_net}) {
      const auto n = static_cast<Eigen::Index>(net->parameter_count());
      net->assign(flat.segment(pos, n));
      pos += n;
    }
  }
}

void FlowTrainConfig::validate() const {
  if (layers < 2) throw std::invalid_argument("a flow needs at least two coupling layers");
  if (batch < 16) throw std::invalid_argument("flow training batch must be at least 16");
  if (steps < 1) throw std::invalid_argument("flow training needs at least one step");
  if (!(s_max > 0.0)) throw std::invalid_argument("s_max must be positive");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("conditioner widths must be positive");
  if (anneal_fraction < 0.0 || anneal_fraction > 1.0) throw std::invalid_argument("anneal_fraction must lie in [0,1]");
  if (!(anneal_start > 0.0 && anneal_start <= 1.0)) throw std::invalid_argument("anneal_start must lie in (0,1]");
  adam.validate();
}

NormalizingFlow make_identity_flow(int dim, const FlowTrainConfig& config, const OutputMap& output) {
  if (dim < 2) throw std::invalid_argument("coupling flows need dimension >= 2");
  if (output.shift.size() != dim || output.scale.size() != dim) throw std::invalid_argument("output map dimension");
  config.validate();
  NormalizingFlow flow;
  flow.dim = dim;
  flow.output = output;
  Rng rng(derive_seed(config.seed, {0xf10}));
  for (int k = 0; k < config.layers; ++k) {
    CouplingLayer layer;
    for (int i = 0; i < dim; ++i) ((i % 2 == k % 2) ? layer.fixed : layer.transformed).push_back(i);
    const int n_in = static_cast<int>(layer.fixed.size());
    const int n_out = static_cast<int>(layer.transformed.size());
    layer.scale_net = init_mlp_zero_output(n_in, config.hidden, n_out, rng);
    layer.shift_net = init_mlp_zero_output(n_in, config.hidden, n_out, rng);
    layer.s_max = config.s_max;
    flow.layers.push_back(std::move(layer));
  }
  return flow;
}

FlowBatch flow_forward_batch(const NormalizingFlow& flow, const Eigen::MatrixXd& z0) {
  if (z0.rows() != flow.dim) throw std::invalid_argument("flow input dimension mismatch");
  Eigen::MatrixXd z = z0;
  Eigen::RowVectorXd log_det = Eigen::RowVectorXd::Zero(z0.cols());
  Eigen::MatrixXd s, t;
  for (const auto& layer : flow.layers) {
    conditioner(layer, gather_rows(z, layer.fixed), s, t);
    for (std::size_t i = 0; i < layer.transformed.size(); ++i) {
      const int r = layer.transformed[i];
      const auto ii = static_cast<Eigen::Index>(i);
      z.row(r) = (z.row(r).array() * s.row(ii).array().exp() + t.row(ii).array()).matrix();
    }
    log_det += s.colwise().sum();
  }
  FlowBatch out;
  out.points = (flow.output.scale.asDiagonal() * z).colwise() + flow.output.shift;
  out.log_det = log_det.array() + flow.output.log_abs_det();
  return out;
}

FlowBatch flow_inverse_batch(const NormalizingFlow& flow, const Eigen::MatrixXd& x) {
  if (x.rows() != flow.dim) throw std::invalid_argument("flow input dimension mismatch");
  Eigen::MatrixXd z = (x.colwise() - flow.output.shift).array().colwise() / flow.output.scale.array();
  Eigen::RowVectorXd log_det = Eigen::RowVectorXd::Constant(x.cols(), -flow.output.log_abs_det());
  Eigen::MatrixXd s, t;
  for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
    const auto& layer = *it;
    conditioner(layer, gather_rows(z, layer.fixed), s, t);
    for (std::size_t i = 0; i < layer.transformed.size(); ++i) {
      const int r = layer.transformed[i];
      const auto ii = static_cast<Eigen::Index>(i);
      z.row(r) = ((z.row(r).array() - t.row(ii).array()) * (-s.row(ii).array()).exp()).matrix();
    }
    log_det -= s.colwise().sum();
  }
  return {std::move(z), std::move(log_det)};
}

FlowPoint flow_forward(const NormalizingFlow& flow, std::span<const double> z0) {
  const FlowBatch b = flow_forward_batch(flow, to_matrix(z0));
  return {std::vector<double>(b.points.data(), b.points.data() + b.points.size()), b.log_det(0)};
}

FlowPoint flow_inverse(const NormalizingFlow& flow, std::span<const double> x) {
  const FlowBatch b = flow_inverse_batch(flow, to_matrix(x));
  return {std::vector<double>(b.points.data(), b.points.data() + b.points.size()), b.log_det(0)};
}

double standard_normal_log_pdf(std::span<const double> z) {
  double sq = 0.0;
  for (double v : z) sq += v * v;
  return -0.5 * (static_cast<double>(z.size()) * kLogTwoPi + sq);
}

Eigen::RowVectorXd flow_log_density_batch(const NormalizingFlow& flow, const Eigen::MatrixXd& x) {
  const FlowBatch inv = flow_inverse_batch(flow, x);
  const Eigen::RowVectorXd base =
      (-0.5 * (inv.points.colwise().squaredNorm().array() + static_cast<double>(flow.dim) * kLogTwoPi)).matrix();
  return base + inv.log_det;
}

double flow_log_density(const NormalizingFlow& flow, std::span<const double> x) {
  return flow_log_density_batch(flow, to_matrix(x))(0);
}

std::vector<std::vector<double>> sample_flow(const NormalizingFlow& flow, std::size_t n, std::uint64_t seed) {
  std::vector<std::vector<double>> out;
  if (n == 0) return out;
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd z0(flow.dim, static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < z0.cols(); ++j)
    for (Eigen::Index i = 0; i < z0.rows(); ++i) z0(i, j) = normal(rng);
  const FlowBatch b = flow_forward_batch(flow, z0);
  out.reserve(n);
  for (Eigen::Index j = 0; j < b.points.cols(); ++j) {
    out.emplace_back(b.points.col(j).data(), b.points.col(j).data() + flow.dim);
  }
  return out;
}

// ---------------------------------------------------------------- training

double FlowTrainResult::initial_objective_mean() const {
  const std::size_t n = std::max<std::size_t>(1, objective.size() / 10);
  return std::accumulate(objective.begin(), objective.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
         static_cast<double>(n);
}

double FlowTrainResult::final_objective_mean() const {
  const std::size_t n = std::max<std::size_t>(1, objective.size() / 10);
  return std::accumulate(objective.end() - static_cast<std::ptrdiff_t>(n), objective.end(), 0.0) /
         static_cast<double>(n);
}

FlowTrainResult train_flow(const LogTarget& target, int dim, const FlowTrainConfig& config) {
  return train_flow(target, dim, config, OutputMap::identity(dim));
}

namespace {

// Forward activations of one conditioner network, kept for the backward pass.
struct NetCache {
  std::vector<Eigen::MatrixXd> act;  // act[0] is the input
  std::vector<Eigen::MatrixXd> sig;  // sigmoid of each hidden pre-activation
  Eigen::MatrixXd out;
  Eigen::MatrixXd g_cur, g_next;
};

void net_forward(const MlpParams& p, const Eigen::MatrixXd& in, NetCache& c) {
  const std::size_t hidden = p.layers.size() - 1;
  c.act.resize(hidden + 1);
  c.sig.resize(hidden);
  c.act[0] = in;
  for (std::size_t l = 0; l < hidden; ++l) {
    const auto& layer = p.layers[l];
    Eigen::MatrixXd& u = c.act[l + 1];
    u.noalias() = layer.weight * c.act[l];
    u.colwise() += layer.bias;
    c.sig[l] = (1.0 + (-u.array()).exp()).inverse().matrix();
    u.array() *= c.sig[l].array();
  }
  c.out.noalias() = p.layers.back().weight * c.act[hidden];
  c.out.colwise() += p.layers.back().bias;
}

// Writes parameter gradients (flatten() layout) at `grad` and accumulates the
// input gradient into g_in.
void net_backward(const MlpParams& p, NetCache& c, const Eigen::MatrixXd& g_out, double* grad, Eigen::MatrixXd& g_in) {
  std::vector<double*> w_at(p.layers.size());
  double* cursor = grad;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    w_at[l] = cursor;
    cursor += p.layers[l].weight.size() + p.layers[l].bias.size();
  }
  c.g_cur = g_out;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& layer = p.layers[l];
    Eigen::Map<Eigen::MatrixXd> dw(w_at[l], layer.weight.rows(), layer.weight.cols());
    Eigen::Map<Eigen::VectorXd> db(w_at[l] + layer.weight.size(), layer.bias.size());
    dw.noalias() = c.g_cur * c.act[l].transpose();
    db = c.g_cur.rowwise().sum();
    if (l == 0) {
      g_in.noalias() += layer.weight.transpose() * c.g_cur;
      break;
    }
    c.g_next.noalias() = layer.weight.transpose() * c.g_cur;
    // swish'(u) = sig + swish(u) (1 - sig)
    const auto& sg = c.sig[l - 1].array();
    c.g_next.array() *= sg + c.act[l].array() * (1.0 - sg);
    std::swap(c.g_cur, c.g_next);
  }
}

struct LayerCache {
  Eigen::MatrixXd a, b, s, es;
  NetCache scale, shift;
};

// Reusable buffers for the free energy and its gradient.
class FreeEnergy {
 public:
  FreeEnergy(const NormalizingFlow& flow, const LogTarget& target) : flow_(flow), target_(target) {
    layers_.resize(flow.layers.size());
  }

  double evaluate(const Eigen::MatrixXd& z0, double temper, Eigen::VectorXd& grad) {
    const int dim = flow_.dim;
    const auto batch = z0.cols();
    const double base_term = (-0.5 * (z0.colwise().squaredNorm().array() + dim * kLogTwoPi)).mean();

    z_ = z0;
    log_det_ = Eigen::RowVectorXd::Zero(batch);
    for (std::size_t k = 0; k < flow_.layers.size(); ++k) {
      const auto& layer = flow_.layers[k];
      LayerCache& c = layers_[k];
      c.a = gather_rows(z_, layer.fixed);
      c.b = gather_rows(z_, layer.transformed);
      net_forward(layer.scale_net, c.a, c.scale);
      net_forward(layer.shift_net, c.a, c.shift);
      c.s = layer.s_max * (c.scale.out.array() / layer.s_max).tanh();
      c.es = c.s.array().exp();
      for (std::size_t i = 0; i < layer.transformed.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        z_.row(layer.transformed[i]) = (c.b.row(ii).array() * c.es.row(ii).array() + c.shift.out.row(ii).array()).matrix();
      }
      log_det_ += c.s.colwise().sum();
    }
    x_ = (flow_.output.scale.asDiagonal() * z_).colwise() + flow_.output.shift;
    target_(x_, values_, jac_);
    if (values_.size() != batch || jac_.rows() != dim || jac_.cols() != batch) {
      throw std::invalid_argument("target returned wrong shapes");
    }
    const double objective = base_term - values_.mean() - (log_det_.mean() + flow_.output.log_abs_det());
    if (!std::isfinite(objective)) return objective;

    // d objective / d z_K, then back through the coupling layers.
    const double inv_b = 1.0 / static_cast<double>(batch);
    gz_ = flow_.output.scale.asDiagonal() * jac_ * (-temper * inv_b);
    grad.resize(static_cast<Eigen::Index>(flow_.parameter_count()));
    std::vector<Eigen::Index> offset(flow_.layers.size());
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < flow_.layers.size(); ++k) {
      offset[k] = pos;
      pos += static_cast<Eigen::Index>(flow_.layers[k].scale_net.parameter_count() +
                                       flow_.layers[k].shift_net.parameter_count());
    }
    for (std::size_t k = flow_.layers.size(); k-- > 0;) {
      const auto& layer = flow_.layers[k];
      LayerCache& c = layers_[k];
      g_new_ = gather_rows(gz_, layer.transformed);
      g_a_ = gather_rows(gz_, layer.fixed);
      // z_new = b exp(s) + t ; log-det gets sum(s) with weight -1/B.
      g_raw_ = (g_new_.array() * c.b.array() * c.es.array() - inv_b) *
               (1.0 - (c.s.array() / layer.s_max).square());
      g_b_ = g_new_.cwiseProduct(c.es);
      double* g_scale = grad.data() + offset[k];
      double* g_shift = g_scale + layer.scale_net.parameter_count();
      net_backward(layer.scale_net, c.scale, g_raw_, g_scale, g_a_);
      net_backward(layer.shift_net, c.shift, g_new_, g_shift, g_a_);
      for (std::size_t i = 0; i < layer.fixed.size(); ++i) gz_.row(layer.fixed[i]) = g_a_.row(static_cast<Eigen::Index>(i));
      for (std::size_t i = 0; i < layer.transformed.size(); ++i)
        gz_.row(layer.transformed[i]) = g_b_.row(static_cast<Eigen::Index>(i));
    }
    return objective;
  }

 private:
  const NormalizingFlow& flow_;
  const LogTarget& target_;
  std::vector<LayerCache> layers_;
  Eigen::MatrixXd z_, x_, jac_, gz_, g_new_, g_a_, g_raw_, g_b_;
  Eigen::RowVectorXd log_det_, values_;
};

}  // namespace

FlowObjective flow_free_energy(const NormalizingFlow& flow, const Eigen::MatrixXd& z0, const LogTarget& target) {
  if (z0.rows() != flow.dim) throw std::invalid_argument("flow input dimension mismatch");
  FreeEnergy fe(flow, target);
  FlowObjective out;
  out.objective = fe.evaluate(z0, 1.0, out.gradient);
  return out;
}

FlowTrainResult train_flow(const LogTarget& target, int dim, const FlowTrainConfig& config,
                           const OutputMap& output) {
  FlowTrainResult result;
  result.flow = make_identity_flow(dim, config, output);
  NormalizingFlow& flow = result.flow;

  Rng rng(derive_seed(config.seed, {0xba5e}));
  std::normal_distribution<double> normal;
  Eigen::VectorXd theta = flow.flatten();
  Eigen::VectorXd grad(theta.size());
  AdamState state(theta.size());
  const int anneal_steps = static_cast<int>(std::lround(config.anneal_fraction * config.steps));
  result.objective.reserve(static_cast<std::size_t>(config.steps));

  FreeEnergy fe(flow, target);
  Eigen::MatrixXd z0(dim, config.batch);
  for (int step = 0; step < config.steps; ++step) {
    for (Eigen::Index j = 0; j < z0.cols(); ++j)
      for (Eigen::Index i = 0; i < z0.rows(); ++i) z0(i, j) = normal(rng);

    double temper = 1.0;
    if (step < anneal_steps) {
      const double frac = static_cast<double>(step) / anneal_steps;
      temper = std::exp(std::log(config.anneal_start) * (1.0 - frac));
    }

    const double objective = fe.evaluate(z0, temper, grad);
    if (!std::isfinite(objective) || !grad.allFinite()) {
      throw ad::NumericalFailure("flow training diverged at step " + std::to_string(step));
    }
    result.objective.push_back(objective);
    adam_step(theta, grad, state, config.adam);
    flow.assign(theta);
  }
  return result;
}

// ---------------------------------------------------------------- JSON

namespace {
std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace

nlohmann::json to_json(const NormalizingFlow& flow) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : flow.layers) {
    layers.push_back({{"fixed", l.fixed},
                      {"transformed", l.transformed},
                      {"s_max", l.s_max},
                      {"scale_net", to_json(l.scale_net)},
                      {"shift_net", to_json(l.shift_net)}});
  }
  return {{"format", "dnf-flow"},
          {"version", 1},
          {"dim", flow.dim},
          {"base", "standard-normal"},
          {"output_map", {{"shift", to_vec(flow.output.shift)}, {"scale", to_vec(flow.output.scale)}}},
          {"layers", layers}};
}

NormalizingFlow flow_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dnf-flow") throw std::invalid_argument("not a flow checkpoint");
  if (j.at("version").get<int>() != 1) throw std::invalid_argument("unsupported flow checkpoint version");
  NormalizingFlow flow;
  flow.dim = j.at("dim").get<int>();
  flow.output.shift = from_vec(j.at("output_map").at("shift").get<std::vector<double>>());
  flow.output.scale = from_vec(j.at("output_map").at("scale").get<std::vector<double>>());
  for (const auto& lj : j.at("layers")) {
    CouplingLayer l;
    l.fixed = lj.at("fixed").get<std::vector<int>>();
    l.transformed = lj.at("transformed").get<std::vector<int>>();
    l.s_max = lj.at("s_max").get<double>();
    l.scale_net = mlp_from_json(lj.at("scale_net"));
    l.shift_net = mlp_from_json(lj.at("shift_net"));
    flow.layers.push_back(std::move(l));
  }
  return flow;
}

}  // namespace dnf
