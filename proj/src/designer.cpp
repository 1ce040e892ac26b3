#include "dnf/designer.hpp"

#include "dnf/random.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dnf {

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::Nfbd: return "nfbd";
    case Criterion::NfbdFg: return "nfbd-fg";
    case Criterion::NfbdAg: return "nfbd-ag";
  }
  return "?";
}

Criterion parse_criterion(const std::string& s) {
  std::string low(s);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  if (low == "nfbd") return Criterion::Nfbd;
  if (low == "nfbd-fg") return Criterion::NfbdFg;
  if (low == "nfbd-ag") return Criterion::NfbdAg;
  throw std::invalid_argument("unknown criterion '" + s + "' (expected nfbd, nfbd-fg, nfbd-ag)");
}

void DesignCriterion::validate() const {
  if (tag != Criterion::Nfbd && !(eps0 > 0.0)) throw std::invalid_argument("eps0 must be positive");
  if (proposal_cap == 0) throw std::invalid_argument("proposal cap must be positive");
}

double rho(std::span<const double> z, const Points& data) {
  if (data.empty()) throw std::invalid_argument("distance to an empty dataset");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& x : data) {
    double d = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) d = std::max(d, std::abs(z[i] - x[i]));
    best = std::min(best, d);
  }
  return best;
}

namespace {

/// Sequential stream of flow proposals drawn in chunks from one RNG.
class ProposalStream {
 public:
  ProposalStream(const NormalizingFlow& flow, std::uint64_t seed) : flow_(flow), rng_(seed) {}

  std::vector<double> next() {
    if (pos_ >= static_cast<Eigen::Index>(buffer_.cols())) refill();
    std::vector<double> p(buffer_.col(pos_).data(), buffer_.col(pos_).data() + flow_.dim);
    ++pos_;
    return p;
  }

 private:
  void refill() {
    constexpr Eigen::Index kChunk = 256;
    std::normal_distribution<double> normal;
    Eigen::MatrixXd z0(flow_.dim, kChunk);
    for (Eigen::Index j = 0; j < kChunk; ++j)
      for (Eigen::Index i = 0; i < flow_.dim; ++i) z0(i, j) = normal(rng_);
    buffer_ = flow_forward_batch(flow_, z0).points;
    pos_ = 0;
  }

  const NormalizingFlow& flow_;
  Rng rng_;
  Eigen::MatrixXd buffer_;
  Eigen::Index pos_ = 0;
};

double distance_to_union(std::span<const double> z, const Points& data, const Points& accepted) {
  double d = std::numeric_limits<double>::infinity();
  if (!data.empty()) d = rho(z, data);
  if (!accepted.empty()) d = std::min(d, rho(z, accepted));
  return d;
}

template <class Threshold>
DesignBatch separated_select(const NormalizingFlow& flow, const Points& data, std::size_t n, const Box& box,
                             std::uint64_t seed, std::size_t cap, Threshold threshold) {
  DesignBatch batch;
  ProposalStream stream(flow, seed);
  while (batch.points.size() < n && batch.proposals < cap) {
    std::vector<double> z = stream.next();
    ++batch.proposals;
    if (!box.contains(z)) continue;
    const double eps = threshold(z);
    if (distance_to_union(z, data, batch.points) >= eps) {
      batch.points.push_back(std::move(z));
      batch.thresholds.push_back(eps);
    }
  }
  batch.shortfall = batch.points.size() < n;
  return batch;
}

}  // namespace

DesignBatch nfbd_select(const NormalizingFlow& flow, std::size_t n, const Box& box, std::uint64_t seed,
                        std::size_t proposal_cap) {
  if (n == 0) throw std::invalid_argument("design batch size must be positive");
  DesignBatch batch;
  ProposalStream stream(flow, seed);
  while (batch.points.size() < n) {
    if (batch.proposals >= proposal_cap) {
      batch.shortfall = true;
      break;
    }
    std::vector<double> z = stream.next();
    ++batch.proposals;
    if (box.contains(z)) batch.points.push_back(std::move(z));
  }
  return batch;
}

DesignBatch nfbd_fg_select(const NormalizingFlow& flow, const Points& data, std::size_t n, double eps0,
                           const Box& box, std::uint64_t seed, std::size_t proposal_cap) {
  if (n == 0) throw std::invalid_argument("design batch size must be positive");
  if (!(eps0 > 0.0)) throw std::invalid_argument("eps0 must be positive");
  return separated_select(flow, data, n, box, seed, proposal_cap, [eps0](const auto&) { return eps0; });
}

double adaptive_threshold_log(double log_pdf, double eps0, double log_beta, int d) {
  if (d < 1) throw std::invalid_argument("dimension must be positive");
  const double lo = 0.1 * eps0;
  const double hi = 10.0 * eps0;
  if (log_pdf == -std::numeric_limits<double>::infinity()) return hi;
  const double log_eps = log_beta - (2.0 / d) * log_pdf;
  if (log_eps >= std::log(hi)) return hi;
  if (log_eps <= std::log(lo)) return lo;
  return std::clamp(std::exp(log_eps), lo, hi);
}

double adaptive_threshold(double pdf, double eps0, double beta, int d) {
  if (!(pdf >= 0.0)) throw std::invalid_argument("pdf value must be non-negative");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (pdf == 0.0) return 10.0 * eps0;
  return adaptive_threshold_log(std::log(pdf), eps0, std::log(beta), d);
}

DesignBatch nfbd_ag_select(const NormalizingFlow& flow, const Points& data, std::size_t n, double eps0,
                           const LogPdf& log_pdf, const Box& box, std::uint64_t seed, std::size_t proposal_cap) {
  if (n == 0) throw std::invalid_argument("design batch size must be positive");
  if (!(eps0 > 0.0)) throw std::invalid_argument("eps0 must be positive");
  const int d = flow.dim;

  // Calibration: the sample with median p_X sits exactly at eps0.
  const Points calib = sample_flow(flow, kCalibrationSamples, derive_seed(seed, {0xca1b}));
  std::vector<double> log_p;
  log_p.reserve(calib.size());
  for (const auto& z : calib)
    if (box.contains(z)) log_p.push_back(log_pdf(z));
  if (log_p.empty())
    for (const auto& z : calib) log_p.push_back(log_pdf(z));
  auto mid = log_p.begin() + static_cast<std::ptrdiff_t>(log_p.size() / 2);
  std::nth_element(log_p.begin(), mid, log_p.end());
  const double log_median = *mid;
  const double log_beta = std::log(eps0) + (2.0 / d) * log_median;

  DesignBatch batch = separated_select(flow, data, n, box, seed, proposal_cap, [&](const std::vector<double>& z) {
    return adaptive_threshold_log(log_pdf(z), eps0, log_beta, d);
  });
  batch.log_beta = log_beta;
  return batch;
}

DesignBatch select_designs(const DesignCriterion& criterion, const NormalizingFlow& flow, const Points& data,
                           std::size_t n, const LogPdf& log_pdf, const Box& box, std::uint64_t seed) {
  criterion.validate();
  switch (criterion.tag) {
    case Criterion::Nfbd: return nfbd_select(flow, n, box, seed, criterion.proposal_cap);
    case Criterion::NfbdFg: return nfbd_fg_select(flow, data, n, criterion.eps0, box, seed, criterion.proposal_cap);
    case Criterion::NfbdAg:
      return nfbd_ag_select(flow, data, n, criterion.eps0, log_pdf, box, seed, criterion.proposal_cap);
  }
  throw std::logic_error("unhandled criterion");
}

}  // namespace dnf
