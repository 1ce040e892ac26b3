#pragma once

// Batch design selection from flow samples: NFBD, NFBD-FG, NFBD-AG.

#include "dnf/box.hpp"
#include "dnf/flow.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dnf {

enum class Criterion { Nfbd, NfbdFg, NfbdAg };

std::string to_string(Criterion c);
/// Accepts "nfbd", "nfbd-fg", "nfbd-ag" (case-insensitive).
Criterion parse_criterion(const std::string& s);

constexpr std::size_t kDefaultProposalCap = 10000;
constexpr std::size_t kCalibrationSamples = 1024;

struct DesignCriterion {
  Criterion tag = Criterion::NfbdAg;
  double eps0 = 0.5;
  std::size_t proposal_cap = kDefaultProposalCap;

  void validate() const;
};

struct DesignBatch {
  std::vector<std::vector<double>> points;
  std::size_t proposals = 0;       // flow draws consumed, including rejected and out-of-box ones
  std::vector<double> thresholds;  // separation threshold each accepted point had to meet (FG, AG)
  bool shortfall = false;
  double log_beta = 0.0;  // AG only
};

using Points = std::vector<std::vector<double>>;

/// min_i ||z - x_i||_inf. Throws std::invalid_argument on empty data.
double rho(std::span<const double> z, const Points& data);

/// First n in-box flow samples; a short batch with `shortfall` set if the cap runs out first.
DesignBatch nfbd_select(const NormalizingFlow& flow, std::size_t n, const Box& box, std::uint64_t seed,
                        std::size_t proposal_cap = kDefaultProposalCap);

/// Accepts a proposal when its L-inf distance to the data and the points
/// already accepted in this batch is at least eps0.
DesignBatch nfbd_fg_select(const NormalizingFlow& flow, const Points& data, std::size_t n, double eps0,
                           const Box& box, std::uint64_t seed, std::size_t proposal_cap = kDefaultProposalCap);

/// clamp(beta * pdf^(-2/d), 0.1 eps0, 10 eps0); 10 eps0 when pdf is zero.
double adaptive_threshold(double pdf, double eps0, double beta, int d);
/// Same rule with log pdf and log beta, safe for densities far below DBL_MIN.
double adaptive_threshold_log(double log_pdf, double eps0, double log_beta, int d);

using LogPdf = std::function<double(std::span<const double>)>;

/// beta is set so that the median-density calibration sample gets exactly eps0.
DesignBatch nfbd_ag_select(const NormalizingFlow& flow, const Points& data, std::size_t n, double eps0,
                           const LogPdf& log_pdf, const Box& box, std::uint64_t seed,
                           std::size_t proposal_cap = kDefaultProposalCap);

DesignBatch select_designs(const DesignCriterion& criterion, const NormalizingFlow& flow, const Points& data,
                           std::size_t n, const LogPdf& log_pdf, const Box& box, std::uint64_t seed);

}  // namespace dnf
