#pragma once

// Desk-scale experiment driver: synthetic weights with controlled spectra,
// k-sweeps, method comparisons and probe-seed stability studies.

#include <srr/linalg.hpp>
#include <srr/quant.hpp>
#include <srr/reconstruct.hpp>
#include <srr/scaling.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace srr::harness {

using Matrix = MatrixX<double>;
using Scaling = ScalingOperator<double>;

struct Geometric {
  double ratio = 0.9;
};
struct PowerLaw {
  double exponent = 1.0;
};
/// n_spikes leading values equal to spike_scale over a flat unit bulk.
struct Spiked {
  int n_spikes = 4;
  double spike_scale = 10.0;
};
using Spectrum = std::variant<Geometric, PowerLaw, Spiked>;

std::string spectrum_name(const Spectrum& s);

struct SynthSpec {
  Eigen::Index rows = 64;
  Eigen::Index cols = 48;
  Spectrum spectrum = Geometric{};
  double scale = 1.0;  // multiplies every prescribed singular value
  double noise_floor = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Prescribed singular values (length min(rows, cols)).
Eigen::VectorXd prescribed_spectrum(const SynthSpec& spec);

/// W = U diag(sigma) V^T + noise_floor G, U and V Haar-random.
Matrix synth_weight(const SynthSpec& spec);

/// Seeded synthetic calibration activations (samples x dim) with unequal
/// per-feature scales and a shared correlated component.
Matrix synth_activations(Eigen::Index dim, Eigen::Index samples, std::uint64_t seed);

/// Scaling operator of the given kind built from synth_activations.
Scaling synth_scaling(Eigen::Index dim, ScalingKind kind, std::uint64_t seed);

struct ReportRow {
  std::string instance;
  std::string ensemble;
  std::string method;
  Eigen::Index k = 0;
  double scaled_error = 0.0;
  double surrogate = 0.0;
  bool has_surrogate = false;
  Eigen::Index k_star = -1;
  std::uint64_t seed = 0;
  double runtime_ms = 0.0;
};

struct ExperimentReport {
  std::string kind;
  std::vector<ReportRow> rows;
  std::map<std::string, double> aggregates;
};

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct SweepResult {
  ExperimentReport report;
  OracleSplit<double> oracle;
  SplitSelection<double> selection;
  double rank_correlation = 0.0;
};

/// True loss and surrogate objective for every k in 0..r.
SweepResult run_sweep(const Matrix& w, const Scaling& s, const QuantizerConfig& config,
                      Eigen::Index r, std::uint64_t probe_seed,
                      const std::string& instance = "sweep", const std::string& ensemble = "");

struct CompareInput {
  std::string id;
  std::string ensemble;
  std::function<std::pair<Matrix, Scaling>()> make;  // built lazily inside the worker
};

/// Per instance: qer, srr_split (auto k), srr_global (auto k) and oracle rows.
ExperimentReport compare_methods(const std::vector<CompareInput>& instances,
                                 const QuantizerConfig& config, Eigen::Index r,
                                 std::uint64_t probe_seed);

/// Win rates, mean reduction vs QER and oracle-ratio statistics, from rows only.
std::map<std::string, double> compare_aggregates(const std::vector<ReportRow>& rows,
                                                 double oracle_factor);

/// Oracle factor used by the comparison aggregates (SRR within this multiple of the oracle).
inline constexpr double kOracleFactor = 1.2;

/// k* for n_seeds consecutive probe seeds starting at base_seed.
ExperimentReport probe_stability_study(const Matrix& w, const Scaling& s, Eigen::Index r,
                                       int n_seeds, std::uint64_t base_seed,
                                       const std::string& instance = "stability");

struct EnsembleOptions {
  int instances_per_cell = 20;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes{{64, 48}, {256, 256}, {512, 512}};
  std::vector<std::string> families{"geometric", "power_law", "spiked"};
  std::uint64_t seed = 2024;
};

struct EnsembleMember {
  std::string id;
  std::string ensemble;  // "<family>-<rows>x<cols>"
  SynthSpec spec;
  ScalingKind scaling = ScalingKind::identity;
  std::uint64_t scaling_seed = 0;
};

/// Deterministic ensemble; spectrum parameters and scaling kinds vary per member.
std::vector<EnsembleMember> default_ensemble(const EnsembleOptions& options = {});

std::vector<CompareInput> to_compare_inputs(const std::vector<EnsembleMember>& members);

/// Worker count: SRR_THREADS if set, else hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, n) on worker_count() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace srr::harness
