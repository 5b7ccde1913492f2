#include <srr/harness.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace srr::harness {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

ReportRow make_row(const std::string& instance, const std::string& ensemble,
                   const std::string& method, Eigen::Index k, double err, Eigen::Index k_star,
                   std::uint64_t seed, double ms) {
  ReportRow row;
  row.instance = instance;
  row.ensemble = ensemble;
  row.method = method;
  row.k = k;
  row.scaled_error = err;
  row.k_star = k_star;
  row.seed = seed;
  row.runtime_ms = ms;
  return row;
}

}  // namespace

std::string spectrum_name(const Spectrum& s) {
  if (std::holds_alternative<Geometric>(s)) return "geometric";
  if (std::holds_alternative<PowerLaw>(s)) return "power_law";
  return "spiked";
}

void SynthSpec::validate() const {
  if (rows < 1 || cols < 1 || rows > kMaxDim || cols > kMaxDim)
    throw DomainError("synthetic shape out of range");
  if (!(noise_floor >= 0.0)) throw DomainError("noise floor must be >= 0");
  if (!(scale > 0.0)) throw DomainError("spectrum scale must be > 0");
  if (const auto* g = std::get_if<Geometric>(&spectrum)) {
    if (!(g->ratio > 0.0 && g->ratio < 1.0)) throw DomainError("geometric ratio must be in (0, 1)");
  } else if (const auto* p = std::get_if<PowerLaw>(&spectrum)) {
    if (!(p->exponent > 0.0)) throw DomainError("power-law exponent must be > 0");
  } else {
    const auto& sp = std::get<Spiked>(spectrum);
    if (sp.n_spikes < 0) throw DomainError("spike count must be >= 0");
    if (!(sp.spike_scale >= 1.0)) throw DomainError("spike scale must be >= 1");
  }
}

Eigen::VectorXd prescribed_spectrum(const SynthSpec& spec) {
  spec.validate();
  const Eigen::Index p = std::min(spec.rows, spec.cols);
  Eigen::VectorXd sigma(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double idx = static_cast<double>(j);
    if (const auto* g = std::get_if<Geometric>(&spec.spectrum)) {
      sigma(j) = std::pow(g->ratio, idx);
    } else if (const auto* pl = std::get_if<PowerLaw>(&spec.spectrum)) {
      sigma(j) = std::pow(idx + 1.0, -pl->exponent);
    } else {
      const auto& sp = std::get<Spiked>(spec.spectrum);
      sigma(j) = j < sp.n_spikes ? sp.spike_scale : 1.0;
    }
  }
  return spec.scale * sigma;
}

Matrix synth_weight(const SynthSpec& spec) {
  const Eigen::VectorXd sigma = prescribed_spectrum(spec);
  const Eigen::Index p = sigma.size();
  Rng rng(spec.seed);
  const Matrix u = random_orthonormal<double>(spec.rows, p, rng);
  const Matrix v = random_orthonormal<double>(spec.cols, p, rng);
  Matrix w = u * sigma.asDiagonal() * v.transpose();
  if (spec.noise_floor > 0.0) w += spec.noise_floor * gaussian_matrix<double>(spec.rows, spec.cols, rng);
  return w;
}

Matrix synth_activations(Eigen::Index dim, Eigen::Index samples, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::VectorXd feature_scale(dim);
  for (Eigen::Index i = 0; i < dim; ++i) feature_scale(i) = std::exp(unit(rng));
  const Matrix g = gaussian_matrix<double>(samples, dim, rng);
  const Matrix shared = gaussian_matrix<double>(samples, 1, rng);
  const Matrix dir = gaussian_matrix<double>(1, dim, rng);
  return g * feature_scale.asDiagonal() + 0.5 * shared * dir;
}

Scaling synth_scaling(Eigen::Index dim, ScalingKind kind, std::uint64_t seed) {
  if (kind == ScalingKind::identity) return Scaling::identity(dim);
  CalibrationAccumulator<double> acc(dim);
  acc.add_rows(synth_activations(dim, std::max<Eigen::Index>(2 * dim, 64), seed));
  return build_scaling(acc.finalize(), kind);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DomainError("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

SweepResult run_sweep(const Matrix& w, const Scaling& s, const QuantizerConfig& config,
                      Eigen::Index r, std::uint64_t probe_seed, const std::string& instance,
                      const std::string& ensemble) {
  const auto t0 = std::chrono::steady_clock::now();
  SweepResult out;
  out.oracle = oracle_best_split(w, s, config, r);
  out.selection = detail::auto_select<double>(w, s, r, probe_seed, nullptr);
  out.rank_correlation = spearman(out.oracle.loss_curve, out.selection.objective_curve);
  const double ms = elapsed_ms(t0);

  out.report.kind = "sweep";
  for (Eigen::Index k = 0; k <= r; ++k) {
    auto row = make_row(instance, ensemble, "sweep", k, out.oracle.loss_curve[k],
                        out.selection.k_star, probe_seed, ms);
    row.surrogate = out.selection.objective_curve[k];
    row.has_surrogate = true;
    out.report.rows.push_back(std::move(row));
  }
  const double best = out.oracle.loss_curve[out.oracle.k_opt];
  auto& agg = out.report.aggregates;
  agg["k_star"] = static_cast<double>(out.selection.k_star);
  agg["k_opt"] = static_cast<double>(out.oracle.k_opt);
  agg["rank_correlation"] = out.rank_correlation;
  agg["loss_at_k_star_over_min"] =
      best > 0.0 ? out.oracle.loss_curve[out.selection.k_star] / best : 1.0;
  agg["loss_at_k0_over_min"] = best > 0.0 ? out.oracle.loss_curve[0] / best : 1.0;
  return out;
}

std::map<std::string, double> compare_aggregates(const std::vector<ReportRow>& rows,
                                                 double oracle_factor) {
  struct Entry {
    std::string ensemble;
    double qer = NAN, split = NAN, global = NAN, oracle = NAN;
  };
  std::vector<std::string> order;
  std::map<std::string, Entry> by_instance;
  for (const auto& row : rows) {
    auto [it, inserted] = by_instance.try_emplace(row.instance);
    if (inserted) order.push_back(row.instance);
    it->second.ensemble = row.ensemble;
    if (row.method == "qer") it->second.qer = row.scaled_error;
    if (row.method == "srr_split") it->second.split = row.scaled_error;
    if (row.method == "srr_global") it->second.global = row.scaled_error;
    if (row.method == "oracle") it->second.oracle = row.scaled_error;
  }

  struct Acc {
    double n = 0, split_wins = 0, global_wins = 0, within = 0, within_global = 0;
    double oracle_violations = 0, global_violations = 0;
    std::vector<double> red_split, red_global;
    double sum_qer = 0, sum_split = 0, sum_global = 0, sum_oracle = 0;
  };
  std::map<std::string, Acc> groups;
  for (const auto& id : order) {
    const Entry& e = by_instance[id];
    for (const std::string key : {std::string("all"), e.ensemble}) {
      Acc& a = groups[key];
      a.n += 1;
      a.sum_qer += e.qer;
      a.sum_split += e.split;
      a.sum_global += e.global;
      a.sum_oracle += e.oracle;
      a.split_wins += e.split < e.qer;
      a.global_wins += e.global < e.qer;
      a.within += e.split <= oracle_factor * e.oracle;
      a.within_global += e.global <= oracle_factor * e.oracle;
      a.oracle_violations += e.oracle > e.qer;
      a.global_violations += e.global > e.split;
      if (e.qer > 0) {
        a.red_split.push_back(1.0 - e.split / e.qer);
        a.red_global.push_back(1.0 - e.global / e.qer);
      }
    }
  }

  std::map<std::string, double> agg;
  for (const auto& [name, a] : groups) {
    const std::string p = name == "all" ? "" : name + ".";
    agg[p + "instances"] = a.n;
    agg[p + "mean_error_qer"] = a.sum_qer / a.n;
    agg[p + "mean_error_srr_split"] = a.sum_split / a.n;
    agg[p + "mean_error_srr_global"] = a.sum_global / a.n;
    agg[p + "mean_error_oracle"] = a.sum_oracle / a.n;
    agg[p + "win_rate_split_vs_qer"] = a.split_wins / a.n;
    agg[p + "win_rate_global_vs_qer"] = a.global_wins / a.n;
    agg[p + "within_oracle_factor_rate_split"] = a.within / a.n;
    agg[p + "within_oracle_factor_rate_global"] = a.within_global / a.n;
    agg[p + "oracle_above_qer_count"] = a.oracle_violations;
    agg[p + "global_above_split_count"] = a.global_violations;
    for (const auto& [label, v] : {std::pair{"split", &a.red_split}, std::pair{"global", &a.red_global}}) {
      const double n = static_cast<double>(v->size());
      if (n == 0) continue;
      const double mean = std::accumulate(v->begin(), v->end(), 0.0) / n;
      double var = 0.0;
      for (double x : *v) var += (x - mean) * (x - mean);
      const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
      agg[p + "mean_reduction_" + label] = mean;
      agg[p + "std_reduction_" + label] = sd;
      agg[p + "ci95_reduction_" + label] = 1.96 * sd / std::sqrt(n);
    }
  }
  agg["oracle_factor"] = oracle_factor;
  return agg;
}

ExperimentReport compare_methods(const std::vector<CompareInput>& instances,
                                 const QuantizerConfig& config, Eigen::Index r,
                                 std::uint64_t probe_seed) {
  config.validate();
  ProbeCache<double> cache;
  std::vector<std::vector<ReportRow>> per_instance(instances.size());
  parallel_for(instances.size(), [&](std::size_t i) {
    const auto& inst = instances[i];
    const auto [w, s] = inst.make();
    std::vector<ReportRow>& out = per_instance[i];

    auto t = std::chrono::steady_clock::now();
    const auto qer = qer_pipeline(w, s, config, r);
    out.push_back(make_row(inst.id, inst.ensemble, "qer", 0, qer.scaled_error, -1, probe_seed,
                           elapsed_ms(t)));

    t = std::chrono::steady_clock::now();
    const auto split = srr_decompose(w, s, config, r, AutoSplit{probe_seed}, &cache);
    out.push_back(make_row(inst.id, inst.ensemble, "srr_split", split.k, split.scaled_error,
                           split.selection->k_star, probe_seed, elapsed_ms(t)));

    t = std::chrono::steady_clock::now();
    const auto global = srr_global_recon(w, s, config, r, AutoSplit{probe_seed}, &cache);
    out.push_back(make_row(inst.id, inst.ensemble, "srr_global", global.k, global.scaled_error,
                           global.selection->k_star, probe_seed, elapsed_ms(t)));

    t = std::chrono::steady_clock::now();
    const auto oracle = oracle_best_split(w, s, config, r);
    out.push_back(make_row(inst.id, inst.ensemble, "oracle", oracle.k_opt,
                           oracle.loss_curve[oracle.k_opt], split.selection->k_star, probe_seed,
                           elapsed_ms(t)));
  });

  ExperimentReport report;
  report.kind = "compare";
  for (auto& rows : per_instance)
    for (auto& row : rows) report.rows.push_back(std::move(row));
  report.aggregates = compare_aggregates(report.rows, kOracleFactor);
  return report;
}

ExperimentReport probe_stability_study(const Matrix& w, const Scaling& s, Eigen::Index r,
                                       int n_seeds, std::uint64_t base_seed,
                                       const std::string& instance) {
  if (n_seeds < 1) throw DomainError("stability study needs at least one seed");
  if (s.dim() != w.rows()) throw DomainError("scaling dim does not match weight rows");
  const auto weight = selection_profile<double>(s.apply(w, Direction::forward), r, base_seed + 2);
  ExperimentReport report;
  report.kind = "stability";
  std::vector<Eigen::Index> ks;
  for (int i = 0; i < n_seeds; ++i) {
    const auto t = std::chrono::steady_clock::now();
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    const auto sel = select_k(weight, probe_profile(s, w.rows(), w.cols(), seed, r), r, seed);
    ks.push_back(sel.k_star);
    report.rows.push_back(make_row(instance, "", "probe", sel.k_star, NAN, sel.k_star, seed,
                                   elapsed_ms(t)));
  }
  double sum_abs = 0.0, pairs = 0.0, mean_k = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    mean_k += static_cast<double>(ks[i]);
    for (std::size_t j = i + 1; j < ks.size(); ++j) {
      sum_abs += static_cast<double>(std::abs(ks[i] - ks[j]));
      pairs += 1.0;
    }
  }
  const auto [lo, hi] = std::minmax_element(ks.begin(), ks.end());
  report.aggregates["mean_k_star"] = mean_k / static_cast<double>(ks.size());
  report.aggregates["mean_abs_delta"] = pairs > 0 ? sum_abs / pairs : 0.0;
  report.aggregates["max_spread"] = static_cast<double>(*hi - *lo);
  report.aggregates["seeds"] = static_cast<double>(n_seeds);
  return report;
}

std::vector<EnsembleMember> default_ensemble(const EnsembleOptions& options) {
  std::vector<EnsembleMember> out;
  Rng rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const ScalingKind kinds[] = {ScalingKind::identity, ScalingKind::diagonal, ScalingKind::dense};
  for (const auto& [rows, cols] : options.shapes) {
    for (const auto& family : options.families) {
      for (int i = 0; i < options.instances_per_cell; ++i) {
        EnsembleMember m;
        m.ensemble = family + "-" + std::to_string(rows) + "x" + std::to_string(cols);
        m.id = m.ensemble + "-" + std::to_string(i);
        m.spec.rows = rows;
        m.spec.cols = cols;
        m.spec.seed = rng();
        const double u = unit(rng);
        if (family == "geometric") {
          m.spec.spectrum = Geometric{0.88 + 0.11 * u};
        } else if (family == "power_law") {
          m.spec.spectrum = PowerLaw{0.5 + u};
        } else if (family == "spiked") {
          m.spec.spectrum = Spiked{1 + static_cast<int>(8 * u) % 8, 5.0 + 45.0 * unit(rng)};
        } else {
          throw InputError("unknown spectrum family '" + family + "'");
        }
        m.spec.noise_floor = 0.02 / std::sqrt(static_cast<double>(std::max(rows, cols)));
        m.scaling = kinds[i % 3];
        m.scaling_seed = rng();
        out.push_back(std::move(m));
      }
    }
  }
  return out;
}

std::vector<CompareInput> to_compare_inputs(const std::vector<EnsembleMember>& members) {
  std::vector<CompareInput> out;
  out.reserve(members.size());
  for (const auto& m : members) {
    out.push_back({m.id, m.ensemble, [m] {
                     return std::pair<Matrix, Scaling>(synth_weight(m.spec),
                                                       synth_scaling(m.spec.rows, m.scaling,
                                                                     m.scaling_seed));
                   }});
  }
  return out;
}

unsigned worker_count() {
  if (const char* env = std::getenv("SRR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace srr::harness
