#include "commands.hpp"

#include <srr/adapter.hpp>
#include <srr/harness.hpp>
#include <srr/io.hpp>
#include <srr/reconstruct.hpp>

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace srr::cli {
namespace {

using Matrix = Eigen::MatrixXd;
using Scaling = ScalingOperator<double>;
using json = nlohmann::ordered_json;

/// Collects every flag problem so the user sees them all at once.
class Problems {
 public:
  void require(bool ok, const std::string& message) {
    if (!ok) messages_.push_back(message);
  }
  template <typename F>
  void attempt(F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      messages_.push_back(e.what());
    }
  }
  void raise() const {
    if (messages_.empty()) return;
    std::string text = "invalid configuration:";
    for (const auto& m : messages_) text += "\n  - " + m;
    throw InputError(text);
  }

 private:
  std::vector<std::string> messages_;
};

struct OutputOptions {
  std::string out;
  std::string format = "json";
  bool timing = false;

  void add_to(CLI::App* app, bool out_required = false) {
    auto* o = app->add_option("--out,-o", out, "Output path (written atomically); stdout if omitted");
    if (out_required) o->required();
    app->add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    app->add_flag("--timing", timing, "Include wall-clock runtime_ms (output no longer reproducible)");
  }
};

void emit(const OutputOptions& o, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    std::cout.flush();
  } else {
    io::atomic_write(o.out, text);
  }
}

void emit_report(const OutputOptions& o, const harness::ExperimentReport& report) {
  if (o.format == "csv")
    emit(o, io::report_csv(report, o.timing));
  else
    emit(o, io::report_json(report, o.timing).dump(2) + "\n");
}

struct QuantOptions {
  std::string family = "mxint";
  int bits = 3;
  int block = 32;

  void add_to(CLI::App* app) {
    app->add_option("--family", family, "Quantizer family")->check(CLI::IsMember({"mxint", "uniform"}));
    app->add_option("--bits", bits, "Mantissa / integer bits (2-8)");
    app->add_option("--block", block, "Block size along rows (16, 32, 64, 128)");
  }

  QuantizerConfig build(Problems& p) const {
    QuantizerConfig cfg;
    p.attempt([&] { cfg.family = parse_quant_family(family); });
    cfg.bits = bits;
    cfg.block_size = block;
    p.require(bits >= 2 && bits <= 8, "--bits must be in [2, 8]");
    p.require(block == 16 || block == 32 || block == 64 || block == 128,
              "--block must be one of 16, 32, 64, 128");
    return cfg;
  }
};

struct SynthOptions {
  int rows = 64;
  int cols = 48;
  std::string spectrum = "geometric";
  double ratio = 0.9;
  double exponent = 1.0;
  int spikes = 4;
  double spike_scale = 10.0;
  double scale = 1.0;
  double noise = 0.0;
  std::uint64_t seed = 0;

  void add_to(CLI::App* app, const std::string& prefix) {
    app->add_option(prefix + "rows", rows, "Synthetic weight rows");
    app->add_option(prefix + "cols", cols, "Synthetic weight columns");
    app->add_option(prefix + "spectrum", spectrum, "Spectrum family")
        ->check(CLI::IsMember({"geometric", "power_law", "spiked"}));
    app->add_option(prefix + "ratio", ratio, "Geometric decay ratio in (0, 1)");
    app->add_option(prefix + "exponent", exponent, "Power-law exponent (> 0)");
    app->add_option(prefix + "spikes", spikes, "Number of spikes");
    app->add_option(prefix + "spike-scale", spike_scale, "Spike height over the unit bulk (>= 1)");
    app->add_option(prefix + "scale", scale, "Multiplier on every singular value");
    app->add_option(prefix + "noise", noise, "Gaussian noise floor");
    app->add_option(prefix + "seed", seed, "Seed for singular vectors and noise");
  }

  harness::SynthSpec build(Problems& p) const {
    harness::SynthSpec spec;
    spec.rows = rows;
    spec.cols = cols;
    spec.scale = scale;
    spec.noise_floor = noise;
    spec.seed = seed;
    if (spectrum == "geometric")
      spec.spectrum = harness::Geometric{ratio};
    else if (spectrum == "power_law")
      spec.spectrum = harness::PowerLaw{exponent};
    else
      spec.spectrum = harness::Spiked{spikes, spike_scale};
    p.attempt([&] { spec.validate(); });
    return spec;
  }
};

/// A weight from --weight, or a synthetic one when no file is given.
struct WeightOptions {
  std::string path;
  SynthOptions synth;

  void add_to(CLI::App* app, bool required) {
    auto* o = app->add_option("--weight,-w", path, "SRRM weight matrix file");
    if (required) {
      o->required();
    } else {
      o->description("SRRM weight matrix file (default: synthetic from the --synth-* options)");
      synth.add_to(app, "--synth-");
    }
  }

  std::optional<harness::SynthSpec> validate(Problems& p) const {
    if (!path.empty()) return std::nullopt;
    return synth.build(p);
  }

  std::pair<Matrix, std::string> load(const std::optional<harness::SynthSpec>& spec) const {
    if (spec) return {harness::synth_weight(*spec), "synthetic"};
    return {io::read_matrix(path), std::filesystem::path(path).stem().string()};
  }
};

struct ScalingOptions {
  std::string kind = "identity";
  std::string calibration;
  std::optional<double> eps;
  std::uint64_t seed = 1;

  void add_to(CLI::App* app) {
    app->add_option("--scaling", kind, "Scaling operator kind")
        ->check(CLI::IsMember({"identity", "diagonal", "dense"}));
    app->add_option("--calibration", calibration,
                    "SRRC calibration file (default: synthetic activations)");
    app->add_option("--eps", eps, "Scaling floor / ridge (default 1e-6 * trace(C) / m)");
    app->add_option("--scaling-seed", seed, "Seed for synthetic calibration activations");
  }

  void validate(Problems& p) const {
    if (eps) p.require(*eps >= 0.0 && std::isfinite(*eps), "--eps must be finite and >= 0");
    p.require(calibration.empty() || kind != "identity",
              "--calibration has no effect with --scaling identity");
  }

  Scaling build(Eigen::Index m) const {
    const ScalingKind k = parse_scaling_kind(kind);
    if (k == ScalingKind::identity) return Scaling::identity(m);
    CalibrationStats<double> stats;
    if (!calibration.empty()) {
      stats = io::read_calibration(calibration);
      if (stats.dim != m)
        throw InputError("calibration dim " + std::to_string(stats.dim) + " != weight rows " +
                         std::to_string(m));
    } else {
      CalibrationAccumulator<double> acc(m);
      acc.add_rows(harness::synth_activations(m, std::max<Eigen::Index>(2 * m, 64), seed));
      stats = acc.finalize();
    }
    return eps ? build_scaling(stats, k, *eps) : build_scaling(stats, k);
  }
};

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

json quantizer_json(const QuantizerConfig& cfg) {
  json j;
  j["family"] = to_string(cfg.family);
  j["bits"] = cfg.bits;
  j["block_size"] = cfg.block_size;
  j["effective_bitwidth"] = effective_bitwidth(cfg);
  return j;
}

// ---------------------------------------------------------------- gen-synth

struct GenSynth {
  SynthOptions synth;
  std::string out;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("gen-synth", "Write a synthetic weight matrix with a prescribed spectrum");
    synth.add_to(sub, "--");
    sub->add_option("--out,-o", out, "Output SRRM path")->required();
    sub->callback([this] { run(); });
  }

  void run() const {
    Problems p;
    const auto spec = synth.build(p);
    p.raise();
    io::write_matrix(out, harness::synth_weight(spec));
  }
};

// ---------------------------------------------------------------- calibrate

struct Calibrate {
  std::string activations;
  int dim = 0;
  int samples = 256;
  std::uint64_t seed = 0;
  std::string out;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("calibrate", "Accumulate activation second moments into an SRRC file");
    sub->add_option("--activations", activations, "SRRM activation matrix (samples x dim)");
    sub->add_option("--dim", dim, "Synthetic activation dimension (when no --activations)");
    sub->add_option("--samples", samples, "Synthetic sample count");
    sub->add_option("--seed", seed, "Synthetic activation seed");
    sub->add_option("--out,-o", out, "Output SRRC path")->required();
    sub->callback([this] { run(); });
  }

  void run() const {
    Problems p;
    if (activations.empty()) {
      p.require(dim >= 1 && dim <= kMaxDim, "--dim must be in [1, 8192] without --activations");
      p.require(samples >= 1, "--samples must be >= 1");
    } else {
      p.require(dim == 0, "--dim conflicts with --activations");
    }
    p.raise();
    const Matrix x = activations.empty() ? harness::synth_activations(dim, samples, seed)
                                         : io::read_matrix(activations);
    CalibrationAccumulator<double> acc(x.cols());
    acc.add_rows(x);
    io::write_calibration(out, acc.finalize());
  }
};

// ---------------------------------------------------------------- decompose

struct Decompose {
  WeightOptions weight;
  ScalingOptions scaling;
  QuantOptions quant;
  OutputOptions output;
  int rank = 32;
  std::optional<int> k;
  bool automatic = false;
  bool qer = false;
  bool global = false;
  std::uint64_t seed = 0;
  std::string factors_prefix;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("decompose", "Quantize a weight with a rank-r correction (QER or SRR)");
    weight.add_to(sub, true);
    scaling.add_to(sub);
    quant.add_to(sub);
    sub->add_option("--rank,-r", rank, "Total rank budget r");
    sub->add_option("--k", k, "Preserved rank k (0 <= k <= r)");
    sub->add_flag("--auto", automatic, "Select k with the random-probe objective");
    sub->add_option("--seed", seed, "Probe seed for --auto");
    sub->add_flag("--qer", qer, "Plain QER baseline (quantize W, reconstruct its error)");
    sub->add_flag("--global", global, "Single rank-r reconstruction of W - Q after preservation");
    sub->add_option("--factors-prefix", factors_prefix,
                    "Also write <prefix>.Q.srrm, <prefix>.L.srrm, <prefix>.R.srrm");
    output.add_to(sub);
    sub->callback([this] { run(); });
  }

  void run() const {
    Problems p;
    const auto cfg = quant.build(p);
    scaling.validate(p);
    const int modes = int(k.has_value()) + int(automatic) + int(qer);
    p.require(modes == 1, "exactly one of --k, --auto, --qer is required");
    p.require(!(qer && global), "--global cannot be combined with --qer");
    p.require(rank >= 0, "--rank must be >= 0");
    if (k) p.require(*k >= 0, "--k must be >= 0");
    p.raise();

    const auto t0 = std::chrono::steady_clock::now();
    const Matrix w = io::read_matrix(weight.path);
    const Scaling s = scaling.build(w.rows());
    SrrDecomposition<double> dec;
    std::string method;
    if (qer) {
      dec = qer_pipeline(w, s, cfg, Eigen::Index(rank));
      method = "qer";
    } else {
      const SplitRank split = automatic ? SplitRank(AutoSplit{seed}) : SplitRank(Eigen::Index(*k));
      dec = global ? srr_global_recon(w, s, cfg, rank, split) : srr_decompose(w, s, cfg, rank, split);
      method = global ? "srr_global" : "srr_split";
    }
    const double ms = ms_since(t0);
    const double base = s.apply(w, Direction::forward).norm();
    const double rel = base > 0 ? dec.scaled_error / base : 0.0;

    if (!factors_prefix.empty()) {
      io::write_matrix(factors_prefix + ".Q.srrm", dec.Q.values);
      io::write_matrix(factors_prefix + ".L.srrm", dec.L);
      io::write_matrix(factors_prefix + ".R.srrm", dec.R);
    }

    if (output.format == "csv") {
      std::string text = "method,rows,cols,scaling,rank,k,k_star,scaled_error,relative_scaled_error,"
                         "effective_bitwidth";
      if (output.timing) text += ",runtime_ms";
      text += '\n';
      text += method + ',' + std::to_string(w.rows()) + ',' + std::to_string(w.cols()) + ',' +
              std::string(to_string(s.kind())) + ',' + std::to_string(rank) + ',' +
              std::to_string(dec.k) + ',' +
              std::to_string(dec.selection ? dec.selection->k_star : -1) + ',' +
              io::format_double(dec.scaled_error) + ',' + io::format_double(rel) + ',' +
              io::format_double(effective_bitwidth(cfg));
      if (output.timing) text += ',' + io::format_double(ms);
      emit(output, text + '\n');
      return;
    }
    json j;
    j["command"] = "decompose";
    j["method"] = method;
    j["rows"] = w.rows();
    j["cols"] = w.cols();
    j["quantizer"] = quantizer_json(cfg);
    j["scaling"] = to_string(s.kind());
    j["rank"] = rank;
    j["k"] = dec.k;
    j["scaled_error"] = dec.scaled_error;
    j["relative_scaled_error"] = rel;
    if (dec.selection) {
      json sel;
      sel["k_star"] = dec.selection->k_star;
      sel["probe_seed"] = dec.selection->probe_seed;
      sel["objective_curve"] = dec.selection->objective_curve;
      j["selection"] = std::move(sel);
    }
    if (output.timing) j["runtime_ms"] = ms;
    emit(output, j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------- sweep

struct Sweep {
  WeightOptions weight;
  ScalingOptions scaling;
  QuantOptions quant;
  OutputOptions output;
  int rank = 16;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("sweep", "True loss and selection objective for every k in 0..r");
    weight.add_to(sub, false);
    scaling.add_to(sub);
    quant.add_to(sub);
    sub->add_option("--rank,-r", rank, "Total rank budget r");
    sub->add_option("--seed", seed, "Probe seed");
    output.add_to(sub);
    sub->callback([this] { run(); });
  }

  void run() const {
    Problems p;
    const auto cfg = quant.build(p);
    scaling.validate(p);
    const auto spec = weight.validate(p);
    p.require(rank >= 0, "--rank must be >= 0");
    p.raise();
    const auto [w, name] = weight.load(spec);
    const Scaling s = scaling.build(w.rows());
    const auto res = harness::run_sweep(w, s, cfg, rank, seed, name,
                                        spec ? harness::spectrum_name(spec->spectrum) : "file");
    emit_report(output, res.report);
  }
};

// ---------------------------------------------------------------- compare

struct Compare {
  QuantOptions quant;
  OutputOptions output;
  int instances = 20;
  std::vector<std::string> shapes{"64x48", "256x256", "512x512"};
  std::vector<std::string> families{"geometric", "power_law", "spiked"};
  std::uint64_t ensemble_seed = 2024;
  int rank = 16;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("compare", "QER vs SRR (split, global) vs oracle on a synthetic ensemble");
    quant.add_to(sub);
    sub->add_option("--instances", instances, "Instances per (shape, family) cell");
    sub->add_option("--shapes", shapes, "Shapes as ROWSxCOLS")->delimiter(',');
    sub->add_option("--families", families, "Spectrum families")
        ->delimiter(',')
        ->check(CLI::IsMember({"geometric", "power_law", "spiked"}));
    sub->add_option("--ensemble-seed", ensemble_seed, "Ensemble generation seed");
    sub->add_option("--rank,-r", rank, "Total rank budget r");
    sub->add_option("--seed", seed, "Probe seed");
    output.add_to(sub);
    sub->callback([this] { run(); });
  }

  void run() const {
    Problems p;
    const auto cfg = quant.build(p);
    p.require(instances >= 1, "--instances must be >= 1");
    p.require(rank >= 0, "--rank must be >= 0");
    harness::EnsembleOptions opt;
    opt.instances_per_cell = instances;
    opt.families = families;
    opt.seed = ensemble_seed;
    opt.shapes.clear();
    for (const auto& sh : shapes) {
      const auto x = sh.find('x');
      Eigen::Index r = 0, c = 0;
      p.attempt([&] {
        const std::string bad = "shape '" + sh + "' is not a valid ROWSxCOLS";
        if (x == std::string::npos) throw InputError(bad);
        std::size_t used_r = 0, used_c = 0;
        try {
          r = std::stol(sh.substr(0, x), &used_r);
          c = std::stol(sh.substr(x + 1), &used_c);
        } catch (const std::logic_error&) {
          throw InputError(bad);
        }
        if (used_r != x || used_c != sh.size() - x - 1 || r < 1 || c < 1 || r > kMaxDim ||
            c > kMaxDim) {
          r = c = 0;
          throw InputError(bad);
        }
      });
      if (r > 0 && c > 0) {
        p.require(rank <= std::min(r, c), "--rank exceeds min(rows, cols) for shape " + sh);
        opt.shapes.emplace_back(r, c);
      }
    }
    p.raise();
    const auto report =
        harness::compare_methods(harness::to_compare_inputs(harness::default_ensemble(opt)), cfg,
                                 rank, seed);
    emit_report(output, report);
  }
};

// ---------------------------------------------------------------- stability

struct Stability {
  WeightOptions weight;
  ScalingOptions scaling;
  OutputOptions output;
  int rank = 64;
  int seeds = 10;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("stability", "Spread of the selected k across probe seeds");
    weight.add_to(sub, false);
    scaling.add_to(sub);
    sub->add_option("--rank,-r", rank, "Total rank budget r");
    sub->add_option("--seeds", seeds, "Number of consecutive probe seeds");
    sub->add_option("--seed", seed, "First probe seed");
    output.add_to(sub);
    sub->callback([this] { run(); });
  }

  void run() const {
    Problems p;
    scaling.validate(p);
    const auto spec = weight.validate(p);
    p.require(rank >= 0, "--rank must be >= 0");
    p.require(seeds >= 1, "--seeds must be >= 1");
    p.raise();
    const auto [w, name] = weight.load(spec);
    const Scaling s = scaling.build(w.rows());
    emit_report(output, harness::probe_stability_study(w, s, rank, seeds, seed, name));
  }
};

// ---------------------------------------------------------------- finetune-toy

struct FinetuneToy {
  WeightOptions weight;
  ScalingOptions scaling;
  QuantOptions quant;
  OutputOptions output;
  int rank = 16;
  std::optional<int> k;
  std::string rule = "fixed";
  double gamma = kDefaultGamma;
  double alpha = kDefaultSgpAlpha;
  int refresh = 1;
  int samples = 128;
  int steps = 100;
  double lr = 1e-2;
  double target_noise = 0.05;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("finetune-toy", "Gradient descent on a split adapter against a synthetic target");
    weight.add_to(sub, false);
    scaling.add_to(sub);
    quant.add_to(sub);
    sub->add_option("--rank,-r", rank, "Total rank budget r");
    sub->add_option("--k", k, "Preserved rank (default: probe-selected)");
    sub->add_option("--rule", rule, "Gradient scaling rule")->check(CLI::IsMember({"none", "fixed", "sgp"}));
    sub->add_option("--gamma", gamma, "Fixed scaling factor in [0, 1]");
    sub->add_option("--alpha", alpha, "SGP alpha (>= 0)");
    sub->add_option("--refresh", refresh, "Steps between SGP basis refreshes");
    sub->add_option("--samples", samples, "Training rows");
    sub->add_option("--steps", steps, "Gradient steps");
    sub->add_option("--lr", lr, "Learning rate (> 0)");
    sub->add_option("--target-noise", target_noise, "Noise added to the target X W");
    sub->add_option("--seed", seed, "Data and probe seed");
    output.add_to(sub);
    sub->callback([this] { run(); });
  }

  void run() const {
    Problems p;
    const auto cfg = quant.build(p);
    scaling.validate(p);
    const auto spec = weight.validate(p);
    p.require(rank >= 0, "--rank must be >= 0");
    if (k) p.require(*k >= 0 && *k <= rank, "--k must be in [0, rank]");
    p.require(gamma >= 0.0 && gamma <= 1.0, "--gamma must be in [0, 1]");
    p.require(alpha >= 0.0, "--alpha must be >= 0");
    p.require(refresh >= 1, "--refresh must be >= 1");
    p.require(samples >= 1, "--samples must be >= 1");
    p.require(steps >= 1, "--steps must be >= 1");
    p.require(target_noise >= 0.0, "--target-noise must be >= 0");
    p.raise();

    const auto [w, name] = weight.load(spec);
    const Scaling s = scaling.build(w.rows());
    const SplitRank split = k ? SplitRank(Eigen::Index(*k)) : SplitRank(AutoSplit{seed});
    const auto dec = srr_decompose(w, s, cfg, rank, split);
    ScalingRule r = NoScaling{};
    if (rule == "fixed") r = FixedScaling{gamma};
    if (rule == "sgp") r = SgpScaling{alpha, refresh};
    auto adapter = adapter_init(dec, r);

    Rng rng(seed);
    const Matrix x = gaussian_matrix<double>(samples, w.rows(), rng);
    const Matrix y = x * w + target_noise * gaussian_matrix<double>(samples, w.cols(), rng);
    const auto losses = toy_finetune(adapter, dec.Q, x, y, steps, lr);

    if (output.format == "csv") {
      std::string text = "step,loss\n";
      for (std::size_t i = 0; i < losses.size(); ++i)
        text += std::to_string(i) + ',' + io::format_double(losses[i]) + '\n';
      emit(output, text);
      return;
    }
    json j;
    j["command"] = "finetune-toy";
    j["instance"] = name;
    j["rule"] = rule;
    j["k"] = dec.k;
    j["rank"] = rank;
    j["lr"] = lr;
    j["losses"] = losses;
    emit(output, j.dump(2) + "\n");
  }
};

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Quantization with structured residual reconstruction (W ~= Q + L R)", "srr"};
  app.set_config("--config", "", "TOML/INI file of option defaults; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  GenSynth gen;
  Calibrate cal;
  Decompose dec;
  Sweep sweep;
  Compare compare;
  Stability stability;
  FinetuneToy finetune;
  gen.attach(app);
  cal.attach(app);
  dec.attach(app);
  sweep.attach(app);
  compare.attach(app);
  stability.attach(app);
  finetune.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  } catch (const InputError& e) {
    std::cerr << "srr: input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DomainError& e) {
    std::cerr << "srr: numeric error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const IoError& e) {
    std::cerr << "srr: i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "srr: error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitOk;
}

}  // namespace srr::cli
