#include "stochbt/pipeline.hpp"

#include "stochbt/diagnostics.hpp"
#include "stochbt/error_bounds.hpp"
#include "stochbt/io.hpp"
#include "stochbt/lyapunov.hpp"
#include "stochbt/simulate.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

namespace stochbt {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UnsupportedError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  return 1;
}

StageError::StageError(std::string stage, const std::string& message, std::string hint, int exit_code)
    : Error("stage '" + stage + "' failed: " + message + (hint.empty() ? "" : "\n  hint: " + hint)),
      stage_(std::move(stage)),
      hint_(std::move(hint)),
      exit_code_(exit_code) {}

namespace {

std::string hint_for(const std::exception& e) {
  if (dynamic_cast<const StabilityError*>(&e))
    return "the shifted system is not mean-square stable; lower [gramians] c1 or check the model";
  if (dynamic_cast<const ConditioningError*>(&e))
    return "a Gramian is too ill-conditioned; inspect the model or relax [balancing] cond_max";
  if (dynamic_cast<const NumericalError*>(&e))
    return "raise [gramians] max_iter or loosen the tolerances";
  if (dynamic_cast<const DivergenceError*>(&e))
    return "paths left the blow-up ball; reduce [simulation] dt or check stability";
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UnsupportedError*>(&e))
    return "fix the configuration value named above";
  return "";
}

}  // namespace

void run_stage(const std::string& name, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what(), hint_for(e), exit_code_for(e));
  }
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("OpenSSL: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("OpenSSL: SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

ArtifactWriter::ArtifactWriter(std::string directory) : dir_(std::move(directory)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) throw ConfigError("cannot create output directory " + dir_);
}

void ArtifactWriter::write(const std::string& name, const std::string& content) {
  io::write_text((fs::path(dir_) / name).string(), content);
  Artifact a{name, sha256_hex(content), static_cast<std::uintmax_t>(content.size())};
  for (Artifact& existing : files_)
    if (existing.path == name) {
      existing = a;
      return;
    }
  files_.push_back(std::move(a));
}

void ArtifactWriter::write_manifest() {
  json files = json::array();
  for (const Artifact& a : files_) files.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  json doc{{"files", files}};
  io::write_text((fs::path(dir_) / "manifest.json").string(), doc.dump(2) + "\n");
}

namespace {

void log(PipelineContext& ctx, const std::string& msg) {
  if (ctx.log) ctx.log(msg);
}

std::string matrix_csv(const Matrix& M) {
  std::ostringstream os;
  io::write_matrix_csv(os, M);
  return os.str();
}

// non-finite values are not valid JSON numbers
json num(double v) {
  if (std::isfinite(v)) return v;
  return io::num(v);
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

const StochasticSystem& ensure_system(PipelineContext& ctx) {
  if (!ctx.cache.system) run_stage("model", [&] { ctx.cache.system.emplace(ctx.config.build_system()); });
  return *ctx.cache.system;
}

const GramianComputation& ensure_gramians(PipelineContext& ctx) {
  const StochasticSystem& sys = ensure_system(ctx);
  if (!ctx.cache.gramians) {
    run_stage("gramians", [&] {
      log(ctx, "computing Gramians (c1 = " + io::num(ctx.config.c1()) + ", c2 = " + io::num(ctx.config.c2()) + ")");
      ctx.cache.gramians.emplace(compute_gramians(sys, ctx.config.c1(), ctx.config.c2(), ctx.config.gramian_options()));
    });
  }
  return *ctx.cache.gramians;
}

const BalancedRealization& ensure_balanced(PipelineContext& ctx) {
  const GramianComputation& g = ensure_gramians(ctx);
  if (!ctx.cache.balanced) {
    run_stage("balance", [&] {
      ctx.cache.balanced.emplace(balance(*ctx.cache.system, g.pair.P, g.pair.Q, ctx.config.balancing_options()));
      for (const auto& w : ctx.cache.balanced->warnings) log(ctx, "warning: " + w);
    });
  }
  return *ctx.cache.balanced;
}

void write_config(PipelineContext& ctx) { ctx.out.write("config.ini", ctx.config.to_ini()); }

}  // namespace

void stage_stability_check(PipelineContext& ctx) {
  const StochasticSystem& sys = ensure_system(ctx);
  run_stage("stability-check", [&] {
    const double c1 = ctx.config.c1(), c2 = ctx.config.c2();
    json doc;
    doc["c1"] = c1;
    doc["c2"] = c2;
    const double abscissa = spectral_abscissa(sys, 0.0);
    const double shifted = spectral_abscissa(sys, c1);
    doc["abscissa"] = abscissa;
    doc["mean_square_stable"] = abscissa < 0.0;
    doc["shifted_abscissa"] = shifted;
    doc["shifted_stable"] = shifted < 0.0;
    if (shifted < 0.0) {
      const DecayCeiling dc = decay_ceiling(sys, c1, c2);
      doc["beta"] = dc.beta;
      doc["decay_ceiling"] = dc.ceiling;
    }
    log(ctx, "estimating the mean-square decay rate by simulation");
    const Vector x0 = Vector::Ones(sys.n()).normalized();
    const DecayEstimate de = estimate_ms_decay(sys, x0, ctx.config.noise(), ctx.config.simulation_options());
    doc["decay"] = {{"rate", num(de.rate)}, {"se", num(de.se)}, {"n_used", de.n_used}, {"excluded", de.excluded}};
    ctx.out.write("stability.json", doc.dump(2) + "\n");
    log(ctx, "abscissa " + io::num(abscissa) + ", fitted decay rate " + io::num(de.rate));
  });
}

void stage_gramians(PipelineContext& ctx) {
  const GramianComputation& g = ensure_gramians(ctx);
  run_stage("gramians", [&] {
    const GramianPair& p = g.pair;
    ctx.out.write("P.csv", matrix_csv(p.P));
    ctx.out.write("Q.csv", matrix_csv(p.Q));
    json doc;
    doc["c1"] = p.c1;
    doc["c2"] = p.c2;
    doc["cert_P"] = p.cert_P;
    doc["cert_Q"] = p.cert_Q;
    doc["q_residual"] = p.q_residual;
    doc["q_iterations"] = g.q_iterations;
    doc["abscissa"] = g.abscissa;
    doc["trace_P"] = g.p_stats.trace;
    doc["initial_trace_P"] = g.p_stats.initial_trace;
    doc["duality_measure"] = g.p_stats.duality_measure;
    doc["outer_iterations"] = g.p_stats.outer_iterations;
    doc["newton_iterations"] = g.p_stats.newton_iterations;
    doc["cond_P"] = num(linalg::cond_sym(p.P));
    doc["cond_Q"] = num(linalg::cond_sym(p.Q));
    doc["certified"] = p.cert_P >= -tol_cert && p.cert_Q >= -tol_cert;
    ctx.out.write("gramians.json", doc.dump(2) + "\n");
    log(ctx, "tr P = " + io::num(g.p_stats.trace) + ", cert_P = " + io::num(p.cert_P));
  });
}

void stage_gap_scan(PipelineContext& ctx) {
  const auto& gs = ctx.config.gap_scan;
  Matrix X;
  if (gs.matrix) {
    X = *gs.matrix;
  } else {
    const GramianComputation& g = ensure_gramians(ctx);
    X = gs.weight == "Q" ? g.pair.Q : g.pair.P;
  }
  run_stage("gap-scan", [&] {
    const double c2 = gs.c2.value_or(ctx.config.c2());
    const GapForm form(ctx.config.nonlinearity(), X, gs.weight == "P", c2);
    ScanOptions so;
    so.lo = gs.lo;
    so.hi = gs.hi;
    so.seed = ctx.config.simulation.seed;
    GapReport rep;
    if (X.rows() <= 3) {
      rep = scan_monotonicity_grid(form, gs.per_axis, so);
      std::ostringstream os;
      std::vector<std::string> header;
      for (Index j = 0; j < rep.n; ++j) header.push_back("x" + std::to_string(j + 1));
      header.push_back("gap");
      io::CsvWriter w(os, header);
      std::vector<std::string> cells(header.size());
      for (Index i = 0; i < rep.values.size(); ++i) {
        for (Index j = 0; j < rep.n; ++j) cells[static_cast<std::size_t>(j)] = io::num(rep.points(j, i));
        cells.back() = io::num(rep.values(i));
        w.row(cells);
      }
      ctx.out.write("gap_scan.csv", os.str());
    } else {
      rep = scan_monotonicity_samples(form, gs.samples, so);
    }
    json doc;
    doc["weight"] = gs.weight == "Q" ? "Q" : "P^-1";
    doc["c2"] = c2;
    doc["nonlinearity"] = ctx.config.nonlinearity().name();
    doc["description"] = rep.description;
    doc["count"] = rep.values.size();
    doc["n_positive"] = rep.n_positive;
    doc["positive_fraction"] = rep.positive_fraction;
    doc["max_positive"] = rep.max_positive;
    doc["min_value"] = rep.min_value;
    doc["max_positive_over_abs_min"] = rep.min_value < 0.0 ? rep.max_positive / -rep.min_value : 0.0;
    ctx.out.write("gap_scan.json", doc.dump(2) + "\n");
    log(ctx, "positive fraction " + io::num(rep.positive_fraction));
  });
}

void stage_check_gramians(PipelineContext& ctx) {
  const GramianComputation& g = ensure_gramians(ctx);
  const StochasticSystem& sys = *ctx.cache.system;
  run_stage("check-gramians", [&] {
    ClassificationOptions co;
    co.monotonicity_samples = ctx.config.gap_scan.samples;
    co.lipschitz_samples = ctx.config.gap_scan.samples;
    co.scan.lo = ctx.config.gap_scan.lo;
    co.scan.hi = ctx.config.gap_scan.hi;
    co.scan.seed = ctx.config.simulation.seed;
    co.sim = ctx.config.simulation_options();
    const NoiseBundle noise = ctx.config.noise();
    const std::vector<ControlSignal> controls = ctx.config.controls();
    log(ctx, "classifying the Gramian pair");
    const ClassificationReport rep = classify_gramians(sys, g.pair, controls, noise, co);

    auto scan_json = [](const GapReport& r) {
      return json{{"description", r.description},
                  {"n_positive", r.n_positive},
                  {"positive_fraction", r.positive_fraction},
                  {"max_positive", r.max_positive},
                  {"min_value", r.min_value}};
    };
    json doc;
    doc["kind"] = rep.kind ? to_string(*rep.kind) : "unclassified";
    doc["global_monotonicity"] = rep.global_ok;
    doc["average_monotonicity"] = rep.average_ok;
    doc["one_sided_lipschitz"] = rep.lipschitz_ok;
    doc["scans"] = {{"monotonicity_P", scan_json(rep.mono_P)},
                    {"monotonicity_Q", scan_json(rep.mono_Q)},
                    {"lipschitz_P_plus", scan_json(rep.lip_P_plus)},
                    {"lipschitz_Q_minus", scan_json(rep.lip_Q_minus)}};
    json avg = json::array();
    for (const auto& a : rep.averages)
      avg.push_back({{"control", a.control_id},
                     {"ok_P", a.P.ok},
                     {"ok_Q", a.Q.ok},
                     {"min_margin_P", a.P.min_margin},
                     {"min_margin_Q", a.Q.min_margin},
                     {"n_used", a.n_used}});
    doc["average_checks"] = avg;

    try {
      const HessianCheck h = hessian_local_max_check(sys.f(), g.pair.c2, sys.n());
      doc["hessian"] = {{"passes", h.passes}, {"c2_tilde", h.c2_tilde}, {"scalar_jacobian", h.scalar}};
    } catch (const UnsupportedError& e) {
      doc["hessian"] = {{"unsupported", e.what()}};
    }

    json energy = json::array();
    for (const ControlSignal& u : controls) {
      const EnergyEstimateReport er = energy_estimate_check(sys, g.pair, u, noise, co.z_tol, co.sim);
      double worst = 0.0;
      for (const auto& d : er.P)
        if (d.bound > 0.0) worst = std::max(worst, d.sup_value / d.bound);
      energy.push_back({{"control", u.id()},
                        {"P_estimate_ok", er.P_ok},
                        {"Q_estimate_ok", er.Q_ok},
                        {"max_sup_over_bound", worst}});
    }
    doc["energy_estimates"] = energy;
    ctx.out.write("classification.json", doc.dump(2) + "\n");
    log(ctx, "classification: " + doc["kind"].get<std::string>());
  });
}

void stage_balance(PipelineContext& ctx) {
  const BalancedRealization& bal = ensure_balanced(ctx);
  const GramianPair& pair = ctx.cache.gramians->pair;
  run_stage("balance", [&] {
    const Vector tails = tail_sums(bal.sigma);
    std::ostringstream os;
    io::CsvWriter w(os, {"index", "sigma", "two_tail_sum"});
    for (Index k = 0; k < bal.sigma.size(); ++k)
      w.row({std::to_string(k + 1), io::num(bal.sigma(k)), io::num(tails(k + 1))});
    ctx.out.write("sigma.csv", os.str());
    ctx.out.write("S.csv", matrix_csv(bal.S));
    ctx.out.write("S_inv.csv", matrix_csv(bal.S_inv));

    const BalancingOptions bo = ctx.config.balancing_options();
    json reduced = json::array();
    for (Index r : ctx.config.balancing.r_list) {
      if (r < 1 || r > bal.sigma.size()) continue;
      const ReducedModel rm = truncate(*ctx.cache.system, bal, r, bo);
      const std::string prefix = "reduced_r" + std::to_string(r) + "_";
      ctx.out.write(prefix + "A.csv", matrix_csv(rm.A()));
      ctx.out.write(prefix + "B.csv", matrix_csv(rm.B()));
      ctx.out.write(prefix + "C.csv", matrix_csv(rm.C()));
      ctx.out.write(prefix + "V.csv", matrix_csv(rm.V()));
      ctx.out.write(prefix + "W.csv", matrix_csv(rm.W()));
      for (std::size_t i = 0; i < rm.N().size(); ++i)
        ctx.out.write(prefix + "N" + std::to_string(i + 1) + ".csv", matrix_csv(rm.N()[i]));
      reduced.push_back({{"r_requested", r}, {"r", rm.r()}, {"warnings", rm.warnings()}});
    }
    const Matrix Sigma = bal.sigma.asDiagonal();
    json doc;
    doc["floored"] = bal.floored;
    doc["jittered"] = bal.jittered;
    doc["warnings"] = bal.warnings;
    doc["identity_P"] = linalg::relative_frobenius(bal.S * pair.P * bal.S.transpose(), Sigma);
    doc["identity_Q"] = linalg::relative_frobenius(bal.S_inv.transpose() * pair.Q * bal.S_inv, Sigma);
    doc["reduced_models"] = reduced;
    doc["sigma_10_over_sigma_1"] = bal.sigma.size() >= 10 ? bal.sigma(9) / bal.sigma(0) : 0.0;
    ctx.out.write("balance.json", doc.dump(2) + "\n");
  });
}

void stage_simulate(PipelineContext& ctx) {
  const StochasticSystem& sys = ensure_system(ctx);
  run_stage("simulate", [&] {
    const NoiseBundle noise = ctx.config.noise();
    const TimeGrid& grid = noise.grid();
    json doc = json::array();
    for (const ControlSignal& u : ctx.config.controls()) {
      log(ctx, "simulating " + std::to_string(noise.n_paths()) + " paths with control " + u.id());
      const Ensemble ens = simulate(sys, u, noise, Vector::Zero(sys.n()), false, ctx.config.simulation_options());
      const Matrix stats = output_statistics(ens);
      std::vector<std::string> header{"time"};
      for (Index j = 0; j < sys.p(); ++j) {
        header.push_back("mean_y" + std::to_string(j + 1));
        header.push_back("std_y" + std::to_string(j + 1));
      }
      std::ostringstream os;
      io::CsvWriter w(os, header);
      std::vector<std::string> cells(header.size());
      for (Index k = 0; k <= grid.steps; ++k) {
        cells[0] = io::num(grid.t(k));
        for (Index j = 0; j < stats.cols(); ++j) cells[static_cast<std::size_t>(j + 1)] = io::num(stats(k, j));
        w.row(cells);
      }
      ctx.out.write("output_stats_" + slug(u.id()) + ".csv", os.str());

      const Index np = ctx.config.simulation.sample_paths;
      if (np > 0) {
        std::vector<std::string> ph{"time"};
        for (Index i = 0; i < np; ++i)
          for (Index j = 0; j < sys.p(); ++j)
            ph.push_back("path" + std::to_string(i) + "_y" + std::to_string(j + 1));
        std::ostringstream ps;
        io::CsvWriter pw(ps, ph);
        std::vector<std::string> pc(ph.size());
        for (Index k = 0; k <= grid.steps; ++k) {
          pc[0] = io::num(grid.t(k));
          std::size_t col = 1;
          for (Index i = 0; i < np; ++i)
            for (Index j = 0; j < sys.p(); ++j) pc[col++] = io::num(ens.outputs[static_cast<std::size_t>(i)](j, k));
          pw.row(pc);
        }
        ctx.out.write("sample_paths_" + slug(u.id()) + ".csv", ps.str());
      }
      const NormEstimate nrm = weighted_l2T_norm(ens, 0.0);
      doc.push_back({{"control", u.id()},
                     {"output_norm", nrm.value},
                     {"output_norm_se", nrm.se},
                     {"excluded_paths", ens.excluded()}});
    }
    ctx.out.write("simulate.json", doc.dump(2) + "\n");
  });
}

void stage_error_table(PipelineContext& ctx) {
  const BalancedRealization& bal = ensure_balanced(ctx);
  const GramianPair& pair = ctx.cache.gramians->pair;
  const StochasticSystem& sys = *ctx.cache.system;
  run_stage("error-table", [&] {
    ErrorTableOptions eo;
    eo.with_gap_bound = ctx.config.simulation.gap_bound;
    eo.balancing = ctx.config.balancing_options();
    eo.sim = ctx.config.simulation_options();
    log(ctx, "building the error table");
    const ErrorReport rep = error_table(sys, bal, pair, ctx.config.balancing.r_list, ctx.config.controls(),
                                       ctx.config.noise(), eo);
    std::ostringstream os;
    rep.write_csv(os);
    ctx.out.write("error_table_" + slug(rep.nonlinearity) + ".csv", os.str());
    json rows = json::array();
    for (const ErrorRow& r : rep.rows) {
      json row{{"r_requested", r.r_requested},
               {"r", r.r},
               {"control", r.control_id},
               {"rel_error", num(r.rel_error)},
               {"classical_bound_abs", num(r.classical_bound_abs)},
               {"excluded_paths", r.excluded_paths},
               {"warnings", r.warnings}};
      if (r.gap_bound_abs) {
        row["gap_bound_abs"] = num(*r.gap_bound_abs);
        row["gap_clipped"] = r.gap_clipped;
      }
      rows.push_back(row);
    }
    json doc{{"nonlinearity", rep.nonlinearity}, {"c", rep.c},   {"c1", rep.c1},
             {"c2", rep.c2},                     {"seed", rep.seed}, {"T", rep.T},
             {"dt", rep.dt},                     {"n_paths", rep.n_paths}, {"rows", rows}};
    ctx.out.write("error_table.json", doc.dump(2) + "\n");
  });
}

void run_pipeline(PipelineContext& ctx) {
  write_config(ctx);
  stage_gramians(ctx);
  stage_balance(ctx);
  stage_simulate(ctx);
  stage_error_table(ctx);
  ctx.out.write_manifest();
}

}  // namespace stochbt
