// Command-line front end: controller synthesis from a model file or from a
// sampled batch, certificate verification, closed-loop simulation, batch
// generation, solver-format export, and self-contained reproduction bundles
// for the built-in benchmark problems. Every command that writes artifacts
// also writes a manifest listing content hashes of the files it touched, and
// all numeric results land in JSON next to the human-readable log lines.
//
// Exit codes: 0 success, 1 error (bad files, bad flags, internal failure),
// 2 synthesis infeasible (or not solved within limits), 3 a certificate
// failed verification.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "polystab/polystab.hpp"

using namespace polystab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitVerifyFailed = 3;

ConicOptions SolverOptionsFromEnv() {
  ConicOptions opt;
  if (const char* limit = std::getenv("POLYSTAB_TIME_LIMIT")) {
    try {
      opt.time_limit_seconds = std::stod(limit);
    } catch (const std::exception&) {
      throw std::runtime_error(
          "POLYSTAB_TIME_LIMIT must be a number of seconds");
    }
  }
  return opt;
}

std::string JoinPath(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void EnsureDir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

int VariableIndex(const VariableSpace& sp, const std::string& name) {
  for (int i = 0; i < sp.state_dim(); ++i)
    if (sp.name(i) == name) return i;
  throw std::runtime_error("unknown variable \"" + name + "\"");
}

// Synthesis settings shared by the synthesizing subcommands.
struct SynthFlags {
  int shape_degree = 2;
  int gain_degree = 3;
  bool even = false;
  std::vector<std::string> shape_vars;
  std::vector<std::string> gain_caps;  // entries "var=maxdeg"
};

void AttachSynthFlags(CLI::App* cmd, SynthFlags* f) {
  cmd->add_option("--shape-degree", f->shape_degree,
                  "degree of the shape matrix entries (head variables)")
      ->capture_default_str();
  cmd->add_option("--gain-degree", f->gain_degree,
                  "degree of the gain matrix entries (all states)")
      ->capture_default_str();
  cmd->add_flag("--even", f->even,
                "restrict shape and gain monomials to even exponents");
  cmd->add_option("--shape-vars", f->shape_vars,
                  "head variables the shape matrix may depend on "
                  "(default: all)")
      ->delimiter(',');
  cmd->add_option("--gain-cap", f->gain_caps,
                  "per-variable degree cap for the gain, as var=deg")
      ->delimiter(',');
}

SynthesisOptions MakeSynthesisOptions(const SynthFlags& f,
                                      const VariableSpace& sp) {
  SynthesisOptions opt;
  opt.shape_degree = f.shape_degree;
  opt.gain_degree = f.gain_degree;
  opt.even_monomials = f.even;
  for (const std::string& v : f.shape_vars)
    opt.shape_variables.push_back(VariableIndex(sp, v));
  for (const std::string& cap : f.gain_caps) {
    const auto eq = cap.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--gain-cap expects var=deg, got \"" + cap +
                               "\"");
    opt.gain_variable_caps[VariableIndex(sp, cap.substr(0, eq))] =
        std::stoi(cap.substr(eq + 1));
  }
  opt.conic = SolverOptionsFromEnv();
  return opt;
}

json SolverStatsJson(const SynthesisResult& r) {
  return json{{"status", ToString(r.solution.status)},
              {"feasible", r.feasible},
              {"margin", r.solution.margin},
              {"iterations", r.solution.iterations},
              {"seconds", r.solution.seconds},
              {"min_gram_eigenvalue", r.check.min_gram_eigenvalue},
              {"max_coefficient_residual", r.check.max_coefficient_residual},
              {"note", r.note}};
}

json FixedSosJson(const FixedSosReport& rep) {
  return json{{"is_sos", rep.is_sos},
              {"margin", rep.margin},
              {"min_gram_eigenvalue", rep.min_gram_eigenvalue},
              {"max_coefficient_residual", rep.max_coefficient_residual},
              {"note", rep.note}};
}

// Fixed sum-of-squares checks of a given (shape, gain) pair against the
// plant recorded in the problem: the floor block shape - floor * I and the
// rate-dominance block assembled from the model-route decay matrix.
json FixedBlockChecks(const Problem& p, const PolynomialMatrix& shape,
                      const PolynomialMatrix& gain, double margin_tol,
                      const ConicOptions& conic) {
  const SpacePtr& sp = p.model.space;
  PolynomialMatrix floor_block = shape;
  for (int i = 0; i < floor_block.rows(); ++i)
    floor_block(i, i) =
        floor_block(i, i) - Polynomial::Constant(sp, p.weights.shape_floor);
  const FixedSosReport floor_rep =
      VerifyFixedSos(floor_block, "shape_floor", margin_tol, conic);

  const PolynomialMatrix decay =
      BuildDecayMatrix(p.model, p.structure, shape, gain);
  const PolynomialMatrix block =
      AssembleDecayBlock(AffinePolyMatrix::FromPolynomialMatrix(decay),
                         AffinePolyMatrix::FromPolynomialMatrix(shape),
                         p.weights.rate_num, p.weights.rate_den)
          .FixDecisions({});
  const FixedSosReport decay_rep =
      VerifyFixedSos(block, "decay_block", margin_tol, conic);

  return json{{"floor", FixedSosJson(floor_rep)},
              {"decay", FixedSosJson(decay_rep)},
              {"accepted", floor_rep.is_sos && decay_rep.is_sos}};
}

// Normalized coefficient distance between two polynomial collections after
// the best uniform scaling of the second: min_c ||a - c b|| / ||a||. Jointly
// scaled collections compare controllers that are identical up to the common
// (shape, gain) scale freedom.
struct InnerSums {
  double aa = 0.0, ab = 0.0, bb = 0.0;
};

void AddInner(const Polynomial& a, const Polynomial& b, InnerSums* s) {
  for (const auto& [mono, coef] : a.terms()) {
    s->aa += coef * coef;
    const auto it = b.terms().find(mono);
    if (it != b.terms().end()) s->ab += coef * it->second;
  }
  for (const auto& [mono, coef] : b.terms()) s->bb += coef * coef;
}

void AddInner(const PolynomialMatrix& a, const PolynomialMatrix& b,
              InnerSums* s) {
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) AddInner(a(i, j), b(i, j), s);
}

double NormalizedDistance(const InnerSums& s) {
  if (s.aa == 0.0 && s.bb == 0.0) return 0.0;
  if (s.aa == 0.0 || s.bb == 0.0) return 1.0;
  const double c = s.ab / s.bb;
  const double res = s.aa - 2.0 * c * s.ab + c * c * s.bb;
  return std::sqrt(std::max(res, 0.0) / s.aa);
}

double FormDistance(const Polynomial& ours, const Polynomial& ref) {
  InnerSums s;
  AddInner(ours, ref, &s);
  return NormalizedDistance(s);
}

// Trajectory CSV: time, state, input, and the storage function value.
void WriteTrajectoryCsv(const std::string& path, const PlantModel& model,
                        const Controller& ctrl, const OdeResult& sol) {
  std::ostringstream os;
  const int n = model.state_dim();
  const int m = model.input_dim();
  os << "t";
  for (int i = 1; i <= n; ++i) os << ", x_" << i;
  for (int i = 1; i <= m; ++i) os << ", u_" << i;
  os << ", V\n";
  for (std::size_t k = 0; k < sol.times.size(); ++k) {
    os << FormatDouble(sol.times[k]);
    const Eigen::VectorXd& x = sol.states[k];
    for (int i = 0; i < n; ++i) os << ", " << FormatDouble(x[i]);
    const Eigen::VectorXd u = ctrl.ControlAt(x);
    for (int i = 0; i < m; ++i) os << ", " << FormatDouble(u[i]);
    os << ", " << FormatDouble(ctrl.LyapunovAt(x)) << "\n";
  }
  WriteTextFile(path, os.str());
}

// Level curves of the storage function for two-state problems, one segment
// per row.
void WriteLevelSetCsv(const std::string& path, const Controller& ctrl,
                      const std::vector<double>& levels, double halfwidth) {
  std::ostringstream os;
  os << "level, ax, ay, bx, by\n";
  const auto value = [&](double a, double b) {
    return ctrl.LyapunovAt(Eigen::Vector2d(a, b));
  };
  for (const double level : levels)
    for (const auto& seg :
         LevelSetSegments(value, -halfwidth, halfwidth, 201, level))
      os << FormatDouble(level) << ", " << FormatDouble(seg[0]) << ", "
         << FormatDouble(seg[1]) << ", " << FormatDouble(seg[2]) << ", "
         << FormatDouble(seg[3]) << "\n";
  WriteTextFile(path, os.str());
}

PriorKnowledge ReadPriorFile(const std::string& path) {
  const json j = ReadJsonFile(path);
  CheckFormat(j, "polystab-prior", path);
  PriorKnowledge prior;
  for (const auto& v : j.at("indices")) prior.indices.push_back(v.get<int>());
  const json& vals = j.at("values");
  prior.values.resize(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i)
    prior.values[static_cast<Eigen::Index>(i)] = vals[i].get<double>();
  return prior;
}

json PriorToJson(const PriorKnowledge& prior) {
  json vals = json::array();
  for (Eigen::Index i = 0; i < prior.values.size(); ++i)
    vals.push_back(prior.values[i]);
  return json{{"format", "polystab-prior"},
              {"version", 1},
              {"indices", prior.indices},
              {"values", vals}};
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

std::vector<std::string> CommandOf(int argc, char** argv) {
  return std::vector<std::string>(argv, argv + argc);
}

// ---------------------------------------------------------------------------
// synth-model

int RunSynthModel(const std::vector<std::string>& command,
                  const std::string& problem_path, const SynthFlags& flags,
                  const std::string& out_dir) {
  const Stopwatch watch;
  const Problem p = ReadProblemFile(problem_path);
  const SynthesisOptions opt = MakeSynthesisOptions(flags, *p.model.space);
  EnsureDir(out_dir);

  RunManifest manifest;
  manifest.command = command;
  manifest.AddInput(problem_path);

  std::cout << "synthesizing from the model (shape degree "
            << opt.shape_degree << ", gain degree " << opt.gain_degree
            << ")\n";
  const SynthesisResult result =
      SynthesizeController(p.model, p.structure, p.weights, opt);
  json summary{{"format", "polystab-summary"},
               {"version", 1},
               {"command", "synth-model"},
               {"solver", SolverStatsJson(result)}};

  int exit_code = kExitOk;
  if (!result.feasible) {
    std::cout << "synthesis did not produce a certificate: "
              << (result.note.empty() ? ToString(result.solution.status)
                                      : result.note)
              << "\n";
    summary["status"] = "infeasible";
    manifest.status = "infeasible";
    exit_code = kExitInfeasible;
  } else {
    const CertificateReport report = VerifyCertificate(
        p.model, p.structure, p.weights, result.shape, result.gain);
    Certificate cert{p, result.shape, result.gain, ReportToJson(report)};
    const std::string cert_path = JoinPath(out_dir, "certificate.json");
    WriteJsonFile(cert_path, CertificateToJson(cert));
    manifest.AddOutput(cert_path);
    summary["status"] = report.Accept() ? "ok" : "verification_failed";
    summary["verification"] = ReportToJson(report);
    std::cout << "feasible, margin " << result.solution.margin << " ("
              << result.solution.iterations << " iterations, "
              << result.solution.seconds << " s)\n";
    std::cout << "grid verification: "
              << (report.Accept() ? "accepted" : "FAILED") << "\n";
    std::cout << "wrote " << cert_path << "\n";
    if (!report.Accept()) {
      manifest.status = "verification_failed";
      exit_code = kExitVerifyFailed;
    }
  }

  const std::string summary_path = JoinPath(out_dir, "summary.json");
  WriteJsonFile(summary_path, summary);
  manifest.AddOutput(summary_path);
  manifest.wall_seconds = watch.Seconds();
  WriteManifestFile(JoinPath(out_dir, "manifest.json"), manifest);
  return exit_code;
}

// ---------------------------------------------------------------------------
// synth-data

int RunSynthData(const std::vector<std::string>& command,
                 const std::string& problem_path, const std::string& data_path,
                 double noise_energy, const std::string& prior_path,
                 const SynthFlags& flags, const std::string& out_dir) {
  const Stopwatch watch;
  const Problem p = ReadProblemFile(problem_path);
  const Dataset data = ReadDatasetCsvFile(data_path);
  PriorKnowledge prior;
  if (!prior_path.empty()) prior = ReadPriorFile(prior_path);
  const SynthesisOptions opt = MakeSynthesisOptions(flags, *p.model.space);
  EnsureDir(out_dir);

  RunManifest manifest;
  manifest.command = command;
  manifest.AddInput(problem_path);
  manifest.AddInput(data_path);
  if (!prior_path.empty()) manifest.AddInput(prior_path);

  std::cout << "synthesizing from " << data.samples()
            << " samples (disturbance energy bound " << noise_energy
            << ", shape degree " << opt.shape_degree << ", gain degree "
            << opt.gain_degree << ")\n";
  const SynthesisResult result = SynthesizeFromData(
      ShapeOf(p.model), p.structure, data, noise_energy, p.weights, prior,
      opt);
  json summary{{"format", "polystab-summary"},
               {"version", 1},
               {"command", "synth-data"},
               {"noise_energy", noise_energy},
               {"solver", SolverStatsJson(result)}};

  int exit_code = kExitOk;
  if (!result.feasible) {
    std::cout << "synthesis did not produce a certificate: "
              << (result.note.empty() ? ToString(result.solution.status)
                                      : result.note)
              << "\n";
    summary["status"] = "infeasible";
    manifest.status = "infeasible";
    exit_code = kExitInfeasible;
  } else {
    // The grid check runs against the plant recorded in the problem file;
    // for recorded benchmarks that is the true system, so the report states
    // how the robust certificate behaves on the plant that generated the
    // data.
    const CertificateReport report = VerifyCertificate(
        p.model, p.structure, p.weights, result.shape, result.gain);
    Certificate cert{p, result.shape, result.gain, ReportToJson(report)};
    const std::string cert_path = JoinPath(out_dir, "certificate.json");
    WriteJsonFile(cert_path, CertificateToJson(cert));
    manifest.AddOutput(cert_path);
    summary["status"] = report.Accept() ? "ok" : "verification_failed";
    summary["verification"] = ReportToJson(report);
    std::cout << "feasible, margin " << result.solution.margin << " ("
              << result.solution.iterations << " iterations, "
              << result.solution.seconds << " s)\n";
    std::cout << "grid verification against the recorded plant: "
              << (report.Accept() ? "accepted" : "FAILED") << "\n";
    std::cout << "wrote " << cert_path << "\n";
    if (!report.Accept()) {
      manifest.status = "verification_failed";
      exit_code = kExitVerifyFailed;
    }
  }

  const std::string summary_path = JoinPath(out_dir, "summary.json");
  WriteJsonFile(summary_path, summary);
  manifest.AddOutput(summary_path);
  manifest.wall_seconds = watch.Seconds();
  WriteManifestFile(JoinPath(out_dir, "manifest.json"), manifest);
  return exit_code;
}

// ---------------------------------------------------------------------------
// gen-data

int RunGenData(const std::vector<std::string>& command,
               const std::string& experiment_path, const std::string& out_dir,
               const std::string& csv_name) {
  const Stopwatch watch;
  const ExperimentDoc doc = ReadExperimentFile(experiment_path);
  EnsureDir(out_dir);

  const Dataset data = RunExperiment(doc.problem.model, doc.Spec());
  const std::string csv_path = JoinPath(out_dir, csv_name);
  WriteDatasetCsvFile(csv_path, data);
  std::cout << "sampled " << data.samples() << " points on ["
            << doc.start_time << ", " << doc.start_time + doc.duration
            << "] (disturbance radius " << doc.noise_radius << ", seed "
            << doc.seed << ")\n";
  std::cout << "wrote " << csv_path << "\n";

  RunManifest manifest;
  manifest.command = command;
  manifest.AddInput(experiment_path);
  manifest.AddOutput(csv_path);
  manifest.seed = doc.seed;
  manifest.wall_seconds = watch.Seconds();
  WriteManifestFile(JoinPath(out_dir, "manifest.json"), manifest);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

int RunVerify(const std::vector<std::string>& command,
              const std::string& cert_path, const std::string& problem_path,
              bool with_sos, const std::string& out_dir) {
  const Stopwatch watch;
  const Certificate cert = ReadCertificateFile(cert_path);
  const Problem p =
      problem_path.empty() ? cert.problem : ReadProblemFile(problem_path);
  EnsureDir(out_dir);

  RunManifest manifest;
  manifest.command = command;
  manifest.AddInput(cert_path);
  if (!problem_path.empty()) manifest.AddInput(problem_path);

  const CertificateReport report = VerifyCertificate(
      p.model, p.structure, p.weights, cert.shape, cert.gain);
  json out{{"format", "polystab-report"},
           {"version", 1},
           {"grid", ReportToJson(report)}};
  bool ok = report.Accept();
  std::cout << "grid verification: " << (ok ? "accepted" : "FAILED")
            << " (min shape margin " << report.min_shape_margin
            << ", min decay margin " << report.min_decay_margin << ")\n";

  if (with_sos) {
    const json sos = FixedBlockChecks(p, cert.shape, cert.gain, 1e-7,
                                      SolverOptionsFromEnv());
    std::cout << "sum-of-squares re-check: "
              << (sos.at("accepted").get<bool>() ? "accepted" : "FAILED")
              << "\n";
    ok = ok && sos.at("accepted").get<bool>();
    out["sos"] = sos;
  }

  const std::string report_path = JoinPath(out_dir, "report.json");
  WriteJsonFile(report_path, out);
  manifest.AddOutput(report_path);
  manifest.status = ok ? "ok" : "verification_failed";
  manifest.wall_seconds = watch.Seconds();
  WriteManifestFile(JoinPath(out_dir, "manifest.json"), manifest);
  std::cout << "wrote " << report_path << "\n";
  return ok ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// simulate

int RunSimulate(const std::vector<std::string>& command,
                const std::string& cert_path, const std::string& problem_path,
                const std::vector<double>& x0_values, double horizon,
                const std::string& out_dir, const std::string& csv_name) {
  const Stopwatch watch;
  const Certificate cert = ReadCertificateFile(cert_path);
  const Problem p =
      problem_path.empty() ? cert.problem : ReadProblemFile(problem_path);
  if (static_cast<int>(x0_values.size()) != p.model.state_dim())
    throw std::runtime_error("--x0 needs " +
                             std::to_string(p.model.state_dim()) +
                             " components");
  EnsureDir(out_dir);

  const Controller ctrl =
      MakeController(p.model, p.structure, cert.shape, cert.gain);
  Eigen::VectorXd x0(p.model.state_dim());
  for (int i = 0; i < p.model.state_dim(); ++i) x0[i] = x0_values[i];

  const OdeResult sol = SimulateClosedLoop(p.model, ctrl, x0, horizon);
  const LyapunovTrace trace = VerifyLyapunovAlong(ctrl, sol);

  RunManifest manifest;
  manifest.command = command;
  manifest.AddInput(cert_path);
  if (!problem_path.empty()) manifest.AddInput(problem_path);

  const std::string csv_path = JoinPath(out_dir, csv_name);
  WriteTrajectoryCsv(csv_path, p.model, ctrl, sol);
  manifest.AddOutput(csv_path);

  json summary{{"format", "polystab-summary"},
               {"version", 1},
               {"command", "simulate"},
               {"success", sol.success},
               {"note", sol.note},
               {"final_time", sol.final_time()},
               {"final_norm", sol.states.empty()
                                  ? 0.0
                                  : sol.final_state().norm()},
               {"steps_accepted", sol.steps_accepted},
               {"lyapunov",
                {{"nonincreasing", trace.nonincreasing},
                 {"initial", trace.initial_value},
                 {"final", trace.final_value},
                 {"max_increase", trace.max_increase}}}};
  const std::string summary_path = JoinPath(out_dir, "summary.json");
  WriteJsonFile(summary_path, summary);
  manifest.AddOutput(summary_path);

  std::cout << "integrated to t = " << sol.final_time() << ", final |x| = "
            << (sol.states.empty() ? 0.0 : sol.final_state().norm())
            << ", storage " << (trace.nonincreasing ? "nonincreasing"
                                                    : "INCREASED")
            << "\n";
  if (!sol.success) std::cout << "integration stopped early: " << sol.note
                              << "\n";
  std::cout << "wrote " << csv_path << "\n";

  manifest.status = sol.success ? "ok" : "error";
  manifest.wall_seconds = watch.Seconds();
  WriteManifestFile(JoinPath(out_dir, "manifest.json"), manifest);
  return sol.success ? kExitOk : kExitError;
}

// ---------------------------------------------------------------------------
// export-sdp

int RunExportSdp(const std::vector<std::string>& command,
                 const std::string& problem_path, const std::string& out_path,
                 const std::string& data_path, double noise_energy,
                 const std::string& prior_path, const SynthFlags& flags) {
  const Stopwatch watch;
  const Problem p = ReadProblemFile(problem_path);
  const SynthesisOptions opt = MakeSynthesisOptions(flags, *p.model.space);

  RunManifest manifest;
  manifest.command = command;
  manifest.AddInput(problem_path);

  CompiledSos compiled;
  if (data_path.empty()) {
    const ModelProgram mp =
        AssembleModelProgram(p.model, p.structure, p.weights, opt);
    compiled = CompileSos(mp.program);
  } else {
    const Dataset data = ReadDatasetCsvFile(data_path);
    manifest.AddInput(data_path);
    PriorKnowledge prior;
    if (!prior_path.empty()) {
      prior = ReadPriorFile(prior_path);
      manifest.AddInput(prior_path);
    }
    const DataProgram dp = AssembleDataDrivenProgram(
        ShapeOf(p.model), p.structure, data, noise_energy, p.weights, prior,
        opt);
    compiled = CompileSos(dp.program);
  }
  if (compiled.contradiction)
    throw std::runtime_error(
        "the program is structurally contradictory: " + compiled.note);

  if (const auto dir = std::filesystem::path(out_path).parent_path();
      !dir.empty())
    std::filesystem::create_directories(dir);
  std::ofstream os(out_path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot create " + out_path);
  WriteSdpaSparse(compiled.program, os);
  os.close();
  manifest.AddOutput(out_path);

  std::cout << "exported " << compiled.program.blocks.size()
            << " semidefinite blocks, " << compiled.program.rows.size()
            << " equality rows\n";
  std::cout << "wrote " << out_path << "\n";

  manifest.wall_seconds = watch.Seconds();
  WriteManifestFile(out_path + ".manifest.json", manifest);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// repro: self-contained bundles for the built-in benchmarks.

std::vector<Eigen::VectorXd> ReproInitialStates(const benchmarks::Benchmark& b,
                                                std::uint64_t seed) {
  std::vector<Eigen::VectorXd> starts;
  const int n = b.problem.model.state_dim();
  if (n == 2) {
    // Corners and edge midpoints of the verification box.
    const double h = 3.0;
    const double pts[8][2] = {{-h, -h}, {-h, 0}, {-h, h}, {0, h},
                              {h, h},   {h, 0},  {h, -h}, {0, -h}};
    for (const auto& q : pts) starts.push_back(Eigen::Vector2d(q[0], q[1]));
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    for (int k = 0; k < 4; ++k) {
      Eigen::VectorXd x(n);
      for (int i = 0; i < n; ++i) x[i] = unif(rng);
      starts.push_back(std::move(x));
    }
  }
  return starts;
}

json CompareWithReference(const benchmarks::Benchmark& b,
                          const SynthesisResult& result,
                          const GridCheckOptions& grid_opt) {
  const Problem& p = b.problem;
  const benchmarks::ReferenceSolution& ref = *b.reference;
  json out;

  const CertificateReport ref_report = VerifyCertificate(
      p.model, p.structure, p.weights, ref.shape, ref.gain, grid_opt);
  out["grid"] = ReportToJson(ref_report);

  if (result.feasible) {
    InnerSums joint;
    AddInner(result.shape, ref.shape, &joint);
    AddInner(result.gain, ref.gain, &joint);
    out["solution_distance"] = NormalizedDistance(joint);

    if (ref.lyapunov_numerator && ref.control_numerator && ref.shape_det &&
        p.model.input_dim() == 1) {
      const Controller ours = MakeController(p.model, p.structure,
                                             result.shape, result.gain);
      const RationalForms forms = SymbolicForms(ours);
      out["form_distance"] =
          json{{"lyapunov",
                FormDistance(forms.lyapunov_numerator,
                             *ref.lyapunov_numerator)},
               {"control", FormDistance(forms.control_numerator(0, 0),
                                        *ref.control_numerator)},
               {"det", FormDistance(forms.shape_det, *ref.shape_det)}};
    }
  }
  return out;
}

int RunRepro(const std::vector<std::string>& command, const std::string& name,
             bool constant_shape, const std::string& out_dir,
             std::uint64_t seed) {
  const Stopwatch watch;
  const benchmarks::Benchmark b = benchmarks::GetBenchmark(name);
  const Problem& p = b.problem;
  EnsureDir(out_dir);

  RunManifest manifest;
  manifest.command = command;
  manifest.seed = seed;

  json summary{{"format", "polystab-summary"},
               {"version", 1},
               {"command", "repro"},
               {"benchmark", b.name},
               {"title", b.title},
               {"route", b.batch ? "data" : "model"}};

  const auto emit = [&](const std::string& file, const json& j) {
    const std::string path = JoinPath(out_dir, file);
    WriteJsonFile(path, j);
    manifest.AddOutput(path);
    return path;
  };

  emit("problem.json", ProblemToJson(p));
  if (b.batch) {
    const std::string data_path = JoinPath(out_dir, "data.csv");
    WriteDatasetCsvFile(data_path, *b.batch);
    manifest.AddOutput(data_path);
    if (b.recipe) {
      ExperimentDoc doc{p,
                        b.recipe_signal,
                        b.recipe->initial_state,
                        b.recipe->start_time,
                        b.recipe->duration,
                        b.recipe->samples,
                        b.recipe->noise_radius,
                        b.recipe->seed};
      emit("experiment.json", ExperimentToJson(doc));
    }
    if (!b.prior.indices.empty()) emit("prior.json", PriorToJson(b.prior));
    summary["noise_energy"] = b.noise_energy;
  }

  SynthesisOptions opt = b.synthesis;
  opt.conic = SolverOptionsFromEnv();
  if (constant_shape) opt.shape_degree = 0;
  summary["options"] = json{{"shape_degree", opt.shape_degree},
                            {"gain_degree", opt.gain_degree},
                            {"even_monomials", opt.even_monomials}};

  std::cout << "benchmark " << b.name << ": " << b.title << "\n";
  std::cout << "synthesizing (" << (b.batch ? "data" : "model")
            << " route, shape degree " << opt.shape_degree
            << ", gain degree " << opt.gain_degree << ")\n";
  const SynthesisResult result =
      b.batch ? SynthesizeFromData(ShapeOf(p.model), p.structure, *b.batch,
                                   b.noise_energy, p.weights, b.prior, opt)
              : SynthesizeController(p.model, p.structure, p.weights, opt);
  summary["solver"] = SolverStatsJson(result);

  if (!result.feasible) {
    std::cout << "synthesis did not produce a certificate: "
              << (result.note.empty() ? ToString(result.solution.status)
                                      : result.note)
              << "\n";
    summary["status"] = "infeasible";
    emit("summary.json", summary);
    manifest.status = "infeasible";
    manifest.wall_seconds = watch.Seconds();
    WriteManifestFile(JoinPath(out_dir, "manifest.json"), manifest);
    return kExitInfeasible;
  }

  const GridCheckOptions grid_opt;
  const CertificateReport report = VerifyCertificate(
      p.model, p.structure, p.weights, result.shape, result.gain, grid_opt);
  Certificate cert{p, result.shape, result.gain, ReportToJson(report)};
  const std::string cert_path = JoinPath(out_dir, "certificate.json");
  WriteJsonFile(cert_path, CertificateToJson(cert));
  manifest.AddOutput(cert_path);
  summary["verification"] = ReportToJson(report);
  std::cout << "feasible, margin " << result.solution.margin << " ("
            << result.solution.iterations << " iterations, "
            << result.solution.seconds << " s)\n";
  std::cout << "grid verification: "
            << (report.Accept() ? "accepted" : "FAILED") << "\n";

  if (b.reference) {
    summary["reference"] = CompareWithReference(b, result, grid_opt);
    if (summary["reference"].contains("solution_distance"))
      std::cout << "distance to the recorded solution (after scaling): "
                << summary["reference"]["solution_distance"].get<double>()
                << "\n";
  }

  // Closed-loop runs of the recorded plant under the synthesized controller.
  const Controller ctrl =
      MakeController(p.model, p.structure, result.shape, result.gain);
  const double horizon = p.model.state_dim() == 2 ? 50.0 : 60.0;
  const double converge_tol = p.model.state_dim() == 2 ? 1e-3 : 1e-2;
  bool all_converged = true;
  bool all_integrated = true;
  json runs = json::array();
  const std::vector<Eigen::VectorXd> starts = ReproInitialStates(b, seed);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const OdeResult sol =
        SimulateClosedLoop(p.model, ctrl, starts[k], horizon);
    const LyapunovTrace trace = VerifyLyapunovAlong(ctrl, sol);
    const std::string file = "traj_" + std::to_string(k + 1) + ".csv";
    WriteTrajectoryCsv(JoinPath(out_dir, file), p.model, ctrl, sol);
    manifest.AddOutput(JoinPath(out_dir, file));
    const double final_max = sol.final_state().cwiseAbs().maxCoeff();
    const bool converged = sol.success && final_max < converge_tol;
    all_converged = all_converged && converged;
    all_integrated = all_integrated && sol.success;
    json x0 = json::array();
    for (Eigen::Index i = 0; i < starts[k].size(); ++i)
      x0.push_back(starts[k][i]);
    runs.push_back(json{{"file", file},
                        {"x0", x0},
                        {"integrated", sol.success},
                        {"final_time", sol.final_time()},
                        {"final_max_abs", final_max},
                        {"converged", converged},
                        {"storage_nonincreasing", trace.nonincreasing}});
  }
  summary["simulations"] = runs;
  summary["all_converged"] = all_converged;
  std::cout << starts.size() << " closed-loop runs to t = " << horizon
            << ": " << (all_converged ? "all settled below " : "NOT all below ")
            << converge_tol << "\n";

  if (p.model.state_dim() == 2) {
    const std::vector<double> levels = {
        ctrl.LyapunovAt(Eigen::Vector2d(0.5, 0.5)),
        ctrl.LyapunovAt(Eigen::Vector2d(1.0, 1.0)),
        ctrl.LyapunovAt(Eigen::Vector2d(2.0, 2.0))};
    const std::string level_path = JoinPath(out_dir, "levelsets.csv");
    WriteLevelSetCsv(level_path, ctrl, levels, grid_opt.box_halfwidth);
    manifest.AddOutput(level_path);
  }

  const bool ok = report.Accept() && all_converged && all_integrated;
  summary["status"] = ok ? "ok" : "verification_failed";
  emit("summary.json", summary);
  manifest.status = summary["status"].get<std::string>();
  manifest.wall_seconds = watch.Seconds();
  WriteManifestFile(JoinPath(out_dir, "manifest.json"), manifest);
  std::cout << "bundle written to " << out_dir << "\n";
  return ok ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "polystab: sum-of-squares synthesis of globally stabilizing polynomial "
      "controllers, from a model or directly from noisy samples"};
  app.require_subcommand(1);
  const std::vector<std::string> command = CommandOf(argc, argv);

  // synth-model
  std::string sm_problem, sm_out = ".";
  SynthFlags sm_flags;
  CLI::App* sm = app.add_subcommand(
      "synth-model", "synthesize a controller from a problem file");
  sm->add_option("problem", sm_problem, "problem JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  sm->add_option("--out", sm_out, "output directory")->capture_default_str();
  AttachSynthFlags(sm, &sm_flags);

  // synth-data
  std::string sd_problem, sd_data, sd_prior, sd_out = ".";
  double sd_energy = 0.0;
  SynthFlags sd_flags;
  sd_flags.shape_degree = 4;
  sd_flags.gain_degree = 6;
  CLI::App* sd = app.add_subcommand(
      "synth-data",
      "synthesize a controller from a sampled batch, robust to every plant "
      "consistent with the data");
  sd->add_option("problem", sd_problem,
                 "problem JSON file (the plant block fixes dimensions and "
                 "the lift; its coefficients are used only for the optional "
                 "grid check)")
      ->required()
      ->check(CLI::ExistingFile);
  sd->add_option("data", sd_data, "batch CSV file")
      ->required()
      ->check(CLI::ExistingFile);
  sd->add_option("--noise-energy", sd_energy,
                 "bound on the total disturbance energy of the batch")
      ->required();
  sd->add_option("--prior", sd_prior,
                 "JSON file fixing known coefficient entries")
      ->check(CLI::ExistingFile);
  sd->add_option("--out", sd_out, "output directory")->capture_default_str();
  AttachSynthFlags(sd, &sd_flags);

  // gen-data
  std::string gd_experiment, gd_out = ".", gd_name = "data.csv";
  CLI::App* gd = app.add_subcommand(
      "gen-data", "integrate a plant under an excitation signal and sample "
                  "a noisy batch");
  gd->add_option("experiment", gd_experiment, "experiment JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  gd->add_option("--out", gd_out, "output directory")->capture_default_str();
  gd->add_option("--name", gd_name, "batch file name")->capture_default_str();

  // verify
  std::string vf_cert, vf_problem, vf_out = ".";
  bool vf_sos = false;
  CLI::App* vf = app.add_subcommand(
      "verify", "re-verify a certificate on the grid, optionally with fixed "
                "sum-of-squares checks");
  vf->add_option("certificate", vf_cert, "certificate JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  vf->add_option("problem", vf_problem,
                 "problem JSON file (default: the one embedded in the "
                 "certificate)")
      ->check(CLI::ExistingFile);
  vf->add_flag("--sos", vf_sos,
               "also re-prove the floor and rate-dominance blocks as exact "
               "sums of squares for the recorded plant; freshly synthesized "
               "certificates sit at solver tolerance and may fail this "
               "strict form even though the grid check and the solver-side "
               "Gram re-check accept them");
  vf->add_option("--out", vf_out, "output directory")->capture_default_str();

  // simulate
  std::string si_cert, si_problem, si_out = ".", si_name = "traj.csv";
  std::vector<double> si_x0;
  double si_horizon = 50.0;
  CLI::App* si = app.add_subcommand(
      "simulate", "integrate the closed loop from a given initial state");
  si->add_option("certificate", si_cert, "certificate JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  si->add_option("problem", si_problem,
                 "problem JSON file (default: the one embedded in the "
                 "certificate)")
      ->check(CLI::ExistingFile);
  si->add_option("--x0", si_x0, "initial state, comma separated")
      ->required()
      ->delimiter(',');
  si->add_option("--horizon", si_horizon, "integration horizon")
      ->capture_default_str();
  si->add_option("--out", si_out, "output directory")->capture_default_str();
  si->add_option("--name", si_name, "trajectory file name")
      ->capture_default_str();

  // export-sdp
  std::string ex_problem, ex_out = "program.dat-s", ex_data, ex_prior;
  double ex_energy = 0.0;
  SynthFlags ex_flags;
  CLI::App* ex = app.add_subcommand(
      "export-sdp",
      "compile the synthesis program and write it in sparse SDPA format");
  ex->add_option("problem", ex_problem, "problem JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("-o,--output", ex_out, "output file")->capture_default_str();
  ex->add_option("--data", ex_data,
                 "batch CSV file; compiles the robust data-driven program "
                 "instead of the model one")
      ->check(CLI::ExistingFile);
  ex->add_option("--noise-energy", ex_energy,
                 "disturbance energy bound (with --data)");
  ex->add_option("--prior", ex_prior,
                 "JSON file fixing known coefficient entries (with --data)")
      ->check(CLI::ExistingFile);
  AttachSynthFlags(ex, &ex_flags);

  // repro
  std::string rp_name, rp_out;
  bool rp_constant = false;
  std::uint64_t rp_seed = 20240519;
  CLI::App* rp = app.add_subcommand(
      "repro", "run a built-in benchmark end to end and write a bundle of "
               "artifacts");
  rp->add_option("benchmark", rp_name, "one of ex1, ex2, ex3, ex4")
      ->required();
  rp->add_flag("--constant-P", rp_constant,
               "force a constant shape matrix (degree 0)");
  rp->add_option("--out", rp_out,
                 "output directory (default: polystab-<benchmark>)");
  rp->add_option("--seed", rp_seed,
                 "seed for the simulated initial states")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    if (*sm) return RunSynthModel(command, sm_problem, sm_flags, sm_out);
    if (*sd)
      return RunSynthData(command, sd_problem, sd_data, sd_energy, sd_prior,
                          sd_flags, sd_out);
    if (*gd) return RunGenData(command, gd_experiment, gd_out, gd_name);
    if (*vf) return RunVerify(command, vf_cert, vf_problem, vf_sos, vf_out);
    if (*si)
      return RunSimulate(command, si_cert, si_problem, si_x0, si_horizon,
                         si_out, si_name);
    if (*ex)
      return RunExportSdp(command, ex_problem, ex_out, ex_data, ex_energy,
                          ex_prior, ex_flags);
    if (*rp) {
      const std::string out = rp_out.empty() ? "polystab-" + rp_name : rp_out;
      return RunRepro(command, rp_name, rp_constant, out, rp_seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "polystab: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
