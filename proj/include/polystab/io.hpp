#pragma once

// File formats for problems, certificates, sampled batches, and run
// manifests. Structured objects travel as JSON with polynomials printed in
// the same grammar the parser accepts; batches travel as CSV. Coefficients
// are printed with just enough digits to reproduce the exact binary64
// values, so a write-read cycle is lossless. Manifests record content
// hashes of every file a run touched.

#include <json.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "polystab/datadriven.hpp"
#include "polystab/model.hpp"
#include "polystab/ode.hpp"

namespace polystab {

inline constexpr const char* kToolVersion = "0.1.0";

using nlohmann::json;

// ---------------------------------------------------------------------------
// Plain file helpers.

inline std::string ReadTextFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void WriteTextFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline json ReadJsonFile(const std::string& path) {
  try {
    return json::parse(ReadTextFile(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

inline void WriteJsonFile(const std::string& path, const json& j) {
  WriteTextFile(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// JSON forms of the core objects.

inline json SpaceToJson(const VariableSpace& sp) {
  json head = json::array(), tail = json::array();
  const int n1 = sp.group_size(VariableSpace::Group::kX1);
  for (int i = 0; i < n1; ++i) head.push_back(sp.name(i));
  const int n = sp.state_dim();
  for (int i = n1; i < n; ++i) tail.push_back(sp.name(i));
  return json{{"head", head}, {"tail", tail}};
}

inline SpacePtr SpaceFromJson(const json& j) {
  std::vector<std::string> head, tail;
  for (const auto& v : j.at("head")) head.push_back(v.get<std::string>());
  for (const auto& v : j.at("tail")) tail.push_back(v.get<std::string>());
  return VariableSpace::Make(std::move(head), std::move(tail));
}

inline json PolyMatrixToJson(const PolynomialMatrix& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c).ToString());
    rows.push_back(std::move(row));
  }
  return rows;
}

inline PolynomialMatrix PolyMatrixFromJson(const SpacePtr& sp, const json& j,
                                           const char* what) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw std::runtime_error(std::string(what) +
                             ": expected an array of rows");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j.front().size());
  PolynomialMatrix m(sp, rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols)
      throw std::runtime_error(std::string(what) + ": ragged rows");
    for (int c = 0; c < cols; ++c)
      m(r, c) = ParsePoly(sp, j[r][c].get<std::string>());
  }
  return m;
}

inline json DenseToJson(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd DenseFromJson(const json& j, const char* what) {
  if (!j.is_array())
    throw std::runtime_error(std::string(what) + ": expected an array");
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const int cols = static_cast<int>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols)
      throw std::runtime_error(std::string(what) + ": ragged rows");
    for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline json ProblemToJson(const Problem& p) {
  return json{
      {"format", "polystab-problem"},
      {"version", 1},
      {"variables", SpaceToJson(*p.model.space)},
      {"plant",
       {{"lift", PolyMatrixToJson(p.model.lift)},
        {"input_shape", PolyMatrixToJson(p.model.input_shape)},
        {"a1", DenseToJson(p.model.a1)},
        {"a2", DenseToJson(p.model.a2)},
        {"b2", DenseToJson(p.model.b2)}}},
      {"structure",
       {{"basis", PolyMatrixToJson(p.structure.basis)},
        {"lift_factor", PolyMatrixToJson(p.structure.lift_factor)}}},
      {"weights",
       {{"shape_floor", p.weights.shape_floor},
        {"rate_num", p.weights.rate_num.ToString()},
        {"rate_den", p.weights.rate_den.ToString()}}}};
}

inline Problem ProblemFromJson(const json& j) {
  const SpacePtr sp = SpaceFromJson(j.at("variables"));
  const json& pl = j.at("plant");
  const json& st = j.at("structure");
  const json& w = j.at("weights");
  return Problem{
      PlantModel(sp, PolyMatrixFromJson(sp, pl.at("lift"), "lift"),
                 PolyMatrixFromJson(sp, pl.at("input_shape"), "input_shape"),
                 DenseFromJson(pl.at("a1"), "a1"),
                 DenseFromJson(pl.at("a2"), "a2"),
                 DenseFromJson(pl.at("b2"), "b2")),
      ControlStructure{PolyMatrixFromJson(sp, st.at("basis"), "basis"),
                       PolyMatrixFromJson(sp, st.at("lift_factor"),
                                          "lift_factor")},
      DecayWeights{w.at("shape_floor").get<double>(),
                   ParsePoly(sp, w.at("rate_num").get<std::string>()),
                   ParsePoly(sp, w.at("rate_den").get<std::string>())}};
}

// A synthesized controller together with the problem it solves. The report
// block is advisory (whatever the producing run measured) and is carried
// through verbatim.
struct Certificate {
  Problem problem;
  PolynomialMatrix shape;
  PolynomialMatrix gain;
  json report;
};

inline json ReportToJson(const CertificateReport& rep) {
  return json{{"accepted", rep.Accept()},
              {"shape_bounded_below", rep.shape_bounded_below},
              {"decay_dominates", rep.decay_dominates},
              {"rate_consistent", rep.rate_consistent},
              {"origin_is_equilibrium", rep.origin_is_equilibrium},
              {"min_shape_margin", rep.min_shape_margin},
              {"min_decay_margin", rep.min_decay_margin},
              {"worst_rate_error", rep.worst_rate_error},
              {"worst_decay_slack", rep.worst_decay_slack},
              {"note", rep.note}};
}

inline json CertificateToJson(const Certificate& c) {
  json j = ProblemToJson(c.problem);
  j["format"] = "polystab-certificate";
  j["shape"] = PolyMatrixToJson(c.shape);
  j["gain"] = PolyMatrixToJson(c.gain);
  if (!c.report.is_null()) j["report"] = c.report;
  return j;
}

inline Certificate CertificateFromJson(const json& j) {
  Problem p = ProblemFromJson(j);
  const SpacePtr& sp = p.model.space;
  PolynomialMatrix shape = PolyMatrixFromJson(sp, j.at("shape"), "shape");
  PolynomialMatrix gain = PolyMatrixFromJson(sp, j.at("gain"), "gain");
  return Certificate{std::move(p), std::move(shape), std::move(gain),
                     j.value("report", json())};
}

inline void CheckFormat(const json& j, const std::string& expected,
                        const std::string& path) {
  if (j.value("format", "") != expected)
    throw std::runtime_error(path + ": expected a " + expected +
                             " document, found format \"" +
                             j.value("format", "<missing>") + "\"");
}

inline Problem ReadProblemFile(const std::string& path) {
  const json j = ReadJsonFile(path);
  if (j.value("format", "") == "polystab-certificate")
    return ProblemFromJson(j);  // a certificate embeds its problem
  CheckFormat(j, "polystab-problem", path);
  return ProblemFromJson(j);
}

inline Certificate ReadCertificateFile(const std::string& path) {
  const json j = ReadJsonFile(path);
  CheckFormat(j, "polystab-certificate", path);
  return CertificateFromJson(j);
}

// ---------------------------------------------------------------------------
// Experiment descriptions: a plant, an excitation signal (sum of sinusoids
// per channel, so it can travel in a file), and the sampling window.

struct ExperimentDoc {
  Problem problem;
  InputSignal signal;
  Eigen::VectorXd initial_state;
  double start_time = 0.0;
  double duration = 1.0;
  int samples = 10;
  double noise_radius = 0.0;
  std::uint64_t seed = 0;

  ExperimentSpec Spec() const {
    ExperimentSpec s;
    s.initial_state = initial_state;
    s.input = MakeSignal(signal);
    s.start_time = start_time;
    s.duration = duration;
    s.samples = samples;
    s.noise_radius = noise_radius;
    s.seed = seed;
    return s;
  }
};

inline json SignalToJson(const InputSignal& sig) {
  json channels = json::array();
  for (const auto& ch : sig) {
    json terms = json::array();
    for (const SinusoidTerm& t : ch)
      terms.push_back(json{{"amplitude", t.amplitude},
                           {"frequency", t.frequency},
                           {"phase", t.phase}});
    channels.push_back(std::move(terms));
  }
  return channels;
}

inline InputSignal SignalFromJson(const json& j) {
  if (!j.is_array())
    throw std::runtime_error("input signal: expected an array of channels");
  InputSignal sig;
  for (const auto& ch : j) {
    std::vector<SinusoidTerm> terms;
    for (const auto& t : ch)
      terms.push_back(SinusoidTerm{t.at("amplitude").get<double>(),
                                   t.at("frequency").get<double>(),
                                   t.value("phase", 0.0)});
    sig.push_back(std::move(terms));
  }
  return sig;
}

inline json ExperimentToJson(const ExperimentDoc& e) {
  json x0 = json::array();
  for (Eigen::Index i = 0; i < e.initial_state.size(); ++i)
    x0.push_back(e.initial_state[i]);
  return json{{"format", "polystab-experiment"},
              {"version", 1},
              {"problem", ProblemToJson(e.problem)},
              {"initial_state", x0},
              {"input", SignalToJson(e.signal)},
              {"start_time", e.start_time},
              {"duration", e.duration},
              {"samples", e.samples},
              {"noise_radius", e.noise_radius},
              {"seed", e.seed}};
}

inline ExperimentDoc ExperimentFromJson(const json& j) {
  ExperimentDoc e{ProblemFromJson(j.at("problem")),
                  SignalFromJson(j.at("input")),
                  Eigen::VectorXd(),
                  j.at("start_time").get<double>(),
                  j.at("duration").get<double>(),
                  j.at("samples").get<int>(),
                  j.value("noise_radius", 0.0),
                  j.value("seed", std::uint64_t{0})};
  const json& x0 = j.at("initial_state");
  e.initial_state.resize(static_cast<Eigen::Index>(x0.size()));
  for (std::size_t i = 0; i < x0.size(); ++i)
    e.initial_state[static_cast<Eigen::Index>(i)] = x0[i].get<double>();
  if (static_cast<int>(e.signal.size()) != e.problem.model.input_dim())
    throw std::runtime_error(
        "experiment: input signal channel count does not match the plant");
  return e;
}

inline ExperimentDoc ReadExperimentFile(const std::string& path) {
  const json j = ReadJsonFile(path);
  CheckFormat(j, "polystab-experiment", path);
  try {
    return ExperimentFromJson(j);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sampled batches as CSV. Column layout:
//   t, x_1, ..., x_n, xdot_1, ..., xdot_n, u_1, ..., u_m
// The header is authoritative: readers recover n and m from it.

inline void WriteDatasetCsv(std::ostream& os, const Dataset& data) {
  const int n = static_cast<int>(data.states.rows());
  const int m = static_cast<int>(data.inputs.rows());
  const int t_count = data.samples();
  os << "t";
  for (int i = 1; i <= n; ++i) os << ", x_" << i;
  for (int i = 1; i <= n; ++i) os << ", xdot_" << i;
  for (int i = 1; i <= m; ++i) os << ", u_" << i;
  os << "\n";
  for (int t = 0; t < t_count; ++t) {
    os << FormatDouble(data.times.size() == t_count ? data.times[t] : t);
    for (int i = 0; i < n; ++i) os << ", " << FormatDouble(data.states(i, t));
    for (int i = 0; i < n; ++i)
      os << ", " << FormatDouble(data.derivatives(i, t));
    for (int i = 0; i < m; ++i) os << ", " << FormatDouble(data.inputs(i, t));
    os << "\n";
  }
}

namespace detail {

inline std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? ""
                                           : cell.substr(b, e - b + 1));
  }
  return cells;
}

}  // namespace detail

inline Dataset ReadDatasetCsv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("batch CSV: missing header");
  const std::vector<std::string> header = detail::SplitCsvLine(line);
  if (header.empty() || header[0] != "t")
    throw std::runtime_error("batch CSV: header must start with t");
  int n = 0, m = 0;
  std::size_t k = 1;
  while (k < header.size() && header[k] == "x_" + std::to_string(n + 1)) {
    ++n;
    ++k;
  }
  for (int i = 1; i <= n; ++i, ++k)
    if (k >= header.size() || header[k] != "xdot_" + std::to_string(i))
      throw std::runtime_error("batch CSV: expected xdot_" +
                               std::to_string(i) + " in the header");
  while (k < header.size() && header[k] == "u_" + std::to_string(m + 1)) {
    ++m;
    ++k;
  }
  if (n == 0 || k != header.size())
    throw std::runtime_error("batch CSV: malformed header");

  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> cells = detail::SplitCsvLine(line);
    if (static_cast<int>(cells.size()) != 1 + 2 * n + m)
      throw std::runtime_error("batch CSV: row has " +
                               std::to_string(cells.size()) +
                               " cells, expected " +
                               std::to_string(1 + 2 * n + m));
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      std::size_t used = 0;
      try {
        row[i] = std::stod(cells[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[i].size())
        throw std::runtime_error("batch CSV: bad number \"" + cells[i] +
                                 "\"");
    }
    rows.push_back(std::move(row));
  }
  const int t_count = static_cast<int>(rows.size());
  if (t_count == 0) throw std::runtime_error("batch CSV: no samples");
  Dataset d;
  d.states.resize(n, t_count);
  d.derivatives.resize(n, t_count);
  d.inputs.resize(m, t_count);
  d.times.resize(t_count);
  for (int t = 0; t < t_count; ++t) {
    d.times[t] = rows[t][0];
    for (int i = 0; i < n; ++i) d.states(i, t) = rows[t][1 + i];
    for (int i = 0; i < n; ++i) d.derivatives(i, t) = rows[t][1 + n + i];
    for (int i = 0; i < m; ++i) d.inputs(i, t) = rows[t][1 + 2 * n + i];
  }
  return d;
}

inline void WriteDatasetCsvFile(const std::string& path, const Dataset& d) {
  std::ostringstream ss;
  WriteDatasetCsv(ss, d);
  WriteTextFile(path, ss.str());
}

inline Dataset ReadDatasetCsvFile(const std::string& path) {
  std::istringstream ss(ReadTextFile(path));
  try {
    return ReadDatasetCsv(ss);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// SHA-256 for manifest hashes.

namespace detail {

inline std::uint32_t Rotr32(std::uint32_t x, int n) {
  return (x >> n) | (x << (32 - n));
}

class Sha256 {
 public:
  void Update(const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    total_ += len;
    while (len > 0) {
      const std::size_t take = std::min(len, std::size_t{64} - fill_);
      std::memcpy(buf_ + fill_, p, take);
      fill_ += take;
      p += take;
      len -= take;
      if (fill_ == 64) {
        Block(buf_);
        fill_ = 0;
      }
    }
  }

  std::string HexDigest() {
    const std::uint64_t bits = total_ * 8;
    unsigned char pad[64] = {0x80};
    Update(pad, fill_ < 56 ? 56 - fill_ : 120 - fill_);
    unsigned char len8[8];
    for (int i = 0; i < 8; ++i)
      len8[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    Update(len8, 8);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint32_t word : h_)
      for (int b = 28; b >= 0; b -= 4) out += hex[(word >> b) & 0xf];
    return out;
  }

 private:
  void Block(const unsigned char* p) {
    static const std::uint32_t kRound[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b,
        0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01,
        0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7,
        0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc,
        0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152,
        0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
        0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
        0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08,
        0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f,
        0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t{p[4 * i]} << 24) |
             (std::uint32_t{p[4 * i + 1]} << 16) |
             (std::uint32_t{p[4 * i + 2]} << 8) | std::uint32_t{p[4 * i + 3]};
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = Rotr32(w[i - 15], 7) ^ Rotr32(w[i - 15], 18) ^
                               (w[i - 15] >> 3);
      const std::uint32_t s1 = Rotr32(w[i - 2], 17) ^ Rotr32(w[i - 2], 19) ^
                               (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3];
    std::uint32_t e = h_[4], f = h_[5], g = h_[6], h = h_[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = Rotr32(e, 6) ^ Rotr32(e, 11) ^ Rotr32(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = h + s1 + ch + kRound[i] + w[i];
      const std::uint32_t s0 = Rotr32(a, 2) ^ Rotr32(a, 13) ^ Rotr32(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
    h_[5] += f;
    h_[6] += g;
    h_[7] += h;
  }

  std::uint32_t h_[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                         0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  unsigned char buf_[64];
  std::size_t fill_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace detail

inline std::string Sha256Hex(std::string_view text) {
  detail::Sha256 s;
  s.Update(text.data(), text.size());
  return s.HexDigest();
}

inline std::string Sha256HexOfFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  detail::Sha256 s;
  char chunk[65536];
  while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0)
    s.Update(chunk, static_cast<std::size_t>(in.gcount()));
  return s.HexDigest();
}

// ---------------------------------------------------------------------------
// Run manifests: what was run, on which inputs, producing which outputs.

inline std::string NowUtcIso() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::vector<std::string> command;
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash
  std::string created_utc;
  std::string status;  // ok | infeasible | verification_failed | error
  double wall_seconds = 0.0;
  std::optional<std::uint64_t> seed;

  void AddInput(const std::string& path) { inputs[path] = Sha256HexOfFile(path); }
  void AddOutput(const std::string& path) {
    outputs[path] = Sha256HexOfFile(path);
  }
};

inline json ManifestToJson(const RunManifest& m) {
  return json{{"format", "polystab-manifest"},
              {"version", 1},
              {"tool", "polystab"},
              {"tool_version", kToolVersion},
              {"created_utc", m.created_utc.empty() ? NowUtcIso()
                                                    : m.created_utc},
              {"command", m.command},
              {"status", m.status.empty() ? "ok" : m.status},
              {"wall_seconds", m.wall_seconds},
              {"seed", m.seed ? json(*m.seed) : json()},
              {"inputs", m.inputs},
              {"outputs", m.outputs}};
}

inline void WriteManifestFile(const std::string& path, const RunManifest& m) {
  WriteJsonFile(path, ManifestToJson(m));
}

}  // namespace polystab
