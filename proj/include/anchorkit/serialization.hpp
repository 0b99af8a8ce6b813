#pragma once

// JSON and CSV round-tripping for every record the CLI emits or ingests.
// All floats are written locale-free with enough digits to reparse to the
// identical bits, so re-running a recorded experiment can be compared
// byte-for-byte against its original outputs.
//
// Matrix CSV format: first line "rows,cols", then one comma-separated line
// per row.  JSON matrices are nested row-major arrays.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "attention.hpp"
#include "envelopes.hpp"
#include "manuscript_computer.hpp"
#include "scheduling.hpp"
#include "types.hpp"

namespace anchorkit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Locale-free float text
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v,
                                 std::chars_format::general, 17);
  if (res.ec != std::errc())
    throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw std::invalid_argument("parse_double: bad float '" +
                                std::string(text) + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Dense types
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Matrix& M) {
  json rows = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array())
    throw std::invalid_argument("matrix_from_json: expected an array of rows");
  const Index rows = static_cast<Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Index cols = static_cast<Index>(j.at(0).size());
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Index>(row.size()) != cols)
      throw std::invalid_argument("matrix_from_json: ragged rows");
    for (Index c = 0; c < cols; ++c)
      M(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return M;
}

inline json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Vector vector_from_json(const json& j) {
  if (!j.is_array())
    throw std::invalid_argument("vector_from_json: expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i)
    v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline void save_matrix_csv(const std::string& path, const Matrix& M) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_matrix_csv: cannot open " + path);
  out << M.rows() << ',' << M.cols() << '\n';
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      if (j) out << ',';
      out << format_double(M(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("save_matrix_csv: write failed for " + path);
}

inline Matrix load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_matrix_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_matrix_csv: empty file " + path);
  const auto comma = line.find(',');
  if (comma == std::string::npos)
    throw std::runtime_error("load_matrix_csv: missing dims header in " + path);
  const Index rows = static_cast<Index>(std::stoll(line.substr(0, comma)));
  const Index cols = static_cast<Index>(std::stoll(line.substr(comma + 1)));
  if (rows < 0 || cols < 0)
    throw std::runtime_error("load_matrix_csv: negative dims in " + path);
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line))
      throw std::runtime_error("load_matrix_csv: truncated file " + path);
    std::size_t at = 0;
    for (Index j = 0; j < cols; ++j) {
      std::size_t next = line.find(',', at);
      if (next == std::string::npos) next = line.size();
      if (at >= line.size() && j < cols)
        throw std::runtime_error("load_matrix_csv: short row in " + path);
      M(i, j) = parse_double(
          std::string_view(line).substr(at, next - at));
      at = next + 1;
    }
  }
  return M;
}

// One CSV table writer for traces and histograms: header row, then cells
// already rendered as text (use format_double for floats).
inline void write_csv(const std::string& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out << ',';
    out << header[i];
  }
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("write_csv: row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Scheduling types
// ---------------------------------------------------------------------------

inline void to_json(json& j, const GapLaw& law) {
  if (law.kind == GapLaw::Kind::Fixed)
    j = {{"kind", "fixed"}, {"value", static_cast<std::int64_t>(law.value)}};
  else
    j = {{"kind", "one_plus_geometric"}, {"mean", law.value}};
}

inline void from_json(const json& j, GapLaw& law) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fixed")
    law = GapLaw::fixed(j.at("value").get<std::int64_t>());
  else if (kind == "one_plus_geometric")
    law = GapLaw::one_plus_geometric(j.at("mean").get<double>());
  else
    throw std::invalid_argument("GapLaw: unknown kind '" + kind + "'");
}

inline void to_json(json& j, const RhoLaw& law) {
  if (law.kind == RhoLaw::Kind::Fixed)
    j = {{"kind", "fixed"}, {"value", law.a}};
  else
    j = {{"kind", "lognormal"}, {"loc", law.a}, {"scale", law.b}};
}

inline void from_json(const json& j, RhoLaw& law) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fixed")
    law = RhoLaw::fixed(j.at("value").get<double>());
  else if (kind == "lognormal")
    law = RhoLaw::lognormal(j.at("loc").get<double>(),
                            j.at("scale").get<double>());
  else
    throw std::invalid_argument("RhoLaw: unknown kind '" + kind + "'");
}

inline void to_json(json& j, const MuLaw& law) {
  if (law.kind == MuLaw::Kind::Fixed)
    j = {{"kind", "fixed"}, {"value", law.a}};
  else
    j = {{"kind", "gaussian"}, {"mean", law.a}, {"sd", law.b}};
}

inline void from_json(const json& j, MuLaw& law) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fixed")
    law = MuLaw::fixed(j.at("value").get<double>());
  else if (kind == "gaussian")
    law = MuLaw::gaussian(j.at("mean").get<double>(), j.at("sd").get<double>());
  else
    throw std::invalid_argument("MuLaw: unknown kind '" + kind + "'");
}

inline void to_json(json& j, const BlockLawSpec& law) {
  j = {{"gap", law.gap_law}, {"rho", law.rho_law}, {"mu", law.mu_law}};
}

inline void from_json(const json& j, BlockLawSpec& law) {
  j.at("gap").get_to(law.gap_law);
  j.at("rho").get_to(law.rho_law);
  j.at("mu").get_to(law.mu_law);
}

inline void to_json(json& j, const SweepResult& r) {
  j = {{"slopes", r.slopes},
       {"mean_slope", r.mean_slope},
       {"ci95_halfwidth", r.ci95_halfwidth},
       {"classification_counts",
        {{"convergent", r.convergent},
         {"divergent", r.divergent},
         {"indeterminate", r.indeterminate}}},
       {"mu_resamples", r.mu_resamples},
       {"seed", r.seed},
       {"blocks_per_trial", r.K},
       {"trials", r.trials}};
}

inline void from_json(const json& j, SweepResult& r) {
  j.at("slopes").get_to(r.slopes);
  j.at("mean_slope").get_to(r.mean_slope);
  j.at("ci95_halfwidth").get_to(r.ci95_halfwidth);
  const json& counts = j.at("classification_counts");
  counts.at("convergent").get_to(r.convergent);
  counts.at("divergent").get_to(r.divergent);
  counts.at("indeterminate").get_to(r.indeterminate);
  j.at("mu_resamples").get_to(r.mu_resamples);
  j.at("seed").get_to(r.seed);
  j.at("blocks_per_trial").get_to(r.K);
  j.at("trials").get_to(r.trials);
}

// ---------------------------------------------------------------------------
// Envelope types
// ---------------------------------------------------------------------------

inline void to_json(json& j, const EventSchedule& s) {
  j = {{"event_times", s.event_times}, {"horizon", s.horizon}};
}

inline void from_json(const json& j, EventSchedule& s) {
  j.at("event_times").get_to(s.event_times);
  j.at("horizon").get_to(s.horizon);
  validate(s);
}

inline void to_json(json& j, const ModuliTrace& m) {
  j = {{"per_step", m.per_step}};
}

inline void from_json(const json& j, ModuliTrace& m) {
  j.at("per_step").get_to(m.per_step);
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

inline CertMethod cert_method_from_string(const std::string& s) {
  if (s == "orthogonal") return CertMethod::Orthogonal;
  if (s == "general") return CertMethod::General;
  if (s == "overlap") return CertMethod::Overlap;
  throw std::invalid_argument("unknown certificate method '" + s + "'");
}

inline void to_json(json& j, const ContractionCertificate& c) {
  char digest[19];
  std::snprintf(digest, sizeof digest, "0x%016llx",
                static_cast<unsigned long long>(c.inputs_digest));
  j = {{"method", to_string(c.method)},
       {"bound", c.bound},
       {"margin", c.margin},
       {"passes", c.passes},
       {"inputs_digest", digest},
       {"witnesses",
        {{"head_moduli", c.head_moduli},
         {"projector_norms", c.projector_norms},
         {"overlap_index", c.overlap},
         {"lambda_max_s", c.lambda_max_s},
         {"output_map_norm", c.output_map_norm}}}};
}

// ---------------------------------------------------------------------------
// Programs
// ---------------------------------------------------------------------------

inline json instruction_to_json(const Instruction& ins) {
  json j{{"kind", to_string(ins.kind)}};
  switch (ins.kind) {
    case Instruction::Kind::ConstantWrite:
      j["target"] = vector_to_json(ins.target);
      break;
    case Instruction::Kind::AffineStep:
      j["matrix"] = matrix_to_json(ins.M);
      j["offset"] = vector_to_json(ins.c);
      break;
    case Instruction::Kind::Permute:
      j["perm"] = ins.perm;
      break;
    case Instruction::Kind::Translate:
      j["offset"] = vector_to_json(ins.c);
      break;
    case Instruction::Kind::Guarded:
      j["m0"] = matrix_to_json(ins.M0);
      j["c0"] = vector_to_json(ins.c0);
      j["m1"] = matrix_to_json(ins.M1);
      j["c1"] = vector_to_json(ins.c1);
      break;
  }
  return j;
}

inline Instruction instruction_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant_write")
    return Instruction::constant_write(vector_from_json(j.at("target")));
  if (kind == "affine_step")
    return Instruction::affine_step(matrix_from_json(j.at("matrix")),
                                    vector_from_json(j.at("offset")));
  if (kind == "permute")
    return Instruction::permute(j.at("perm").get<std::vector<Index>>());
  if (kind == "translate")
    return Instruction::translate(vector_from_json(j.at("offset")));
  if (kind == "guarded")
    return Instruction::guarded(
        matrix_from_json(j.at("m0")), vector_from_json(j.at("c0")),
        matrix_from_json(j.at("m1")), vector_from_json(j.at("c1")));
  throw std::invalid_argument("unknown instruction kind '" + kind + "'");
}

inline json program_to_json(const Program& p) {
  json ins = json::array();
  for (const Instruction& i : p.instructions())
    ins.push_back(instruction_to_json(i));
  return {{"register_dim", p.register_dim()},
          {"encoding", {{"fractional_bits", p.encoding().fractional_bits}}},
          {"instructions", std::move(ins)},
          {"readout",
           {{"indices", p.readout().indices},
            {"matrix", matrix_to_json(p.readout().R)},
            {"offset", vector_to_json(p.readout().r0)}}}};
}

inline Program program_from_json(const json& j) {
  const Index d = j.at("register_dim").get<Index>();
  Encoding enc;
  if (j.contains("encoding"))
    enc.fractional_bits = j.at("encoding").at("fractional_bits").get<int>();
  std::vector<Instruction> ins;
  for (const json& item : j.at("instructions"))
    ins.push_back(instruction_from_json(item));
  Readout ro;
  if (j.contains("readout")) {
    const json& r = j.at("readout");
    ro.indices = r.at("indices").get<std::vector<Index>>();
    ro.R = matrix_from_json(r.at("matrix"));
    ro.r0 = vector_from_json(r.at("offset"));
  } else {
    ro = Readout::identity(state_dim(d));
  }
  return Program(d, std::move(ins), std::move(ro), enc);
}

inline void to_json(json& j, const ComplexityAudit& a) {
  j = {{"instructions", a.instructions},
       {"guards", a.guards},
       {"application_bound", a.application_bound},
       {"modulus_bound", a.modulus_bound}};
}

inline void to_json(json& j, const ExecutionReport& r) {
  j = {{"op_applications", r.op_applications},
       {"guard_projections", r.guard_projections},
       {"constraint_projections", r.constraint_projections},
       {"end_to_end_modulus_bound", r.end_to_end_modulus_bound},
       {"guard_register_wellformed", r.guard_register_wellformed}};
}

inline void to_json(json& j, const PerturbationReport& r) {
  j = {{"deviations", r.deviations},
       {"bounds", r.bounds},
       {"violating_steps", r.violating_steps},
       {"ok", r.ok},
       {"clean_final", vector_to_json(r.clean_final)},
       {"perturbed_final", vector_to_json(r.perturbed_final)}};
}

// ---------------------------------------------------------------------------
// Experiment records
// ---------------------------------------------------------------------------

// Everything needed to reproduce a CLI invocation: the resolved config is
// replayed verbatim, and the outputs it names must come back byte-identical.
struct ExperimentRecord {
  std::string command;
  json config;  // fully resolved (defaults + file + flags)
  std::uint64_t seed = 0;
  std::string version;
  json outputs;  // {logical name: file path or inline value}
  double duration_seconds = 0.0;
};

inline void to_json(json& j, const ExperimentRecord& r) {
  j = {{"command", r.command},       {"config", r.config},
       {"seed", r.seed},             {"version", r.version},
       {"outputs", r.outputs},       {"duration_seconds", r.duration_seconds}};
}

inline void from_json(const json& j, ExperimentRecord& r) {
  j.at("command").get_to(r.command);
  r.config = j.at("config");
  j.at("seed").get_to(r.seed);
  j.at("version").get_to(r.version);
  r.outputs = j.contains("outputs") ? j.at("outputs") : json::object();
  r.duration_seconds = j.value("duration_seconds", 0.0);
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_json: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_json: write failed for " + path);
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_json: cannot open " + path);
  return json::parse(in);
}

}  // namespace anchorkit
