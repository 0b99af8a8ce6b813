// Command-line front end: wires JSON configs to the library modules and
// writes a reproducible experiment record next to every output.
//
// Config layering: built-in defaults < --config file < explicit flags.
// File references inside configs (programs, matrices, inputs) are inlined
// into the resolved config before the record is written, so a record is
// hermetic: replaying it depends on nothing but the record file.
//
// Exit codes: 0 success; 1 invalid config or arguments; 2 a verification or
// certification failed (bound not met, envelope violated, replay mismatch);
// 3 internal error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include <anchorkit/attention.hpp>
#include <anchorkit/drift_projection.hpp>
#include <anchorkit/envelopes.hpp>
#include <anchorkit/manuscript_computer.hpp>
#include <anchorkit/operators.hpp>
#include <anchorkit/rng.hpp>
#include <anchorkit/scheduling.hpp>
#include <anchorkit/serialization.hpp>
#include <anchorkit/types.hpp>

namespace fs = std::filesystem;
using anchorkit::json;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

json merge(json base, const json& over) {
  if (!base.is_object() || !over.is_object()) return over;
  for (const auto& [key, val] : over.items()) {
    if (base.contains(key) && base[key].is_object() && val.is_object())
      base[key] = merge(base[key], val);
    else
      base[key] = val;
  }
  return base;
}

template <typename T>
void set_if(const CLI::Option* opt, json& j, const char* key, const T& val) {
  if (opt != nullptr && opt->count() > 0) j[key] = val;
}

// A matrix reference is inline rows, a path string, or {"file": path}.
anchorkit::Matrix resolve_matrix(json& ref, const fs::path& base) {
  if (ref.is_array()) return anchorkit::matrix_from_json(ref);
  fs::path p;
  if (ref.is_string())
    p = ref.get<std::string>();
  else if (ref.is_object() && ref.contains("file"))
    p = ref.at("file").get<std::string>();
  else
    throw std::invalid_argument("matrix reference must be rows, a path, or {file}");
  if (p.is_relative()) p = base / p;
  const anchorkit::Matrix M = anchorkit::load_matrix_csv(p.string());
  ref = anchorkit::matrix_to_json(M);  // inline for a hermetic record
  return M;
}

json load_file_or_inline(json& ref, const fs::path& base) {
  if (!ref.is_string()) return ref;
  fs::path p = ref.get<std::string>();
  if (p.is_relative()) p = base / p;
  ref = anchorkit::load_json(p.string());
  return ref;
}

struct CmdResult {
  int code = 0;
  json outputs = json::object();  // logical name -> file name in the out dir
  json summary = json::object();
  std::string stdout_csv;  // printed instead of the summary under --format csv
};

// ---------------------------------------------------------------------------
// Deterministic scenario pieces
// ---------------------------------------------------------------------------

anchorkit::Matrix random_orthogonal(anchorkit::Index d, anchorkit::Philox& rng) {
  anchorkit::Matrix A(d, d);
  for (anchorkit::Index j = 0; j < d; ++j)
    for (anchorkit::Index i = 0; i < d; ++i) A(i, j) = rng.next_gaussian();
  Eigen::HouseholderQR<anchorkit::Matrix> qr(A);
  anchorkit::Matrix Q = qr.householderQ();
  const anchorkit::Vector diag = qr.matrixQR().diagonal();
  for (anchorkit::Index j = 0; j < d; ++j)
    if (diag(j) < 0.0) Q.col(j) *= -1.0;
  return Q;
}

// Affine map x -> z + s Q (x - z): fixes z, modulus exactly |s|.
anchorkit::OperatorSpec scaled_rotation_about(const anchorkit::Vector& z,
                                              double s,
                                              anchorkit::Philox& rng) {
  const anchorkit::Matrix Q = s * random_orthogonal(z.size(), rng);
  return anchorkit::OperatorSpec::affine_map(Q, z - Q * z, std::abs(s));
}

// ---------------------------------------------------------------------------
// staircase
// ---------------------------------------------------------------------------

json staircase_defaults() {
  return {{"seed", 42},          {"steps", 100},
          {"gap", 5},            {"dim", 2},
          {"sigma", 0.0},        {"eps_convergent", 0.01},
          {"alpha_convergent", 0.8}, {"eps_divergent", 0.05},
          {"alpha_divergent", 0.9}};
}

CmdResult cmd_staircase(json& cfg, const fs::path& out) {
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const std::int64_t N = cfg.at("steps").get<std::int64_t>();
  const std::int64_t M = cfg.at("gap").get<std::int64_t>();
  const anchorkit::Index d = cfg.at("dim").get<anchorkit::Index>();
  const double sigma = cfg.at("sigma").get<double>();
  const double ec = cfg.at("eps_convergent").get<double>();
  const double ac = cfg.at("alpha_convergent").get<double>();
  const double ed = cfg.at("eps_divergent").get<double>();
  const double ad = cfg.at("alpha_divergent").get<double>();

  const auto conv = anchorkit::run_sim(seed, N, M, ec, ac, d, sigma);
  const auto div = anchorkit::run_sim(seed, N, M, ed, ad, d, sigma);

  std::vector<std::vector<std::string>> rows;
  rows.reserve(conv.size());
  for (std::size_t t = 0; t < conv.size(); ++t) {
    const bool event = t > 0 && static_cast<std::int64_t>(t) % M == 0;
    rows.push_back({std::to_string(t), anchorkit::format_double(conv[t]),
                    anchorkit::format_double(std::log(conv[t] + 1e-12)),
                    anchorkit::format_double(div[t]),
                    anchorkit::format_double(std::log(div[t] + 1e-12)),
                    event ? "1" : "0"});
  }
  const std::vector<std::string> header = {
      "step",           "norm_convergent", "log_norm_convergent",
      "norm_divergent", "log_norm_divergent", "event_flag"};
  anchorkit::write_csv((out / "series.csv").string(), header, rows);

  const auto regime = [&](double eps, double alpha,
                          const std::vector<double>& norms) {
    return json{{"eps", eps},
                {"alpha", alpha},
                {"block_factor", std::pow(1.0 + eps, M - 1) * alpha},
                {"terminal_norm", norms.back()},
                {"terminal_log_norm", std::log(norms.back() + 1e-12)}};
  };
  CmdResult res;
  res.summary = {{"steps", N},
                 {"gap", M},
                 {"seed", seed},
                 {"convergent", regime(ec, ac, conv)},
                 {"divergent", regime(ed, ad, div)}};
  anchorkit::save_json((out / "summary.json").string(), res.summary);
  res.outputs = {{"series", "series.csv"}, {"summary", "summary.json"}};

  std::ostringstream csv;
  for (std::size_t i = 0; i < header.size(); ++i)
    csv << (i ? "," : "") << header[i];
  csv << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) csv << (i ? "," : "") << row[i];
    csv << '\n';
  }
  res.stdout_csv = csv.str();
  return res;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

json sweep_defaults() {
  return {{"seed", 0},
          {"blocks", 400},
          {"trials", 100},
          {"margin", 0.0},
          {"parallel", 1},
          {"law", json(anchorkit::reference_block_laws())}};
}

CmdResult cmd_sweep(json& cfg, const fs::path& out) {
  const auto law = cfg.at("law").get<anchorkit::BlockLawSpec>();
  const auto result = anchorkit::mc_sweep(
      law, cfg.at("blocks").get<std::int64_t>(),
      cfg.at("trials").get<std::int64_t>(), cfg.at("margin").get<double>(),
      cfg.at("seed").get<std::uint64_t>(), cfg.at("parallel").get<int>());

  anchorkit::save_json((out / "sweep.json").string(), json(result));

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < result.slopes.size(); ++i)
    rows.push_back({std::to_string(i), anchorkit::format_double(result.slopes[i])});
  anchorkit::write_csv((out / "slopes.csv").string(), {"trial", "slope"}, rows);

  char caption[128];
  std::snprintf(caption, sizeof caption, "mean slope=%.4f +/- %.4f (95%% CI)",
                result.mean_slope, result.ci95_halfwidth);
  CmdResult res;
  res.summary = {{"mean_slope", result.mean_slope},
                 {"ci95_halfwidth", result.ci95_halfwidth},
                 {"caption", caption},
                 {"classification_counts",
                  {{"convergent", result.convergent},
                   {"divergent", result.divergent},
                   {"indeterminate", result.indeterminate}}}};
  res.outputs = {{"sweep", "sweep.json"}, {"slopes", "slopes.csv"}};
  std::ostringstream csv;
  csv << "trial,slope\n";
  for (const auto& row : rows) csv << row[0] << ',' << row[1] << '\n';
  res.stdout_csv = csv.str();
  return res;
}

// ---------------------------------------------------------------------------
// run (drift-projection scenario)
// ---------------------------------------------------------------------------

json run_defaults() {
  return {{"seed", 1},     {"dim", 4},    {"events", 12},
          {"gap", 5},      {"rho", 1.01}, {"anchor_rows", 2},
          {"offset", 4.0}};
}

CmdResult cmd_run(json& cfg, const fs::path& out) {
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const anchorkit::Index d = cfg.at("dim").get<anchorkit::Index>();
  const double rho = cfg.at("rho").get<double>();
  const anchorkit::Index anchor_rows = cfg.at("anchor_rows").get<anchorkit::Index>();
  if (anchor_rows < 1 || anchor_rows > d)
    throw std::invalid_argument("run: anchor_rows must lie in [1, dim]");

  std::vector<std::int64_t> gaps;
  if (cfg.contains("gaps")) {
    gaps = cfg.at("gaps").get<std::vector<std::int64_t>>();
  } else {
    gaps.assign(cfg.at("events").get<std::size_t>(),
                cfg.at("gap").get<std::int64_t>());
  }
  if (gaps.empty()) throw std::invalid_argument("run: need at least one event");

  anchorkit::Philox rng(seed, 0);
  anchorkit::RunConfig rc;
  rc.z = 2.0 * rng.gaussian_vector(d);

  rc.schedule.horizon = 0;
  for (const std::int64_t g : gaps) {
    if (g < 1) throw std::invalid_argument("run: gaps must be >= 1");
    rc.schedule.horizon += g;
    rc.schedule.event_times.push_back(rc.schedule.horizon);
  }

  const std::optional<double> intra_mu =
      cfg.contains("intra_mu") && !cfg.at("intra_mu").is_null()
          ? std::optional<double>(cfg.at("intra_mu").get<double>())
          : std::nullopt;
  for (std::int64_t t = 0; t < rc.schedule.horizon; ++t)
    rc.drifts.push_back(scaled_rotation_about(rc.z, rho, rng));
  for (std::size_t k = 0; k < gaps.size(); ++k) {
    anchorkit::EventBlock block;
    if (intra_mu)
      block.intra_maps.push_back(scaled_rotation_about(rc.z, *intra_mu, rng));
    anchorkit::Matrix A(anchor_rows, d);
    for (anchorkit::Index i = 0; i < anchor_rows; ++i)
      for (anchorkit::Index j = 0; j < d; ++j) A(i, j) = rng.next_gaussian();
    block.anchor = anchorkit::AffineSet(A, A * rc.z);
    rc.blocks.push_back(std::move(block));
  }

  anchorkit::Vector dir = rng.gaussian_vector(d);
  dir /= dir.norm();
  rc.x0 = rc.z + cfg.at("offset").get<double>() * dir;

  const auto trace = anchorkit::run(rc);

  // Per-step modulus bounds: rho on drift steps, the intra contraction at
  // event steps (the anchor projection itself is nonexpansive toward z).
  anchorkit::ModuliTrace moduli;
  moduli.per_step.assign(static_cast<std::size_t>(rc.schedule.horizon), rho);
  for (const std::int64_t t : rc.schedule.event_times)
    moduli.per_step[static_cast<std::size_t>(t - 1)] = intra_mu.value_or(1.0);

  const double d0 = trace.distances.front();
  const auto factors = anchorkit::block_products(moduli, rc.schedule);
  std::vector<double> event_bounds;
  for (const double c : factors.cumulative) event_bounds.push_back(d0 * c);
  const auto at_events = anchorkit::verify_envelope(
      trace, event_bounds, anchorkit::VerifyAt::EventTimes);
  const auto step_bounds = anchorkit::partial_product_bounds(moduli, d0);
  const auto at_steps = anchorkit::verify_envelope(trace, step_bounds,
                                                   anchorkit::VerifyAt::AllSteps);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t t = 0; t < trace.distances.size(); ++t)
    rows.push_back({std::to_string(t),
                    anchorkit::format_double(trace.distances[t]),
                    trace.event_marks[t] ? "1" : "0",
                    t == 0 ? "" : anchorkit::format_double(trace.local_moduli[t - 1]),
                    anchorkit::format_double(step_bounds[t])});
  anchorkit::write_csv(
      (out / "trace.csv").string(),
      {"step", "distance", "event_flag", "local_modulus", "bound"}, rows);

  const auto check_json = [](const anchorkit::EnvelopeCheck& c) {
    return json{{"ok", c.ok},
                {"violating_steps", c.violating_steps},
                {"excess", c.excess}};
  };
  CmdResult res;
  res.summary = {{"initial_distance", d0},
                 {"terminal_distance", trace.distances.back()},
                 {"cumulative_factor", factors.cumulative.empty()
                                           ? 1.0
                                           : factors.cumulative.back()},
                 {"at_event_times", check_json(at_events)},
                 {"at_all_steps", check_json(at_steps)}};
  anchorkit::save_json((out / "envelope.json").string(), res.summary);
  res.outputs = {{"trace", "trace.csv"}, {"envelope", "envelope.json"}};
  res.code = (at_events.ok && at_steps.ok) ? 0 : 2;
  std::ostringstream csv;
  csv << "step,distance,event_flag,local_modulus,bound\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) csv << (i ? "," : "") << row[i];
    csv << '\n';
  }
  res.stdout_csv = csv.str();
  return res;
}

// ---------------------------------------------------------------------------
// attention-cert
// ---------------------------------------------------------------------------

json attention_defaults() {
  // Small self-contained demo: four coordinate-slice heads on R^8, isometric
  // output map, uniform head modulus 0.9.
  json heads = json::array();
  for (int h = 0; h < 4; ++h) {
    anchorkit::Matrix P = anchorkit::Matrix::Zero(2, 8);
    P(0, 2 * h) = 1.0;
    P(1, 2 * h + 1) = 1.0;
    heads.push_back({{"projector", anchorkit::matrix_to_json(P)},
                     {"modulus_bound", 0.9}});
  }
  return {{"seed", 7},
          {"dim", 8},
          {"method", "overlap"},
          {"heads", heads},
          {"output_map",
           anchorkit::matrix_to_json(anchorkit::Matrix::Identity(8, 8))},
          {"calibration_points", 256}};
}

CmdResult cmd_attention_cert(json& cfg, const fs::path& out,
                             const fs::path& base) {
  anchorkit::LayerSpec layer;
  layer.dim = cfg.at("dim").get<anchorkit::Index>();
  for (json& h : cfg.at("heads")) {
    anchorkit::HeadSpec head;
    head.projector = resolve_matrix(h.at("projector"), base);
    if (h.contains("modulus_bound"))
      head.modulus_bound = h.at("modulus_bound").get<double>();
    else
      throw std::invalid_argument(
          "attention-cert: every head needs a modulus_bound (head bodies are "
          "not expressible in a manifest)");
    layer.heads.push_back(std::move(head));
  }
  layer.output_map = resolve_matrix(cfg.at("output_map"), base);

  const auto method =
      anchorkit::cert_method_from_string(cfg.at("method").get<std::string>());
  const auto cert = anchorkit::certify_layer(
      layer, method, cfg.value("calibration_points", 256),
      cfg.value("seed", std::uint64_t{7}));

  CmdResult res;
  res.summary = json(cert);
  anchorkit::save_json((out / "certificate.json").string(), res.summary);
  res.outputs = {{"certificate", "certificate.json"}};
  res.code = cert.passes ? 0 : 2;
  return res;
}

// ---------------------------------------------------------------------------
// mc run / audit / perturb
// ---------------------------------------------------------------------------

CmdResult cmd_mc_run(json& cfg, const fs::path& out, const fs::path& base) {
  if (!cfg.contains("program"))
    throw std::invalid_argument("mc run: config needs a program");
  const auto program =
      anchorkit::program_from_json(load_file_or_inline(cfg.at("program"), base));
  if (!cfg.contains("input"))
    throw std::invalid_argument("mc run: config needs an input vector");
  const anchorkit::Vector input =
      anchorkit::vector_from_json(load_file_or_inline(cfg.at("input"), base));

  const auto [output, report] = anchorkit::execute(program, input);
  const auto audit = anchorkit::complexity_audit(program);

  CmdResult res;
  res.summary = {{"output", anchorkit::vector_to_json(output)},
                 {"report", json(report)},
                 {"audit", json(audit)}};
  anchorkit::save_json((out / "result.json").string(), res.summary);
  res.outputs = {{"result", "result.json"}};
  if (report.op_applications > audit.application_bound) res.code = 2;
  return res;
}

CmdResult cmd_mc_audit(json& cfg, const fs::path& out, const fs::path& base) {
  if (!cfg.contains("program"))
    throw std::invalid_argument("mc audit: config needs a program");
  const auto program =
      anchorkit::program_from_json(load_file_or_inline(cfg.at("program"), base));
  const auto audit = anchorkit::complexity_audit(program);

  CmdResult res;
  res.summary = {{"audit", json(audit)},
                 {"per_instruction_moduli", program.instruction_moduli()}};
  anchorkit::save_json((out / "audit.json").string(), res.summary);
  res.outputs = {{"audit", "audit.json"}};
  return res;
}

CmdResult cmd_mc_perturb(json& cfg, const fs::path& out, const fs::path& base) {
  if (!cfg.contains("program"))
    throw std::invalid_argument("mc perturb: config needs a program");
  const auto program =
      anchorkit::program_from_json(load_file_or_inline(cfg.at("program"), base));

  std::vector<double> deltas;
  if (cfg.contains("deltas")) {
    deltas = load_file_or_inline(cfg.at("deltas"), base)
                 .get<std::vector<double>>();
  } else {
    deltas.assign(program.instructions().size(), cfg.value("delta", 0.01));
    cfg["deltas"] = deltas;
  }

  anchorkit::Vector s0 = anchorkit::Vector::Zero(program.full_dim());
  if (cfg.contains("initial_state"))
    s0 = anchorkit::vector_from_json(cfg.at("initial_state"));

  anchorkit::Philox rng(cfg.value("seed", std::uint64_t{0}), 0);
  const auto report = anchorkit::perturbed_execute(program, s0, deltas, rng);

  CmdResult res;
  res.summary = json(report);
  anchorkit::save_json((out / "perturb.json").string(), res.summary);
  res.outputs = {{"perturb", "perturb.json"}};
  res.code = report.ok ? 0 : 2;
  return res;
}

// ---------------------------------------------------------------------------
// envelope
// ---------------------------------------------------------------------------

CmdResult cmd_envelope(json& cfg, const fs::path& out, const fs::path& base) {
  anchorkit::EventSchedule schedule;
  anchorkit::ModuliTrace moduli;
  if (cfg.contains("adversarial")) {
    const json& adv = cfg.at("adversarial");
    auto [s, m] = anchorkit::adversarial_schedule(
        adv.at("epsilon").get<double>(), adv.at("blocks").get<std::int64_t>());
    schedule = std::move(s);
    moduli = std::move(m);
    cfg["schedule"] = schedule;
    cfg["moduli"] = moduli;
  } else {
    if (!cfg.contains("schedule") || !cfg.contains("moduli"))
      throw std::invalid_argument(
          "envelope: config needs schedule + moduli, or an adversarial block");
    schedule = load_file_or_inline(cfg.at("schedule"), base)
                   .get<anchorkit::EventSchedule>();
    moduli = load_file_or_inline(cfg.at("moduli"), base)
                 .get<anchorkit::ModuliTrace>();
  }

  const auto factors = anchorkit::block_products(moduli, schedule);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < factors.lambdas.size(); ++k)
    rows.push_back({std::to_string(k + 1),
                    std::to_string(schedule.event_times[k]),
                    anchorkit::format_double(factors.lambdas[k]),
                    anchorkit::format_double(factors.cumulative[k]),
                    anchorkit::format_double(factors.log_cumulative[k])});
  anchorkit::write_csv((out / "blocks.csv").string(),
                       {"block", "event_time", "lambda", "cumulative",
                        "log_cumulative"},
                       rows);

  CmdResult res;
  res.summary = {{"blocks", factors.lambdas.size()},
                 {"lambdas", factors.lambdas},
                 {"cumulative", factors.cumulative},
                 {"log_lambdas", factors.log_lambdas},
                 {"log_cumulative", factors.log_cumulative}};
  if (cfg.contains("d0")) {
    const double d0 = cfg.at("d0").get<double>();
    std::vector<double> bounds;
    for (const double c : factors.cumulative) bounds.push_back(d0 * c);
    res.summary["event_bounds"] = bounds;
  }
  anchorkit::save_json((out / "envelope.json").string(), res.summary);
  res.outputs = {{"envelope", "envelope.json"}, {"blocks", "blocks.csv"}};
  std::ostringstream csv;
  csv << "block,event_time,lambda,cumulative,log_cumulative\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) csv << (i ? "," : "") << row[i];
    csv << '\n';
  }
  res.stdout_csv = csv.str();
  return res;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

json defaults_for(const std::string& command) {
  if (command == "staircase") return staircase_defaults();
  if (command == "sweep") return sweep_defaults();
  if (command == "run") return run_defaults();
  if (command == "attention-cert") return attention_defaults();
  if (command == "mc run" || command == "mc audit")
    return json{};
  if (command == "mc perturb") return {{"seed", 0}, {"delta", 0.01}};
  if (command == "envelope") return json{};
  throw std::invalid_argument("unknown command '" + command + "'");
}

CmdResult dispatch(const std::string& command, json& cfg, const fs::path& out,
                   const fs::path& base) {
  if (command == "staircase") return cmd_staircase(cfg, out);
  if (command == "sweep") return cmd_sweep(cfg, out);
  if (command == "run") return cmd_run(cfg, out);
  if (command == "attention-cert") return cmd_attention_cert(cfg, out, base);
  if (command == "mc run") return cmd_mc_run(cfg, out, base);
  if (command == "mc audit") return cmd_mc_audit(cfg, out, base);
  if (command == "mc perturb") return cmd_mc_perturb(cfg, out, base);
  if (command == "envelope") return cmd_envelope(cfg, out, base);
  throw std::invalid_argument("unknown command '" + command + "'");
}

int run_and_record(const std::string& command, json cfg, const fs::path& out,
                   const std::string& format, const fs::path& base) {
  fs::create_directories(out);
  const auto t0 = std::chrono::steady_clock::now();
  CmdResult res = dispatch(command, cfg, out, base);
  const double duration =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  anchorkit::ExperimentRecord record;
  record.command = command;
  record.config = cfg;
  record.seed = cfg.is_object() ? cfg.value("seed", std::uint64_t{0})
                                : std::uint64_t{0};
  record.version = anchorkit::kVersion;
  record.outputs = res.outputs;
  record.duration_seconds = duration;
  anchorkit::save_json((out / "record.json").string(), json(record));

  if (format == "csv" && !res.stdout_csv.empty())
    std::cout << res.stdout_csv;
  else
    std::cout << json({{"command", command},
                       {"exit_code", res.code},
                       {"out_dir", out.string()},
                       {"outputs", res.outputs},
                       {"summary", res.summary}})
                     .dump(2)
              << '\n';
  return res.code;
}

int cmd_replay(const fs::path& record_path, fs::path out, bool check,
               const std::string& format) {
  const json rec_json = anchorkit::load_json(record_path.string());
  const auto record = rec_json.get<anchorkit::ExperimentRecord>();
  const fs::path orig_dir = record_path.parent_path();
  if (out.empty()) out = orig_dir.string() + "-replay";

  json cfg = record.config;
  const int code = run_and_record(record.command, cfg, out, format, orig_dir);
  if (!check) return code;

  json mismatches = json::array();
  for (const auto& [name, file] : record.outputs.items()) {
    const fs::path a = orig_dir / file.get<std::string>();
    const fs::path b = out / file.get<std::string>();
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    if (!fa || !fb || sa.str() != sb.str()) mismatches.push_back(name);
  }
  const json check_report = {{"record", record_path.string()},
                             {"ok", mismatches.empty()},
                             {"mismatched_outputs", mismatches}};
  anchorkit::save_json((out / "check.json").string(), check_report);
  std::cout << check_report.dump(2) << '\n';
  if (!mismatches.empty()) return 2;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchorkit: drift-projection envelopes, layer certification, "
               "and nonexpansive-program execution"};
  app.require_subcommand(1);

  std::string config_path, out_dir, format = "json";
  std::uint64_t seed = 0;
  int parallel = 1;
  app.add_option("--config", config_path, "JSON config file")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--format", format, "stdout format")
      ->check(CLI::IsMember({"csv", "json"}));
  const auto* seed_opt = app.add_option("--seed", seed, "master seed");
  const auto* parallel_opt =
      app.add_option("--parallel", parallel, "worker threads for sweeps");

  // staircase
  auto* sc = app.add_subcommand("staircase", "two-regime simulation series");
  std::int64_t sc_steps = 100, sc_gap = 5;
  double sc_sigma = 0.0;
  anchorkit::Index sc_dim = 2;
  const auto* sc_steps_o = sc->add_option("--steps", sc_steps);
  const auto* sc_gap_o = sc->add_option("--gap", sc_gap);
  const auto* sc_dim_o = sc->add_option("--dim", sc_dim);
  const auto* sc_sigma_o = sc->add_option("--sigma", sc_sigma);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Monte-Carlo log-factor sweep");
  std::int64_t sw_blocks = 400, sw_trials = 100;
  double sw_margin = 0.0;
  const auto* sw_blocks_o = sw->add_option("--blocks", sw_blocks);
  const auto* sw_trials_o = sw->add_option("--trials", sw_trials);
  const auto* sw_margin_o = sw->add_option("--margin", sw_margin);

  // run
  auto* rn = app.add_subcommand("run", "drift-projection run with envelope check");
  anchorkit::Index rn_dim = 4;
  std::int64_t rn_events = 12, rn_gap = 5;
  double rn_rho = 1.01, rn_intra_mu = 0.0, rn_offset = 4.0;
  const auto* rn_dim_o = rn->add_option("--dim", rn_dim);
  const auto* rn_events_o = rn->add_option("--events", rn_events);
  const auto* rn_gap_o = rn->add_option("--gap", rn_gap);
  const auto* rn_rho_o = rn->add_option("--rho", rn_rho);
  const auto* rn_mu_o = rn->add_option("--intra-mu", rn_intra_mu);
  const auto* rn_offset_o = rn->add_option("--offset", rn_offset);

  // attention-cert
  auto* ac = app.add_subcommand("attention-cert", "layer contraction certificate");
  std::string ac_manifest, ac_method;
  const auto* ac_manifest_o =
      ac->add_option("--manifest", ac_manifest, "layer manifest JSON")
          ->check(CLI::ExistingFile);
  const auto* ac_method_o = ac->add_option(
      "--method", ac_method, "orthogonal | general | overlap");

  // mc
  auto* mc = app.add_subcommand("mc", "nonexpansive program tools");
  mc->require_subcommand(1);
  std::string mc_program, mc_input, mc_deltas;
  double mc_delta = 0.01;
  auto* mc_run = mc->add_subcommand("run", "execute a program");
  const auto* mc_run_prog_o =
      mc_run->add_option("--program", mc_program)->check(CLI::ExistingFile);
  const auto* mc_run_input_o = mc_run->add_option("--input", mc_input);
  auto* mc_audit = mc->add_subcommand("audit", "static complexity audit");
  const auto* mc_audit_prog_o =
      mc_audit->add_option("--program", mc_program)->check(CLI::ExistingFile);
  auto* mc_perturb = mc->add_subcommand("perturb", "perturbed execution check");
  const auto* mc_perturb_prog_o =
      mc_perturb->add_option("--program", mc_program)->check(CLI::ExistingFile);
  const auto* mc_deltas_o = mc_perturb->add_option("--deltas", mc_deltas);
  const auto* mc_delta_o = mc_perturb->add_option("--delta", mc_delta);

  // envelope
  auto* en = app.add_subcommand("envelope", "block factors from a schedule");
  std::string en_moduli, en_schedule;
  double en_adv_eps = 0.0, en_d0 = 0.0;
  std::int64_t en_adv_blocks = 0;
  const auto* en_moduli_o = en->add_option("--moduli", en_moduli);
  const auto* en_schedule_o = en->add_option("--schedule", en_schedule);
  const auto* en_adv_eps_o = en->add_option("--adversarial-eps", en_adv_eps);
  const auto* en_adv_blocks_o = en->add_option("--blocks", en_adv_blocks);
  const auto* en_d0_o = en->add_option("--d0", en_d0);

  // replay
  auto* rp = app.add_subcommand("replay", "re-run a recorded experiment");
  std::string rp_record;
  bool rp_check = false;
  rp->add_option("--record", rp_record, "record.json path")
      ->required()
      ->check(CLI::ExistingFile);
  rp->add_flag("--check", rp_check, "byte-compare outputs against the originals");

  // Global options (--out, --seed, --format, ...) may appear after the
  // subcommand name; unmatched options climb back to the parent parser.
  for (CLI::App* s : {sc, sw, rn, ac, mc, mc_run, mc_audit, mc_perturb, en, rp})
    s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::string command;
    json overrides = json::object();
    if (sc->parsed()) {
      command = "staircase";
      set_if(sc_steps_o, overrides, "steps", sc_steps);
      set_if(sc_gap_o, overrides, "gap", sc_gap);
      set_if(sc_dim_o, overrides, "dim", sc_dim);
      set_if(sc_sigma_o, overrides, "sigma", sc_sigma);
    } else if (sw->parsed()) {
      command = "sweep";
      set_if(sw_blocks_o, overrides, "blocks", sw_blocks);
      set_if(sw_trials_o, overrides, "trials", sw_trials);
      set_if(sw_margin_o, overrides, "margin", sw_margin);
      set_if(parallel_opt, overrides, "parallel", parallel);
    } else if (rn->parsed()) {
      command = "run";
      set_if(rn_dim_o, overrides, "dim", rn_dim);
      set_if(rn_events_o, overrides, "events", rn_events);
      set_if(rn_gap_o, overrides, "gap", rn_gap);
      set_if(rn_rho_o, overrides, "rho", rn_rho);
      set_if(rn_mu_o, overrides, "intra_mu", rn_intra_mu);
      set_if(rn_offset_o, overrides, "offset", rn_offset);
    } else if (ac->parsed()) {
      command = "attention-cert";
      if (ac_manifest_o->count() > 0)
        overrides = anchorkit::load_json(ac_manifest);
      set_if(ac_method_o, overrides, "method", ac_method);
    } else if (mc->parsed()) {
      if (mc_run->parsed()) {
        command = "mc run";
        set_if(mc_run_prog_o, overrides, "program", mc_program);
        if (mc_run_input_o->count() > 0) {
          // Accept a file path or an inline JSON array.
          if (!mc_input.empty() && mc_input.front() == '[')
            overrides["input"] = json::parse(mc_input);
          else
            overrides["input"] = mc_input;
        }
      } else if (mc_audit->parsed()) {
        command = "mc audit";
        set_if(mc_audit_prog_o, overrides, "program", mc_program);
      } else {
        command = "mc perturb";
        set_if(mc_perturb_prog_o, overrides, "program", mc_program);
        if (mc_deltas_o->count() > 0) {
          if (!mc_deltas.empty() && mc_deltas.front() == '[')
            overrides["deltas"] = json::parse(mc_deltas);
          else
            overrides["deltas"] = mc_deltas;
        }
        set_if(mc_delta_o, overrides, "delta", mc_delta);
      }
    } else if (en->parsed()) {
      command = "envelope";
      set_if(en_moduli_o, overrides, "moduli", en_moduli);
      set_if(en_schedule_o, overrides, "schedule", en_schedule);
      if (en_adv_eps_o->count() > 0 || en_adv_blocks_o->count() > 0)
        overrides["adversarial"] = {{"epsilon", en_adv_eps},
                                    {"blocks", en_adv_blocks}};
      set_if(en_d0_o, overrides, "d0", en_d0);
    } else if (rp->parsed()) {
      return cmd_replay(rp_record, out_dir, rp_check, format);
    }

    json cfg = defaults_for(command);
    fs::path base = fs::current_path();
    if (!config_path.empty()) {
      cfg = merge(std::move(cfg), anchorkit::load_json(config_path));
      base = fs::absolute(config_path).parent_path();
    }
    set_if(seed_opt, overrides, "seed", seed);
    cfg = merge(std::move(cfg), overrides);

    std::string slug = command;
    std::replace(slug.begin(), slug.end(), ' ', '-');
    const fs::path out = out_dir.empty() ? fs::path("anchorkit-" + slug)
                                         : fs::path(out_dir);
    return run_and_record(command, std::move(cfg), out, format, base);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
}
