// Drives the installed binary end to end through std::system: exit codes,
// output files, record/replay byte equality.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <anchorkit/manuscript_computer.hpp>
#include <anchorkit/serialization.hpp>

#include "test_support.hpp"

namespace fs = std::filesystem;
using anchorkit::json;
using anchorkit::Matrix;
using anchorkit::Vector;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "anchorkit-cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(ANCHORKIT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1 || !WIFEXITED(rc)) return -1;
  return WEXITSTATUS(rc);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (const char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("staircase writes its series, summary, and record") {
  const fs::path out = scratch("staircase");
  REQUIRE(run_cli("staircase --out '" + out.string() + "'") == 0);

  const json summary = anchorkit::load_json((out / "summary.json").string());
  CHECK(summary.at("steps") == 100);
  CHECK(summary.at("convergent").at("terminal_norm").get<double>() ==
        doctest::Approx(0.25556986434925005).epsilon(1e-12));
  CHECK(summary.at("divergent").at("terminal_norm").get<double>() ==
        doctest::Approx(60.255142015943825).epsilon(1e-12));

  const std::string series = read_file(out / "series.csv");
  CHECK(line_count(series) == 102);  // header + steps 0..100
  CHECK(series.rfind("step,", 0) == 0);

  const json record = anchorkit::load_json((out / "record.json").string());
  CHECK(record.at("command") == "staircase");
  CHECK(record.at("config").at("steps") == 100);
  CHECK(record.at("config").at("seed") == 42);
  CHECK(record.at("outputs").at("series") == "series.csv");
}

TEST_CASE("staircase flags override the defaults") {
  const fs::path out = scratch("staircase-flags");
  REQUIRE(run_cli("staircase --steps 20 --gap 4 --out '" + out.string() +
                  "'") == 0);
  const json record = anchorkit::load_json((out / "record.json").string());
  CHECK(record.at("config").at("steps") == 20);
  CHECK(record.at("config").at("gap") == 4);
  const std::string series = read_file(out / "series.csv");
  CHECK(line_count(series) == 22);
}

TEST_CASE("sweep reports slopes and classification counts") {
  const fs::path out = scratch("sweep");
  REQUIRE(run_cli("sweep --blocks 30 --trials 6 --seed 5 --out '" +
                  out.string() + "'") == 0);

  const json sweep = anchorkit::load_json((out / "sweep.json").string());
  CHECK(sweep.at("trials") == 6);
  CHECK(sweep.at("blocks_per_trial") == 30);
  CHECK(sweep.at("mean_slope").get<double>() < 0.0);
  CHECK(sweep.at("classification_counts").at("convergent") == 6);
  CHECK(line_count(read_file(out / "slopes.csv")) == 7);
}

TEST_CASE("run verifies its own envelope") {
  const fs::path out = scratch("run");
  REQUIRE(run_cli("run --dim 3 --events 4 --gap 3 --seed 2 --out '" +
                  out.string() + "'") == 0);
  const json envelope = anchorkit::load_json((out / "envelope.json").string());
  CHECK(envelope.at("at_event_times").at("ok") == true);
  CHECK(envelope.at("at_all_steps").at("ok") == true);
  CHECK(envelope.at("terminal_distance").get<double>() <
        envelope.at("initial_distance").get<double>());
  const std::string trace = read_file(out / "trace.csv");
  CHECK(line_count(trace) == 14);  // header + steps 0..12
}

TEST_CASE("attention-cert certifies the built-in demo layer") {
  const fs::path out = scratch("attention-default");
  REQUIRE(run_cli("attention-cert --out '" + out.string() + "'") == 0);
  const json cert = anchorkit::load_json((out / "certificate.json").string());
  CHECK(cert.at("passes") == true);
  CHECK(cert.at("method") == "overlap");
  CHECK(cert.at("bound").get<double>() == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("attention-cert fails with exit 2 on a non-contracting layer") {
  const fs::path out = scratch("attention-fail");
  json manifest = {{"dim", 4},
                   {"method", "overlap"},
                   {"output_map", anchorkit::matrix_to_json(
                                      Matrix::Identity(4, 4))}};
  json heads = json::array();
  for (int h = 0; h < 2; ++h)
    heads.push_back(
        {{"projector",
          anchorkit::matrix_to_json(testsupport::slice_projector(4, 2 * h, 2))},
         {"modulus_bound", 1.2}});
  manifest["heads"] = heads;
  const fs::path mpath = out / "manifest.json";
  anchorkit::save_json(mpath.string(), manifest);

  CHECK(run_cli("attention-cert --manifest '" + mpath.string() + "' --out '" +
                out.string() + "'") == 2);
  const json cert = anchorkit::load_json((out / "certificate.json").string());
  CHECK(cert.at("passes") == false);
}

TEST_CASE("mc subcommands execute, audit, and perturb a program") {
  const fs::path out = scratch("mc");
  const anchorkit::Index d = 2, n = anchorkit::state_dim(d);
  std::vector<anchorkit::Instruction> ins;
  Vector shift = Vector::Zero(n);
  shift(0) = 0.5;
  ins.push_back(anchorkit::Instruction::translate(shift));
  ins.push_back(anchorkit::Instruction::guarded(
      Matrix::Zero(d, d), Vector::Zero(d), Matrix::Zero(d, d),
      Vector::Constant(d, 0.25)));
  const anchorkit::Program program(d, std::move(ins),
                                   anchorkit::Readout::identity(n));
  const fs::path ppath = out / "program.json";
  anchorkit::save_json(ppath.string(), anchorkit::program_to_json(program));

  SUBCASE("run") {
    REQUIRE(run_cli("mc run --program '" + ppath.string() +
                    "' --input '[1.0, -0.5]' --out '" + out.string() + "'") ==
            0);
    const json result = anchorkit::load_json((out / "result.json").string());
    const auto output = anchorkit::vector_from_json(result.at("output"));
    CHECK(output(0) == 1.5);  // x block shifted
    CHECK(output(1) == -0.5);
    CHECK(output(2) == 0.25);  // y written by the branch-1 block (applied last)
    CHECK(result.at("report").at("op_applications") == 3);
    CHECK(result.at("audit").at("application_bound") == 4);
  }
  SUBCASE("audit") {
    REQUIRE(run_cli("mc audit --program '" + ppath.string() + "' --out '" +
                    out.string() + "'") == 0);
    const json audit = anchorkit::load_json((out / "audit.json").string());
    CHECK(audit.at("audit").at("instructions") == 2);
    CHECK(audit.at("audit").at("guards") == 1);
    CHECK(audit.at("per_instruction_moduli").size() == 2);
  }
  SUBCASE("perturb") {
    REQUIRE(run_cli("mc perturb --program '" + ppath.string() +
                    "' --delta 0.02 --seed 3 --out '" + out.string() + "'") ==
            0);
    const json perturb = anchorkit::load_json((out / "perturb.json").string());
    CHECK(perturb.at("ok") == true);
    CHECK(perturb.at("deviations").size() == 2);
  }
}

TEST_CASE("envelope computes adversarial block factors") {
  const fs::path out = scratch("envelope");
  REQUIRE(run_cli("envelope --adversarial-eps 0.05 --blocks 3 --out '" +
                  out.string() + "'") == 0);
  const json env = anchorkit::load_json((out / "envelope.json").string());
  REQUIRE(env.at("cumulative").size() == 3);
  CHECK(env.at("cumulative").back().get<double>() ==
        doctest::Approx(1.3400956406250003).epsilon(1e-12));
  CHECK(line_count(read_file(out / "blocks.csv")) == 4);

  // The resolved schedule and moduli land in the record for replay.
  const json record = anchorkit::load_json((out / "record.json").string());
  CHECK(record.at("config").at("schedule").at("horizon") == 9);
  CHECK(record.at("config").at("moduli").at("per_step").size() == 9);
}

TEST_CASE("replay reproduces recorded outputs byte-for-byte") {
  const fs::path orig = scratch("replay-orig");
  const fs::path redo = scratch("replay-redo");
  REQUIRE(run_cli("sweep --blocks 25 --trials 5 --seed 11 --out '" +
                  orig.string() + "'") == 0);

  REQUIRE(run_cli("replay --record '" + (orig / "record.json").string() +
                  "' --check --out '" + redo.string() + "'") == 0);
  const json check = anchorkit::load_json((redo / "check.json").string());
  CHECK(check.at("ok") == true);
  CHECK(check.at("mismatched_outputs").empty());
  CHECK(read_file(orig / "sweep.json") == read_file(redo / "sweep.json"));
  CHECK(read_file(orig / "slopes.csv") == read_file(redo / "slopes.csv"));
}

TEST_CASE("replay check flags corrupted originals with exit 2") {
  const fs::path orig = scratch("replay-corrupt");
  const fs::path redo = scratch("replay-corrupt-redo");
  REQUIRE(run_cli("staircase --steps 10 --out '" + orig.string() + "'") == 0);
  std::ofstream(orig / "series.csv", std::ios::app) << "tampered\n";

  CHECK(run_cli("replay --record '" + (orig / "record.json").string() +
                "' --check --out '" + redo.string() + "'") == 2);
  const json check = anchorkit::load_json((redo / "check.json").string());
  CHECK(check.at("ok") == false);
}

TEST_CASE("invalid configurations exit with code 1") {
  const fs::path out = scratch("invalid");
  CHECK(run_cli("run --gap 0 --out '" + out.string() + "'") == 1);
  CHECK(run_cli("attention-cert --method bogus --out '" + out.string() +
                "'") == 1);
  CHECK(run_cli("mc run --out '" + out.string() + "'") == 1);  // no program
  CHECK(run_cli("definitely-not-a-command") == 1);
}
