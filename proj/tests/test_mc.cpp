#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include <anchorkit/manuscript_computer.hpp>
#include <anchorkit/rng.hpp>

#include "test_support.hpp"

using anchorkit::Encoding;
using anchorkit::GuardedBlock;
using anchorkit::Index;
using anchorkit::Instruction;
using anchorkit::Matrix;
using anchorkit::MCState;
using anchorkit::Philox;
using anchorkit::Program;
using anchorkit::Readout;
using anchorkit::Vector;

namespace {

// Nonexpansive full-state map that leaves the guard coordinate alone.
Matrix state_map(Index d, double scale, std::uint64_t seed) {
  const Index n = anchorkit::state_dim(d);
  Matrix M = Matrix::Zero(n, n);
  M.topLeftCorner(n - 1, n - 1) =
      scale * testsupport::random_orthogonal(n - 1, seed);
  M(n - 1, n - 1) = scale;
  return M;
}

Vector packed(Index d, std::uint64_t seed, double b) {
  MCState s;
  s.x = testsupport::random_vector(d, seed);
  s.y = testsupport::random_vector(d, seed + 1);
  s.b = b;
  return anchorkit::pack(s);
}

}  // namespace

TEST_CASE("state packing round trips") {
  CHECK(anchorkit::state_dim(3) == 7);
  MCState s;
  s.x = testsupport::random_vector(3, 1);
  s.y = testsupport::random_vector(3, 2);
  s.b = 1.0;
  const Vector v = anchorkit::pack(s);
  REQUIRE(v.size() == 7);
  const MCState back = anchorkit::unpack(v, 3);
  CHECK((back.x - s.x).norm() == 0.0);
  CHECK((back.y - s.y).norm() == 0.0);
  CHECK(back.b == 1.0);

  s.y = testsupport::random_vector(2, 3);
  CHECK_THROWS_AS(anchorkit::pack(s), std::invalid_argument);
}

TEST_CASE("guarded block projects onto the branch graph and passes the guard") {
  const Index d = 3;
  const Matrix M = testsupport::symmetric_with_norm(d, 0.8, 10);
  const Vector c = testsupport::random_vector(d, 11);

  for (const double b : {0.0, 1.0, 0.3}) {
    for (const int branch : {0, 1}) {
      MCState s;
      s.x = testsupport::random_vector(d, 12);
      s.y = testsupport::random_vector(d, 13);
      s.b = b;
      const MCState out = anchorkit::guarded_block(branch, M, c, s);

      const Vector oracle = testsupport::graph_projection(M, c, s.x, s.y);
      CHECK((out.x - oracle.head(d)).norm() <= 1e-9);
      CHECK((out.y - oracle.tail(d)).norm() <= 1e-9);
      CHECK(out.b == doctest::Approx(b).epsilon(1e-12));
      CHECK((out.y - (M * out.x + c)).norm() <= 1e-8);  // lands on the graph
    }
  }
}

TEST_CASE("guarded block is firmly nonexpansive with orthogonal split") {
  const Index d = 2;
  const Matrix M = testsupport::symmetric_with_norm(d, 0.9, 20);
  const Vector c = testsupport::random_vector(d, 21);
  const GuardedBlock block(1, M, c);

  for (std::uint64_t s = 0; s < 100; ++s) {
    const Vector u = packed(d, 100 + 3 * s, 0.25 * static_cast<double>(s % 5));
    const Vector v = packed(d, 101 + 3 * s, 1.0 - 0.1 * static_cast<double>(s % 4));
    const Vector du = block.apply(u) - block.apply(v);

    // Firm nonexpansiveness.
    CHECK(du.squaredNorm() <= du.dot(u - v) + 1e-9);

    // ||Bu - Bv||^2 splits into the guard difference and the constraint
    // projection difference, which live on orthogonal coordinates.
    const Vector pu = block.constraint().project(u);
    const Vector pv = block.constraint().project(v);
    const double guard_diff = u(u.size() - 1) - v(v.size() - 1);
    CHECK(du.squaredNorm() == doctest::Approx(guard_diff * guard_diff +
                                              (pu - pv).squaredNorm())
                                  .epsilon(1e-9));
  }
}

TEST_CASE("constant branch maps write their target exactly") {
  const Index d = 3;
  const Vector c = testsupport::random_vector(d, 30);
  MCState s;
  s.x = testsupport::random_vector(d, 31);
  s.y = testsupport::random_vector(d, 32);
  s.b = 1.0;
  const MCState out = anchorkit::guarded_block(1, Matrix::Zero(d, d), c, s);
  CHECK((out.x - s.x).norm() <= 1e-12);  // graph of a constant map fixes x
  CHECK((out.y - c).norm() <= 1e-12);    // and assigns y
  CHECK(out.b == 1.0);
}

TEST_CASE("guarded instruction applies both blocks in order") {
  const Index d = 2;
  const Vector c0 = Vector::Constant(d, 0.25);
  const Vector c1 = Vector::Constant(d, 0.75);
  std::vector<Instruction> ins;
  ins.push_back(Instruction::guarded(Matrix::Zero(d, d), c0,
                                     Matrix::Zero(d, d), c1));
  const Program program(d, std::move(ins), Readout::identity(5));

  Vector s0 = Vector::Zero(5);
  s0(4) = 1.0;  // guard register set to branch 1
  const auto [final_state, report] = anchorkit::execute_state(program, s0);

  // Branch 0 wrote y = c0, then branch 1 overwrote y = c1; b passed through.
  CHECK((final_state.segment(d, d) - c1).norm() <= 1e-12);
  CHECK(final_state(4) == 1.0);
  CHECK(report.guard_register_wellformed);
  CHECK(report.op_applications == 2);
  CHECK(report.guard_projections == 2);
  CHECK(report.constraint_projections == 2);
}

TEST_CASE("programs reject expansive or malformed instructions at load time") {
  const Index d = 2,
              n = anchorkit::state_dim(d);
  const Readout ro = Readout::identity(n);

  SUBCASE("expansive affine step") {
    std::vector<Instruction> ins;
    ins.push_back(Instruction::affine_step(1.2 * Matrix::Identity(n, n),
                                           Vector::Zero(n)));
    CHECK_THROWS_AS(Program(d, std::move(ins), ro), std::invalid_argument);
  }
  SUBCASE("expansive guarded branch") {
    std::vector<Instruction> ins;
    ins.push_back(Instruction::guarded(Matrix::Identity(d, d), Vector::Zero(d),
                                       1.5 * Matrix::Identity(d, d),
                                       Vector::Zero(d)));
    CHECK_THROWS_AS(Program(d, std::move(ins), ro), std::invalid_argument);
  }
  SUBCASE("non-bijective permutation") {
    std::vector<Instruction> ins;
    ins.push_back(Instruction::permute({0, 0, 1, 2, 3}));
    CHECK_THROWS_AS(Program(d, std::move(ins), ro), std::invalid_argument);
  }
  SUBCASE("readout index out of range") {
    Readout bad = ro;
    bad.indices[0] = n;
    std::vector<Instruction> ins;
    ins.push_back(Instruction::translate(Vector::Zero(n)));
    CHECK_THROWS_AS(Program(d, std::move(ins), bad), std::invalid_argument);
  }
}

TEST_CASE("execution counts scheduled operators against the static budget") {
  const Index d = 2, n = anchorkit::state_dim(d);
  std::vector<Instruction> ins;
  ins.push_back(Instruction::translate(Vector::Unit(n, 0)));
  ins.push_back(Instruction::affine_step(state_map(d, 0.9, 40), Vector::Zero(n)));
  ins.push_back(Instruction::guarded(Matrix::Zero(d, d), Vector::Zero(d),
                                     Matrix::Zero(d, d), Vector::Ones(d)));
  ins.push_back(Instruction::permute({1, 0, 2, 3, 4}));
  const Program program(d, std::move(ins), Readout::identity(n));

  const auto audit = anchorkit::complexity_audit(program);
  CHECK(audit.instructions == 4);
  CHECK(audit.guards == 1);
  CHECK(audit.application_bound == 6);  // K + 2G
  CHECK(audit.modulus_bound == doctest::Approx(0.9).epsilon(1e-9));

  const auto [out, report] = anchorkit::execute_state(program, Vector::Zero(n));
  CHECK(report.op_applications == 5);  // K + G
  CHECK(report.op_applications <= audit.application_bound);
  CHECK(report.guard_projections == 2);
  CHECK(report.trace.size() == 4);
  CHECK(report.end_to_end_modulus_bound ==
        doctest::Approx(audit.modulus_bound).epsilon(1e-12));
}

TEST_CASE("realized traces replay bitwise from any start") {
  const Index d = 2, n = anchorkit::state_dim(d);
  std::vector<Instruction> ins;
  ins.push_back(Instruction::translate(0.5 * Vector::Ones(n)));
  ins.push_back(Instruction::affine_step(state_map(d, 1.0, 50), Vector::Zero(n)));
  ins.push_back(Instruction::guarded(testsupport::symmetric_with_norm(d, 0.7, 51),
                                     Vector::Zero(d),
                                     Matrix::Zero(d, d), Vector::Ones(d)));
  const Program program(d, std::move(ins), Readout::identity(n));
  const auto [final_state, report] =
      anchorkit::execute_state(program, Vector::Zero(n));

  const Program replay = anchorkit::realize_trace(report.trace);
  const auto audit = anchorkit::complexity_audit(replay);
  CHECK(audit.modulus_bound == 0.0);  // constant writes forget the start

  for (const std::uint64_t seed : {60ULL, 61ULL}) {
    const Vector start = packed(d, seed, 0.5);
    const auto [replayed, rep2] = anchorkit::execute_state(replay, start);
    CHECK((replayed - final_state).norm() == 0.0);  // bitwise
    REQUIRE(rep2.trace.size() == report.trace.size());
    for (std::size_t k = 0; k < rep2.trace.size(); ++k)
      CHECK((rep2.trace[k] - report.trace[k]).norm() == 0.0);
  }

  CHECK_THROWS_AS(anchorkit::realize_trace({Vector::Zero(4)}),
                  std::invalid_argument);
}

TEST_CASE("fixed-point encoding rejects off-grid values") {
  const Encoding enc;  // 16 fractional bits
  CHECK(enc.scale() == doctest::Approx(std::ldexp(1.0, -16)));
  CHECK(enc.encode(0.5) == 0.5);
  CHECK(enc.encode(-3.25) == -3.25);
  CHECK(enc.encode(std::ldexp(7.0, -16)) == std::ldexp(7.0, -16));
  CHECK_THROWS_AS(enc.encode(1.0 / 3.0), std::invalid_argument);
  CHECK(enc.decode(0.5 + 0.4 * enc.scale()) == 0.5);

  const Encoding coarse{2};  // quarters
  CHECK(coarse.encode(0.75) == 0.75);
  CHECK_THROWS_AS(coarse.encode(0.1), std::invalid_argument);
}

TEST_CASE("execute encodes inputs and decodes the readout") {
  const Index d = 2, n = anchorkit::state_dim(d);
  Vector shift = Vector::Zero(n);
  shift(0) = 0.25;
  std::vector<Instruction> ins;
  ins.push_back(Instruction::translate(shift));
  const Program program(d, std::move(ins), Readout::identity(n));

  Vector input(2);
  input << 1.5, -2.0;
  const auto [out, report] = anchorkit::execute(program, input);
  REQUIRE(out.size() == n);
  CHECK(out(0) == 1.75);
  CHECK(out(1) == -2.0);
  CHECK(out(2) == 0.0);  // y block untouched
  CHECK(out(4) == 0.0);  // guard starts at 0
  CHECK(report.guard_register_wellformed);

  Vector off_grid(2);
  off_grid << 0.1 + std::ldexp(0.3, -20), 0.0;
  CHECK_THROWS_AS(anchorkit::execute(program, off_grid), std::invalid_argument);
}

TEST_CASE("ball noise stays inside its radius") {
  Philox rng(0xba11, 0);
  for (int i = 0; i < 500; ++i)
    CHECK(anchorkit::ball_noise(6, 0.05, rng).norm() <= 0.05);
  CHECK(anchorkit::ball_noise(6, 0.0, rng).norm() == 0.0);
}

TEST_CASE("perturbed execution obeys the compounding envelope") {
  const Index d = 3, n = anchorkit::state_dim(d);
  std::vector<Instruction> ins;
  for (int k = 0; k < 6; ++k)
    ins.push_back(
        Instruction::affine_step(state_map(d, 0.95, 70 + k), Vector::Zero(n)));
  const Program program(d, std::move(ins), Readout::identity(n));

  const Vector s0 = packed(d, 80, 0.0);
  const std::vector<double> deltas(6, 0.01);

  Philox rng(0x7e57, 0);
  const auto report = anchorkit::perturbed_execute(program, s0, deltas, rng);
  REQUIRE(report.deviations.size() == 6);
  CHECK(report.ok);
  CHECK(report.violating_steps.empty());

  double bound = 0.0;
  for (std::size_t k = 0; k < 6; ++k) {
    bound = 0.95 * bound + 0.01;
    CHECK(report.bounds[k] == doctest::Approx(bound).epsilon(1e-12));
    CHECK(report.deviations[k] <= report.bounds[k] * (1.0 + 1e-9) + 1e-12);
  }
  CHECK((report.clean_final - report.perturbed_final).norm() <=
        report.bounds.back() * (1.0 + 1e-9) + 1e-12);

  SUBCASE("zero noise reproduces the clean run") {
    Philox rng2(1, 0);
    const auto quiet = anchorkit::perturbed_execute(
        program, s0, std::vector<double>(6, 0.0), rng2);
    CHECK(quiet.ok);
    for (const double dev : quiet.deviations) CHECK(dev == 0.0);
    CHECK((quiet.perturbed_final - quiet.clean_final).norm() == 0.0);
  }
  SUBCASE("schedule length is enforced") {
    Philox rng3(2, 0);
    CHECK_THROWS_AS(anchorkit::perturbed_execute(program, s0,
                                                 std::vector<double>(5, 0.01),
                                                 rng3),
                    std::invalid_argument);
  }
}

TEST_CASE("guarded programs tolerate perturbation within the envelope") {
  const Index d = 2, n = anchorkit::state_dim(d);
  std::vector<Instruction> ins;
  ins.push_back(Instruction::affine_step(state_map(d, 1.0, 90), Vector::Zero(n)));
  ins.push_back(Instruction::guarded(testsupport::symmetric_with_norm(d, 0.8, 91),
                                     Vector::Zero(d),
                                     testsupport::symmetric_with_norm(d, 0.6, 92),
                                     Vector::Ones(d)));
  ins.push_back(Instruction::translate(Vector::Unit(n, 1)));
  const Program program(d, std::move(ins), Readout::identity(n));

  Philox rng(0xfeed, 0);
  const auto report = anchorkit::perturbed_execute(
      program, Vector::Zero(n), {0.02, 0.02, 0.02}, rng);
  CHECK(report.ok);  // every instruction modulus is <= 1
}
