#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "clipgrad/clip.hpp"
#include "clipgrad/problems.hpp"
#include "clipgrad/rng.hpp"

using namespace clipgrad;
using Catch::Approx;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Heavy-tailed random vector: Gaussian direction, log-uniform norm.
Vector random_vector(rng::Stream& s, Eigen::Index n) {
  Vector v = gaussian_vector(n, s);
  const double scale = std::pow(10.0, -3.0 + 6.0 * s.uniform());
  return v * scale;
}

}  // namespace

TEST_CASE("clip_vec examples") {
  CHECK(clip_vec(vec({3, 4}), 2.5).isApprox(vec({1.5, 2.0})));
  CHECK(clip_vec(vec({0.1, 0.2}), 10) == vec({0.1, 0.2}));
  CHECK(clip_vec(vec({0, 0, 0}), 1) == vec({0, 0, 0}));
}

TEST_CASE("clip_vec rejects bad input") {
  CHECK_THROWS_AS(clip_vec(vec({1, std::numeric_limits<double>::quiet_NaN()}), 1.0), DomainError);
  CHECK_THROWS_AS(clip_vec(vec({1, std::numeric_limits<double>::infinity()}), 1.0), DomainError);
  CHECK_THROWS_AS(clip_vec(vec({1}), 0.0), DomainError);
  CHECK_THROWS_AS(clip_vec(vec({1}), -1.0), DomainError);
}

TEST_CASE("clip_vec properties on random pairs") {
  rng::Stream s(17);
  const double tol = 1e-12;
  for (int trial = 0; trial < 100000; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(s.index(8));
    const Vector g = random_vector(s, n);
    const Vector h = random_vector(s, n);
    const double gamma = std::pow(10.0, -2.0 + 4.0 * s.uniform());
    const Vector cg = clip_vec(g, gamma);
    const Vector ch = clip_vec(h, gamma);

    // Norm cap.
    REQUIRE(cg.norm() <= gamma * (1 + tol));
    // Direction preserved: positive multiple of g.
    const double t = cg.dot(g) / g.squaredNorm();
    REQUIRE(t > 0.0);
    REQUIRE(t <= 1.0);
    REQUIRE((cg - t * g).norm() <= tol * (1 + g.norm()));
    // Exact formula min{1, gamma/|g|} g.
    REQUIRE((cg - std::min(1.0, gamma / g.norm()) * g).norm() <= tol * g.norm());
    // Idempotent.
    REQUIRE((clip_vec(cg, gamma) - cg).norm() <= tol * gamma);
    // Non-expansive (projection onto a convex set).
    REQUIRE((cg - ch).norm() <= (g - h).norm() * (1 + tol) + tol * gamma);
  }
}

TEST_CASE("schedule examples") {
  const StepSchedule st = StepSchedule::polynomial(1.0, 0.5);
  CHECK(st.at(3) == 0.5);
  CHECK(ClipSchedule::coupled(10.0).at(0.5) == Approx(14.142135623730951));
  CHECK(BatchSchedule::inverse_step().at(0.5) == 2);
  CHECK(BatchSchedule::inverse_step().at(0.3) == 4);
  CHECK(BatchSchedule::inverse_step().at(2.0) == 1);
  CHECK(BatchSchedule::fixed(7).at(0.1) == 7);
  CHECK(StepSchedule::constant(0.2).at(1000) == 0.2);
  CHECK(MomentumSchedule::proportional(2.0).at(0.1) == Approx(0.2));
  CHECK(MomentumSchedule::constant(0.1).at(0.5) == 0.1);
  CHECK(MomentumSchedule::proportional(5.0, true).at(0.5) == 1.0);

  CHECK_THROWS_AS(StepSchedule::polynomial(0.0, 0.5), ConfigError);
  CHECK_THROWS_AS(StepSchedule::polynomial(1.0, 1.5), ConfigError);
  CHECK_THROWS_AS(ClipSchedule::constant(0.0), ConfigError);
  CHECK_THROWS_AS(MomentumSchedule::constant(0.0), ConfigError);
  CHECK_THROWS_AS(MomentumSchedule::constant(1.5), ConfigError);
  CHECK_THROWS_AS(BatchSchedule::fixed(0), ConfigError);
  CHECK_THROWS_AS(MomentumSchedule::proportional(2.0).validate_against(StepSchedule::constant(1.0)),
                  ConfigError);
  CHECK_NOTHROW(MomentumSchedule::proportional(2.0, true).validate_against(StepSchedule::constant(1.0)));

  const ScheduleSet set{StepSchedule::polynomial(1.0, 0.5), ClipSchedule::coupled(10.0),
                        MomentumSchedule::proportional(0.5), BatchSchedule::inverse_step()};
  const ScheduleValues v = schedule_values(set, 3);
  CHECK(v.alpha == 0.5);
  CHECK(*v.gamma == Approx(14.142135623730951));
  CHECK(*v.beta == Approx(0.25));
  CHECK(v.batch == 2);
}

TEST_CASE("sgd_step examples") {
  IterState s{vec({1.0}), Vector(), 0, false};
  CHECK(sgd_step(s, vec({0.5}), 0.1, std::nullopt).x[0] == Approx(0.95));

  s.x = vec({0.0});
  CHECK(sgd_step(s, vec({10.0}), 0.1, 1.0).x[0] == Approx(-0.1));

  const QuarticProblem q(QuarticSpec{1.0, 0.0});
  s.x = vec({2.0});
  const Vector g = full_subgradient(q, s.x);
  CHECK(g[0] == 10.0);
  const IterState next = sgd_step(s, g, 0.01, std::nullopt);
  CHECK(next.x[0] == Approx(2.0 - 0.01 * 10.0));
  CHECK(next.k == 1);
  CHECK_FALSE(next.diverged);
}

TEST_CASE("sgd_step errors and divergence") {
  IterState s{vec({1.0, 2.0}), Vector(), 0, false};
  CHECK_THROWS_AS(sgd_step(s, vec({1.0}), 0.1, std::nullopt), DomainError);
  const IterState d = sgd_step(s, vec({std::numeric_limits<double>::infinity(), 0.0}), 0.1, std::nullopt);
  CHECK(d.diverged);
  const IterState big = sgd_step(IterState{vec({1e15}), Vector(), 0, false}, vec({-1e15}), 1.0, std::nullopt);
  CHECK(big.diverged);
}

TEST_CASE("shb_step examples") {
  // beta = 1 reduces to the clipped SGD direction.
  IterState s{vec({0.0}), vec({0.0}), 0, false};
  IterState n = shb_step(s, vec({1.0}), 0.1, 1.0, 10.0);
  CHECK(n.x[0] == 0.0);
  CHECK(n.d[0] == 1.0);

  s = IterState{vec({1.0}), vec({2.0}), 0, false};
  n = shb_step(s, vec({0.0}), 0.1, 0.5, 0.8);
  CHECK(n.x[0] == Approx(0.8));
  CHECK(n.d[0] == Approx(0.8));

  CHECK(shb_initial_direction(vec({5.0}), 2.0)[0] == 2.0);
  CHECK(shb_initial_direction(vec({5.0}), std::nullopt)[0] == 5.0);

  CHECK_THROWS_AS(shb_step(s, vec({0.0}), 0.1, 0.0, 1.0), DomainError);
  CHECK_THROWS_AS(shb_step(s, vec({0.0}), 0.1, 1.5, 1.0), DomainError);
}

TEST_CASE("heavy ball with beta = 1 matches clipped SGD on a trajectory") {
  const QuarticProblem q(QuarticSpec{1.0, 0.0});
  const double gamma = 2.0, alpha = 0.05;
  IterState sgd{vec({3.0}), Vector(), 0, false};
  IterState shb{vec({3.0}), shb_initial_direction(full_subgradient(q, vec({3.0})), gamma), 0, false};
  for (int k = 0; k < 50; ++k) {
    sgd = sgd_step(sgd, full_subgradient(q, sgd.x), alpha, gamma);
    const Vector x_next = shb.x - alpha * shb.d;
    shb = shb_step(shb, full_subgradient(q, x_next), alpha, 1.0, gamma);
    REQUIRE(shb.x[0] == sgd.x[0]);
  }
}
