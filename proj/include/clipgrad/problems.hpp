#pragma once

// Stochastic objectives: the noisy quartic, robust phase retrieval and
// absolute linear regression. Each problem exposes a deterministic objective,
// a full subgradient, a one-sample stochastic subgradient, optimum metadata
// and a record of the structural constants it certifiably satisfies.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "clipgrad/clip.hpp"
#include "clipgrad/error.hpp"
#include "clipgrad/rng.hpp"

namespace clipgrad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// sign with sign(0) = 0, the subgradient selection used at kinks.
inline double sign0(double v) noexcept { return (v > 0.0) - (v < 0.0); }

/// sign0 that treats residuals at rounding level relative to `scale` as an
/// exact kink, so interpolating data yields a zero subgradient.
inline double kink_sign(double residual, double scale) noexcept {
  return std::abs(residual) <= 16.0 * std::numeric_limits<double>::epsilon() * scale ? 0.0 : sign0(residual);
}

/// Structural constants of an instance. Absent values mean the assumption is
/// not certified for the instance.
struct ProblemConstants {
  std::optional<double> mu;            // quadratic growth
  double sigma = 0.0;                  // gradient-noise standard deviation bound
  std::optional<double> sigma_moment;  // constant of the 2(p-1)th central moment bound
  std::optional<double> L0, L1, p;     // polynomial growth of E|g|^2
  std::optional<double> L;             // global bound on sqrt(E|g|^2)
  std::optional<double> rho;           // weak-convexity modulus
  bool second_moment_region_only = false;
};

// ---------------------------------------------------------------------------
// Conditioned design matrix
// ---------------------------------------------------------------------------

struct ConditionedMatrix {
  Matrix A;
  Vector diag;  // D
  double kappa = 1.0;
};

/// Linearly spaced diagonal from 1/kappa to 1.
inline Vector conditioning_diagonal(Eigen::Index n, double kappa) {
  Vector d(n);
  const double lo = 1.0 / kappa;
  if (n == 1) {
    d[0] = 1.0;
    return d;
  }
  for (Eigen::Index j = 0; j < n; ++j)
    d[j] = lo + static_cast<double>(j) * (1.0 - lo) / static_cast<double>(n - 1);
  return d;
}

/// A = Q D with Q filled column-major from the stream.
inline ConditionedMatrix gen_conditioned_matrix(Eigen::Index m, Eigen::Index n,
                                                double kappa, rng::Stream& stream) {
  if (n < 1 || m < n)
    throw DomainError("conditioned matrix: requires m >= n >= 1");
  if (!(kappa >= 1.0)) throw DomainError("conditioned matrix: kappa must be >= 1");
  ConditionedMatrix out;
  out.kappa = kappa;
  out.diag = conditioning_diagonal(n, kappa);
  out.A.resize(m, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < m; ++i) out.A(i, j) = stream.normal();
  for (Eigen::Index j = 0; j < n; ++j) out.A.col(j) *= out.diag[j];
  return out;
}

inline ConditionedMatrix gen_conditioned_matrix(Eigen::Index m, Eigen::Index n,
                                                double kappa, std::uint64_t seed) {
  rng::Stream s(seed);
  return gen_conditioned_matrix(m, n, kappa, s);
}

namespace detail {

inline Vector unit_sphere_sample(Eigen::Index n, rng::Stream& s) {
  Vector v(n);
  for (;;) {
    for (Eigen::Index j = 0; j < n; ++j) v[j] = s.normal();
    const double nrm = v.norm();
    if (nrm > 0.0) return v / nrm;
  }
}

inline double max_row_norm_sq(const RowMatrix& A) {
  return A.rowwise().squaredNorm().maxCoeff();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Quartic
// ---------------------------------------------------------------------------

struct QuarticSpec {
  double epsilon = 1.0;
  double noise_sigma = 0.0;
};

/// f(x) = x^4/4 + eps x^2/2 with additive N(0, noise_sigma^2) gradient noise.
class QuarticProblem {
 public:
  explicit QuarticProblem(QuarticSpec spec) : spec_(spec) {
    if (!(spec.epsilon > 0.0)) throw DomainError("quartic: epsilon must be positive");
    if (!(spec.noise_sigma >= 0.0)) throw DomainError("quartic: noise sigma must be >= 0");
    const double eps = spec.epsilon;
    const double s2 = spec.noise_sigma * spec.noise_sigma;
    // |f'(x)|^2 <= c (1 + x^6) with c = 2(1+eps) for eps <= 1, (1+eps)^2 otherwise.
    const double growth = eps <= 1.0 ? 2.0 * (1.0 + eps) : (1.0 + eps) * (1.0 + eps);
    constants_.mu = eps / 2.0;
    constants_.sigma = spec.noise_sigma;
    // E|xi|^6 = 15 sigma^6 <= s^4 for the growth-condition constant s.
    constants_.sigma_moment =
        std::max(spec.noise_sigma, std::pow(15.0, 0.25) * std::pow(spec.noise_sigma, 1.5));
    constants_.L0 = growth + 2.0 * s2;
    constants_.L1 = growth + 2.0 * s2;
    constants_.p = 4.0;
    constants_.rho = 0.0;
    constants_.second_moment_region_only = true;
  }

  const QuarticSpec& spec() const noexcept { return spec_; }
  Eigen::Index dim() const noexcept { return 1; }
  std::uint64_t sample_count() const noexcept { return 1; }
  const ProblemConstants& constants() const noexcept { return constants_; }

  double value(const Vector& x) const noexcept {
    const double v = x[0];
    const double v2 = v * v;
    return 0.25 * v2 * v2 + 0.5 * spec_.epsilon * v2;
  }

  double derivative(double v) const noexcept { return v * v * v + spec_.epsilon * v; }

  void full_subgradient(const Vector& x, Vector& out) const {
    out.resize(1);
    out[0] = derivative(x[0]);
  }

  /// Adds one stochastic sample f'(x) + noise to out.
  void add_sample_subgradient(const Vector& x, rng::Stream& s, Vector& out) const {
    double g = derivative(x[0]);
    if (spec_.noise_sigma > 0.0) g += spec_.noise_sigma * s.normal();
    out[0] += g;
  }

  double f_star() const noexcept { return 0.0; }
  bool has_optimum() const noexcept { return true; }
  double dist_to_opt(const Vector& x) const { return std::abs(x[0]); }
  Vector x_star() const { return Vector::Zero(1); }

  /// sqrt(sup E|g|^2) over |x| <= radius.
  double second_moment_bound(double radius) const noexcept {
    const double d = derivative(radius);
    return std::sqrt(d * d + spec_.noise_sigma * spec_.noise_sigma);
  }

 private:
  QuarticSpec spec_;
  ProblemConstants constants_;
};

// ---------------------------------------------------------------------------
// Robust phase retrieval
// ---------------------------------------------------------------------------

struct PhaseRetrievalSpec {
  Eigen::Index m = 500;
  Eigen::Index n = 50;
  double kappa = 10.0;
  double p_fail = 0.1;
  double corruption_variance = 25.0;
};

/// f(x) = (1/m) sum_i |<a_i, x>^2 - b_i|.
class PhaseRetrievalProblem {
 public:
  PhaseRetrievalProblem(RowMatrix A, Vector b, std::optional<Vector> x_star = std::nullopt,
                        std::vector<std::uint8_t> corrupted = {}, Vector corruption = {})
      : A_(std::move(A)), b_(std::move(b)), x_star_(std::move(x_star)),
        corrupted_(std::move(corrupted)), corruption_(std::move(corruption)) {
    if (A_.rows() < 1 || A_.cols() < 1) throw DomainError("phase retrieval: empty data");
    if (b_.size() != A_.rows()) throw DomainError("phase retrieval: b has wrong length");
    if (x_star_ && x_star_->size() != A_.cols())
      throw DomainError("phase retrieval: x* has wrong length");
    row_norm_sq_max_ = detail::max_row_norm_sq(A_);
    constants_.rho = 2.0 * row_norm_sq_max_;
    constants_.second_moment_region_only = true;
    if (x_star_) f_star_ = value(*x_star_);
  }

  const RowMatrix& A() const noexcept { return A_; }
  const Vector& b() const noexcept { return b_; }
  const std::optional<Vector>& x_star() const noexcept { return x_star_; }
  const std::vector<std::uint8_t>& corrupted() const noexcept { return corrupted_; }
  const Vector& corruption() const noexcept { return corruption_; }

  Eigen::Index dim() const noexcept { return A_.cols(); }
  std::uint64_t sample_count() const noexcept { return static_cast<std::uint64_t>(A_.rows()); }
  const ProblemConstants& constants() const noexcept { return constants_; }

  double value(const Vector& x) const {
    const Vector r = A_ * x;
    return (r.array().square() - b_.array()).abs().mean();
  }

  void full_subgradient(const Vector& x, Vector& out) const {
    out.setZero(dim());
    for (Eigen::Index i = 0; i < A_.rows(); ++i) add_row(i, x, out);
    out /= static_cast<double>(A_.rows());
  }

  void add_sample_subgradient(const Vector& x, rng::Stream& s, Vector& out) const {
    add_row(static_cast<Eigen::Index>(s.index(sample_count())), x, out);
  }

  double f_star() const {
    if (!x_star_) throw UnsupportedMetricError("phase retrieval: no optimum metadata");
    return f_star_;
  }
  bool has_optimum() const noexcept { return x_star_.has_value(); }

  /// min(|x - x*|, |x + x*|)
  double dist_to_opt(const Vector& x) const {
    if (!x_star_) throw UnsupportedMetricError("phase retrieval: no optimum metadata");
    return std::min((x - *x_star_).norm(), (x + *x_star_).norm());
  }

  /// sqrt(sup E|g|^2) over |x| <= radius:
  /// E|g|^2 = (4/m) x^T (sum_i |a_i|^2 a_i a_i^T) x.
  double second_moment_bound(double radius) const {
    Matrix M = Matrix::Zero(dim(), dim());
    for (Eigen::Index i = 0; i < A_.rows(); ++i) {
      const auto a = A_.row(i).transpose();
      M.noalias() += a.squaredNorm() * (a * a.transpose());
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    return 2.0 * radius * std::sqrt(std::max(top, 0.0) / static_cast<double>(A_.rows()));
  }

 private:
  RowMatrix A_;
  Vector b_;
  std::optional<Vector> x_star_;
  std::vector<std::uint8_t> corrupted_;
  Vector corruption_;
  void add_row(Eigen::Index i, const Vector& x, Vector& out) const {
    const double r = A_.row(i).dot(x);
    const double c = 2.0 * kink_sign(r * r - b_[i], r * r + std::abs(b_[i])) * r;
    if (c != 0.0) out.noalias() += c * A_.row(i).transpose();
  }

  double row_norm_sq_max_ = 0.0;
  double f_star_ = 0.0;
  ProblemConstants constants_;
};

/// Draw order: Q column-major (m n normals), x* (n normals, normalized),
/// corruption indicators (m uniforms), corruption magnitudes (m normals).
inline PhaseRetrievalProblem gen_phase_retrieval(const PhaseRetrievalSpec& spec,
                                                 rng::Stream& s) {
  if (spec.m < 1 || spec.n < 1) throw DomainError("phase retrieval: requires m, n >= 1");
  if (!(spec.p_fail >= 0.0 && spec.p_fail <= 1.0))
    throw DomainError("phase retrieval: p_fail must lie in [0, 1]");
  if (!(spec.corruption_variance >= 0.0))
    throw DomainError("phase retrieval: corruption variance must be >= 0");
  // Phase retrieval may be under-determined (m < n); draw Q directly.
  const Vector diag = conditioning_diagonal(spec.n, spec.kappa);
  Matrix A(spec.m, spec.n);
  for (Eigen::Index j = 0; j < spec.n; ++j)
    for (Eigen::Index i = 0; i < spec.m; ++i) A(i, j) = s.normal();
  for (Eigen::Index j = 0; j < spec.n; ++j) A.col(j) *= diag[j];

  Vector x_star = detail::unit_sphere_sample(spec.n, s);
  std::vector<std::uint8_t> corrupted(static_cast<std::size_t>(spec.m));
  for (auto& c : corrupted) c = s.uniform() < spec.p_fail ? 1 : 0;
  Vector zeta(spec.m);
  const double sd = std::sqrt(spec.corruption_variance);
  for (Eigen::Index i = 0; i < spec.m; ++i) zeta[i] = sd * s.normal();

  // Row-wise products match the oracle's arithmetic, so clean rows interpolate exactly.
  RowMatrix Ar(A);
  Vector b(spec.m);
  for (Eigen::Index i = 0; i < spec.m; ++i) {
    const double r = Ar.row(i).dot(x_star);
    b[i] = r * r + (corrupted[static_cast<std::size_t>(i)] ? zeta[i] : 0.0);
  }
  return PhaseRetrievalProblem(std::move(Ar), std::move(b), std::move(x_star),
                               std::move(corrupted), std::move(zeta));
}

inline PhaseRetrievalProblem gen_phase_retrieval(const PhaseRetrievalSpec& spec,
                                                 std::uint64_t seed) {
  rng::Stream s(seed);
  return gen_phase_retrieval(spec, s);
}

// ---------------------------------------------------------------------------
// Absolute linear regression
// ---------------------------------------------------------------------------

struct AbsRegressionSpec {
  Eigen::Index m = 500;
  Eigen::Index n = 50;
  double kappa = 10.0;
  double sigma = 0.01;
};

/// f(x) = (1/m) |Ax - b|_1. Convex with globally bounded subgradients.
class AbsRegressionProblem {
 public:
  AbsRegressionProblem(RowMatrix A, Vector b, std::optional<Vector> x_star = std::nullopt,
                       Vector noise = {})
      : A_(std::move(A)), b_(std::move(b)), x_star_(std::move(x_star)), noise_(std::move(noise)) {
    if (A_.rows() < 1 || A_.cols() < 1) throw DomainError("abs regression: empty data");
    if (b_.size() != A_.rows()) throw DomainError("abs regression: b has wrong length");
    if (x_star_ && x_star_->size() != A_.cols())
      throw DomainError("abs regression: x* has wrong length");
    constants_.L = std::sqrt(detail::max_row_norm_sq(A_));
    constants_.rho = 0.0;
    if (x_star_) f_star_ = value(*x_star_);
  }

  const RowMatrix& A() const noexcept { return A_; }
  const Vector& b() const noexcept { return b_; }
  const std::optional<Vector>& x_star() const noexcept { return x_star_; }
  const Vector& noise() const noexcept { return noise_; }

  Eigen::Index dim() const noexcept { return A_.cols(); }
  std::uint64_t sample_count() const noexcept { return static_cast<std::uint64_t>(A_.rows()); }
  const ProblemConstants& constants() const noexcept { return constants_; }

  double value(const Vector& x) const { return (A_ * x - b_).cwiseAbs().mean(); }

  void full_subgradient(const Vector& x, Vector& out) const {
    out.setZero(dim());
    for (Eigen::Index i = 0; i < A_.rows(); ++i) add_row(i, x, out);
    out /= static_cast<double>(A_.rows());
  }

  void add_sample_subgradient(const Vector& x, rng::Stream& s, Vector& out) const {
    add_row(static_cast<Eigen::Index>(s.index(sample_count())), x, out);
  }

  /// f at the generating vector; the empirical minimizer may be slightly lower.
  double f_star() const {
    if (!x_star_) throw UnsupportedMetricError("abs regression: no optimum metadata");
    return f_star_;
  }
  bool has_optimum() const noexcept { return x_star_.has_value(); }

  double dist_to_opt(const Vector& x) const {
    if (!x_star_) throw UnsupportedMetricError("abs regression: no optimum metadata");
    return (x - *x_star_).norm();
  }

  double second_moment_bound(double) const noexcept { return *constants_.L; }

 private:
  RowMatrix A_;
  Vector b_;
  std::optional<Vector> x_star_;
  void add_row(Eigen::Index i, const Vector& x, Vector& out) const {
    const double ax = A_.row(i).dot(x);
    const double c = kink_sign(ax - b_[i], std::abs(ax) + std::abs(b_[i]));
    if (c != 0.0) out.noalias() += c * A_.row(i).transpose();
  }

  Vector noise_;
  double f_star_ = 0.0;
  ProblemConstants constants_;
};

/// Draw order: Q column-major, x* (n normals, normalized), w (m normals).
inline AbsRegressionProblem gen_abs_regression(const AbsRegressionSpec& spec, rng::Stream& s) {
  if (!(spec.sigma >= 0.0)) throw DomainError("abs regression: sigma must be >= 0");
  ConditionedMatrix cm = gen_conditioned_matrix(spec.m, spec.n, spec.kappa, s);
  Vector x_star = detail::unit_sphere_sample(spec.n, s);
  Vector w(spec.m);
  for (Eigen::Index i = 0; i < spec.m; ++i) w[i] = s.normal();
  RowMatrix Ar(cm.A);
  Vector b(spec.m);
  for (Eigen::Index i = 0; i < spec.m; ++i) b[i] = Ar.row(i).dot(x_star) + spec.sigma * w[i];
  return AbsRegressionProblem(std::move(Ar), std::move(b), std::move(x_star), std::move(w));
}

inline AbsRegressionProblem gen_abs_regression(const AbsRegressionSpec& spec, std::uint64_t seed) {
  rng::Stream s(seed);
  return gen_abs_regression(spec, s);
}

// ---------------------------------------------------------------------------
// Generic interface
// ---------------------------------------------------------------------------

template <class P>
concept StochasticProblem = requires(const P& p, const Vector& x, rng::Stream& s, Vector& out) {
  { p.dim() } -> std::convertible_to<Eigen::Index>;
  { p.sample_count() } -> std::convertible_to<std::uint64_t>;
  { p.value(x) } -> std::convertible_to<double>;
  p.full_subgradient(x, out);
  p.add_sample_subgradient(x, s, out);
  { p.has_optimum() } -> std::convertible_to<bool>;
  { p.f_star() } -> std::convertible_to<double>;
  { p.dist_to_opt(x) } -> std::convertible_to<double>;
  { p.constants() } -> std::convertible_to<const ProblemConstants&>;
  { p.second_moment_bound(1.0) } -> std::convertible_to<double>;
};

using ProblemInstance = std::variant<QuarticProblem, PhaseRetrievalProblem, AbsRegressionProblem>;

/// Mean of m_k independent per-sample subgradients at x (sampling with
/// replacement for finite sums). Consumes exactly m_k draws. Returns false
/// when x or the result is non-finite.
template <StochasticProblem P>
bool stochastic_subgrad(const P& p, const Vector& x, std::uint64_t m_k, rng::Stream& s,
                        Vector& out) {
  if (m_k == 0) throw DomainError("stochastic subgradient: batch size must be >= 1");
  if (x.size() != p.dim()) throw DomainError("stochastic subgradient: dimension mismatch");
  out.setZero(p.dim());
  if (!x.allFinite()) return false;
  for (std::uint64_t j = 0; j < m_k; ++j) p.add_sample_subgradient(x, s, out);
  if (m_k > 1) out /= static_cast<double>(m_k);
  return out.allFinite();
}

inline bool stochastic_subgrad(const ProblemInstance& inst, const Vector& x, std::uint64_t m_k,
                               rng::Stream& s, Vector& out) {
  return std::visit([&](const auto& p) { return stochastic_subgrad(p, x, m_k, s, out); }, inst);
}

template <StochasticProblem P>
Vector full_subgradient(const P& p, const Vector& x) {
  Vector out(p.dim());
  p.full_subgradient(x, out);
  return out;
}

inline Eigen::Index dim(const ProblemInstance& inst) {
  return std::visit([](const auto& p) { return p.dim(); }, inst);
}
inline std::uint64_t sample_count(const ProblemInstance& inst) {
  return std::visit([](const auto& p) { return p.sample_count(); }, inst);
}
inline double value(const ProblemInstance& inst, const Vector& x) {
  return std::visit([&](const auto& p) { return p.value(x); }, inst);
}
inline Vector full_subgradient(const ProblemInstance& inst, const Vector& x) {
  return std::visit([&](const auto& p) { return full_subgradient(p, x); }, inst);
}
inline double dist_to_opt(const ProblemInstance& inst, const Vector& x) {
  return std::visit([&](const auto& p) { return p.dist_to_opt(x); }, inst);
}
inline double f_star(const ProblemInstance& inst) {
  return std::visit([](const auto& p) { return p.f_star(); }, inst);
}
inline const ProblemConstants& constants(const ProblemInstance& inst) {
  return std::visit([](const auto& p) -> const ProblemConstants& { return p.constants(); }, inst);
}

/// Initial iterate x0 ~ N(0, I).
inline Vector gaussian_vector(Eigen::Index n, rng::Stream& s) {
  Vector v(n);
  for (Eigen::Index j = 0; j < n; ++j) v[j] = s.normal();
  return v;
}

}  // namespace clipgrad
