#include <doctest.h>

#include <cmath>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "crt/errors.hpp"
#include "crt/logistic.hpp"
#include "crt/rng.hpp"
#include "crt/variance.hpp"

using namespace crt;

namespace {

// psi_i(theta) = x_i - theta, one column per data stream.
class MeanSystem final : public EstimatingSystem {
 public:
  explicit MeanSystem(Eigen::MatrixXd x) : x_(std::move(x)) {}
  std::size_t dimension() const override { return static_cast<std::size_t>(x_.cols()); }
  std::size_t clusters() const override { return static_cast<std::size_t>(x_.rows()); }
  void evaluate(std::size_t i, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const override {
    out = x_.row(static_cast<Eigen::Index>(i)).transpose() - theta;
  }

 private:
  Eigen::MatrixXd x_;
};

class LinearSystem final : public EstimatingSystem {
 public:
  LinearSystem(Eigen::MatrixXd A, Eigen::MatrixXd b) : A_(std::move(A)), b_(std::move(b)) {}
  std::size_t dimension() const override { return static_cast<std::size_t>(A_.cols()); }
  std::size_t clusters() const override { return static_cast<std::size_t>(b_.rows()); }
  void evaluate(std::size_t i, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const override {
    out = A_ * theta + b_.row(static_cast<Eigen::Index>(i)).transpose();
  }

 private:
  Eigen::MatrixXd A_, b_;
};

class LogisticScoreSystem final : public EstimatingSystem {
 public:
  LogisticScoreSystem(Eigen::MatrixXd X, Eigen::VectorXd y) : X_(std::move(X)), y_(std::move(y)) {}
  std::size_t dimension() const override { return static_cast<std::size_t>(X_.cols()); }
  std::size_t clusters() const override { return static_cast<std::size_t>(X_.rows()); }
  void evaluate(std::size_t i, const Eigen::VectorXd& beta, Eigen::Ref<Eigen::VectorXd> out) const override {
    const auto r = static_cast<Eigen::Index>(i);
    out = X_.row(r).transpose() * (y_[r] - expit(X_.row(r).dot(beta)));
  }

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
};

}  // namespace

TEST_CASE("sandwich of a sample mean is the second central moment over m") {
  Philox4x32 rng(1, 2);
  std::normal_distribution<double> normal(3.0, 2.0);
  const int m = 57;
  Eigen::MatrixXd x(m, 1);
  for (int i = 0; i < m; ++i) x(i, 0) = normal(rng);
  MeanSystem sys(x);
  Eigen::VectorXd theta(1);
  theta[0] = x.mean();
  const auto sw = sandwich_variance(sys, theta, Eigen::VectorXd::Ones(1));
  const double closed = (x.array() - x.mean()).square().sum() / m / m;
  CHECK(std::abs(sw.target_variance - closed) < 1e-10);
  CHECK(sw.max_abs_mean_psi < 1e-12);
}

TEST_CASE("stacked independent mean systems give a block-diagonal covariance") {
  // Balanced columns: the centered streams are exactly orthogonal.
  Eigen::MatrixXd x(8, 2);
  x << 1, 5, 2, 5, 1, -5, 2, -5, 4, 1, 7, 1, 4, -1, 7, -1;
  MeanSystem sys(x);
  const Eigen::VectorXd theta = x.colwise().mean().transpose();
  const auto sw = sandwich_variance(sys, theta, Eigen::Vector2d(1, 0));
  CHECK(std::abs(sw.covariance(0, 1)) < 1e-10);
  CHECK(std::abs(sw.covariance(1, 0)) < 1e-10);
}

TEST_CASE("numeric Jacobian of a linear system") {
  Eigen::Matrix3d A;
  A << 2, -1, 0.5, 0.3, 4, -2, 1, 1, -3;
  Eigen::MatrixXd b = Eigen::MatrixXd::Random(10, 3);
  LinearSystem sys(A, b);
  const auto J = numeric_jacobian(sys, Eigen::Vector3d(0.4, -0.7, 1.2));
  CHECK((J - A).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("numeric Jacobian of the logistic score matches the information matrix") {
  Philox4x32 rng(3, 4);
  std::normal_distribution<double> normal;
  const int n = 300;
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1;
    X(i, 1) = normal(rng);
    X(i, 2) = normal(rng) > 0.3;
    y[i] = uniform01(rng) < expit(0.2 + 0.8 * X(i, 1) - X(i, 2));
  }
  LogisticScoreSystem sys(X, y);
  const Eigen::Vector3d beta(0.1, 0.7, -0.9);
  const Eigen::MatrixXd J = numeric_jacobian(sys, beta);
  const Eigen::MatrixXd analytic = -logistic_information(X, beta) / n;
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) CHECK(J(r, c) == doctest::Approx(analytic(r, c)).epsilon(1e-4));
  }
}

TEST_CASE("singular bread names the parameter block") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
  A(0, 0) = 1;
  LinearSystem sys(A, Eigen::MatrixXd::Random(5, 2));
  try {
    sandwich_variance(sys, Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 0));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("condition number") != std::string::npos);
  }
}

TEST_CASE("small-sample factor") {
  CHECK(small_sample_factor(30, 7) == doctest::Approx(30.0 / 23));
  CHECK(small_sample_factor(100, 7) == doctest::Approx(100.0 / 93));
  CHECK(small_sample_factor(1000000, 7) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(small_sample_correction(2.0, 30, 7) == doctest::Approx(60.0 / 23));
  CHECK_THROWS_AS(small_sample_factor(7, 7), ValidationError);
}

TEST_CASE("t and normal quantiles agree with an independent implementation") {
  CHECK(student_t_quantile(0.975, 23) == doctest::Approx(2.0687).epsilon(5e-4));
  CHECK(std::abs(student_t_quantile(0.975, 23) - 2.0687) < 1e-3);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.95996).epsilon(1e-5));
  CHECK(student_t_quantile(0.975, INFINITY) == doctest::Approx(1.959964).epsilon(1e-6));
  for (double df : {1.0, 2.5, 7.0, 23.0, 93.0, 400.0}) {
    boost::math::students_t dist(df);
    for (double p : {0.6, 0.9, 0.95, 0.975, 0.995}) {
      CHECK(student_t_quantile(p, df) == doctest::Approx(boost::math::quantile(dist, p)).epsilon(1e-9));
      CHECK(student_t_cdf(boost::math::quantile(dist, p), df) == doctest::Approx(p).epsilon(1e-10));
    }
  }
  boost::math::normal nd;
  for (double p : {1e-6, 0.01, 0.3, 0.5, 0.8, 0.999}) {
    CHECK(normal_quantile(p) == doctest::Approx(boost::math::quantile(nd, p)).epsilon(1e-10));
  }
}

TEST_CASE("t confidence intervals") {
  const auto ci = ci_tdist(1.0, 0.5, 30, 7, 0.95);
  CHECK(ci.df == 23);
  CHECK(ci.low == doctest::Approx(1.0 - 0.5 * ci.quantile));
  CHECK(ci.high == doctest::Approx(1.0 + 0.5 * ci.quantile));
  CHECK_THROWS_AS(ci_tdist_df(1.0, 0.0, 10, 0.95), NumericalError);
  CHECK_THROWS_AS(ci_tdist_df(1.0, 1.0, 10, 1.5), ValidationError);
}

TEST_CASE("cross-fit variance") {
  Philox4x32 rng(9, 9);
  std::normal_distribution<double> normal;
  const int m = 40;
  Eigen::MatrixXd u(m, 2);
  for (int i = 0; i < m; ++i) {
    u(i, 0) = normal(rng);
    u(i, 1) = 0.5 * u(i, 0) + normal(rng);
  }
  SUBCASE("a single fold is the plain empirical covariance") {
    const std::vector<std::size_t> folds(m, 0);
    const auto cv = crossfit_variance(u, folds, 1, Eigen::Vector2d(1, -1));
    const Eigen::MatrixXd c = u.rowwise() - u.colwise().mean();
    const Eigen::Matrix2d emp = c.transpose() * c / m;
    CHECK((cv.v_hat - emp).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(cv.variance == doctest::Approx(Eigen::Vector2d(1, -1).dot(emp * Eigen::Vector2d(1, -1)) / m));
  }
  SUBCASE("fold average") {
    std::vector<std::size_t> folds(m);
    for (int i = 0; i < m; ++i) folds[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i % 2);
    const auto cv = crossfit_variance(u, folds, 2, Eigen::Vector2d(1, -1));
    Eigen::Matrix2d expect = Eigen::Matrix2d::Zero();
    for (int k = 0; k < 2; ++k) {
      Eigen::MatrixXd uk(m / 2, 2);
      for (int i = 0; i < m / 2; ++i) uk.row(i) = u.row(2 * i + k);
      const Eigen::MatrixXd c = uk.rowwise() - uk.colwise().mean();
      expect += c.transpose() * c / (m / 2) / 2;
    }
    CHECK((cv.v_hat - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("identical contributions are degenerate") {
    const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(m, 2, 3.0);
    const auto cv = crossfit_variance(same, std::vector<std::size_t>(m, 0), 1, Eigen::Vector2d(1, -1));
    CHECK(cv.degenerate);
    CHECK(cv.variance == 0.0);
  }
  SUBCASE("a fold with one cluster is an error") {
    std::vector<std::size_t> folds(m, 0);
    folds[0] = 1;
    CHECK_THROWS_AS(crossfit_variance(u, folds, 2, Eigen::Vector2d(1, -1)), NumericalError);
  }
}
