#pragma once

// Generalized linear model fitting by IRLS over streamed design blocks, and
// ordinary least squares with rank diagnostics.

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace geocausal {

struct DesignBlock {
  std::size_t rows = 0;
  std::vector<double> x;         // rows * columns, row-major
  std::vector<double> response;  // counts (Poisson) or 0/1 (logistic)
  std::vector<double> exposure;  // Poisson exposure (cell area); ignored for logistic
};

// Row blocks of a design table. Block boundaries are fixed by the source, so
// reductions over blocks are independent of the worker count.
class DesignSource {
 public:
  virtual ~DesignSource() = default;
  virtual std::size_t block_count() const = 0;
  virtual const std::vector<std::string>& column_names() const = 0;
  virtual void fill_block(std::size_t b, DesignBlock& out) const = 0;
  // Index of the intercept column, excluded from the ridge penalty; -1 if none.
  virtual int intercept_column() const { return 0; }
};

enum class GlmFamily { poisson, binomial };

struct GlmOptions {
  double tolerance = 1e-8;       // relative change in penalized deviance
  int max_iterations = 100;
  double ridge = 0.0;            // adds ridge * |beta|^2 (intercept excluded)
  double gradient_tolerance = 1e-6;
};

struct GlmFit {
  Eigen::VectorXd coefficients;
  std::vector<std::string> names;
  double deviance = 0.0;
  double penalized_deviance = 0.0;
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;          // max |score| at the solution
  std::vector<double> deviance_trace;  // penalized deviance after each iteration
  Eigen::MatrixXd information;         // X'WX (+ ridge) at the solution
  double observations = 0.0;
};

// Throws RankDeficiency naming the collinear columns (unless ridge > 0),
// ConvergenceError after max_iterations, InvalidArgument for degenerate
// responses (no events, single class) and Error on complete separation.
GlmFit fit_glm(const DesignSource& source, GlmFamily family, const GlmOptions& options);

// In-memory design for small problems and tests.
class DenseDesign : public DesignSource {
 public:
  DenseDesign(std::vector<std::string> names, Eigen::MatrixXd x, Eigen::VectorXd response, Eigen::VectorXd exposure = {},
              int intercept_column = 0);
  std::size_t block_count() const override;
  const std::vector<std::string>& column_names() const override { return names_; }
  void fill_block(std::size_t b, DesignBlock& out) const override;
  int intercept_column() const override { return intercept_; }

 private:
  static constexpr std::size_t kBlockRows = 4096;
  std::vector<std::string> names_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd exposure_;
  int intercept_;
};

struct OlsFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd residuals;
};

// Least squares via column-pivoted QR; RankDeficiency lists the columns that
// are linear combinations of the others.
OlsFit ols(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const std::vector<std::string>& names);

// Names of columns participating in an exact linear dependence among the
// columns of x (empty when x has full column rank).
std::vector<std::string> collinear_columns(const Eigen::MatrixXd& gram, const std::vector<std::string>& names);

}  // namespace geocausal
