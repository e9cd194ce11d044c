#include "geocausal/regression.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "geocausal/errors.hpp"
#include "geocausal/parallel.hpp"

namespace geocausal {

namespace {

struct BlockStats {
  Eigen::MatrixXd xtwx;
  Eigen::VectorXd score;  // X'(y - mu)
  long double deviance = 0.0L;  // extended so descent is resolvable near the optimum
  double sum_y = 0.0;
  double sum_n = 0.0;  // exposure (Poisson) or rows (binomial)
  double rows = 0.0;
};

long double poisson_unit_deviance(long double y, long double mu) {
  return y > 0.0L ? 2.0L * (y * std::log(y / mu) - (y - mu)) : 2.0L * mu;
}

long double binomial_unit_deviance(long double y, long double eta) {
  // -2 log p or -2 log(1 - p) via log1p(exp(-|eta|)) to keep tails accurate
  const long double a = std::log1p(std::exp(-std::fabs(eta)));
  const bool hit = y > 0.5L;
  const long double s = hit ? -eta : eta;
  return 2.0L * (std::max(s, 0.0L) + a);
}

// Numerically stable logistic mean for eta.
double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

class Evaluator {
 public:
  Evaluator(const DesignSource& src, GlmFamily family) : src_(src), family_(family) {
    p_ = static_cast<int>(src.column_names().size());
  }

  int columns() const { return p_; }

  // Deviance of beta; when with_derivatives, also X'WX and score.
  BlockStats evaluate(const Eigen::VectorXd& beta, bool with_derivatives) const {
    const std::size_t nb = src_.block_count();
    std::vector<BlockStats> parts(nb);
    parallel_for(nb, [&](std::size_t b) {
      thread_local DesignBlock block;
      src_.fill_block(b, block);
      BlockStats st;
      if (with_derivatives) {
        st.xtwx = Eigen::MatrixXd::Zero(p_, p_);
        st.score = Eigen::VectorXd::Zero(p_);
      }
      for (std::size_t r = 0; r < block.rows; ++r) {
        const double* x = block.x.data() + r * static_cast<std::size_t>(p_);
        long double eta = 0.0L;
        for (int k = 0; k < p_; ++k) eta += static_cast<long double>(x[k]) * beta[k];
        const double y = block.response[r];
        double mu = 0.0, w = 0.0;
        if (family_ == GlmFamily::poisson) {
          const double e = block.exposure[r];
          const long double mul = e * std::exp(eta);
          mu = static_cast<double>(mul);
          w = mu;
          st.deviance += poisson_unit_deviance(y, mul);
          st.sum_n += e;
        } else {
          mu = expit(static_cast<double>(eta));
          w = mu * (1.0 - mu);
          st.deviance += binomial_unit_deviance(y, eta);
          st.sum_n += 1.0;
        }
        st.sum_y += y;
        st.rows += 1.0;
        if (with_derivatives) {
          const double resid = y - mu;
          for (int a = 0; a < p_; ++a) {
            st.score[a] += x[a] * resid;
            const double wa = w * x[a];
            for (int c = 0; c <= a; ++c) st.xtwx(a, c) += wa * x[c];
          }
        }
      }
      parts[b] = std::move(st);
    });
    BlockStats total;
    if (with_derivatives) {
      total.xtwx = Eigen::MatrixXd::Zero(p_, p_);
      total.score = Eigen::VectorXd::Zero(p_);
    }
    for (auto& st : parts) {
      total.deviance += st.deviance;
      total.sum_y += st.sum_y;
      total.sum_n += st.sum_n;
      total.rows += st.rows;
      if (with_derivatives) {
        total.xtwx += st.xtwx;
        total.score += st.score;
      }
    }
    if (with_derivatives) total.xtwx = total.xtwx.selfadjointView<Eigen::Lower>();
    return total;
  }

  Eigen::MatrixXd gram() const {
    const std::size_t nb = src_.block_count();
    std::vector<Eigen::MatrixXd> parts(nb);
    parallel_for(nb, [&](std::size_t b) {
      thread_local DesignBlock block;
      src_.fill_block(b, block);
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p_, p_);
      for (std::size_t r = 0; r < block.rows; ++r) {
        const double* x = block.x.data() + r * static_cast<std::size_t>(p_);
        for (int a = 0; a < p_; ++a) {
          for (int c = 0; c <= a; ++c) g(a, c) += x[a] * x[c];
        }
      }
      parts[b] = std::move(g);
    });
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p_, p_);
    for (const auto& part : parts) g += part;
    return g.selfadjointView<Eigen::Lower>();
  }

 private:
  const DesignSource& src_;
  GlmFamily family_;
  int p_ = 0;
};

}  // namespace

std::vector<std::string> collinear_columns(const Eigen::MatrixXd& gram, const std::vector<std::string>& names) {
  const int p = static_cast<int>(gram.rows());
  if (p == 0) return {};
  // Scale to unit diagonal so the test is independent of covariate units.
  Eigen::VectorXd d(p);
  std::vector<std::string> zero_cols;
  for (int k = 0; k < p; ++k) {
    d[k] = gram(k, k) > 0.0 ? 1.0 / std::sqrt(gram(k, k)) : 0.0;
    if (gram(k, k) <= 0.0) zero_cols.push_back(names[k]);
  }
  if (!zero_cols.empty()) return zero_cols;
  const Eigen::MatrixXd scaled = d.asDiagonal() * gram * d.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
  const Eigen::VectorXd& vals = eig.eigenvalues();
  const double tol = 1e-10 * std::max(1.0, vals.maxCoeff());
  std::vector<bool> involved(p, false);
  bool deficient = false;
  for (int k = 0; k < p; ++k) {
    if (vals[k] > tol) continue;
    deficient = true;
    const Eigen::VectorXd v = eig.eigenvectors().col(k);
    for (int c = 0; c < p; ++c) involved[c] = involved[c] || std::abs(v[c]) > 1e-6;
  }
  std::vector<std::string> out;
  if (!deficient) return out;
  for (int c = 0; c < p; ++c) {
    if (involved[c]) out.push_back(names[c]);
  }
  return out;
}

GlmFit fit_glm(const DesignSource& source, GlmFamily family, const GlmOptions& options) {
  Evaluator ev(source, family);
  const int p = ev.columns();
  const auto& names = source.column_names();
  if (p == 0) throw InvalidArgument("fit_glm: design has no columns");

  if (options.ridge <= 0.0) {
    const auto bad = collinear_columns(ev.gram(), names);
    if (!bad.empty()) {
      std::ostringstream msg;
      msg << "design matrix is rank deficient; collinear columns:";
      for (const auto& n : bad) msg << " " << n;
      msg << " (drop one, or set a ridge penalty)";
      throw RankDeficiency(msg.str(), bad);
    }
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  const int icol = source.intercept_column();
  {
    const BlockStats st = ev.evaluate(beta, false);
    if (family == GlmFamily::poisson) {
      if (!(st.sum_y > 0.0)) throw InvalidArgument("fit_glm: no events; the Poisson likelihood is unbounded in the intercept");
      if (icol >= 0) beta[icol] = std::log(st.sum_y / st.sum_n);
    } else {
      if (st.sum_y <= 0.0 || st.sum_y >= st.rows) {
        throw InvalidArgument("fit_glm: response has a single class; the logistic fit is undefined");
      }
      if (icol >= 0) beta[icol] = std::log(st.sum_y / (st.rows - st.sum_y));
    }
  }

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, options.ridge);
  if (icol >= 0) penalty[icol] = 0.0;
  // Rounded once from the extended sum; rounding is monotone, so a true
  // descent never shows up as an increase in the trace.
  auto penalized = [&](const BlockStats& st, const Eigen::VectorXd& b) {
    long double s = st.deviance;
    for (int k = 0; k < p; ++k) s += static_cast<long double>(penalty[k]) * b[k] * b[k];
    return static_cast<double>(s);
  };

  GlmFit fit;
  fit.names = names;
  BlockStats cur = ev.evaluate(beta, true);
  double pen = penalized(cur, beta);
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    Eigen::MatrixXd h = cur.xtwx;
    h.diagonal() += penalty;
    const Eigen::VectorXd g = cur.score - (penalty.array() * beta.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success) throw ConvergenceError("fit_glm: singular information matrix", fit.deviance_trace);
    Eigen::VectorXd step = ldlt.solve(g);
    Eigen::VectorXd next = beta + step;
    BlockStats cand = ev.evaluate(next, true);
    double cand_pen = penalized(cand, next);
    int halvings = 0;
    while (!(cand_pen <= pen) && halvings < 40) {
      step *= 0.5;
      next = beta + step;
      cand = ev.evaluate(next, true);
      cand_pen = penalized(cand, next);
      ++halvings;
    }
    if (!(cand_pen <= pen)) {
      // no representable descent left: converged only if the score is already small
      fit.iterations = iter;
      fit.gradient_norm = g.cwiseAbs().maxCoeff();
      fit.converged = fit.gradient_norm < options.gradient_tolerance;
      break;
    }
    const double rel = std::abs(pen - cand_pen) / (std::abs(cand_pen) + 0.1);
    beta = next;
    cur = std::move(cand);
    pen = cand_pen;
    fit.deviance_trace.push_back(pen);
    fit.iterations = iter;
    const Eigen::VectorXd gnew = cur.score - (penalty.array() * beta.array()).matrix();
    fit.gradient_norm = gnew.cwiseAbs().maxCoeff();
    if (rel < options.tolerance && fit.gradient_norm < options.gradient_tolerance) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    std::ostringstream msg;
    msg << "fit_glm: no convergence after " << fit.iterations << " iterations (gradient " << fit.gradient_norm
        << "); deviance trace:";
    for (double d : fit.deviance_trace) msg << " " << d;
    throw ConvergenceError(msg.str(), fit.deviance_trace);
  }
  if (family == GlmFamily::binomial && beta.cwiseAbs().maxCoeff() > 25.0) {
    throw Error("fit_glm: complete or quasi-complete separation (|coefficient| > 25); refit with a ridge penalty");
  }
  fit.coefficients = beta;
  fit.deviance = static_cast<double>(cur.deviance);
  fit.penalized_deviance = pen;
  fit.information = cur.xtwx;
  fit.information.diagonal() += penalty;
  fit.observations = cur.rows;
  return fit;
}

DenseDesign::DenseDesign(std::vector<std::string> names, Eigen::MatrixXd x, Eigen::VectorXd response,
                         Eigen::VectorXd exposure, int intercept_column)
    : names_(std::move(names)), x_(std::move(x)), y_(std::move(response)), exposure_(std::move(exposure)),
      intercept_(intercept_column) {
  if (x_.cols() != static_cast<Eigen::Index>(names_.size())) throw InvalidArgument("DenseDesign: column/name mismatch");
  if (y_.size() != x_.rows()) throw InvalidArgument("DenseDesign: response length mismatch");
  if (exposure_.size() == 0) exposure_ = Eigen::VectorXd::Ones(x_.rows());
  if (exposure_.size() != x_.rows()) throw InvalidArgument("DenseDesign: exposure length mismatch");
}

std::size_t DenseDesign::block_count() const {
  return (static_cast<std::size_t>(x_.rows()) + kBlockRows - 1) / kBlockRows;
}

void DenseDesign::fill_block(std::size_t b, DesignBlock& out) const {
  const std::size_t r0 = b * kBlockRows;
  const std::size_t r1 = std::min<std::size_t>(r0 + kBlockRows, static_cast<std::size_t>(x_.rows()));
  const std::size_t p = names_.size();
  out.rows = r1 - r0;
  out.x.resize(out.rows * p);
  out.response.resize(out.rows);
  out.exposure.resize(out.rows);
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = 0; c < p; ++c) out.x[(r - r0) * p + c] = x_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    out.response[r - r0] = y_[static_cast<Eigen::Index>(r)];
    out.exposure[r - r0] = exposure_[static_cast<Eigen::Index>(r)];
  }
}

OlsFit ols(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const std::vector<std::string>& names) {
  if (z.rows() != y.size()) throw InvalidArgument("ols: row mismatch");
  if (z.rows() < z.cols()) throw InvalidArgument("ols: fewer observations than columns");
  const auto bad = collinear_columns(z.transpose() * z, names);
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "regression design is rank deficient; offending columns:";
    for (const auto& n : bad) msg << " " << n;
    throw RankDeficiency(msg.str(), bad);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  OlsFit fit;
  fit.coefficients = qr.solve(y);
  fit.residuals = y - z * fit.coefficients;
  return fit;
}

}  // namespace geocausal
