#include "dsse/wls.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>

namespace dsse {

namespace {

struct Workspace {
  Eigen::VectorXd h;
  Eigen::MatrixXd H;
  Eigen::MatrixXd A;  // sqrt(W) H
  Eigen::MatrixXd G;
};

double weighted_sum(const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
  return (r.array().square() * w.array()).sum();
}

void assemble_gain(const Eigen::MatrixXd& H, const Eigen::VectorXd& sqrt_w, Workspace& ws) {
  ws.A = sqrt_w.asDiagonal() * H;
  ws.G.setZero(H.cols(), H.cols());
  ws.G.selfadjointView<Eigen::Lower>().rankUpdate(ws.A.transpose());
  ws.G = Eigen::MatrixXd(ws.G.selfadjointView<Eigen::Lower>());
}

struct ScaledFactor {
  Eigen::VectorXd scale;
  Eigen::LLT<Eigen::MatrixXd> llt;
  GainCheck check;
};

void factorize(const Eigen::MatrixXd& G, double max_condition, ScaledFactor& f) {
  f.check = {};
  f.check.condition = std::numeric_limits<double>::infinity();
  const Eigen::VectorXd d = G.diagonal();
  if ((d.array() <= 0.0).any() || !d.allFinite()) return;
  f.scale = d.cwiseSqrt().cwiseInverse();
  f.llt.compute(f.scale.asDiagonal() * G * f.scale.asDiagonal());
  if (f.llt.info() != Eigen::Success) return;
  const double rcond = f.llt.rcond();
  if (!(rcond > 0.0)) return;
  f.check.condition = 1.0 / rcond;
  f.check.observable = f.check.condition <= max_condition;
}

}  // namespace

double objective(const FeederModel& model, const MeasurementSet& z, const StateVector& x) {
  const Eigen::VectorXd r = z.values() - measurement_function(model, z, x);
  return weighted_sum(r, z.variances().cwiseInverse());
}

Eigen::MatrixXd gain_matrix(const FeederModel& model, const MeasurementSet& z, const StateVector& x) {
  Workspace ws;
  const Eigen::MatrixXd H = jacobian_rows(model, z, x);
  assemble_gain(H, z.variances().cwiseInverse().cwiseSqrt(), ws);
  return ws.G;
}

GainCheck check_gain(const Eigen::MatrixXd& gain, double max_condition) {
  ScaledFactor f;
  factorize(gain, max_condition, f);
  return f.check;
}

GainCheck check_observability(const FeederModel& model, const MeasurementSet& z, const StateVector& x,
                              double max_condition) {
  return check_gain(gain_matrix(model, z, x), max_condition);
}

WlsReport estimate(const FeederModel& model, const MeasurementSet& z, const WlsConfig& config,
                   const StateVector* start) {
  if (!(config.tolerance > 0.0) || config.max_iter < 1)
    throw std::invalid_argument("WLS tolerance and max_iter must be positive");
  const Eigen::VectorXd var = z.variances();
  if ((var.array() <= 0.0).any()) throw std::invalid_argument("measurement variances must be positive");

  const MeasurementFunction hfun(model, z);
  const Eigen::VectorXd zv = z.values();
  const Eigen::VectorXd w = var.cwiseInverse();
  const Eigen::VectorXd sqrt_w = w.cwiseSqrt();

  Eigen::VectorXd base(hfun.cols());
  for (const Bus& b : model.buses())
    for (Phase p : b.phases.phases()) {
      const int i = model.state_index(b.index, p);
      base(2 * i) = base(2 * i + 1) = b.base_voltage;
    }

  WlsReport report;
  Eigen::VectorXd x = (config.flat_start || start == nullptr) ? flat_state(model).to_real() : start->to_real();
  Workspace ws;
  ScaledFactor factor;

  hfun.evaluate(x, ws.h);
  double J = weighted_sum(zv - ws.h, w);
  report.objective_history.push_back(J);

  for (int iter = 1; iter <= config.max_iter; ++iter) {
    report.iterations = iter;
    const Eigen::VectorXd r = zv - ws.h;
    hfun.jacobian(x, ws.H);
    assemble_gain(ws.H, sqrt_w, ws);
    factorize(ws.G, config.max_condition, factor);
    report.gain_condition = factor.check.condition;
    if (!factor.check.observable) {
      report.x_hat = StateVector::from_real(x);
      report.objective = J;
      throw WlsError(WlsError::Code::unobservable,
                     "gain matrix is singular (scaled condition estimate " +
                         std::to_string(factor.check.condition) + ")",
                     report);
    }
    const Eigen::VectorXd rhs = factor.scale.asDiagonal() * (ws.H.transpose() * (w.asDiagonal() * r));
    const Eigen::VectorXd dx = factor.scale.asDiagonal() * factor.llt.solve(rhs);

    // Step halving keeps the objective sequence non-increasing.
    double step = 1.0;
    Eigen::VectorXd trial;
    Eigen::VectorXd h_trial;
    double J_trial = J;
    bool accepted = false;
    for (int k = 0; k <= config.max_halvings; ++k, step *= 0.5) {
      trial = x + step * dx;
      hfun.evaluate(trial, h_trial);
      J_trial = weighted_sum(zv - h_trial, w);
      if (std::isfinite(J_trial) && J_trial <= J * (1.0 + 1e-12) + std::numeric_limits<double>::min()) {
        accepted = true;
        break;
      }
    }
    const double update = (dx.array() / base.array()).abs().maxCoeff();
    if (!accepted) {
      if (update < config.tolerance) {
        report.converged = true;
        break;
      }
      report.x_hat = StateVector::from_real(x);
      report.objective = J;
      throw WlsError(WlsError::Code::non_converged,
                     "no objective decrease along the Gauss-Newton step at iteration " + std::to_string(iter),
                     report);
    }
    x = trial;
    ws.h = h_trial;
    J = J_trial;
    report.objective_history.push_back(J);
    if (step * update < config.tolerance) {
      report.converged = true;
      break;
    }
  }

  report.x_hat = StateVector::from_real(x);
  report.objective = J;
  if (!report.converged)
    throw WlsError(WlsError::Code::non_converged,
                   "WLS did not converge in " + std::to_string(config.max_iter) + " iterations", report);
  return report;
}

}  // namespace dsse
