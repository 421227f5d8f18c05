#include "tvroa/tvlqr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "json_util.hpp"

namespace tvroa {

namespace {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& S) {
  return 0.5 * (S + S.transpose());
}

Eigen::LLT<Eigen::MatrixXd> factor_input_weight(const Eigen::MatrixXd& R) {
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) {
    throw ConfigError("input weight R must be symmetric positive definite");
  }
  return llt;
}

// Solves AᵀX + XA + C = 0 through the Kronecker form.
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& C) {
  const Eigen::Index n = A.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n * n, n * n);
  // vec(AᵀX) = (I ⊗ Aᵀ) vec X, vec(XA) = (Aᵀ ⊗ I) vec X.
  for (Eigen::Index i = 0; i < n; ++i) {
    L.block(i * n, i * n, n, n) += A.transpose();
    for (Eigen::Index j = 0; j < n; ++j) {
      L.block(i * n, j * n, n, n) += A(j, i) * I;
    }
  }
  const Eigen::VectorXd rhs =
      -Eigen::Map<const Eigen::VectorXd>(C.data(), n * n);
  const Eigen::VectorXd x = L.partialPivLu().solve(rhs);
  return symmetrize(Eigen::Map<const Eigen::MatrixXd>(x.data(), n, n));
}

// log|det Z| from an LU factorization.
double log_abs_det(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu) {
  return lu.matrixLU().diagonal().array().abs().log().sum();
}

void check_square(const Eigen::MatrixXd& M, Eigen::Index n, const char* what) {
  if (M.rows() != n || M.cols() != n) {
    throw InputError(std::string(what) + ": expected " + std::to_string(n) +
                     "x" + std::to_string(n));
  }
}

}  // namespace

double care_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& S) {
  const Eigen::MatrixXd BtS = B.transpose() * S;
  const Eigen::MatrixXd res = A.transpose() * S + S * A -
                              BtS.transpose() * R.llt().solve(BtS) + Q;
  return res.cwiseAbs().maxCoeff();
}

Eigen::MatrixXd solve_care(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  const Eigen::Index n = A.rows();
  check_square(A, n, "solve_care: A");
  check_square(Q, n, "solve_care: Q");
  require_dim(B.rows(), n, "solve_care: B rows");
  check_square(R, B.cols(), "solve_care: R");
  const auto Rllt = factor_input_weight(R);
  const Eigen::MatrixXd G = B * Rllt.solve(B.transpose());

  Eigen::MatrixXd Z(2 * n, 2 * n);
  Z << A, -G, -Q, -A.transpose();
  for (int it = 0; it < 100; ++it) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(Z);
    const double c = std::exp(log_abs_det(lu) / double(2 * n));
    const Eigen::MatrixXd next = 0.5 * (Z / c + c * lu.inverse());
    const double change = (next - Z).lpNorm<1>();
    Z = next;
    if (change <= 1e-13 * Z.lpNorm<1>()) break;
  }
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd lhs(2 * n, n), rhs(2 * n, n);
  lhs << Z.topRightCorner(n, n), Z.bottomRightCorner(n, n) + I;
  rhs << -(Z.topLeftCorner(n, n) + I), -Z.bottomLeftCorner(n, n);
  Eigen::MatrixXd S = symmetrize(lhs.colPivHouseholderQr().solve(rhs));

  std::vector<double> history{care_residual(A, B, Q, R, S)};
  const double target = 1e-8 * std::max(Q.cwiseAbs().maxCoeff(), 1e-300);
  for (int it = 0; it < 20 && history.back() > 1e-3 * target; ++it) {
    const Eigen::MatrixXd K = Rllt.solve(B.transpose() * S);
    const Eigen::MatrixXd candidate = solve_lyapunov(
        A - B * K, Q + K.transpose() * R * K);
    const double residual = care_residual(A, B, Q, R, candidate);
    if (!(residual < history.back())) break;
    S = candidate;
    history.push_back(residual);
  }
  if (!S.allFinite() || !(history.back() <= target)) {
    std::ostringstream msg;
    msg << "solve_care: residual did not converge (history:";
    for (double r : history) msg << ' ' << r;
    msg << "; target " << target << ")";
    throw NumericalError(msg.str());
  }
  const Eigen::MatrixXd closed = A - G * S;
  const double abscissa = closed.eigenvalues().real().maxCoeff();
  if (!(abscissa < 0)) {
    std::ostringstream msg;
    msg << "solve_care: no stabilizing solution (closed-loop eigenvalue with real part "
        << abscissa << "); the pair (A, B) is not stabilizable";
    throw NumericalError(msg.str());
  }
  return S;
}

Eigen::MatrixXd riccati_derivative(const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B,
                                   const Eigen::MatrixXd& Q,
                                   const Eigen::MatrixXd& Rinv,
                                   const Eigen::MatrixXd& S) {
  const Eigen::MatrixXd SB = S * B;
  return -(S * A + A.transpose() * S - SB * Rinv * SB.transpose() + Q);
}

TvlqrPolicy solve_tvlqr(const Linearization& lin, const Trajectory& nominal,
                        const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                        const std::optional<Eigen::MatrixXd>& Qf,
                        const Eigen::MatrixXd& A_terminal,
                        const Eigen::MatrixXd& B_terminal,
                        const TvlqrOptions& options) {
  nominal.validate();
  const int N = nominal.num_intervals();
  const int nx = nominal.num_states();
  const int nu = nominal.num_inputs();
  require_dim(lin.num_knots(), nominal.num_knots(), "solve_tvlqr: knot count");
  check_square(Q, nx, "solve_tvlqr: Q");
  check_square(R, nu, "solve_tvlqr: R");
  if (options.substeps < 1) throw InputError("solve_tvlqr: substeps < 1");
  const Eigen::MatrixXd Rinv =
      factor_input_weight(R).solve(Eigen::MatrixXd::Identity(nu, nu));

  TvlqrPolicy policy;
  policy.nominal = nominal;
  policy.Q = Q;
  policy.R = R;
  policy.S_inf = solve_care(A_terminal, B_terminal, Q, R);
  policy.K_inf = Rinv * B_terminal.transpose() * policy.S_inf;
  policy.Qf = Qf ? *Qf : policy.S_inf;
  check_square(policy.Qf, nx, "solve_tvlqr: Qf");
  policy.S.resize(N + 1);
  policy.K.resize(N + 1);

  auto finish_knot = [&](int k, const Eigen::MatrixXd& S) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        S, Eigen::EigenvaluesOnly);
    const double lowest = eig.eigenvalues().minCoeff();
    if (!S.allFinite() ||
        lowest < -options.psd_tolerance * (1.0 + S.norm())) {
      std::ostringstream msg;
      msg << "solve_tvlqr: S lost positive semi-definiteness at knot " << k
          << " (smallest eigenvalue " << lowest
          << "); increase the number of Riccati substeps";
      throw NumericalError(msg.str());
    }
    policy.S[k] = S;
    policy.K[k] = Rinv * lin.B[k].transpose() * S;
  };

  Eigen::MatrixXd S = symmetrize(policy.Qf);
  finish_knot(N, S);
  const double h = nominal.dt / options.substeps;
  for (int k = N - 1; k >= 0; --k) {
    const Eigen::MatrixXd dA = lin.A[k + 1] - lin.A[k];
    const Eigen::MatrixXd dB = lin.B[k + 1] - lin.B[k];
    // s is the fraction of the interval elapsed, integrated from 1 to 0.
    auto f = [&](double s, const Eigen::MatrixXd& P) {
      return riccati_derivative(lin.A[k] + s * dA, lin.B[k] + s * dB, Q, Rinv,
                                P);
    };
    const double ds = 1.0 / options.substeps;
    for (int i = options.substeps; i > 0; --i) {
      const double s = i * ds;
      const Eigen::MatrixXd k1 = f(s, S);
      const Eigen::MatrixXd k2 = f(s - 0.5 * ds, S - 0.5 * h * k1);
      const Eigen::MatrixXd k3 = f(s - 0.5 * ds, S - 0.5 * h * k2);
      const Eigen::MatrixXd k4 = f(s - ds, S - h * k3);
      S = symmetrize(S - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    finish_knot(k, S);
  }
  return policy;
}

TvlqrPolicy synthesize(const MechanicalSystem& system,
                       const Trajectory& nominal, const Eigen::MatrixXd& Q,
                       const Eigen::MatrixXd& R,
                       const std::optional<Eigen::MatrixXd>& Qf,
                       const TvlqrOptions& options) {
  const Linearization lin = linearize(system, nominal);
  const int nq = nominal.num_positions();
  Eigen::VectorXd rest = Eigen::VectorXd::Zero(2 * nq);
  rest.head(nq) = nominal.states.col(nominal.num_intervals()).head(nq);
  Eigen::MatrixXd A_f, B_f;
  linearize_at(system, rest, Eigen::VectorXd::Zero(system.num_inputs()), &A_f,
               &B_f);
  return solve_tvlqr(lin, nominal, Q, R, Qf, A_f, B_f, options);
}

double riccati_midpoint_residual(const TvlqrPolicy& policy,
                                 const Linearization& lin) {
  const Eigen::MatrixXd Rinv = policy.R.inverse();
  const double dt = policy.nominal.dt;
  double worst = 0;
  for (int k = 0; k < policy.num_intervals(); ++k) {
    const Eigen::MatrixXd fd = (policy.S[k + 1] - policy.S[k]) / dt;
    const Eigen::MatrixXd rhs = riccati_derivative(
        0.5 * (lin.A[k] + lin.A[k + 1]), 0.5 * (lin.B[k] + lin.B[k + 1]),
        policy.Q, Rinv, 0.5 * (policy.S[k] + policy.S[k + 1]));
    const double scale = std::max(rhs.norm(), policy.Q.norm());
    worst = std::max(worst, (fd - rhs).norm() / scale);
  }
  return worst;
}

Eigen::VectorXd reference_state(const TvlqrPolicy& policy, double t) {
  return interpolate_state(policy.nominal, t);
}

Eigen::VectorXd feedback(const TvlqrPolicy& policy, int interval, double t,
                         const Eigen::VectorXd& x) {
  require_dim(x.size(), policy.num_states(), "feedback: x");
  if (interval < 0 || interval >= policy.num_intervals()) {
    throw InputError("feedback: interval index out of range");
  }
  const Eigen::VectorXd xbar =
      x - interpolate_state(policy.nominal, interval, t);
  return policy.nominal.inputs.col(interval) - policy.K[interval] * xbar;
}

Eigen::VectorXd feedback(const TvlqrPolicy& policy, double t,
                         const Eigen::VectorXd& x) {
  const double tf = policy.duration();
  const double slack = 1e-9 * policy.nominal.dt;
  if (!(t >= -slack && t <= tf + slack)) {
    throw InputError("feedback: time outside the policy horizon");
  }
  if (t >= tf - slack) {
    require_dim(x.size(), policy.num_states(), "feedback: x");
    const Eigen::VectorXd xbar =
        x - policy.nominal.states.col(policy.num_intervals());
    return -policy.K.back() * xbar;
  }
  return feedback(policy, interval_index(policy.nominal, t), t, x);
}

double cost_to_go_at_knot(const TvlqrPolicy& policy, int k,
                          const Eigen::VectorXd& x) {
  if (k < 0 || k >= policy.num_knots()) {
    throw InputError("cost_to_go: knot index out of range");
  }
  require_dim(x.size(), policy.num_states(), "cost_to_go: x");
  return quadratic_form(policy.S[k], x - policy.nominal.states.col(k));
}

double cost_to_go(const TvlqrPolicy& policy, double t,
                  const Eigen::VectorXd& x) {
  const double dt = policy.nominal.dt;
  const double position = t / dt;
  const double nearest = std::round(position);
  if (std::abs(position - nearest) <= 1e-9 && nearest >= 0 &&
      nearest <= policy.num_intervals()) {
    return cost_to_go_at_knot(policy, static_cast<int>(nearest), x);
  }
  if (t < 0 || t > policy.duration()) {
    throw InputError("cost_to_go: time outside the policy horizon");
  }
  require_dim(x.size(), policy.num_states(), "cost_to_go: x");
  const int k = interval_index(policy.nominal, t);
  return quadratic_form(policy.S[k],
                        x - interpolate_state(policy.nominal, k, t));
}

void write_policy_json(const TvlqrPolicy& policy,
                       const std::filesystem::path& path) {
  using json_util::Json;
  using json_util::to_json;
  Json j;
  j["version"] = 1;
  j["dt"] = policy.nominal.dt;
  Json times = Json::array();
  for (int k = 0; k < policy.num_knots(); ++k) {
    times.push_back(policy.nominal.time(k));
  }
  j["knot_times"] = times;
  j["states"] = to_json(Eigen::MatrixXd(policy.nominal.states.transpose()));
  j["inputs"] = to_json(Eigen::MatrixXd(policy.nominal.inputs.transpose()));
  j["Q"] = to_json(policy.Q);
  j["R"] = to_json(policy.R);
  j["Qf"] = to_json(policy.Qf);
  Json S = Json::array(), K = Json::array();
  for (int k = 0; k < policy.num_knots(); ++k) {
    S.push_back(to_json(policy.S[k]));
    K.push_back(to_json(policy.K[k]));
  }
  j["S"] = S;
  j["K"] = K;
  j["S_inf"] = to_json(policy.S_inf);
  j["K_inf"] = to_json(policy.K_inf);
  json_util::write_file(j, path);
}

TvlqrPolicy read_policy_json(const std::filesystem::path& path) {
  using json_util::matrix_from_json;
  const auto j = json_util::read_file(path);
  try {
    if (j.at("version").get<int>() != 1) {
      throw InputError("unsupported policy file version");
    }
    TvlqrPolicy policy;
    policy.nominal.dt = j.at("dt").get<double>();
    policy.nominal.states =
        matrix_from_json(j.at("states"), "states").transpose();
    policy.nominal.inputs =
        matrix_from_json(j.at("inputs"), "inputs").transpose();
    policy.nominal.validate();
    policy.Q = matrix_from_json(j.at("Q"), "Q");
    policy.R = matrix_from_json(j.at("R"), "R");
    policy.Qf = matrix_from_json(j.at("Qf"), "Qf");
    const auto& S = j.at("S");
    const auto& K = j.at("K");
    if (static_cast<int>(S.size()) != policy.num_knots() ||
        static_cast<int>(K.size()) != policy.num_knots()) {
      throw InputError("S and K must have one entry per knot");
    }
    for (int k = 0; k < policy.num_knots(); ++k) {
      policy.S.push_back(matrix_from_json(S[k], "S"));
      policy.K.push_back(matrix_from_json(K[k], "K"));
      require_dim(policy.S[k].rows(), policy.num_states(), "S rows");
      require_dim(policy.K[k].rows(), policy.num_inputs(), "K rows");
    }
    policy.S_inf = matrix_from_json(j.at("S_inf"), "S_inf");
    policy.K_inf = matrix_from_json(j.at("K_inf"), "K_inf");
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": malformed policy file: " + e.what());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace tvroa
