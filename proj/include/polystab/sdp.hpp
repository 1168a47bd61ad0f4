#pragma once

// Linear conic programs over a product of dense semidefinite blocks plus a
// group of free scalar variables:
//
//   minimize    sum_b <C_b, X_b> + c_f' f
//   subject to  sum_b <A_rb, X_b> + F_r f = b_r   (r = 1..m)
//               X_b positive semidefinite, f free.
//
// Solved with an embedded primal-dual interior-point method (HKM scaling,
// Mehrotra predictor-corrector). The free variables are handled by bordered
// elimination of the Schur complement system. Programs can also be exported
// in the SDPA sparse format (free variables split into a +/- diagonal block).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "polystab/poly.hpp"  // FormatDouble

namespace polystab {

struct ConicProgram {
  struct Block {
    std::string label;
    int size = 0;
  };
  // One addend of a symmetric coefficient matrix: value v at (i, j) and,
  // implicitly, at (j, i). Stored with i <= j.
  struct PsdEntry {
    int block = 0;
    int i = 0;
    int j = 0;
    double value = 0.0;
  };
  struct Row {
    std::vector<PsdEntry> psd;
    std::vector<std::pair<int, double>> free_terms;  // (free index, coef)
    double rhs = 0.0;
  };

  std::vector<Block> blocks;
  int free_count = 0;
  std::vector<Row> rows;
  std::vector<PsdEntry> objective_psd;
  std::vector<std::pair<int, double>> objective_free;
  std::map<std::string, std::string> metadata;

  int AddBlock(std::string label, int size) {
    blocks.push_back({std::move(label), size});
    return static_cast<int>(blocks.size()) - 1;
  }

  void Validate() const {
    auto check_entry = [&](const PsdEntry& e) {
      if (e.block < 0 || e.block >= static_cast<int>(blocks.size()))
        throw std::invalid_argument("ConicProgram: entry block out of range");
      const int n = blocks[e.block].size;
      if (e.i < 0 || e.j < e.i || e.j >= n)
        throw std::invalid_argument("ConicProgram: entry index out of range");
    };
    for (const auto& b : blocks)
      if (b.size <= 0) throw std::invalid_argument("ConicProgram: empty block");
    for (const auto& e : objective_psd) check_entry(e);
    for (const auto& [j, c] : objective_free)
      if (j < 0 || j >= free_count)
        throw std::invalid_argument("ConicProgram: objective free index");
    for (const auto& r : rows) {
      for (const auto& e : r.psd) check_entry(e);
      for (const auto& [j, c] : r.free_terms)
        if (j < 0 || j >= free_count)
          throw std::invalid_argument("ConicProgram: row free index");
    }
  }
};

enum class ConicStatus {
  kOptimal,
  kPrimalInfeasible,
  kDualInfeasible,
  kIterationLimit,
  kTimeLimit,
  kNumericalTrouble,
};

inline const char* ToString(ConicStatus s) {
  switch (s) {
    case ConicStatus::kOptimal: return "optimal";
    case ConicStatus::kPrimalInfeasible: return "primal_infeasible";
    case ConicStatus::kDualInfeasible: return "dual_infeasible";
    case ConicStatus::kIterationLimit: return "iteration_limit";
    case ConicStatus::kTimeLimit: return "time_limit";
    case ConicStatus::kNumericalTrouble: return "numerical_trouble";
  }
  return "unknown";
}

struct ConicOptions {
  double tolerance = 1e-8;
  int max_iterations = 150;
  double time_limit_seconds = std::numeric_limits<double>::infinity();
  bool verbose = false;
};

struct ConicSolution {
  ConicStatus status = ConicStatus::kNumericalTrouble;
  std::vector<Eigen::MatrixXd> psd;  // one matrix per block
  Eigen::VectorXd free_values;
  Eigen::VectorXd dual_y;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double duality_gap = 0.0;
  int iterations = 0;
  double seconds = 0.0;
  std::string note;
};

// Independent check of a candidate solution against the program data: the
// most negative block eigenvalue and the largest equality violation.
struct FeasibilityReport {
  double min_psd_eigenvalue = 0.0;
  double max_equality_violation = 0.0;
};

inline FeasibilityReport CheckFeasibility(const ConicProgram& p,
                                          const ConicSolution& sol) {
  FeasibilityReport rep;
  rep.min_psd_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sol.psd[b],
                                                      Eigen::EigenvaluesOnly);
    rep.min_psd_eigenvalue =
        std::min(rep.min_psd_eigenvalue, es.eigenvalues().minCoeff());
  }
  for (const auto& row : p.rows) {
    double lhs = 0.0;
    for (const auto& e : row.psd) {
      const double x = sol.psd[e.block](e.i, e.j);
      lhs += (e.i == e.j) ? e.value * x : 2.0 * e.value * x;
    }
    for (const auto& [j, c] : row.free_terms) lhs += c * sol.free_values[j];
    rep.max_equality_violation =
        std::max(rep.max_equality_violation, std::abs(lhs - row.rhs));
  }
  return rep;
}

namespace detail {

// <A_r, U> for a dense (not necessarily symmetric) U, using the symmetric
// interpretation of the stored upper-triangle entries.
inline double InnerRow(const std::vector<ConicProgram::PsdEntry>& entries,
                       const std::vector<Eigen::MatrixXd>& u) {
  double s = 0.0;
  for (const auto& e : entries) {
    const Eigen::MatrixXd& m = u[e.block];
    s += (e.i == e.j) ? e.value * m(e.i, e.i)
                      : e.value * (m(e.i, e.j) + m(e.j, e.i));
  }
  return s;
}

// Largest step alpha in [0, 1] with x + alpha*dx still positive semidefinite,
// computed from the spectrum of L^-1 dx L^-T where x = L L'.
inline double MaxStep(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dx) {
  Eigen::LLT<Eigen::MatrixXd> llt(x);
  if (llt.info() != Eigen::Success) return 0.0;
  Eigen::MatrixXd k = llt.matrixL().solve(dx);
  k = llt.matrixL().solve(k.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (k + k.transpose()), Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin >= -1e-14) return 1.0;
  return std::min(1.0, -1.0 / lmin);
}

struct OrientedEntry {
  int p, q;
  double v;
};

}  // namespace detail

inline ConicSolution SolveConic(const ConicProgram& prog,
                                const ConicOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
        .count();
  };

  prog.Validate();
  const int m = static_cast<int>(prog.rows.size());
  const int nb = static_cast<int>(prog.blocks.size());
  const int nf = prog.free_count;
  if (nb == 0)
    throw std::invalid_argument("SolveConic: program has no semidefinite blocks");

  ConicSolution sol;
  sol.psd.resize(nb);
  sol.free_values = VectorXd::Zero(nf);
  sol.dual_y = VectorXd::Zero(m);

  // Row scaling to unit max coefficient; b is scaled the same way so the
  // solution is unchanged, only the dual variables are rescaled (internal).
  std::vector<double> row_scale(m, 1.0);
  VectorXd b(m);
  for (int r = 0; r < m; ++r) {
    double mx = 0.0;
    for (const auto& e : prog.rows[r].psd) mx = std::max(mx, std::abs(e.value));
    for (const auto& [j, c] : prog.rows[r].free_terms)
      mx = std::max(mx, std::abs(c));
    row_scale[r] = (mx > 1e-12) ? 1.0 / mx : 1.0;
    b[r] = prog.rows[r].rhs * row_scale[r];
  }

  // Dense symmetric objective per block, plus free part.
  std::vector<MatrixXd> c_mat(nb);
  for (int bIdx = 0; bIdx < nb; ++bIdx)
    c_mat[bIdx] = MatrixXd::Zero(prog.blocks[bIdx].size, prog.blocks[bIdx].size);
  for (const auto& e : prog.objective_psd) {
    c_mat[e.block](e.i, e.j) += e.value;
    if (e.i != e.j) c_mat[e.block](e.j, e.i) += e.value;
  }
  VectorXd c_free = VectorXd::Zero(nf);
  for (const auto& [j, c] : prog.objective_free) c_free[j] += c;

  // Scaled constraint data grouped per block for the Schur product loop.
  // oriented[b][k] lists every (p,q,v) addend of row rows_of_block[b][k].
  std::vector<std::vector<int>> rows_of_block(nb);
  std::vector<std::vector<std::vector<detail::OrientedEntry>>> oriented(nb);
  for (int r = 0; r < m; ++r) {
    std::vector<std::vector<detail::OrientedEntry>> per_block(nb);
    for (const auto& e : prog.rows[r].psd) {
      const double v = e.value * row_scale[r];
      per_block[e.block].push_back({e.i, e.j, v});
      if (e.i != e.j) per_block[e.block].push_back({e.j, e.i, v});
    }
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      if (per_block[bIdx].empty()) continue;
      rows_of_block[bIdx].push_back(r);
      oriented[bIdx].push_back(std::move(per_block[bIdx]));
    }
  }
  MatrixXd f_cols = MatrixXd::Zero(m, std::max(nf, 1));
  for (int r = 0; r < m; ++r)
    for (const auto& [j, c] : prog.rows[r].free_terms)
      f_cols(r, j) += c * row_scale[r];

  // <A_r, V> for all rows at once.
  auto apply_a = [&](const std::vector<MatrixXd>& v) {
    VectorXd out = VectorXd::Zero(m);
    for (int bIdx = 0; bIdx < nb; ++bIdx)
      for (std::size_t k = 0; k < rows_of_block[bIdx].size(); ++k) {
        double s = 0.0;
        for (const auto& e : oriented[bIdx][k]) s += e.v * v[bIdx](e.p, e.q);
        out[rows_of_block[bIdx][k]] += s;
      }
    return out;
  };
  // sum_r y_r A_rb for one block.
  auto apply_at = [&](const VectorXd& y, int bIdx) {
    MatrixXd out =
        MatrixXd::Zero(prog.blocks[bIdx].size, prog.blocks[bIdx].size);
    for (std::size_t k = 0; k < rows_of_block[bIdx].size(); ++k) {
      const double yr = y[rows_of_block[bIdx][k]];
      if (yr == 0.0) continue;
      for (const auto& e : oriented[bIdx][k]) out(e.p, e.q) += 0.5 * e.v * yr;
    }
    return MatrixXd(out + out.transpose());
  };

  // Starting point scales, in the spirit of CSDP's defaults.
  double norm_b = b.lpNorm<Eigen::Infinity>();
  double norm_a = 1.0, norm_c = 0.0;
  for (int bIdx = 0; bIdx < nb; ++bIdx) {
    for (std::size_t k = 0; k < rows_of_block[bIdx].size(); ++k)
      for (const auto& e : oriented[bIdx][k])
        norm_a = std::max(norm_a, std::abs(e.v));
    norm_c = std::max(norm_c, c_mat[bIdx].lpNorm<Eigen::Infinity>());
  }
  norm_c = std::max(norm_c, nf ? c_free.lpNorm<Eigen::Infinity>() : 0.0);
  int n_total = 0;
  for (const auto& blk : prog.blocks) n_total += blk.size;
  const double xi =
      std::max({10.0, std::sqrt(static_cast<double>(n_total)),
                n_total * norm_b / (1.0 + norm_a)});
  const double eta = std::max({10.0, std::sqrt(static_cast<double>(n_total)),
                               norm_c, norm_a});

  std::vector<MatrixXd> x(nb), s_mat(nb);
  for (int bIdx = 0; bIdx < nb; ++bIdx) {
    const int n = prog.blocks[bIdx].size;
    x[bIdx] = xi * MatrixXd::Identity(n, n);
    s_mat[bIdx] = eta * MatrixXd::Identity(n, n);
  }
  VectorXd y = VectorXd::Zero(m);
  VectorXd f = VectorXd::Zero(nf);

  auto primal_obj = [&] {
    double v = nf ? c_free.dot(f) : 0.0;
    for (int bIdx = 0; bIdx < nb; ++bIdx)
      v += (c_mat[bIdx].array() * x[bIdx].array()).sum();
    return v;
  };

  int ridge_events = 0;
  std::string stop_note;
  ConicStatus status = ConicStatus::kIterationLimit;
  int iter = 0;
  double pinf = 0, dinf = 0, relgap = 0;

  // Best iterate seen so far, by worst-case violation. Near a degenerate
  // optimum the late iterations can drift; on any abnormal stop we hand back
  // the best point instead of the last one.
  double best_err = std::numeric_limits<double>::infinity();
  std::vector<MatrixXd> best_x, best_s;
  VectorXd best_y, best_f;
  double best_pinf = 0, best_dinf = 0, best_gap = 0;
  int stall = 0;
  auto restore_best = [&] {
    if (best_x.empty()) return;
    x = best_x;
    s_mat = best_s;
    y = best_y;
    f = best_f;
    pinf = best_pinf;
    dinf = best_dinf;
    relgap = best_gap;
  };
  // Classify an early stop by how good the best iterate is. Downstream
  // certificate checks re-verify eigenvalues and residuals independently,
  // so a mildly loose stop is reported rather than hidden.
  auto stop_with_best = [&](const char* what) {
    restore_best();
    if (best_err <= std::max(100.0 * opt.tolerance, 1e-6)) {
      status = ConicStatus::kOptimal;
      stop_note = std::string(what) + "; accepted at reduced accuracy";
    } else if (best_err <= std::sqrt(opt.tolerance)) {
      status = ConicStatus::kIterationLimit;
      stop_note = std::string(what) + "; best iterate has moderate accuracy";
    } else {
      status = ConicStatus::kNumericalTrouble;
      stop_note = what;
    }
  };

  for (iter = 0; iter < opt.max_iterations; ++iter) {
    // Residuals.
    VectorXd rp = b - apply_a(x);
    if (nf) rp -= f_cols * f;
    std::vector<MatrixXd> rd(nb);
    double rd_norm2 = 0.0;
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      rd[bIdx] = c_mat[bIdx] - s_mat[bIdx] - apply_at(y, bIdx);
      rd_norm2 += rd[bIdx].squaredNorm();
    }
    VectorXd rf = nf ? VectorXd(c_free - f_cols.transpose() * y)
                     : VectorXd::Zero(0);
    if (nf) rd_norm2 += rf.squaredNorm();

    double trace_xs = 0.0;
    for (int bIdx = 0; bIdx < nb; ++bIdx)
      trace_xs += (x[bIdx].array() * s_mat[bIdx].array()).sum();
    const double mu = trace_xs / n_total;

    const double pobj = primal_obj();
    const double dobj = b.dot(y);
    pinf = rp.norm() / (1.0 + b.norm());
    dinf = std::sqrt(rd_norm2) / (1.0 + norm_c);
    relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));

    if (opt.verbose)
      std::fprintf(stderr, "it %3d  mu %9.2e  pinf %9.2e  dinf %9.2e  gap %9.2e  pobj % .9e\n",
                   iter, mu, pinf, dinf, relgap, pobj);

    if (pinf < opt.tolerance && dinf < opt.tolerance && relgap < opt.tolerance) {
      status = ConicStatus::kOptimal;
      break;
    }
    const double err = std::max({pinf, dinf, relgap});
    if (err < 0.9 * best_err) stall = 0; else ++stall;
    if (err < best_err) {
      best_err = err;
      best_x = x;
      best_s = s_mat;
      best_y = y;
      best_f = f;
      best_pinf = pinf;
      best_dinf = dinf;
      best_gap = relgap;
    }
    if (stall >= 10) {
      stop_with_best("progress stalled");
      break;
    }
    // Divergence-based infeasibility certificates: a (nearly) improving dual
    // ray indicates primal infeasibility, and conversely.
    const double by = dobj;
    double aty_s_norm = 0.0;
    for (int bIdx = 0; bIdx < nb; ++bIdx)
      aty_s_norm += (c_mat[bIdx] - rd[bIdx]).squaredNorm();
    aty_s_norm = std::sqrt(aty_s_norm);
    double fty_norm = nf ? (f_cols.transpose() * y).norm() : 0.0;
    if (by > std::max(1e7, 1e5 * (1.0 + std::abs(pobj))) &&
        (aty_s_norm + fty_norm) / by < 1e-6) {
      status = ConicStatus::kPrimalInfeasible;
      stop_note = "dual objective diverging along a feasible dual ray";
      break;
    }
    double ax_norm = (apply_a(x) + (nf ? (f_cols * f).eval() : VectorXd::Zero(m))).norm();
    if (pobj < -std::max(1e7, 1e5 * (1.0 + std::abs(dobj))) &&
        ax_norm / (-pobj) < 1e-6) {
      status = ConicStatus::kDualInfeasible;
      stop_note = "primal objective diverging along a feasible primal ray";
      break;
    }
    if (elapsed() > opt.time_limit_seconds) {
      status = ConicStatus::kTimeLimit;
      break;
    }

    // Factor S and X once per iteration.
    std::vector<MatrixXd> sinv(nb);
    bool factor_ok = true;
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      Eigen::LLT<MatrixXd> llt(s_mat[bIdx]);
      if (llt.info() != Eigen::Success) {
        factor_ok = false;
        break;
      }
      sinv[bIdx] = llt.solve(
          MatrixXd::Identity(prog.blocks[bIdx].size, prog.blocks[bIdx].size));
    }
    if (!factor_ok) {
      status = ConicStatus::kNumericalTrouble;
      stop_note = "dual block lost positive definiteness";
      break;
    }

    // Schur complement M(r,q) = sum_b tr(A_rb X_b A_qb Sinv_b).
    MatrixXd schur = MatrixXd::Zero(m, m);
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      const MatrixXd& xb = x[bIdx];
      const MatrixXd& sb = sinv[bIdx];
      const auto& rows_b = rows_of_block[bIdx];
      const auto& ent_b = oriented[bIdx];
      for (std::size_t ka = 0; ka < rows_b.size(); ++ka) {
        const auto& ea = ent_b[ka];
        for (std::size_t kb = 0; kb <= ka; ++kb) {
          const auto& eb = ent_b[kb];
          double acc = 0.0;
          for (const auto& a : ea) {
            const double* x_col = xb.data() + static_cast<std::ptrdiff_t>(a.q) * xb.rows();
            const double* s_row = sb.data() + static_cast<std::ptrdiff_t>(a.p) * sb.rows();
            for (const auto& bterm : eb)
              acc += a.v * bterm.v * x_col[bterm.p] * s_row[bterm.q];
          }
          schur(rows_b[ka], rows_b[kb]) += acc;
        }
      }
    }
    schur = schur.selfadjointView<Eigen::Lower>();

    Eigen::LLT<MatrixXd> schur_llt;
    double ridge = 0.0;
    const double schur_max = std::max(1.0, schur.diagonal().maxCoeff());
    for (int attempt = 0; attempt < 8; ++attempt) {
      MatrixXd reg = schur;
      if (ridge > 0) reg.diagonal().array() += ridge;
      schur_llt.compute(reg);
      if (schur_llt.info() == Eigen::Success) break;
      ridge = (ridge == 0.0) ? 1e-12 * schur_max : ridge * 100.0;
      ++ridge_events;
    }
    if (schur_llt.info() != Eigen::Success) {
      status = ConicStatus::kNumericalTrouble;
      stop_note = "Schur complement factorization failed";
      break;
    }

    // Bordered solve for [M F; F' 0] [dy; df] = [h; rf].
    MatrixXd v_cols;
    Eigen::LLT<MatrixXd> w_llt;
    if (nf) {
      v_cols = schur_llt.matrixL().solve(f_cols.leftCols(nf));
      MatrixXd w = v_cols.transpose() * v_cols;
      double wridge = 0.0;
      const double w_max = std::max(1e-12, w.diagonal().maxCoeff());
      for (int attempt = 0; attempt < 8; ++attempt) {
        MatrixXd reg = w;
        if (wridge > 0) reg.diagonal().array() += wridge;
        w_llt.compute(reg);
        if (w_llt.info() == Eigen::Success) break;
        wridge = (wridge == 0.0) ? 1e-12 * w_max : wridge * 100.0;
        ++ridge_events;
      }
      if (w_llt.info() != Eigen::Success) {
        status = ConicStatus::kNumericalTrouble;
        stop_note = "free-variable reduced system factorization failed";
        break;
      }
    }
    auto solve_bordered_once = [&](const VectorXd& h, const VectorXd& rhs_f,
                                   VectorXd& dy, VectorXd& df) {
      VectorXd u = schur_llt.matrixL().solve(h);
      if (nf) {
        df = w_llt.solve(v_cols.transpose() * u - rhs_f);
        dy = schur_llt.matrixU().solve(u - v_cols * df);
      } else {
        df.resize(0);
        dy = schur_llt.matrixU().solve(u);
      }
    };
    // One round of iterative refinement against the unregularized system
    // keeps directions accurate when the factorization needed a ridge or the
    // Schur complement is nearly singular at a degenerate optimum.
    auto solve_bordered = [&](const VectorXd& h, const VectorXd& rhs_f,
                              VectorXd& dy, VectorXd& df) {
      solve_bordered_once(h, rhs_f, dy, df);
      VectorXd res_h = h - schur.selfadjointView<Eigen::Lower>() * dy;
      if (nf) res_h -= f_cols * df;
      VectorXd res_f =
          nf ? VectorXd(rhs_f - f_cols.transpose() * dy) : VectorXd::Zero(0);
      VectorXd ddy, ddf;
      solve_bordered_once(res_h, res_f, ddy, ddf);
      dy += ddy;
      if (nf) df += ddf;
    };

    // X * Rd * Sinv contributions appear in both predictor and corrector.
    std::vector<MatrixXd> x_rd_sinv(nb);
    for (int bIdx = 0; bIdx < nb; ++bIdx)
      x_rd_sinv[bIdx] = x[bIdx] * rd[bIdx] * sinv[bIdx];

    VectorXd a_of_x = apply_a(x);
    VectorXd a_of_xrs = apply_a(x_rd_sinv);
    VectorXd a_of_sinv = apply_a(sinv);

    // Predictor (affine scaling) direction.
    VectorXd h = rp + a_of_x + a_of_xrs;
    VectorXd dy_a, df_a;
    solve_bordered(h, nf ? rf : VectorXd::Zero(0), dy_a, df_a);
    std::vector<MatrixXd> ds_a(nb), dx_a(nb);
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      ds_a[bIdx] = rd[bIdx] - apply_at(dy_a, bIdx);
      MatrixXd t = x[bIdx] * ds_a[bIdx] * sinv[bIdx];
      dx_a[bIdx] = -x[bIdx] - 0.5 * (t + t.transpose());
    }
    double ap_a = 1.0, ad_a = 1.0;
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      ap_a = std::min(ap_a, detail::MaxStep(x[bIdx], dx_a[bIdx]));
      ad_a = std::min(ad_a, detail::MaxStep(s_mat[bIdx], ds_a[bIdx]));
    }
    double trace_aff = 0.0;
    for (int bIdx = 0; bIdx < nb; ++bIdx)
      trace_aff += ((x[bIdx] + ap_a * dx_a[bIdx]).array() *
                    (s_mat[bIdx] + ad_a * ds_a[bIdx]).array())
                       .sum();
    const double mu_aff = std::max(trace_aff, 0.0) / n_total;
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::clamp(sigma, 1e-10, 1.0);

    // Corrector.
    std::vector<MatrixXd> cross(nb);
    for (int bIdx = 0; bIdx < nb; ++bIdx)
      cross[bIdx] = dx_a[bIdx] * ds_a[bIdx] * sinv[bIdx];
    h = rp + a_of_x + a_of_xrs - sigma * mu * a_of_sinv + apply_a(cross);
    VectorXd dy, df;
    solve_bordered(h, nf ? rf : VectorXd::Zero(0), dy, df);
    std::vector<MatrixXd> ds(nb), dx(nb);
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      ds[bIdx] = rd[bIdx] - apply_at(dy, bIdx);
      MatrixXd t = x[bIdx] * ds[bIdx] * sinv[bIdx] + cross[bIdx];
      t = 0.5 * (t + t.transpose()).eval();
      dx[bIdx] = sigma * mu * sinv[bIdx] - x[bIdx] - t;
    }

    const double tau = 0.98;
    double ap = 1.0, ad = 1.0;
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      ap = std::min(ap, tau * detail::MaxStep(x[bIdx], dx[bIdx]));
      ad = std::min(ad, tau * detail::MaxStep(s_mat[bIdx], ds[bIdx]));
    }
    if (ap < 1e-8 && ad < 1e-8) {
      stop_with_best("step sizes collapsed");
      break;
    }
    for (int bIdx = 0; bIdx < nb; ++bIdx) {
      x[bIdx] += ap * dx[bIdx];
      x[bIdx] = 0.5 * (x[bIdx] + x[bIdx].transpose()).eval();
      s_mat[bIdx] += ad * ds[bIdx];
      s_mat[bIdx] = 0.5 * (s_mat[bIdx] + s_mat[bIdx].transpose()).eval();
    }
    y += ad * dy;
    if (nf) f += ap * df;
  }

  if (status == ConicStatus::kIterationLimit) restore_best();

  sol.status = status;
  sol.primal_objective = primal_obj();
  sol.psd = std::move(x);
  sol.free_values = f;
  sol.dual_y = y;
  sol.dual_objective = b.dot(y);
  sol.primal_residual = pinf;
  sol.dual_residual = dinf;
  sol.duality_gap = relgap;
  sol.iterations = iter;
  sol.seconds = elapsed();
  if (ridge_events) {
    stop_note += (stop_note.empty() ? "" : "; ");
    stop_note += "diagonal regularization used " +
                 std::to_string(ridge_events) + " time(s)";
  }
  sol.note = stop_note;
  return sol;
}

// ---------------------------------------------------------------------------
// SDPA sparse export. The file encodes the SDPA primal-dual pair whose dual
//   max F0 . Y  s.t.  Fr . Y = b_r, Y >= 0
// coincides with this program after F0 = -objective (so the SDPA dual optimum
// equals the negated minimum of this program). Free variables become a
// trailing diagonal block split into +/- halves.
inline void WriteSdpaSparse(const ConicProgram& p, std::ostream& os) {
  p.Validate();
  const int m = static_cast<int>(p.rows.size());
  const bool has_free = p.free_count > 0;
  const int nblocks = static_cast<int>(p.blocks.size()) + (has_free ? 1 : 0);

  os << "\"conic export";
  auto it = p.metadata.find("label");
  if (it != p.metadata.end()) os << ": " << it->second;
  os << "\n";
  os << m << "\n" << nblocks << "\n";
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    if (b) os << " ";
    os << p.blocks[b].size;
  }
  if (has_free) {
    if (!p.blocks.empty()) os << " ";
    os << -2 * p.free_count;
  }
  os << "\n";
  for (int r = 0; r < m; ++r) {
    if (r) os << " ";
    os << FormatDouble(p.rows[r].rhs);
  }
  os << "\n";

  const int free_block = static_cast<int>(p.blocks.size()) + 1;  // 1-based
  struct Line {
    int mat, blk, i, j;
    double v;
  };
  std::vector<Line> lines;
  auto push_psd = [&](int mat, const ConicProgram::PsdEntry& e, double sign) {
    lines.push_back({mat, e.block + 1, e.i + 1, e.j + 1, sign * e.value});
  };
  auto push_free = [&](int mat, int j, double coef) {
    lines.push_back({mat, free_block, 2 * j + 1, 2 * j + 1, coef});
    lines.push_back({mat, free_block, 2 * j + 2, 2 * j + 2, -coef});
  };
  for (const auto& e : p.objective_psd) push_psd(0, e, -1.0);
  for (const auto& [j, c] : p.objective_free) push_free(0, j, -c);
  for (int r = 0; r < m; ++r) {
    for (const auto& e : p.rows[r].psd) push_psd(r + 1, e, 1.0);
    for (const auto& [j, c] : p.rows[r].free_terms) push_free(r + 1, j, c);
  }
  std::stable_sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    return std::tie(a.mat, a.blk, a.i, a.j) < std::tie(b.mat, b.blk, b.i, b.j);
  });
  for (const auto& l : lines) {
    if (l.v == 0.0) continue;
    os << l.mat << " " << l.blk << " " << l.i << " " << l.j << " "
       << FormatDouble(l.v) << "\n";
  }
}

inline std::string SdpaSparseString(const ConicProgram& p) {
  std::ostringstream os;
  WriteSdpaSparse(p, os);
  return os.str();
}

}  // namespace polystab
