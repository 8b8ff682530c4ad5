#include "gridshield/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "gridshield/error.hpp"

namespace gridshield::sdp {

int Variable::size() const {
  switch (kind) {
    case VarKind::Symmetric: return rows * (rows + 1) / 2;
    case VarKind::Full: return rows * cols;
    case VarKind::Scalar: return 1;
  }
  return 0;
}

namespace {

/// Position in y of entry (a, b) of a variable, or -1 when the entry is not
/// an independent coordinate (off-diagonal of a scalar multiple of I).
int coordinate(const Variable& v, int a, int b) {
  switch (v.kind) {
    case VarKind::Symmetric: {
      const int lo = std::min(a, b), hi = std::max(a, b);
      return v.offset + hi * (hi + 1) / 2 + lo;
    }
    case VarKind::Full: return v.offset + a * v.cols + b;
    case VarKind::Scalar: return a == b ? v.offset : -1;
  }
  return -1;
}

}  // namespace

int Problem::add_symmetric(int n) {
  if (n <= 0) throw Error(ErrorCode::InvariantViolation, "variable size must be positive");
  vars_.push_back({VarKind::Symmetric, n, n, dim_});
  dim_ += vars_.back().size();
  cost_.conservativeResize(dim_);
  cost_.tail(vars_.back().size()).setZero();
  return static_cast<int>(vars_.size()) - 1;
}

int Problem::add_full(int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw Error(ErrorCode::InvariantViolation, "variable size must be positive");
  vars_.push_back({VarKind::Full, rows, cols, dim_});
  dim_ += vars_.back().size();
  cost_.conservativeResize(dim_);
  cost_.tail(vars_.back().size()).setZero();
  return static_cast<int>(vars_.size()) - 1;
}

int Problem::add_scalar() {
  vars_.push_back({VarKind::Scalar, 1, 1, dim_});
  dim_ += 1;
  cost_.conservativeResize(dim_);
  cost_(dim_ - 1) = 0.0;
  return static_cast<int>(vars_.size()) - 1;
}

void Problem::add_term(Block& block, int var, Eigen::MatrixXd left, Eigen::MatrixXd right) {
  block.terms.push_back({var, std::move(left), std::move(right)});
}

void Problem::validate_term(const Block& block, const Term& t) const {
  if (t.var < 0 || t.var >= static_cast<int>(vars_.size())) {
    throw Error(ErrorCode::InvariantViolation, "term references unknown variable");
  }
  const Variable& v = vars_[static_cast<std::size_t>(t.var)];
  const auto n = block.constant.rows();
  if (t.left.rows() != n || t.right.cols() != n) {
    throw Error(ErrorCode::InvariantViolation, "term does not match block " + block.name);
  }
  if (v.kind == VarKind::Scalar) {
    if (t.left.cols() != t.right.rows()) {
      throw Error(ErrorCode::InvariantViolation, "scalar term factors do not conform");
    }
  } else if (t.left.cols() != v.rows || t.right.rows() != v.cols) {
    throw Error(ErrorCode::InvariantViolation, "term factors do not match variable shape");
  }
}

int Problem::add_block(Block block) {
  if (block.constant.rows() != block.constant.cols() || block.constant.rows() == 0) {
    throw Error(ErrorCode::InvariantViolation, "block constant must be square and nonempty");
  }
  for (const auto& t : block.terms) validate_term(block, t);
  blocks_.push_back(std::move(block));
  return static_cast<int>(blocks_.size()) - 1;
}

void Problem::set_cost(int var, double cost) {
  const Variable& v = vars_.at(static_cast<std::size_t>(var));
  if (v.kind != VarKind::Scalar) {
    throw Error(ErrorCode::InvariantViolation, "costs are supported on scalar variables only");
  }
  cost_(v.offset) = cost;
}

Eigen::MatrixXd Problem::value(int var, const Eigen::VectorXd& y) const {
  const Variable& v = vars_.at(static_cast<std::size_t>(var));
  if (v.kind == VarKind::Scalar) return Eigen::MatrixXd::Constant(1, 1, y(v.offset));
  Eigen::MatrixXd m(v.rows, v.cols);
  for (int a = 0; a < v.rows; ++a) {
    for (int b = 0; b < v.cols; ++b) m(a, b) = y(coordinate(v, a, b));
  }
  return m;
}

void Problem::pack(int var, const Eigen::MatrixXd& m, Eigen::VectorXd& y) const {
  const Variable& v = vars_.at(static_cast<std::size_t>(var));
  if (y.size() != dim_) y = Eigen::VectorXd::Zero(dim_);
  if (v.kind == VarKind::Scalar) {
    y(v.offset) = m(0, 0);
    return;
  }
  for (int a = 0; a < v.rows; ++a) {
    for (int b = 0; b < v.cols; ++b) {
      if (v.kind == VarKind::Symmetric && b < a) continue;
      y(coordinate(v, a, b)) = v.kind == VarKind::Symmetric ? 0.5 * (m(a, b) + m(b, a)) : m(a, b);
    }
  }
}

Eigen::MatrixXd Problem::block_value(int k, const Eigen::VectorXd& y) const {
  const Block& blk = blocks_.at(static_cast<std::size_t>(k));
  Eigen::MatrixXd f = blk.constant;
  for (const auto& t : blk.terms) {
    const Variable& v = vars_[static_cast<std::size_t>(t.var)];
    Eigen::MatrixXd p;
    if (v.kind == VarKind::Scalar) {
      p = y(v.offset) * (t.left * t.right);
    } else {
      p = t.left * value(t.var, y) * t.right;
    }
    f += p + p.transpose();
  }
  return f;
}

std::string to_string(Status status) {
  switch (status) {
    case Status::Optimal: return "optimal";
    case Status::MaxIterations: return "max-iterations";
    case Status::NumericalProblem: return "numerical-problem";
    case Status::Infeasible: return "infeasible";
  }
  return "unknown";
}

namespace {

struct TermCache {
  Eigen::MatrixXd zl, zrt, sil, sirt;  // Z L, Z R^T, S^-1 L, S^-1 R^T
};

class Solver {
 public:
  Solver(const Problem& p, const Options& o) : p_(p), opt_(o) {}

  Result run();

 private:
  /// <F_i, G> for every coordinate i, G symmetric, one entry per block.
  Eigen::VectorXd adjoint(const std::vector<Eigen::MatrixXd>& g) const;
  /// sum_i dy_i F_i per block (no constant).
  std::vector<Eigen::MatrixXd> apply(const Eigen::VectorXd& dy) const;
  Eigen::MatrixXd schur_matrix(const std::vector<Eigen::MatrixXd>& s_inv) const;
  void add_pair(Eigen::MatrixXd& m, const Term& ti, const TermCache& ci, const Term& tj,
                const TermCache& cj) const;

  const Problem& p_;
  Options opt_;
  std::vector<Eigen::MatrixXd> z_, s_;
};

Eigen::VectorXd Solver::adjoint(const std::vector<Eigen::MatrixXd>& g) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p_.dimension());
  for (std::size_t k = 0; k < p_.blocks().size(); ++k) {
    for (const auto& t : p_.blocks()[k].terms) {
      const Variable& v = p_.variables()[static_cast<std::size_t>(t.var)];
      // <L E R + R^T E^T L^T, G> = 2 (R G L)(b, a) for symmetric G.
      const Eigen::MatrixXd h = t.right * g[k] * t.left;
      if (v.kind == VarKind::Scalar) {
        out(v.offset) += 2.0 * h.trace();
        continue;
      }
      for (int a = 0; a < v.rows; ++a) {
        for (int b = 0; b < v.cols; ++b) out(coordinate(v, a, b)) += 2.0 * h(b, a);
      }
    }
  }
  return out;
}

std::vector<Eigen::MatrixXd> Solver::apply(const Eigen::VectorXd& dy) const {
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t k = 0; k < p_.blocks().size(); ++k) {
    const Block& blk = p_.blocks()[k];
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(blk.constant.rows(), blk.constant.cols());
    for (const auto& t : blk.terms) {
      const Variable& v = p_.variables()[static_cast<std::size_t>(t.var)];
      Eigen::MatrixXd prod = v.kind == VarKind::Scalar ? Eigen::MatrixXd(dy(v.offset) * (t.left * t.right))
                                                       : Eigen::MatrixXd(t.left * p_.value(t.var, dy) * t.right);
      f += prod + prod.transpose();
    }
    out.push_back(std::move(f));
  }
  return out;
}

// Contribution of one pair of terms to M_ij = <F_i, Z F_j S^-1>, with
// F_i = L E R + (L E R)^T for basis element E = e_a e_b^T:
//   P1(b,p) Q1(q,a) + P2(b,q) Q2(p,a) + P3(a,p) Q3(q,b) + P4(a,q) Q4(p,b)
// where (p, q) indexes E' of the second term.
void Solver::add_pair(Eigen::MatrixXd& m, const Term& ti, const TermCache& ci, const Term& tj,
                      const TermCache& cj) const {
  const Variable& vi = p_.variables()[static_cast<std::size_t>(ti.var)];
  const Variable& vj = p_.variables()[static_cast<std::size_t>(tj.var)];
  const Eigen::MatrixXd p1 = ti.right * cj.zl;
  const Eigen::MatrixXd q1 = tj.right * ci.sil;
  const Eigen::MatrixXd p2 = ti.right * cj.zrt;
  const Eigen::MatrixXd q2 = tj.left.transpose() * ci.sil;
  const Eigen::MatrixXd p3 = ti.left.transpose() * cj.zl;
  const Eigen::MatrixXd q3 = tj.right * ci.sirt;
  const Eigen::MatrixXd p4 = ti.left.transpose() * cj.zrt;
  const Eigen::MatrixXd q4 = tj.left.transpose() * ci.sirt;

  const int ri = static_cast<int>(ti.left.cols()), cols_i = static_cast<int>(ti.right.rows());
  const int rj = static_cast<int>(tj.left.cols()), cols_j = static_cast<int>(tj.right.rows());
  const bool scalar_i = vi.kind == VarKind::Scalar;
  const bool scalar_j = vj.kind == VarKind::Scalar;
  for (int a = 0; a < ri; ++a) {
    for (int b = scalar_i ? a : 0; b < (scalar_i ? a + 1 : cols_i); ++b) {
      const int row = coordinate(vi, a, b);
      for (int pp = 0; pp < rj; ++pp) {
        for (int q = scalar_j ? pp : 0; q < (scalar_j ? pp + 1 : cols_j); ++q) {
          const int col = coordinate(vj, pp, q);
          m(row, col) += p1(b, pp) * q1(q, a) + p2(b, q) * q2(pp, a) + p3(a, pp) * q3(q, b) +
                         p4(a, q) * q4(pp, b);
        }
      }
    }
  }
}

Eigen::MatrixXd Solver::schur_matrix(const std::vector<Eigen::MatrixXd>& s_inv) const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p_.dimension(), p_.dimension());
  for (std::size_t k = 0; k < p_.blocks().size(); ++k) {
    const Block& blk = p_.blocks()[k];
    std::vector<TermCache> cache;
    cache.reserve(blk.terms.size());
    for (const auto& t : blk.terms) {
      cache.push_back({z_[k] * t.left, z_[k] * t.right.transpose(), s_inv[k] * t.left,
                       s_inv[k] * t.right.transpose()});
    }
    for (std::size_t i = 0; i < blk.terms.size(); ++i) {
      for (std::size_t j = 0; j < blk.terms.size(); ++j) {
        add_pair(m, blk.terms[i], cache[i], blk.terms[j], cache[j]);
      }
    }
  }
  return 0.5 * (m + m.transpose());
}

/// Largest step in [0, inf) keeping x + alpha d positive definite.
double max_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d) {
  Eigen::LLT<Eigen::MatrixXd> llt(x);
  if (llt.info() != Eigen::Success) return 0.0;
  const Eigen::MatrixXd l_inv = llt.matrixL().solve(Eigen::MatrixXd::Identity(x.rows(), x.cols()));
  const Eigen::MatrixXd w = l_inv * d * l_inv.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (w + w.transpose()), Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues()(0);
  return lmin >= 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / lmin;
}

double inner(const std::vector<Eigen::MatrixXd>& a, const std::vector<Eigen::MatrixXd>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k].array() * b[k].array()).sum();
  return s;
}

Result Solver::run() {
  const auto nblocks = p_.blocks().size();
  const Eigen::Index m = p_.dimension();
  const Eigen::VectorXd& c = p_.cost();
  Eigen::Index total_size = 0;
  double data_scale = 1.0;
  for (const auto& blk : p_.blocks()) {
    total_size += blk.constant.rows();
    data_scale = std::max(data_scale, blk.constant.norm());
    for (const auto& t : blk.terms) data_scale = std::max(data_scale, t.left.norm() * t.right.norm());
  }
  const double c_norm = c.norm();

  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  z_.clear();
  s_.clear();
  for (const auto& blk : p_.blocks()) {
    const auto n = blk.constant.rows();
    z_.push_back(Eigen::MatrixXd::Identity(n, n) * std::max(1.0, c_norm));
    s_.push_back(Eigen::MatrixXd::Identity(n, n) * data_scale);
  }

  Result res;
  auto constants = [&] {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& blk : p_.blocks()) out.push_back(blk.constant);
    return out;
  }();
  double const_norm = 0.0;
  for (const auto& cm : constants) const_norm = std::max(const_norm, cm.norm());

  for (int it = 0; it <= opt_.max_iter; ++it) {
    // Residuals.
    std::vector<Eigen::MatrixXd> fy = apply(y);
    std::vector<Eigen::MatrixXd> rd(nblocks);
    double rd_norm = 0.0;
    for (std::size_t k = 0; k < nblocks; ++k) {
      fy[k] += constants[k];
      rd[k] = fy[k] - s_[k];
      rd_norm += rd[k].squaredNorm();
    }
    rd_norm = std::sqrt(rd_norm);
    const Eigen::VectorXd rp = c - adjoint(z_);
    const double mu = inner(z_, s_) / static_cast<double>(total_size);

    res.primal_objective = c.dot(y);
    res.dual_objective = -inner(constants, z_);
    res.gap = inner(fy, z_);
    res.primal_infeasibility = rd_norm / (1.0 + const_norm);
    res.dual_infeasibility = rp.norm() / (1.0 + c_norm);
    res.iterations = it;
    const double rel_gap =
        std::abs(res.primal_objective - res.dual_objective) /
        (1.0 + std::abs(res.primal_objective) + std::abs(res.dual_objective));
    if (opt_.verbose) {
      std::fprintf(stderr, "sdp %3d  obj %+.10e  %+.10e  gap %.2e  pinf %.2e  dinf %.2e  mu %.2e\n", it,
                   res.primal_objective, res.dual_objective, rel_gap, res.primal_infeasibility,
                   res.dual_infeasibility, mu);
    }
    if (rel_gap < opt_.tol && res.primal_infeasibility < opt_.tol && res.dual_infeasibility < opt_.tol) {
      res.status = Status::Optimal;
      break;
    }
    if (it == opt_.max_iter) {
      res.status = Status::MaxIterations;
      break;
    }

    std::vector<Eigen::MatrixXd> s_inv(nblocks);
    bool ok = true;
    for (std::size_t k = 0; k < nblocks; ++k) {
      Eigen::LLT<Eigen::MatrixXd> llt(s_[k]);
      if (llt.info() != Eigen::Success) {
        ok = false;
        break;
      }
      s_inv[k] = llt.solve(Eigen::MatrixXd::Identity(s_[k].rows(), s_[k].cols()));
    }
    if (!ok) {
      res.status = Status::NumericalProblem;
      break;
    }
    const Eigen::MatrixXd schur = schur_matrix(s_inv);
    Eigen::LLT<Eigen::MatrixXd> schur_llt(schur);
    Eigen::LDLT<Eigen::MatrixXd> schur_ldlt;
    const bool use_ldlt = schur_llt.info() != Eigen::Success;
    if (use_ldlt) schur_ldlt.compute(schur);
    auto solve_schur = [&](const Eigen::VectorXd& rhs) -> Eigen::VectorXd {
      return use_ldlt ? Eigen::VectorXd(schur_ldlt.solve(rhs)) : Eigen::VectorXd(schur_llt.solve(rhs));
    };

    // Direction for centering parameter sigma and corrector term corr.
    auto direction = [&](double sigma, const std::vector<Eigen::MatrixXd>* corr,
                         Eigen::VectorXd& dy, std::vector<Eigen::MatrixXd>& dz,
                         std::vector<Eigen::MatrixXd>& ds) {
      std::vector<Eigen::MatrixXd> g(nblocks);
      for (std::size_t k = 0; k < nblocks; ++k) {
        Eigen::MatrixXd t = sigma * mu * s_inv[k] - z_[k] - z_[k] * rd[k] * s_inv[k];
        if (corr != nullptr) t -= (*corr)[k];
        g[k] = 0.5 * (t + t.transpose());
      }
      dy = solve_schur(adjoint(g) - rp);
      ds = apply(dy);
      dz.resize(nblocks);
      for (std::size_t k = 0; k < nblocks; ++k) {
        ds[k] += rd[k];
        Eigen::MatrixXd t = sigma * mu * s_inv[k] - z_[k] - z_[k] * ds[k] * s_inv[k];
        if (corr != nullptr) t -= (*corr)[k];
        dz[k] = 0.5 * (t + t.transpose());
      }
    };
    auto step_lengths = [&](const std::vector<Eigen::MatrixXd>& dz,
                            const std::vector<Eigen::MatrixXd>& ds, double& ap, double& ad) {
      ap = 1.0;
      ad = 1.0;
      for (std::size_t k = 0; k < nblocks; ++k) {
        ap = std::min(ap, max_step(z_[k], dz[k]));
        ad = std::min(ad, max_step(s_[k], ds[k]));
      }
    };

    Eigen::VectorXd dy;
    std::vector<Eigen::MatrixXd> dz, ds;
    direction(0.0, nullptr, dy, dz, ds);
    double ap = 1.0, ad = 1.0;
    step_lengths(dz, ds, ap, ad);
    double mu_aff = 0.0;
    for (std::size_t k = 0; k < nblocks; ++k) {
      mu_aff += ((z_[k] + ap * dz[k]).array() * (s_[k] + ad * ds[k]).array()).sum();
    }
    mu_aff /= static_cast<double>(total_size);
    const double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);
    std::vector<Eigen::MatrixXd> corr(nblocks);
    for (std::size_t k = 0; k < nblocks; ++k) corr[k] = dz[k] * ds[k] * s_inv[k];
    direction(sigma, &corr, dy, dz, ds);
    step_lengths(dz, ds, ap, ad);
    ap = std::min(1.0, opt_.step_fraction * ap);
    ad = std::min(1.0, opt_.step_fraction * ad);
    if (!(ap > 1e-12) || !(ad > 1e-12) || !dy.allFinite()) {
      res.status = Status::NumericalProblem;
      break;
    }
    y += ad * dy;
    for (std::size_t k = 0; k < nblocks; ++k) {
      z_[k] += ap * dz[k];
      s_[k] += ad * ds[k];
    }
  }
  res.y = y;
  res.z = z_;
  return res;
}

}  // namespace

Result solve(const Problem& problem, const Options& options) {
  if (problem.blocks().empty()) {
    throw Error(ErrorCode::InvariantViolation, "SDP has no constraint blocks");
  }
  Solver solver(problem, options);
  return solver.run();
}

}  // namespace gridshield::sdp
