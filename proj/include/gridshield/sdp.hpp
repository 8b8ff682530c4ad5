#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gridshield::sdp {

/// Structured semidefinite program
///
///   minimize    c^T y
///   subject to  F_k(y) = C_k + sum_t (L_t V_t R_t + (L_t V_t R_t)^T) >= 0
///
/// for every block k, where each V_t is one of the matrix variables packed
/// in y. Solved by a primal-dual interior-point method (HKM direction,
/// Mehrotra predictor-corrector) on the pair
///
///   max -<C, Z>  s.t.  <F_i, Z> = c_i,  Z >= 0.

enum class VarKind {
  Symmetric,  // n x n, n(n+1)/2 unknowns
  Full,       // r x c, r*c unknowns
  Scalar,     // s * I_p, size p taken from the term
};

struct Variable {
  VarKind kind = VarKind::Scalar;
  int rows = 1;
  int cols = 1;
  int offset = 0;  // position in y
  [[nodiscard]] int size() const;
};

struct Term {
  int var = 0;
  Eigen::MatrixXd left;   // block_size x rows
  Eigen::MatrixXd right;  // cols x block_size
};

struct Block {
  std::string name;
  Eigen::MatrixXd constant;  // symmetric
  std::vector<Term> terms;
};

class Problem {
 public:
  int add_symmetric(int n);
  int add_full(int rows, int cols);
  int add_scalar();

  /// Adds L V R + (L V R)^T to a block under construction.
  static void add_term(Block& block, int var, Eigen::MatrixXd left, Eigen::MatrixXd right);
  int add_block(Block block);

  void set_cost(int scalar_var, double cost);

  [[nodiscard]] int dimension() const { return dim_; }
  [[nodiscard]] const std::vector<Variable>& variables() const { return vars_; }
  [[nodiscard]] const std::vector<Block>& blocks() const { return blocks_; }
  [[nodiscard]] const Eigen::VectorXd& cost() const { return cost_; }

  /// Matrix value of a variable (Scalar kind returns 1 x 1).
  [[nodiscard]] Eigen::MatrixXd value(int var, const Eigen::VectorXd& y) const;
  [[nodiscard]] Eigen::MatrixXd block_value(int block, const Eigen::VectorXd& y) const;

  /// Packs matrix values into y (the inverse of `value`).
  void pack(int var, const Eigen::MatrixXd& value, Eigen::VectorXd& y) const;

 private:
  void validate_term(const Block& block, const Term& term) const;

  std::vector<Variable> vars_;
  std::vector<Block> blocks_;
  Eigen::VectorXd cost_;
  int dim_ = 0;
};

struct Options {
  double tol = 1e-9;
  int max_iter = 120;
  double step_fraction = 0.95;
  bool verbose = false;
};

enum class Status { Optimal, MaxIterations, NumericalProblem, Infeasible };

struct Result {
  Status status = Status::NumericalProblem;
  Eigen::VectorXd y;
  std::vector<Eigen::MatrixXd> z;  // dual multipliers per block
  double primal_objective = 0.0;   // c^T y
  double dual_objective = 0.0;     // -<C, Z>
  double gap = 0.0;                // <F(y), Z>
  double primal_infeasibility = 0.0;
  double dual_infeasibility = 0.0;
  int iterations = 0;
  [[nodiscard]] bool optimal() const { return status == Status::Optimal; }
};

std::string to_string(Status status);

Result solve(const Problem& problem, const Options& options = {});

}  // namespace gridshield::sdp
