#include "gridshield/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "gridshield/error.hpp"
#include "gridshield/synth.hpp"

namespace gridshield {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::Static: return "static";
    case AttackKind::Switching: return "switching";
    case AttackKind::Dynamic: return "dynamic";
  }
  return "none";
}

AttackKind attack_kind_from_string(const std::string& text) {
  for (auto k : {AttackKind::None, AttackKind::Static, AttackKind::Switching, AttackKind::Dynamic}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::MalformedDocument, "unknown attack kind '" + text + "'");
}

std::vector<AttackTarget> AttackSpec::equal_split(const std::vector<int>& buses) {
  std::vector<AttackTarget> out;
  for (int b : buses) out.push_back({b, 1.0 / static_cast<double>(buses.size())});
  return out;
}

void validate_attack(const AttackSpec& spec, const GridCase& grid) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvariantViolation, "attack: " + what); };
  if (spec.kind == AttackKind::None) return;
  if (!(spec.total_mw >= 0.0) || !std::isfinite(spec.total_mw)) fail("total_mw must be >= 0");
  if (!(spec.t_start >= 0.0)) fail("t_start must be >= 0");
  if (spec.targets.empty()) fail("no target buses");
  double sum = 0.0;
  for (const auto& t : spec.targets) {
    if (std::find(grid.attack_buses.begin(), grid.attack_buses.end(), t.bus) == grid.attack_buses.end()) {
      throw Error(ErrorCode::UnknownBusRef, "attack bus " + std::to_string(t.bus) + " is not in attack_buses");
    }
    if (!(t.fraction >= 0.0)) fail("split fractions must be >= 0");
    sum += t.fraction;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail("split fractions sum to " + std::to_string(sum));
  if (spec.kind == AttackKind::Switching) {
    if (spec.freq_hz < 0.0 || !std::isfinite(spec.freq_hz)) fail("freq_hz must be > 0");
    if (!(spec.duty > 0.0 && spec.duty < 1.0)) fail("duty must lie in (0, 1)");
  }
}

ModeInfo identify_target_mode(const StateSpaceModel& ss) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(ss.a, false);
  const Eigen::VectorXcd ev = es.eigenvalues();
  ModeInfo best;
  bool found = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    const auto lam = ev(i);
    const double f = lam.imag() / (2.0 * std::numbers::pi);
    if (!(f > 0.05 && f < 5.0)) continue;
    const double zeta = -lam.real() / std::abs(lam);
    if (!found || zeta < best.damping_ratio) {
      best = {f, zeta, lam};
      found = true;
    }
  }
  if (!found) throw Error(ErrorCode::NoOscillatoryMode, "no oscillatory mode in (0.05, 5) Hz");
  return best;
}

InjectionSchedule static_attack(const AttackSpec& spec, const GridCase& grid) {
  validate_attack(spec, grid);
  InjectionSchedule s;
  s.kind = ScheduleKind::Static;
  for (const auto& t : spec.targets) {
    s.channels.push_back({t.bus, StepFunction{spec.t_start, t.fraction * spec.total_mw}, ZeroFunction{}});
  }
  return s;
}

InjectionSchedule switching_attack(const AttackSpec& spec, const GridCase& grid) {
  validate_attack(spec, grid);
  if (!(spec.freq_hz > 0.0)) throw Error(ErrorCode::InvariantViolation, "switching attack needs freq_hz > 0");
  InjectionSchedule s;
  s.kind = ScheduleKind::Switching;
  for (const auto& t : spec.targets) {
    s.channels.push_back(
        {t.bus, SquareWave{spec.t_start, t.fraction * spec.total_mw, spec.freq_hz, spec.duty}, ZeroFunction{}});
  }
  return s;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> discretize_zoh(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                                           double dt) {
  const Eigen::Index n = a.rows(), m = b.cols();
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(n + m, n + m);
  big.topLeftCorner(n, n) = a * dt;
  big.topRightCorner(n, m) = b * dt;
  const Eigen::MatrixXd e = big.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

DynamicAttackDesign design_dynamic_attack(const StateSpaceModel& attacker_view, const AttackSpec& spec) {
  const StateSpaceModel& ss = attacker_view;
  DynamicAttackDesign d;
  d.model = ss;
  d.t_start = spec.t_start;
  d.target = identify_target_mode(ss);
  const Eigen::Index n = ss.states();
  const auto nt = static_cast<Eigen::Index>(spec.targets.size());
  d.b_p.resize(n, nt);
  d.max_mw.resize(nt);
  d.bias_mw.resize(nt);
  for (Eigen::Index k = 0; k < nt; ++k) {
    const auto& t = spec.targets[static_cast<std::size_t>(k)];
    const auto it = std::find(ss.attack_buses.begin(), ss.attack_buses.end(), t.bus);
    if (it == ss.attack_buses.end()) {
      throw Error(ErrorCode::UnknownBusRef, "bus " + std::to_string(t.bus) + " is not an attack channel");
    }
    d.b_p.col(k) = ss.b_d.col(2 * (it - ss.attack_buses.begin()));
    d.channel_bus.push_back(t.bus);
    d.max_mw(k) = t.fraction * spec.total_mw;
    d.bias_mw(k) = 0.5 * d.max_mw(k);
  }

  // Real left modal subspace of the target pair: V^T A = Lambda V^T.
  Eigen::EigenSolver<Eigen::MatrixXd> es(ss.a.transpose());
  Eigen::Index idx = 0;
  double dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double e = std::abs(es.eigenvalues()(i) - d.target.eigenvalue);
    if (e < dist) {
      dist = e;
      idx = i;
    }
  }
  const Eigen::VectorXcd w = es.eigenvectors().col(idx);
  Eigen::MatrixXd v(n, 2);
  v.col(0) = w.real();
  v.col(1) = w.imag();
  const Eigen::MatrixXd g = v.transpose() * d.b_p;  // 2 x targets
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(g);
  const auto sv = svd.singularValues();
  if (sv.size() < 2 || !(sv(1) > 1e-9 * std::max(1.0, sv(0)))) {
    throw Error(ErrorCode::TargetModeUncontrollable, "target mode is not reachable from the attack buses");
  }
  const double shift = spec.sigma_target - d.target.eigenvalue.real();
  // Minimum-norm F with G F = shift I moves the pair to sigma_target +- j w.
  const Eigen::MatrixXd f = g.transpose() * (g * g.transpose()).inverse() * shift;
  d.k_att = f * v.transpose();

  const Eigen::Index p = ss.outputs();
  const ObserverDesign obs =
      observer_gain(ss.a, ss.c, spec.observer_q * Eigen::MatrixXd::Identity(n, n),
                    spec.observer_r * Eigen::MatrixXd::Identity(p, p));
  d.l_obs = obs.l;
  return d;
}

namespace {

class DynamicAttackRuntime final : public FeedbackRuntime {
 public:
  DynamicAttackRuntime(std::shared_ptr<const DynamicAttackDesign> d, double dt) : d_(std::move(d)) {
    const auto& ss = d_->model;
    const Eigen::Index n = ss.states(), p = ss.outputs(), nt = d_->b_p.cols();
    Eigen::MatrixXd b_in(n, nt + p);
    b_in << d_->b_p, -d_->l_obs;
    auto [ad, bd] = discretize_zoh(ss.a + d_->l_obs * ss.c, b_in, dt);
    ad_ = std::move(ad);
    bd_ = std::move(bd);
    x_hat_ = Eigen::VectorXd::Zero(n);
    in_ = Eigen::VectorXd::Zero(nt + p);
  }

  void step(double t, std::span<const double> freq_dev_hz, std::span<double> p_mw) override {
    const Eigen::Index nt = d_->b_p.cols(), p = d_->model.outputs();
    // Propagate over the last hold interval with the applied load and the
    // frequencies measured at its start.
    if (started_) x_hat_ = ad_ * x_hat_ + bd_ * in_;
    const bool on = t >= d_->t_start - 1e-12;
    started_ = started_ || on;
    Eigen::VectorXd cmd = Eigen::VectorXd::Zero(nt);
    if (on) {
      cmd = (d_->bias_mw + d_->model.base_mva * (d_->k_att * x_hat_)).cwiseMax(0.0).cwiseMin(d_->max_mw);
    }
    for (Eigen::Index k = 0; k < nt; ++k) p_mw[static_cast<std::size_t>(k)] = cmd(k);
    in_.head(nt) = cmd / d_->model.base_mva;
    for (Eigen::Index k = 0; k < p; ++k) in_(nt + k) = freq_dev_hz[static_cast<std::size_t>(k)];
  }

 private:
  std::shared_ptr<const DynamicAttackDesign> d_;
  Eigen::MatrixXd ad_, bd_;
  Eigen::VectorXd x_hat_, in_;
  bool started_ = false;
};

class DynamicAttackLaw final : public FeedbackLaw {
 public:
  explicit DynamicAttackLaw(DynamicAttackDesign d) : d_(std::make_shared<const DynamicAttackDesign>(std::move(d))) {}
  [[nodiscard]] std::unique_ptr<FeedbackRuntime> instantiate(double dt) const override {
    return std::make_unique<DynamicAttackRuntime>(d_, dt);
  }

 private:
  std::shared_ptr<const DynamicAttackDesign> d_;
};

}  // namespace

InjectionSchedule dynamic_attack(const StateSpaceModel& attacker_view, const AttackSpec& spec) {
  if (spec.kind != AttackKind::Dynamic) throw Error(ErrorCode::InvariantViolation, "spec is not dynamic");
  DynamicAttackDesign d = design_dynamic_attack(attacker_view, spec);
  InjectionSchedule s;
  s.kind = ScheduleKind::Dynamic;
  for (int bus : d.channel_bus) s.channels.push_back({bus, ZeroFunction{}, ZeroFunction{}});
  s.law = std::make_shared<DynamicAttackLaw>(std::move(d));
  return s;
}

StateSpaceModel perturb_model(const StateSpaceModel& ss, double level, std::uint64_t seed) {
  StateSpaceModel out = ss;
  if (level == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::MatrixXd* m : {&out.a, &out.b, &out.b_d}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] *= 1.0 + level * u(rng);
  }
  return out;
}

InjectionSchedule make_attack(const AttackSpec& spec, const GridCase& grid, const StateSpaceModel* model) {
  validate_attack(spec, grid);
  switch (spec.kind) {
    case AttackKind::None: return InjectionSchedule{};
    case AttackKind::Static: return static_attack(spec, grid);
    case AttackKind::Switching: {
      AttackSpec s = spec;
      if (!(s.freq_hz > 0.0)) {
        if (model == nullptr) throw Error(ErrorCode::InvariantViolation, "mode targeting needs a model");
        s.freq_hz = identify_target_mode(perturb_model(*model, spec.parameter_noise, spec.seed)).freq_hz;
      }
      return switching_attack(s, grid);
    }
    case AttackKind::Dynamic:
      if (model == nullptr) throw Error(ErrorCode::InvariantViolation, "dynamic attack needs a model");
      return dynamic_attack(perturb_model(*model, spec.parameter_noise, spec.seed), spec);
  }
  return InjectionSchedule{};
}

}  // namespace gridshield
