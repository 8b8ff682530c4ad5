#include "gridshield/mitigation.hpp"

#include <algorithm>
#include <cmath>

#include "gridshield/attacks.hpp"
#include "gridshield/error.hpp"

namespace gridshield {

void FleetModel::validate() const {
  auto fraction = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!(vehicles_registered >= 0.0) || !fraction(ev_penetration) || !fraction(public_evcs_per_ev) ||
      !fraction(occupancy)) {
    throw Error(ErrorCode::InvariantViolation, "fleet model: counts and fractions out of range");
  }
  if (!(avg_rate_kw > 0.0) || !(kwh_per_mile > 0.0) || !(tariff_per_hour >= 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "fleet model: rates must be positive");
  }
}

FleetCapacity fleet_capacity(const FleetModel& fm) {
  fm.validate();
  FleetCapacity c;
  c.evs = std::ceil(fm.vehicles_registered * fm.ev_penetration);
  c.public_evcs = std::ceil(c.evs * fm.public_evcs_per_ev);
  c.connected_evs = c.public_evcs * fm.occupancy;
  c.capacity_mw = c.connected_evs * fm.avg_rate_kw / 1000.0;
  return c;
}

EnergyImpact energy_impact(const std::vector<double>& time, const std::vector<double>& fleet_mw,
                           double connected_evs, const FleetModel& fm) {
  fm.validate();
  if (time.size() != fleet_mw.size()) {
    throw Error(ErrorCode::InvariantViolation, "energy_impact: time and power lengths differ");
  }
  EnergyImpact e;
  if (time.size() < 2 || !(connected_evs > 0.0)) return e;
  double mwh = 0.0;
  for (std::size_t i = 1; i < time.size(); ++i) {
    mwh += 0.5 * (fleet_mw[i] + fleet_mw[i - 1]) * (time[i] - time[i - 1]) / 3600.0;
  }
  const bool active = std::any_of(fleet_mw.begin(), fleet_mw.end(), [](double p) { return p != 0.0; });
  if (!active) return e;
  e.net_kwh_per_ev = -mwh * 1000.0 / connected_evs;
  e.opportunity_kwh_per_ev = fm.avg_rate_kw * (time.back() - time.front()) / 3600.0;
  e.total_kwh_per_ev = e.opportunity_kwh_per_ev + std::abs(e.net_kwh_per_ev);
  e.range_miles_per_ev = e.total_kwh_per_ev / fm.kwh_per_mile;
  return e;
}

EventCost event_cost(double duration_s, const FleetModel& fm, double participating_evs) {
  if (!(duration_s >= 0.0) || !(participating_evs >= 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "event_cost: negative duration or participants");
  }
  EventCost c;
  c.per_ev_cost = fm.tariff_per_hour * duration_s / 3600.0;
  c.total_cost = c.per_ev_cost * participating_evs;
  return c;
}

Eigen::VectorXd split_capacity(const GridCase& grid, const std::vector<int>& ev_buses, double capacity_mw) {
  Eigen::VectorXd load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ev_buses.size()));
  for (std::size_t k = 0; k < ev_buses.size(); ++k) {
    (void)grid.bus_index(ev_buses[k]);
    for (const auto& l : grid.loads) {
      if (l.bus == ev_buses[k]) load(static_cast<Eigen::Index>(k)) += std::max(l.p_load, 0.0);
    }
  }
  const double total = load.sum();
  if (!(total > 0.0)) {
    return Eigen::VectorXd::Constant(load.size(), capacity_mw / std::max<double>(1.0, static_cast<double>(load.size())));
  }
  return load * (capacity_mw / total);
}

Eigen::MatrixXd sampled_observer_gain(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& c, const Eigen::MatrixXd& q,
                                      const Eigen::MatrixXd& r, double period) {
  if (!(period > 0.0)) throw Error(ErrorCode::InvariantViolation, "sampled_observer_gain: period must be > 0");
  const Eigen::MatrixXd qd = q * period, rd = r / period;
  // Riccati difference iteration on the a priori covariance.
  Eigen::MatrixXd p = qd;
  Eigen::MatrixXd l;
  for (int it = 0; it < 200'000; ++it) {
    const Eigen::MatrixXd s = c * p * c.transpose() + rd;
    l = s.llt().solve(c * p).transpose();
    Eigen::MatrixXd next = phi * (p - l * c * p) * phi.transpose() + qd;
    next = 0.5 * (next + next.transpose()).eval();
    const double change = (next - p).norm();
    p = std::move(next);
    if (!p.allFinite()) break;
    if (change <= 1e-13 * std::max(1.0, p.norm())) {
      return c.rows() == 0 ? l : (c * p * c.transpose() + rd).llt().solve(c * p).transpose();
    }
  }
  throw Error(ErrorCode::NonConvergence, "sampled observer Riccati iteration did not converge");
}

ControllerRuntime::ControllerRuntime(const SynthesisArtifacts& art, Eigen::VectorXd capacity_mw,
                                     const ControllerOptions& options)
    : opt_(options), cap_mw_(std::move(capacity_mw)), rng_(options.delay.seed), normal_(0.0, 1.0) {
  const StateSpaceModel& rm = art.reduced.model;
  f_nominal_ = rm.f_nominal;
  base_mva_ = rm.base_mva;
  buses_ = rm.ev_buses;
  if (cap_mw_.size() != static_cast<Eigen::Index>(buses_.size())) {
    throw Error(ErrorCode::InvariantViolation, "one capacity per EV bus required");
  }
  if (rm.inputs() != 2 * static_cast<Eigen::Index>(buses_.size())) {
    throw Error(ErrorCode::InvariantViolation, "synthesis model inputs do not match its EV buses");
  }
  if (!(opt_.sample_period > 0.0)) throw Error(ErrorCode::InvariantViolation, "sample period must be > 0");
  const auto& d = opt_.delay;
  if (d.enabled && !(d.min_ms >= 0.0 && d.max_ms >= d.min_ms && d.sigma_ms >= 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "delay model bounds are inconsistent");
  }
  k_ = art.hinf.k_mit;
  c_ = rm.c;
  std::tie(phi_, gamma_) = discretize_zoh(rm.a, rm.b, opt_.sample_period);
  l_ = sampled_observer_gain(phi_, c_, art.observer.q_weight, art.observer.r_weight, opt_.sample_period);
  x_hat_ = Eigen::VectorXd::Zero(rm.states());
  u_ = Eigen::VectorXd::Zero(rm.inputs());
  delays_.assign(static_cast<std::size_t>(rm.outputs()), 0.0);
}

Eigen::VectorXd ControllerRuntime::sample(const Eigen::VectorXd& y) {
  // Predict over the last hold interval, then correct with this sample.
  if (!first_sample_) x_hat_ = phi_ * x_hat_ + gamma_ * u_;
  first_sample_ = false;
  x_hat_ += l_ * (y - c_ * x_hat_);
  Eigen::VectorXd u = k_ * x_hat_;
  saturated_ = false;
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(buses_.size()); ++k) {
    const double cap = cap_mw_(k) / base_mva_;
    const double p_lo = -cap, p_hi = opt_.v2g ? cap : 0.0;
    const double p = std::clamp(u(2 * k), p_lo, p_hi);
    const double q = std::clamp(u(2 * k + 1), -cap, cap);
    saturated_ = saturated_ || p != u(2 * k) || q != u(2 * k + 1);
    u(2 * k) = p;
    u(2 * k + 1) = q;
  }
  u_ = u;
  return u;
}

void ControllerRuntime::command(double t, std::span<const double> freq_hz, std::vector<BusPower>& out) {
  const auto p = static_cast<Eigen::Index>(freq_hz.size());
  Eigen::VectorXd dev(p);
  for (Eigen::Index i = 0; i < p; ++i) dev(i) = freq_hz[static_cast<std::size_t>(i)] - f_nominal_;
  hist_t_.push_back(t);
  hist_y_.push_back(dev);
  const double keep = t - 2.0 * std::max(opt_.delay.max_ms, 1.0) * 1e-3 - opt_.sample_period;
  std::size_t drop = 0;
  while (drop + 2 < hist_t_.size() && hist_t_[drop + 1] < keep) ++drop;
  if (drop > 0) {
    hist_t_.erase(hist_t_.begin(), hist_t_.begin() + static_cast<std::ptrdiff_t>(drop));
    hist_y_.erase(hist_y_.begin(), hist_y_.begin() + static_cast<std::ptrdiff_t>(drop));
  }

  if (first_) {
    next_sample_ = t;
    first_ = false;
  }
  if (t >= next_sample_ - 1e-9) {
    Eigen::VectorXd y = dev;
    if (opt_.delay.enabled) {
      for (Eigen::Index i = 0; i < p; ++i) {
        const double ms = std::clamp(opt_.delay.mean_ms + opt_.delay.sigma_ms * normal_(rng_), opt_.delay.min_ms,
                                     opt_.delay.max_ms);
        delays_[static_cast<std::size_t>(i)] = ms;
        const double td = t - ms * 1e-3;
        // Linear interpolation in the history, held at its oldest entry.
        auto it = std::upper_bound(hist_t_.begin(), hist_t_.end(), td);
        if (it == hist_t_.begin()) {
          y(i) = hist_y_.front()(i);
        } else if (it == hist_t_.end()) {
          y(i) = hist_y_.back()(i);
        } else {
          const auto j = static_cast<std::size_t>(it - hist_t_.begin());
          const double w = (td - hist_t_[j - 1]) / (hist_t_[j] - hist_t_[j - 1]);
          y(i) = (1.0 - w) * hist_y_[j - 1](i) + w * hist_y_[j](i);
        }
      }
    }
    (void)sample(y);
    next_sample_ += opt_.sample_period;
  }
  for (std::size_t k = 0; k < buses_.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    out.push_back({buses_[k], base_mva_ * u_(2 * kk), base_mva_ * u_(2 * kk + 1)});
  }
}

std::vector<std::string> ControllerRuntime::telemetry_labels() const {
  return {"x_hat_norm", "saturated", "delay_mean_ms", "delay_max_ms"};
}

void ControllerRuntime::telemetry(std::vector<double>& out) const {
  double mean = 0.0, mx = 0.0;
  for (double d : delays_) {
    mean += d;
    mx = std::max(mx, d);
  }
  if (!delays_.empty()) mean /= static_cast<double>(delays_.size());
  out.push_back(x_hat_.norm());
  out.push_back(saturated_ ? 1.0 : 0.0);
  out.push_back(mean);
  out.push_back(mx);
}

}  // namespace gridshield
