#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "mrfnet/parallel.hpp"
#include "mrfnet/schedule.hpp"

namespace mrfnet {

using cplx = std::complex<double>;

/// Extended Phase Graph configuration states F+_k, F-_k and Z_k for k = 0..K.
struct EpgState {
  std::vector<cplx> f_plus;
  std::vector<cplx> f_minus;
  std::vector<cplx> z;

  static EpgState equilibrium(std::size_t max_order) {
    EpgState s;
    s.f_plus.assign(max_order + 1, cplx{});
    s.f_minus.assign(max_order + 1, cplx{});
    s.z.assign(max_order + 1, cplx{});
    s.z[0] = 1.0;
    return s;
  }

  std::size_t max_order() const { return f_plus.size() - 1; }
};

/// Complex signal at each excitation.
struct Fingerprint {
  std::vector<cplx> samples;

  std::size_t size() const { return samples.size(); }

  std::vector<double> magnitude() const {
    std::vector<double> m(samples.size());
    std::transform(samples.begin(), samples.end(), m.begin(), [](cplx c) { return std::abs(c); });
    return m;
  }
};

namespace epg_detail {
// Explicit complex product; keeps the inner loops free of the NaN-recovery
// path std::complex<double>::operator* takes under strict IEEE semantics.
inline cplx mul(cplx a, cplx b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}
}  // namespace epg_detail

// RF rotation mixing (F+, F-, Z) at orders 0..last_order inclusive.
inline void apply_rf(EpgState& s, double alpha, double phi, std::size_t last_order) {
  using epg_detail::mul;
  const double c2 = std::cos(alpha / 2) * std::cos(alpha / 2);
  const double s2 = std::sin(alpha / 2) * std::sin(alpha / 2);
  const double sa = std::sin(alpha);
  const double ca = std::cos(alpha);
  const cplx e1 = std::polar(1.0, phi);
  const cplx e2 = std::polar(1.0, 2.0 * phi);
  const cplx i_unit{0.0, 1.0};

  // Row coefficients of the 3x3 rotation in the (F+, F-, Z) basis.
  const cplx pm = s2 * e2;
  const cplx pz = mul(-i_unit, e1) * sa;
  const cplx mp = s2 * std::conj(e2);
  const cplx mz = mul(i_unit, std::conj(e1)) * sa;
  const cplx zp = mul(-0.5 * i_unit, std::conj(e1)) * sa;
  const cplx zm = mul(0.5 * i_unit, e1) * sa;

  const std::size_t n = std::min(last_order, s.max_order()) + 1;
  cplx* fp = s.f_plus.data();
  cplx* fm = s.f_minus.data();
  cplx* zz = s.z.data();
  for (std::size_t k = 0; k < n; ++k) {
    const cplx a = fp[k], b = fm[k], c = zz[k];
    fp[k] = c2 * a + mul(pm, b) + mul(pz, c);
    fm[k] = mul(mp, a) + c2 * b + mul(mz, c);
    zz[k] = mul(zp, a) + mul(zm, b) + ca * c;
  }
}

/// Standard EPG RF operator applied at every tracked order.
inline EpgState rf_rotation(EpgState state, double alpha, double phi) {
  apply_rf(state, alpha, phi, state.max_order());
  return state;
}

// T2 decay on F states, T1 recovery on Z states over dt, orders 0..last_order.
inline void apply_relaxation(EpgState& s, double dt_ms, const TissueParams& p,
                             std::size_t last_order) {
  const double e1 = std::exp(-dt_ms / p.t1_ms);
  const double e2 = std::exp(-dt_ms / p.t2_ms);
  const std::size_t n = std::min(last_order, s.max_order()) + 1;
  for (std::size_t k = 0; k < n; ++k) {
    s.f_plus[k] *= e2;
    s.f_minus[k] *= e2;
    s.z[k] *= e1;
  }
  s.z[0] += 1.0 - e1;
}

// One unit of gradient dephasing. Orders beyond K are dropped.
inline void apply_shift(EpgState& s, std::size_t last_order) {
  const std::size_t kmax = s.max_order();
  const std::size_t top = std::min(last_order + 1, kmax);
  for (std::size_t k = top; k > 0; --k) s.f_plus[k] = s.f_plus[k - 1];
  for (std::size_t k = 0; k < top; ++k) s.f_minus[k] = s.f_minus[k + 1];
  s.f_minus[top] = cplx{};
  s.f_plus[0] = std::conj(s.f_minus[0]);
}

/// Relaxation over dt followed by a single gradient shift.
inline EpgState relax_shift(EpgState state, double dt_ms, const TissueParams& params) {
  if (!(dt_ms >= 0.0)) throw std::invalid_argument("relax_shift: dt must be nonnegative");
  apply_relaxation(state, dt_ms, params, state.max_order());
  apply_shift(state, state.max_order());
  return state;
}

struct SimulationOptions {
  // Highest configuration order tracked; 0 selects the lossless default K = N.
  std::size_t max_order = 0;
  // Called after each excitation's RF pulse, before sampling.
  std::function<void(std::size_t, const EpgState&)> on_excitation;
};

/// EPG simulation of a gradient-spoiled MRF acquisition.
inline Fingerprint simulate_fingerprint(const TissueParams& params, const SequenceSchedule& schedule,
                                        const SimulationOptions& options = {}) {
  if (schedule.size() == 0) throw std::invalid_argument("simulate_fingerprint: empty schedule");
  if (!(params.t1_ms > 0.0) || !(params.t2_ms > 0.0))
    throw std::invalid_argument("simulate_fingerprint: T1 and T2 must be positive");
  const std::size_t n = schedule.size();
  const std::size_t kmax = options.max_order == 0 ? n : options.max_order;

  EpgState state = EpgState::equilibrium(kmax);
  if (schedule.inversion_prep) {
    apply_rf(state, std::numbers::pi, 0.0, 0);
    if (schedule.inversion_delay_ms > 0.0)
      apply_relaxation(state, schedule.inversion_delay_ms, params, 0);
  }

  const double te_decay = std::exp(-schedule.te_ms / params.t2_ms);
  Fingerprint fp;
  fp.samples.resize(n);
  // After i shifts only orders 0..i can be populated.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t active = std::min(i, kmax);
    apply_rf(state, schedule.flip_angles_rad[i], schedule.rf_phases_rad[i], active);
    if (options.on_excitation) options.on_excitation(i, state);
    fp.samples[i] = state.f_plus[0] * te_decay;
    apply_relaxation(state, schedule.tr_ms[i], params, active);
    apply_shift(state, active);
  }
  return fp;
}

/// Simulates every parameter pair; output order follows the input regardless of threads.
inline std::vector<Fingerprint> simulate_batch(std::span<const TissueParams> params,
                                               const SequenceSchedule& schedule,
                                               const SimulationOptions& options = {}) {
  std::vector<Fingerprint> out(params.size());
  parallel_for(params.size(), [&](std::size_t i) {
    out[i] = simulate_fingerprint(params[i], schedule, options);
  });
  return out;
}

/// Discrete-isochromat Bloch summation. Each spin j dephases by 2*pi*j/n_spins per
/// TR; the echo is the complex mean transverse magnetisation. With more spins than
/// excitations no dephasing order aliases onto k = 0, so this equals the EPG signal.
inline Fingerprint isochromat_oracle(const TissueParams& params, const SequenceSchedule& schedule,
                                     std::size_t n_spins) {
  const std::size_t n = schedule.size();
  if (n == 0) throw std::invalid_argument("isochromat_oracle: empty schedule");
  if (n_spins <= n)
    throw std::invalid_argument("isochromat_oracle: n_spins must exceed the number of excitations");

  std::vector<double> mx(n_spins, 0.0), my(n_spins, 0.0), mz(n_spins, 1.0);
  std::vector<double> cos_t(n_spins), sin_t(n_spins);
  for (std::size_t j = 0; j < n_spins; ++j) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_spins);
    cos_t[j] = std::cos(theta);
    sin_t[j] = std::sin(theta);
  }

  // Right-handed rotation by alpha about the transverse axis (cos phi, sin phi, 0).
  auto rotate = [&](double alpha, double phi) {
    const double ux = std::cos(phi), uy = std::sin(phi);
    const double c = std::cos(alpha), s = std::sin(alpha), t = 1.0 - c;
    const double r00 = c + ux * ux * t, r01 = ux * uy * t, r02 = uy * s;
    const double r10 = ux * uy * t, r11 = c + uy * uy * t, r12 = -ux * s;
    const double r20 = -uy * s, r21 = ux * s, r22 = c;
    for (std::size_t j = 0; j < n_spins; ++j) {
      const double x = mx[j], y = my[j], zc = mz[j];
      mx[j] = r00 * x + r01 * y + r02 * zc;
      my[j] = r10 * x + r11 * y + r12 * zc;
      mz[j] = r20 * x + r21 * y + r22 * zc;
    }
  };
  auto relax = [&](double dt) {
    const double e1 = std::exp(-dt / params.t1_ms), e2 = std::exp(-dt / params.t2_ms);
    for (std::size_t j = 0; j < n_spins; ++j) {
      mx[j] *= e2;
      my[j] *= e2;
      mz[j] = e1 * mz[j] + (1.0 - e1);
    }
  };

  if (schedule.inversion_prep) {
    rotate(std::numbers::pi, 0.0);
    if (schedule.inversion_delay_ms > 0.0) relax(schedule.inversion_delay_ms);
  }

  const double te_decay = std::exp(-schedule.te_ms / params.t2_ms);
  Fingerprint fp;
  fp.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    rotate(schedule.flip_angles_rad[i], schedule.rf_phases_rad[i]);
    double sx = 0.0, sy = 0.0;
    for (std::size_t j = 0; j < n_spins; ++j) {
      sx += mx[j];
      sy += my[j];
    }
    fp.samples[i] = cplx{sx, sy} / static_cast<double>(n_spins) * te_decay;
    relax(schedule.tr_ms[i]);
    for (std::size_t j = 0; j < n_spins; ++j) {
      const double x = mx[j], y = my[j];
      mx[j] = cos_t[j] * x - sin_t[j] * y;
      my[j] = sin_t[j] * x + cos_t[j] * y;
    }
  }
  return fp;
}

}  // namespace mrfnet
