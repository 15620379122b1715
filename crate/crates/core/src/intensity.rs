//! Pair conditional intensity, its closed-form compensator, and the decay
//! kernels shared by estimation, simulation and diagnostics.
//!
//! For user `u` and item `i` the contribution rate is
//!
//! ```text
//! λ_ui(t) = (ψ_c + γ_c · pop_i(t)) · K(t − t_u0)
//! ```
//!
//! with `c = C_u(t)` and the power-law kernel `K(a) = (a + κ)^-(1+δ)`.
//! Every compensator is assembled from the kernel tail
//! `F(a) = ∫_a^∞ K = (a + κ)^-δ / δ`, so `∫_lo^hi K = F(lo) − F(hi)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{ItemId, PlatformState, Regime, UserId};
use crate::params::Params;

/// Decay of user interest as a function of the time since registration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DecayKernel {
    /// `(a + κ)^-(1+δ)`
    PowerLaw { kappa: f64, delta: f64 },
    /// `exp(−δ a)`
    Exponential { delta: f64 },
}

/// Kernel tail `F(a)` with its first and second derivatives in `(κ, δ)`.
/// Derivatives in `κ` are zero for the exponential kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TailJet {
    pub value: f64,
    pub d_kappa: f64,
    pub d_delta: f64,
    pub d_kappa_kappa: f64,
    pub d_kappa_delta: f64,
    pub d_delta_delta: f64,
}

impl TailJet {
    #[inline]
    pub fn scaled(&self, w: f64) -> TailJet {
        TailJet {
            value: w * self.value,
            d_kappa: w * self.d_kappa,
            d_delta: w * self.d_delta,
            d_kappa_kappa: w * self.d_kappa_kappa,
            d_kappa_delta: w * self.d_kappa_delta,
            d_delta_delta: w * self.d_delta_delta,
        }
    }

    #[inline]
    pub fn add_scaled(&mut self, other: &TailJet, w: f64) {
        self.value += w * other.value;
        self.d_kappa += w * other.d_kappa;
        self.d_delta += w * other.d_delta;
        self.d_kappa_kappa += w * other.d_kappa_kappa;
        self.d_kappa_delta += w * other.d_kappa_delta;
        self.d_delta_delta += w * other.d_delta_delta;
    }
}

impl DecayKernel {
    pub fn power_law(p: &Params) -> DecayKernel {
        DecayKernel::PowerLaw { kappa: p.kappa, delta: p.delta }
    }

    pub fn delta(&self) -> f64 {
        match *self {
            DecayKernel::PowerLaw { delta, .. } | DecayKernel::Exponential { delta } => delta,
        }
    }

    /// `K(a)`. Powers are taken in log space.
    #[inline]
    pub fn decay(&self, age: f64) -> f64 {
        self.log_decay(age).exp()
    }

    #[inline]
    pub fn log_decay(&self, age: f64) -> f64 {
        match *self {
            DecayKernel::PowerLaw { kappa, delta } => -(1.0 + delta) * (age + kappa).ln(),
            DecayKernel::Exponential { delta } => -delta * age,
        }
    }

    /// `F(a) = ∫_a^∞ K(v) dv`.
    #[inline]
    pub fn tail(&self, age: f64) -> f64 {
        match *self {
            DecayKernel::PowerLaw { kappa, delta } => (-delta * (age + kappa).ln()).exp() / delta,
            DecayKernel::Exponential { delta } => (-delta * age).exp() / delta,
        }
    }

    /// `∫_lo^hi K(v) dv`, evaluated without cancellation for short windows.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match *self {
            DecayKernel::PowerLaw { kappa, delta } => {
                let x = lo + kappa;
                let ratio = ((hi - lo) / x).ln_1p();
                (-delta * x.ln()).exp() * -(-delta * ratio).exp_m1() / delta
            }
            DecayKernel::Exponential { delta } => (-delta * lo).exp() * -(-delta * (hi - lo)).exp_m1() / delta,
        }
    }

    #[inline]
    pub fn tail_jet(&self, age: f64) -> TailJet {
        match *self {
            DecayKernel::PowerLaw { kappa, delta } => {
                let x = age + kappa;
                let l = x.ln();
                let p = (-delta * l).exp();
                let dl1 = delta * l + 1.0;
                let inv_x = 1.0 / x;
                TailJet {
                    value: p / delta,
                    d_kappa: -p * inv_x,
                    d_delta: -p * dl1 / (delta * delta),
                    d_kappa_kappa: (1.0 + delta) * p * inv_x * inv_x,
                    d_kappa_delta: p * l * inv_x,
                    d_delta_delta: p * (dl1 * dl1 + 1.0) / (delta * delta * delta),
                }
            }
            DecayKernel::Exponential { delta } => {
                let p = (-delta * age).exp();
                let da1 = delta * age + 1.0;
                TailJet {
                    value: p / delta,
                    d_delta: -p * da1 / (delta * delta),
                    d_delta_delta: p * (da1 * da1 + 1.0) / (delta * delta * delta),
                    ..TailJet::default()
                }
            }
        }
    }

    /// Derivatives of `log K(a)`: `(value, ∂κ, ∂δ, ∂κκ, ∂κδ, ∂δδ)`.
    #[inline]
    pub fn log_decay_jet(&self, age: f64) -> TailJet {
        match *self {
            DecayKernel::PowerLaw { kappa, delta } => {
                let x = age + kappa;
                let l = x.ln();
                TailJet {
                    value: -(1.0 + delta) * l,
                    d_kappa: -(1.0 + delta) / x,
                    d_delta: -l,
                    d_kappa_kappa: (1.0 + delta) / (x * x),
                    d_kappa_delta: -1.0 / x,
                    d_delta_delta: 0.0,
                }
            }
            DecayKernel::Exponential { delta } => TailJet { value: -delta * age, d_delta: -age, ..TailJet::default() },
        }
    }

    /// Inverse-transform draw of the waiting time from age `age` for an
    /// intensity `multiplier · K`, given `q ~ U(0, 1]`. Returns `None` when the
    /// remaining mass `multiplier · F(age)` is exhausted before reaching
    /// `−ln q` (the distribution is defective).
    pub fn invert_waiting(&self, multiplier: f64, age: f64, q: f64) -> Option<f64> {
        if !(multiplier > 0.0) {
            return None;
        }
        if q >= 1.0 {
            return Some(0.0);
        }
        let z = q.ln() / (multiplier * self.tail(age));
        if !(z > -1.0) {
            return None;
        }
        let x = match *self {
            DecayKernel::PowerLaw { kappa, delta } => (age + kappa) * (-z.ln_1p() / delta).exp_m1(),
            DecayKernel::Exponential { delta } => -z.ln_1p() / delta,
        };
        x.is_finite().then_some(x.max(0.0))
    }
}

/// A piece of a pair's risk window on which regime and popularity are
/// constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSegment {
    pub lo: f64,
    pub hi: f64,
    pub regime: Regime,
    pub popularity: f64,
    /// Registration time `t_u0` of the user.
    pub registered: f64,
}

/// `λ_ui(t)` with regime and popularity read from `state`.
pub fn pair_intensity(p: &Params, state: &PlatformState, user: UserId, item: ItemId, t: f64) -> Result<f64> {
    let rec = state.user(user).ok_or(Error::UnknownUser(user))?;
    let popularity = state.relative_popularity(item)?;
    if t < rec.registered {
        return Err(Error::Domain(format!("t={t} precedes registration of {user} at {}", rec.registered)));
    }
    let c = rec.regime().index();
    Ok((p.psi[c] + p.gamma[c] * popularity) * DecayKernel::power_law(p).decay(t - rec.registered))
}

/// `Λ_ui(t)` over contiguous segments starting at the pair's window start.
pub fn pair_compensator(p: &Params, segments: &[PairSegment], t: f64) -> Result<f64> {
    let Some(first) = segments.first() else {
        return Err(Error::Partition("no segments".into()));
    };
    let last = segments.last().expect("non-empty");
    if t < first.lo || t > last.hi {
        return Err(Error::Partition(format!("t={t} outside covered window [{}, {}]", first.lo, last.hi)));
    }
    let kernel = DecayKernel::power_law(p);
    let mut total = 0.0;
    for (k, seg) in segments.iter().enumerate() {
        if seg.hi < seg.lo || seg.lo < seg.registered {
            return Err(Error::Partition(format!("segment {k} is malformed: {seg:?}")));
        }
        if k > 0 && seg.lo != segments[k - 1].hi {
            return Err(Error::Partition(format!("gap or overlap between segments {} and {k}", k - 1)));
        }
        if seg.lo >= t {
            continue;
        }
        let c = seg.regime.index();
        let hi = seg.hi.min(t);
        total +=
            (p.psi[c] + p.gamma[c] * seg.popularity) * kernel.integral(seg.lo - seg.registered, hi - seg.registered);
    }
    Ok(total)
}

/// `β_c = γ_c / ψ_c` for each regime.
pub fn contagion_effect(p: &Params) -> [f64; 4] {
    p.contagion()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, EventKind};

    fn params() -> Params {
        Params::PLATFORM_A
    }

    fn one_pair_state(popular: bool) -> PlatformState {
        let mut s = PlatformState::new();
        let evs =
            [EventKind::ItemStart(ItemId(0)), EventKind::ItemStart(ItemId(1)), EventKind::UserRegistration(UserId(0))];
        for (k, kind) in evs.iter().enumerate() {
            s.apply(&Event::new(k as f64 * 0.1, *kind)).unwrap();
        }
        if popular {
            s.apply(&Event::new(0.5, EventKind::UserRegistration(UserId(1)))).unwrap();
            s.apply(&Event::new(0.6, EventKind::UserRegistration(UserId(2)))).unwrap();
            s.apply(&Event::new(0.7, EventKind::Contribution { user: UserId(1), item: ItemId(0) })).unwrap();
            s.apply(&Event::new(0.8, EventKind::Contribution { user: UserId(2), item: ItemId(1) })).unwrap();
        }
        s
    }

    #[test]
    fn intensity_at_registration_without_popularity() {
        let p = params();
        let s = one_pair_state(false);
        let v = pair_intensity(&p, &s, UserId(0), ItemId(0), 0.2).unwrap();
        let expected = p.psi[0] * p.kappa.powf(-(1.0 + p.delta));
        assert!((v / expected - 1.0).abs() < 1e-13);
    }

    #[test]
    fn intensity_reference_magnitudes() {
        // popularity 0.5, one day after registration; reference value
        // computed independently at 30 significant digits.
        let p = params();
        let s = one_pair_state(true);
        let v = pair_intensity(&p, &s, UserId(0), ItemId(0), 1.2).unwrap();
        assert!((v - 1.306_093_794_3e-2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn intensity_is_linear_in_rates() {
        let p = params();
        let mut q = p;
        q.psi.iter_mut().for_each(|x| *x *= 2.0);
        q.gamma.iter_mut().for_each(|x| *x *= 2.0);
        let s = one_pair_state(true);
        let a = pair_intensity(&p, &s, UserId(0), ItemId(1), 3.0).unwrap();
        let b = pair_intensity(&q, &s, UserId(0), ItemId(1), 3.0).unwrap();
        assert!((b / a - 2.0).abs() < 1e-14);
        assert!(matches!(pair_intensity(&p, &s, UserId(0), ItemId(1), 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn compensator_edge_cases() {
        let p = params();
        let seg = PairSegment { lo: 2.0, hi: 5.0, regime: Regime::ZERO, popularity: 0.0, registered: 2.0 };
        assert_eq!(pair_compensator(&p, &[seg], 2.0).unwrap(), 0.0);
        let h = 3.0;
        let closed = p.psi[0] / p.delta * (p.kappa.powf(-p.delta) - (h + p.kappa).powf(-p.delta));
        let got = pair_compensator(&p, &[seg], 5.0).unwrap();
        assert!((got / closed - 1.0).abs() < 1e-12);
        let gap = PairSegment { lo: 5.5, hi: 6.0, ..seg };
        assert!(matches!(pair_compensator(&p, &[seg, gap], 6.0), Err(Error::Partition(_))));
        assert!(pair_compensator(&p, &[seg], 7.0).is_err());
    }

    #[test]
    fn contagion_reference_values() {
        let b = contagion_effect(&Params::PLATFORM_A);
        assert!((b[0] - 26.2).abs() < 0.05, "{}", b[0]);
        let b = contagion_effect(&Params::PLATFORM_B);
        assert!((b[3] - 9.2568).abs() < 1e-3, "{}", b[3]);
        let mut p = Params::PLATFORM_B;
        p.gamma = p.psi;
        assert!(contagion_effect(&p).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn tail_jet_matches_finite_differences() {
        for kernel in [DecayKernel::PowerLaw { kappa: 2.3e-3, delta: 0.27 }, DecayKernel::Exponential { delta: 0.4 }] {
            for age in [0.0, 0.01, 3.7, 250.0] {
                let jet = kernel.tail_jet(age);
                assert!((jet.value - kernel.tail(age)).abs() <= 1e-14 * jet.value.abs());
                let with = |k: f64, d: f64| match kernel {
                    DecayKernel::PowerLaw { .. } => DecayKernel::PowerLaw { kappa: k, delta: d },
                    DecayKernel::Exponential { .. } => DecayKernel::Exponential { delta: d },
                };
                let (k0, d0) = match kernel {
                    DecayKernel::PowerLaw { kappa, delta } => (kappa, delta),
                    DecayKernel::Exponential { delta } => (1.0, delta),
                };
                let hk = (age + k0) * 1e-5;
                let hd = d0 * 1e-5;
                let fd_d = (with(k0, d0 + hd).tail_jet(age).value - with(k0, d0 - hd).tail_jet(age).value) / (2.0 * hd);
                let fd_dd =
                    (with(k0, d0 + hd).tail_jet(age).d_delta - with(k0, d0 - hd).tail_jet(age).d_delta) / (2.0 * hd);
                assert!((fd_d - jet.d_delta).abs() <= 1e-7 * jet.d_delta.abs().max(1e-12));
                assert!((fd_dd - jet.d_delta_delta).abs() <= 1e-6 * jet.d_delta_delta.abs().max(1e-12));
                if matches!(kernel, DecayKernel::PowerLaw { .. }) {
                    let fd_k = (with(k0 + hk, d0).tail(age) - with(k0 - hk, d0).tail(age)) / (2.0 * hk);
                    let fd_kd = (with(k0, d0 + hd).tail_jet(age).d_kappa - with(k0, d0 - hd).tail_jet(age).d_kappa)
                        / (2.0 * hd);
                    let fd_kk = (with(k0 + hk, d0).tail_jet(age).d_kappa - with(k0 - hk, d0).tail_jet(age).d_kappa)
                        / (2.0 * hk);
                    assert!((fd_k - jet.d_kappa).abs() <= 1e-7 * jet.d_kappa.abs());
                    assert!((fd_kd - jet.d_kappa_delta).abs() <= 1e-6 * jet.d_kappa_delta.abs().max(1e-9));
                    assert!((fd_kk - jet.d_kappa_kappa).abs() <= 1e-6 * jet.d_kappa_kappa.abs());
                }
            }
        }
    }

    #[test]
    fn inversion_limits() {
        let k = DecayKernel::PowerLaw { kappa: 1e-3, delta: 0.2 };
        assert_eq!(k.invert_waiting(0.01, 1.0, 1.0), Some(0.0));
        assert_eq!(k.invert_waiting(0.01, 1.0, f64::MIN_POSITIVE), None);
        let x = k.invert_waiting(0.5, 0.3, 0.7).unwrap();
        let mass = 0.5 * k.integral(0.3, 0.3 + x);
        assert!((mass + 0.7f64.ln()).abs() < 1e-12);
    }
}
