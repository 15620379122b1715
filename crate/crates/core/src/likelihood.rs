//! Exact log-likelihood with analytic gradient and Hessian.
//!
//! The log-likelihood splits into an item-flow part in `(φ, μ, σ)` and a
//! contribution part in `(ψ, γ, κ, δ)`:
//!
//! ```text
//! ℓ_flow    = a ln φ − φT + b ln μ + d ln σ + Σ ln|I(s⁻)| − (μ + σ)·∫|I|
//! ℓ_contrib = Σ_r [ln(ψ_c + γ_c p_r) + ln K(age_r)] − Σ_c (ψ_c Ψ_c + γ_c Γ_c)
//! ```
//!
//! where `Ψ_c = Σ_u ∫ |I(v)| K` and `Γ_c = Σ_u ∫ 1[some backer] K` over the
//! users' regime-`c` windows. `Ψ_c` and `Γ_c` depend on the kernel only, so
//! the contribution part is linear in `(ψ, γ)` apart from the log terms.
//!
//! The contribution sub-model is handled in its own 10-vector ordered
//! `(ψ₀..ψ₃, γ₀..γ₃, κ, δ)`; nested variants are linear maps into it.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::REGIMES;
use crate::intensity::{DecayKernel, TailJet};
use crate::params::{Params, N_PARAMS};
use crate::stats::{EventTerm, SufficientStats, UserSegment};

/// Length of the contribution parameter vector.
pub const N_CONTRIB: usize = 10;
pub const KAPPA: usize = 8;
pub const DELTA: usize = 9;

/// Records per parallel work unit. Fixed so reductions do not depend on the
/// number of worker threads.
const BLOCK: usize = 2048;

pub type Vector13 = SVector<f64, N_PARAMS>;
pub type Matrix13 = SMatrix<f64, N_PARAMS, N_PARAMS>;
pub type ContribVector = SVector<f64, N_CONTRIB>;
pub type ContribMatrix = SMatrix<f64, N_CONTRIB, N_CONTRIB>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    PowerLaw,
    Exponential,
}

impl KernelFamily {
    pub fn kernel(self, kappa: f64, delta: f64) -> DecayKernel {
        match self {
            KernelFamily::PowerLaw => DecayKernel::PowerLaw { kappa, delta },
            KernelFamily::Exponential => DecayKernel::Exponential { delta },
        }
    }
}

/// `(ψ₀..ψ₃, γ₀..γ₃, κ, δ)` view of a [`Params`].
pub fn contribution_vector(p: &Params) -> [f64; N_CONTRIB] {
    let mut v = [0.0; N_CONTRIB];
    v[..4].copy_from_slice(&p.psi);
    v[4..8].copy_from_slice(&p.gamma);
    v[KAPPA] = p.kappa;
    v[DELTA] = p.delta;
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derivatives {
    pub loglik: f64,
    pub grad: Vector13,
    pub hess: Matrix13,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContribDerivatives {
    pub loglik: f64,
    pub grad: ContribVector,
    pub hess: ContribMatrix,
}

/// Kernel integrals `Ψ_c`, `Γ_c` with their `(κ, δ)` derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KernelSums {
    pub psi: [TailJet; REGIMES],
    pub gamma: [TailJet; REGIMES],
}

impl KernelSums {
    fn add(&mut self, o: &KernelSums) {
        for c in 0..REGIMES {
            self.psi[c].add_scaled(&o.psi[c], 1.0);
            self.gamma[c].add_scaled(&o.gamma[c], 1.0);
        }
    }
}

fn jet_diff(a: &TailJet, b: &TailJet) -> TailJet {
    let mut d = *a;
    d.add_scaled(b, -1.0);
    d
}

/// Walks the environment pieces of one user segment, calling `visit` with the
/// item count, popularity indicator and the age interval of each piece.
#[inline]
fn for_each_piece(s: &SufficientStats, seg: &UserSegment, mut visit: impl FnMut(u32, bool, f64, f64)) {
    let env = &s.environment;
    let last = env.times.len();
    for k in seg.env_lo as usize..seg.env_hi as usize {
        let lo = seg.lo.max(env.times[k]);
        let hi = if k + 1 < last { seg.hi.min(env.times[k + 1]) } else { seg.hi };
        if hi > lo {
            visit(env.n_items[k], env.popularity_on[k], lo - seg.registered, hi - seg.registered);
        }
    }
}

fn segment_jets(s: &SufficientStats, kernel: &DecayKernel, seg: &UserSegment, acc: &mut KernelSums) {
    let c = seg.regime.index();
    let mut cached: Option<(f64, TailJet)> = None;
    for_each_piece(s, seg, |n, pop, a_lo, a_hi| {
        if n == 0 && !pop {
            return;
        }
        let j_lo = match cached {
            Some((a, j)) if a == a_lo => j,
            _ => kernel.tail_jet(a_lo),
        };
        let j_hi = kernel.tail_jet(a_hi);
        cached = Some((a_hi, j_hi));
        let d = jet_diff(&j_lo, &j_hi);
        if n > 0 {
            acc.psi[c].add_scaled(&d, n as f64);
        }
        if pop {
            acc.gamma[c].add_scaled(&d, 1.0);
        }
    });
}

/// `Ψ_c`, `Γ_c` and their derivatives for `kernel`.
pub fn kernel_sums(s: &SufficientStats, kernel: &DecayKernel) -> KernelSums {
    let partials: Vec<KernelSums> = s
        .user_segments
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut acc = KernelSums::default();
            for seg in chunk {
                segment_jets(s, kernel, seg, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = KernelSums::default();
    for p in &partials {
        total.add(p);
    }
    total
}

/// Values of `Ψ_c` and `Γ_c` only.
pub fn kernel_values(s: &SufficientStats, kernel: &DecayKernel) -> ([f64; REGIMES], [f64; REGIMES]) {
    let partials: Vec<([f64; REGIMES], [f64; REGIMES])> = s
        .user_segments
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut psi = [0.0; REGIMES];
            let mut gamma = [0.0; REGIMES];
            for seg in chunk {
                let c = seg.regime.index();
                let mut cached: Option<(f64, f64)> = None;
                for_each_piece(s, seg, |n, pop, a_lo, a_hi| {
                    if n == 0 && !pop {
                        return;
                    }
                    let f_lo = match cached {
                        Some((a, f)) if a == a_lo => f,
                        _ => kernel.tail(a_lo),
                    };
                    let f_hi = kernel.tail(a_hi);
                    cached = Some((a_hi, f_hi));
                    let d = f_lo - f_hi;
                    psi[c] += n as f64 * d;
                    if pop {
                        gamma[c] += d;
                    }
                });
            }
            (psi, gamma)
        })
        .collect();
    let mut psi = [0.0; REGIMES];
    let mut gamma = [0.0; REGIMES];
    for (p, g) in &partials {
        for c in 0..REGIMES {
            psi[c] += p[c];
            gamma[c] += g[c];
        }
    }
    (psi, gamma)
}

/// Per-regime sums over contributions of `1/x`, `p/x`, `1/x²`, `p/x²`,
/// `p²/x²` with `x = ψ_c + γ_c p`, plus the log terms.
#[derive(Clone, Copy, Debug, Default)]
struct EventSums {
    log_x: f64,
    log_k: TailJet,
    s_psi: [f64; REGIMES],
    s_gamma: [f64; REGIMES],
    s_psi_psi: [f64; REGIMES],
    s_psi_gamma: [f64; REGIMES],
    s_gamma_gamma: [f64; REGIMES],
}

impl EventSums {
    fn add(&mut self, o: &EventSums) {
        self.log_x += o.log_x;
        self.log_k.add_scaled(&o.log_k, 1.0);
        for c in 0..REGIMES {
            self.s_psi[c] += o.s_psi[c];
            self.s_gamma[c] += o.s_gamma[c];
            self.s_psi_psi[c] += o.s_psi_psi[c];
            self.s_psi_gamma[c] += o.s_psi_gamma[c];
            self.s_gamma_gamma[c] += o.s_gamma_gamma[c];
        }
    }
}

fn event_rate(theta: &[f64; N_CONTRIB], e: &EventTerm) -> Result<f64> {
    let c = e.regime.index();
    let x = theta[c] + theta[4 + c] * e.popularity;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("contribution intensity {x} in regime {c} at age {}", e.age)))
    }
}

fn event_sums(theta: &[f64; N_CONTRIB], kernel: &DecayKernel, s: &SufficientStats, jets: bool) -> Result<EventSums> {
    let partials: Vec<Result<EventSums>> = s
        .event_terms
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut acc = EventSums::default();
            for e in chunk {
                let c = e.regime.index();
                let x = event_rate(theta, e)?;
                acc.log_x += x.ln();
                if jets {
                    acc.log_k.add_scaled(&kernel.log_decay_jet(e.age), 1.0);
                    let inv = 1.0 / x;
                    let p = e.popularity;
                    acc.s_psi[c] += inv;
                    acc.s_gamma[c] += p * inv;
                    acc.s_psi_psi[c] += inv * inv;
                    acc.s_psi_gamma[c] += p * inv * inv;
                    acc.s_gamma_gamma[c] += p * p * inv * inv;
                } else {
                    acc.log_k.value += kernel.log_decay(e.age);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = EventSums::default();
    for p in partials {
        total.add(&p?);
    }
    Ok(total)
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Contribution part of the log-likelihood.
pub fn contribution_loglik(theta: &[f64; N_CONTRIB], family: KernelFamily, s: &SufficientStats) -> Result<f64> {
    let kernel = family.kernel(theta[KAPPA], theta[DELTA]);
    let ev = event_sums(theta, &kernel, s, false)?;
    let (psi, gamma) = kernel_values(s, &kernel);
    let comp: f64 = (0..REGIMES).map(|c| theta[c] * psi[c] + theta[4 + c] * gamma[c]).sum();
    check_finite("contribution log-likelihood", ev.log_x + ev.log_k.value - comp)
}

/// As [`contribution_derivatives`] with the kernel sums supplied, so that
/// repeated evaluations at fixed `(κ, δ)` touch only contribution records.
pub fn contribution_derivatives_with_sums(
    theta: &[f64; N_CONTRIB],
    family: KernelFamily,
    sums: &KernelSums,
    s: &SufficientStats,
) -> Result<ContribDerivatives> {
    contribution_from_sums(theta, family, sums, s)
}

/// Contribution log-likelihood with gradient and Hessian in the 10-vector.
pub fn contribution_derivatives(
    theta: &[f64; N_CONTRIB],
    family: KernelFamily,
    s: &SufficientStats,
) -> Result<ContribDerivatives> {
    let kernel = family.kernel(theta[KAPPA], theta[DELTA]);
    let sums = kernel_sums(s, &kernel);
    contribution_from_sums(theta, family, &sums, s)
}

fn contribution_from_sums(
    theta: &[f64; N_CONTRIB],
    family: KernelFamily,
    sums: &KernelSums,
    s: &SufficientStats,
) -> Result<ContribDerivatives> {
    let kernel = family.kernel(theta[KAPPA], theta[DELTA]);
    let ev = event_sums(theta, &kernel, s, true)?;
    let mut g = ContribVector::zeros();
    let mut h = ContribMatrix::zeros();
    let mut comp = TailJet::default();
    for c in 0..REGIMES {
        let (ps, gs) = (&sums.psi[c], &sums.gamma[c]);
        let (psi_c, gamma_c) = (theta[c], theta[4 + c]);
        comp.add_scaled(ps, psi_c);
        comp.add_scaled(gs, gamma_c);

        g[c] = ev.s_psi[c] - ps.value;
        g[4 + c] = ev.s_gamma[c] - gs.value;

        h[(c, c)] = -ev.s_psi_psi[c];
        h[(c, 4 + c)] = -ev.s_psi_gamma[c];
        h[(4 + c, 4 + c)] = -ev.s_gamma_gamma[c];
        h[(c, KAPPA)] = -ps.d_kappa;
        h[(c, DELTA)] = -ps.d_delta;
        h[(4 + c, KAPPA)] = -gs.d_kappa;
        h[(4 + c, DELTA)] = -gs.d_delta;
    }
    g[KAPPA] = ev.log_k.d_kappa - comp.d_kappa;
    g[DELTA] = ev.log_k.d_delta - comp.d_delta;
    h[(KAPPA, KAPPA)] = ev.log_k.d_kappa_kappa - comp.d_kappa_kappa;
    h[(KAPPA, DELTA)] = ev.log_k.d_kappa_delta - comp.d_kappa_delta;
    h[(DELTA, DELTA)] = ev.log_k.d_delta_delta - comp.d_delta_delta;
    if family == KernelFamily::Exponential {
        // κ is not a parameter of this kernel; keep the block decoupled.
        g[KAPPA] = 0.0;
        for j in 0..N_CONTRIB {
            h[(j, KAPPA)] = 0.0;
        }
        h[(KAPPA, KAPPA)] = 0.0;
    }
    for i in 0..N_CONTRIB {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    let loglik = check_finite("contribution log-likelihood", ev.log_x + ev.log_k.value - comp.value)?;
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contribution derivatives".into()));
    }
    Ok(ContribDerivatives { loglik, grad: g, hess: h })
}

/// Item-flow part `ℓ_flow(φ, μ, σ)`.
/// Terms with a zero count are dropped, so zero rates are admissible where
/// they are the maximizer.
pub fn flow_loglik(p: &Params, s: &SufficientStats) -> f64 {
    let c = &s.counts;
    let xlogy = |n: usize, rate: f64| if n == 0 { 0.0 } else { n as f64 * rate.ln() };
    xlogy(c.starts, p.phi) - p.phi * s.horizon
        + xlogy(c.ends, p.mu)
        + xlogy(c.registrations - s.zero_rate_registrations, p.sigma)
        + s.log_item_count_sum
        - (p.mu + p.sigma) * s.item_exposure
}

pub fn log_likelihood(p: &Params, s: &SufficientStats) -> Result<f64> {
    p.validate()?;
    let contrib = contribution_loglik(&contribution_vector(p), KernelFamily::PowerLaw, s)?;
    check_finite("log-likelihood", flow_loglik(p, s) + contrib)
}

pub fn derivatives(p: &Params, s: &SufficientStats) -> Result<Derivatives> {
    p.validate()?;
    let cd = contribution_derivatives(&contribution_vector(p), KernelFamily::PowerLaw, s)?;
    let c = &s.counts;
    let a = c.starts as f64;
    let b = c.ends as f64;
    let d = (c.registrations - s.zero_rate_registrations) as f64;
    let mut grad = Vector13::zeros();
    let mut hess = Matrix13::zeros();
    grad[0] = a / p.phi - s.horizon;
    grad[1] = b / p.mu - s.item_exposure;
    grad[2] = d / p.sigma - s.item_exposure;
    hess[(0, 0)] = -a / (p.phi * p.phi);
    hess[(1, 1)] = -b / (p.mu * p.mu);
    hess[(2, 2)] = -d / (p.sigma * p.sigma);
    for i in 0..N_CONTRIB {
        grad[3 + i] = cd.grad[i];
        for j in 0..N_CONTRIB {
            hess[(3 + i, 3 + j)] = cd.hess[(i, j)];
        }
    }
    let loglik = check_finite("log-likelihood", flow_loglik(p, s) + cd.loglik)?;
    Ok(Derivatives { loglik, grad, hess })
}

pub fn gradient(p: &Params, s: &SufficientStats) -> Result<Vector13> {
    Ok(derivatives(p, s)?.grad)
}

pub fn hessian(p: &Params, s: &SufficientStats) -> Result<Matrix13> {
    Ok(derivatives(p, s)?.hess)
}

/// Closed-form maximizers of the item-flow part. A component is `None` when
/// its denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimates {
    pub phi: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
}

impl RateEstimates {
    pub fn require(&self) -> Result<(f64, f64, f64)> {
        match (self.phi, self.mu, self.sigma) {
            (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
            _ => Err(Error::DegenerateData(format!("item-flow rates not identified: {self:?}"))),
        }
    }
}

pub fn closed_form_rates(s: &SufficientStats) -> RateEstimates {
    let c = &s.counts;
    let ratio = |num: usize, den: f64| (den > 0.0).then(|| num as f64 / den);
    RateEstimates {
        phi: ratio(c.starts, s.horizon),
        mu: ratio(c.ends, s.item_exposure),
        sigma: ratio(c.registrations - s.zero_rate_registrations, s.item_exposure),
    }
}
