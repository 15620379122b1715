//! Time-rescaling diagnostics for the contribution process.
//!
//! The overall compensator `Λ(t) = Σ_{u,i} Λ_ui(t)` is evaluated at every
//! contribution time by a forward recursion. Between consecutive updates a
//! registered user's summed pair intensity is `w_u K(t − t_u0)` with
//! `w_u = ψ_c |I| + γ_c 1[some backer]`, so each user carries its weight and
//! the kernel tail at its last update; an update adds `w_u (F_mark − F(now))`.
//! Updates happen at contributions and whenever `|I|` or the popularity
//! indicator changes, which keeps the cost at O(users) per such event.
//!
//! Pairs whose item has ended stop accruing mass at the end time; the mass
//! accrued before that stays in `Λ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventKind, EventLog, PlatformState, UserId};
use crate::intensity::DecayKernel;
use crate::params::Params;

const BLOCK: usize = 4096;

struct Tracked {
    registered: f64,
    weight: f64,
    f_mark: f64,
}

/// `Λ(t_r)` at every contribution time `t_r`.
pub fn rescale_times(p: &Params, log: &EventLog) -> Result<Vec<f64>> {
    p.validate()?;
    rescale_with_kernel(&p.psi, &p.gamma, &DecayKernel::power_law(p), log)
}

/// As [`rescale_times`] for arbitrary rates and kernel.
pub fn rescale_with_kernel(psi: &[f64; 4], gamma: &[f64; 4], kernel: &DecayKernel, log: &EventLog) -> Result<Vec<f64>> {
    let mut state = PlatformState::new();
    let mut users: Vec<Tracked> = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    let mut total = 0.0;
    let mut out = Vec::with_capacity(log.counts().contributions);
    let weight = |c: usize, state: &PlatformState| {
        let pop = if state.total_backers() > 0 { 1.0 } else { 0.0 };
        psi[c] * state.n_active() as f64 + gamma[c] * pop
    };

    for e in log.events() {
        let t = e.time;
        let is_contribution = matches!(e.kind, EventKind::Contribution { .. });
        let may_change_env = !matches!(e.kind, EventKind::UserRegistration(_));
        if may_change_env {
            total += flush(&mut users, kernel, t);
        }
        if is_contribution {
            if let Some(&prev) = out.last() {
                if !(total > prev) {
                    return Err(Error::NonIncreasing { index: out.len() });
                }
            }
            out.push(total);
        }
        let n_before = state.n_active();
        let pop_before = state.total_backers() > 0;
        state.apply(e)?;
        let env_changed = state.n_active() != n_before || (state.total_backers() > 0) != pop_before;
        match e.kind {
            EventKind::UserRegistration(u) => {
                index_of.insert(u, users.len());
                users.push(Tracked { registered: t, weight: weight(0, &state), f_mark: kernel.tail(0.0) });
            }
            EventKind::Contribution { user, .. } if !env_changed => {
                let k = index_of[&user];
                users[k].weight = weight(regime(&state, user)?, &state);
            }
            _ => {}
        }
        if env_changed {
            for (id, &k) in &index_of {
                users[k].weight = weight(regime(&state, *id)?, &state);
            }
        }
    }
    Ok(out)
}

fn regime(state: &PlatformState, user: UserId) -> Result<usize> {
    Ok(state.contribution_count(user)?.index())
}

/// Accrues every user's mass up to `t` and moves the marks to `t`.
fn flush(users: &mut [Tracked], kernel: &DecayKernel, t: f64) -> f64 {
    let partials: Vec<f64> = users
        .par_chunks_mut(BLOCK)
        .map(|chunk| {
            let mut acc = 0.0;
            for u in chunk {
                let f = kernel.tail(t - u.registered);
                if u.weight > 0.0 {
                    acc += u.weight * (u.f_mark - f);
                }
                u.f_mark = f;
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function series, accurate for small λ.
        let y = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2) * y).map(f64::exp).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS statistic of `sample` against `cdf`, with the asymptotic
/// p-value at `λ = √n D`.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    KsResult { statistic: d, p_value: kolmogorov_survival(nf.sqrt() * d), n }
}

/// Two-sample KS statistic with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    KsResult { statistic: d, p_value: kolmogorov_survival(en * d), n: x.len() + y.len() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityTests {
    /// `Δ_r = t*_r − t*_{r−1}` with `t*_0 = 0`.
    pub interarrivals: Vec<f64>,
    /// `p_r = exp(−Δ_r)`.
    pub p_values: Vec<f64>,
    pub ks_exponential: KsResult,
    /// `t*_r / t*_k` for `r < k`.
    pub conditional_times: Vec<f64>,
    pub lewis: KsResult,
    /// `max_r |t*_r/t*_k − r/k|`, the distance from the expected uniform
    /// order statistics.
    pub lewis_qq_max_deviation: f64,
}

pub fn uniformity_tests(t_star: &[f64]) -> Result<UniformityTests> {
    let k = t_star.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!("{k} rescaled times; need at least 2")));
    }
    let interarrivals: Vec<f64> = t_star.iter().scan(0.0, |prev, &t| Some(t - std::mem::replace(prev, t))).collect();
    let p_values = interarrivals.iter().map(|d| (-d).exp()).collect();
    let ks_exponential = ks_one_sample(&interarrivals, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() });
    let last = t_star[k - 1];
    let conditional_times: Vec<f64> = t_star[..k - 1].iter().map(|t| t / last).collect();
    let lewis = ks_one_sample(&conditional_times, |x| x.clamp(0.0, 1.0));
    let lewis_qq_max_deviation =
        conditional_times.iter().enumerate().map(|(i, &u)| (u - (i + 1) as f64 / k as f64).abs()).fold(0.0, f64::max);
    Ok(UniformityTests { interarrivals, p_values, ks_exponential, conditional_times, lewis, lewis_qq_max_deviation })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    /// `V_r = 1 − exp(−Δ_r)`.
    pub v: Vec<f64>,
    /// `(V_{r−1}, V_r)` for `r ≥ 2`.
    pub pairs: Vec<[f64; 2]>,
    pub lag1_correlation: f64,
    /// Set when either coordinate is constant to rounding; the correlation is
    /// then reported as 0.
    pub constant: bool,
}

pub fn autocorrelation_diagnostic(t_star: &[f64]) -> Result<Autocorrelation> {
    let k = t_star.len();
    if k < 3 {
        return Err(Error::InsufficientData(format!("{k} rescaled times; need at least 3")));
    }
    let v: Vec<f64> = t_star.iter().scan(0.0, |prev, &t| Some(-(-(t - std::mem::replace(prev, t))).exp_m1())).collect();
    let pairs: Vec<[f64; 2]> = v.windows(2).map(|w| [w[0], w[1]]).collect();
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for p in &pairs {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Spread at rounding level counts as constant.
    let flat = |get: fn(&[f64; 2]) -> f64| {
        let (lo, hi) = pairs.iter().map(get).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        hi - lo <= 1e-12 * hi.abs().max(lo.abs())
    };
    let constant = sxx == 0.0 || syy == 0.0 || flat(|p| p[0]) || flat(|p| p[1]);
    let lag1_correlation = if constant { 0.0 } else { sxy / (sxx * syy).sqrt() };
    Ok(Autocorrelation { v, pairs, lag1_correlation, constant })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub n_contributions: usize,
    pub transformed_times: Vec<f64>,
    pub uniformity: UniformityTests,
    pub autocorrelation: Option<Autocorrelation>,
}

pub fn goodness_of_fit(p: &Params, log: &EventLog) -> Result<GofReport> {
    let t_star = rescale_times(p, log)?;
    let uniformity = uniformity_tests(&t_star)?;
    let autocorrelation = autocorrelation_diagnostic(&t_star).ok();
    Ok(GofReport { n_contributions: t_star.len(), transformed_times: t_star, uniformity, autocorrelation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_of_ln2() {
        let t: Vec<f64> = (1..=4).map(|r| r as f64 * std::f64::consts::LN_2).collect();
        let u = uniformity_tests(&t).unwrap();
        assert!(u.p_values.iter().all(|p| (p - 0.5).abs() < 1e-15));
        let a = autocorrelation_diagnostic(&t).unwrap();
        assert!(a.constant && a.lag1_correlation == 0.0);
        assert!(a.v.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn lewis_on_exact_order_statistics() {
        let u = uniformity_tests(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(u.conditional_times, vec![0.25, 0.5, 0.75]);
        assert_eq!(u.lewis_qq_max_deviation, 0.0);
        // Sup distance between the empirical step function and the uniform CDF.
        assert!((u.lewis.statistic - 0.25).abs() < 1e-15);
    }

    #[test]
    fn alternating_gaps_anticorrelate() {
        let mut t = vec![];
        let mut acc = 0.0;
        for r in 0..200 {
            acc += if r % 2 == 0 { 0.1 } else { 2.0 };
            t.push(acc);
        }
        let a = autocorrelation_diagnostic(&t).unwrap();
        assert!(a.lag1_correlation < -0.99);
    }

    #[test]
    fn kolmogorov_series_agree_at_switch() {
        let lo = kolmogorov_survival(1.18 - 1e-12);
        let hi = kolmogorov_survival(1.18 + 1e-12);
        assert!((lo - hi).abs() < 1e-10);
        // Reference: P(K > 1.3581) ≈ 0.05, P(K > 1.6276) ≈ 0.01.
        assert!((kolmogorov_survival(1.358_099) - 0.05).abs() < 1e-5);
        assert!((kolmogorov_survival(1.627_624) - 0.01).abs() < 1e-5);
    }

    #[test]
    fn too_short_series() {
        assert!(matches!(uniformity_tests(&[1.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(autocorrelation_diagnostic(&[1.0, 2.0]), Err(Error::InsufficientData(_))));
    }
}
