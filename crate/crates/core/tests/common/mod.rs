//! Independent reference implementations used as test oracles. Nothing here
//! reuses the library's aggregation or recursion; each quantity is computed
//! from its per-pair definition.

#![allow(dead_code)]

use crowdpulse_core::event::{EventKind, EventLog, ItemId, PlatformState, UserId};
use crowdpulse_core::{pair_intensity, PairSegment, Params, SimConfig};

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` on `[a, b]`.
pub fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const XK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    const WG: [f64; 4] =
        [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];
    fn gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WK[7] * fc;
        let mut g = WG[3] * fc;
        for j in 0..7 {
            let fx = f(c - h * XK[j]) + f(c + h * XK[j]);
            k += WK[j] * fx;
            if j % 2 == 1 {
                g += WG[j / 2] * fx;
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (k, err) = gk(f, a, b);
        if err <= tol.max(1e-15 * k.abs()) || depth == 0 {
            return k;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    rec(f, a, b, tol, 60)
}

/// Central difference with one Richardson extrapolation step.
pub fn derivative(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// `∫_lo^hi (v − reg + κ)^-(1+δ) dv` via `powf`.
pub fn power_kernel_integral(kappa: f64, delta: f64, reg: f64, lo: f64, hi: f64) -> f64 {
    ((lo - reg + kappa).powf(-delta) - (hi - reg + kappa).powf(-delta)) / delta
}

/// One user-item pair over an interval between consecutive events, with the
/// regime and popularity in effect.
#[derive(Clone, Copy, Debug)]
pub struct PairPiece {
    pub user: UserId,
    pub item: ItemId,
    pub lo: f64,
    pub hi: f64,
    pub regime: usize,
    pub popularity: f64,
    pub registered: f64,
}

/// Splits every at-risk pair's window at every event of the log, up to the
/// horizon. `visit` also receives the state in effect on each interval.
pub fn walk_intervals(log: &EventLog, mut visit: impl FnMut(f64, f64, &PlatformState)) {
    let mut state = PlatformState::new();
    let mut prev = 0.0;
    for e in log.events() {
        if e.time > prev {
            visit(prev, e.time, &state);
        }
        state.apply(e).unwrap();
        prev = e.time;
    }
    if log.horizon() > prev {
        visit(prev, log.horizon(), &state);
    }
}

pub fn pair_pieces(log: &EventLog) -> Vec<PairPiece> {
    let mut out = Vec::new();
    walk_intervals(log, |lo, hi, state| {
        let mut users: Vec<_> = state.users().map(|(u, r)| (u, r.registered, r.regime().index())).collect();
        users.sort_by_key(|u| u.0);
        for (user, registered, regime) in users {
            for (item, _) in state.active_items() {
                out.push(PairPiece {
                    user,
                    item,
                    lo,
                    hi,
                    regime,
                    popularity: state.relative_popularity(item).unwrap(),
                    registered,
                });
            }
        }
    });
    out
}

pub fn piece_mass(p: &Params, x: &PairPiece) -> f64 {
    (p.psi[x.regime] + p.gamma[x.regime] * x.popularity)
        * power_kernel_integral(p.kappa, p.delta, x.registered, x.lo, x.hi)
}

/// `Λ(t_r) = Σ_u Σ_i Λ_ui(t_r)` at every contribution time, summed pair by
/// pair over every inter-event interval.
pub fn direct_compensator_at_contributions(p: &Params, log: &EventLog) -> Vec<f64> {
    let pieces = pair_pieces(log);
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut next = 0;
    for e in log.events() {
        while next < pieces.len() && pieces[next].hi <= e.time {
            acc += piece_mass(p, &pieces[next]);
            next += 1;
        }
        if matches!(e.kind, EventKind::Contribution { .. }) {
            out.push(acc);
        }
    }
    out
}

/// The log-likelihood evaluated term by term from its definition: the log of
/// every event's rate just before it occurs, minus the integrated rates of
/// all four streams, each pair integrated separately.
pub fn direct_loglik(p: &Params, log: &EventLog) -> f64 {
    let mut ll = 0.0;
    let mut state = PlatformState::new();
    for e in log.events() {
        let n = state.n_active() as f64;
        ll += match e.kind {
            EventKind::ItemStart(_) => p.phi.ln(),
            EventKind::ItemEnd(_) => (p.mu * n).ln(),
            // A registration with no active item has rate zero; its log term
            // is left out, matching the library convention.
            EventKind::UserRegistration(_) if n == 0.0 => 0.0,
            EventKind::UserRegistration(_) => (p.sigma * n).ln(),
            EventKind::Contribution { user, item } => pair_intensity(p, &state, user, item, e.time).unwrap().ln(),
        };
        state.apply(e).unwrap();
    }
    let mut flow = 0.0;
    walk_intervals(log, |lo, hi, state| {
        flow += (p.phi + (p.mu + p.sigma) * state.n_active() as f64) * (hi - lo);
    });
    let pairs: f64 = pair_pieces(log).iter().map(|x| piece_mass(p, x)).sum();
    ll - flow - pairs
}

/// A segment, the quadrature of the intensity over it, and its right end.
pub type Piece = (PairSegment, f64, f64);

/// Every at-risk pair of `log` with its segments split at every event. Each
/// segment carries the quadrature of the state-driven intensity over it and
/// its right end.
pub fn pair_histories(p: &Params, log: &EventLog) -> Vec<Vec<Piece>> {
    use std::collections::BTreeMap;
    let mut by_pair: BTreeMap<(u32, u32), Vec<Piece>> = BTreeMap::new();
    let mut state = PlatformState::new();
    let mut prev = 0.0;
    let mut visit = |lo: f64, hi: f64, state: &PlatformState| {
        for (user, rec) in state.users() {
            for (item, _) in state.active_items() {
                let seg = PairSegment {
                    lo,
                    hi,
                    regime: rec.regime(),
                    popularity: state.relative_popularity(item).unwrap(),
                    registered: rec.registered,
                };
                // Quadrature of the state-driven intensity over the interval.
                let f = |t: f64| pair_intensity(p, state, user, item, t).unwrap();
                let q = quad(&f, lo, hi, 1e-14);
                by_pair.entry((user.0, item.0)).or_default().push((seg, q, hi));
            }
        }
    };
    for e in log.events() {
        if e.time > prev {
            visit(prev, e.time, &state);
        }
        state.apply(e).unwrap();
        prev = e.time;
    }
    visit(prev, log.horizon(), &state);
    by_pair.into_values().collect()
}

/// A simulated log of `horizon` days.
pub fn simulated_log(p: &Params, horizon: f64, seed: u64) -> EventLog {
    crowdpulse_core::run(p, &SimConfig::new(horizon, seed)).unwrap().log
}

/// Parameters with every rate scaled by a deterministic factor in
/// `[1 − spread, 1 + spread]`.
pub fn perturbed(p: &Params, seed: u64, spread: f64) -> Params {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = p.to_array().iter().map(|x| x * (1.0 + spread * (2.0 * rng.random::<f64>() - 1.0))).collect();
    Params::from_slice(&v).unwrap()
}

/// A small log whose events are all within `max_events`, obtained by
/// truncating a simulation.
pub fn small_log(p: &Params, seed: u64, max_events: usize) -> EventLog {
    let mut cfg = SimConfig::new(40.0, seed);
    cfg.max_events = max_events;
    crowdpulse_core::run(p, &cfg).unwrap().log
}
