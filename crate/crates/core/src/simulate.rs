//! Full-system simulation by competing risks.
//!
//! Item starts, item ends and registrations are Poisson with rates that are
//! constant between events. Contribution waiting times are drawn by exact
//! inversion of the decayed compensator, and may be infinite because the
//! power-law kernel has finite total mass.
//!
//! Two engines produce the same law:
//!
//! * [`Engine::Reference`] redraws every candidate at every step, one per
//!   at-risk user-item pair. Cost per event is O(users × items).
//! * [`Engine::Fast`] keeps one pending contribution time per user for the
//!   aggregate rate `(ψ_c |I| + γ_c 1[some backer]) K(t − t_u0)` and chooses
//!   the item at firing time with probability proportional to
//!   `ψ_c + γ_c pop_i`. A user's pending time is redrawn only when its
//!   multiplier changes, which is valid because a fresh draw conditioned on
//!   survival to the current time has the same law as the old one.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventCounts, EventKind, EventLog, ItemId, PlatformState, UserId};
use crate::intensity::DecayKernel;
use crate::params::Params;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    #[default]
    Fast,
    Reference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub seed: u64,
    pub max_events: usize,
    /// History to continue from; simulation starts at its last event.
    pub initial: Option<EventLog>,
    pub replications: usize,
    pub engine: Engine,
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimConfig { horizon, seed, max_events: 50_000_000, initial: None, replications: 1, engine: Engine::Fast }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParams(format!("horizon {} must be positive", self.horizon)));
        }
        if self.max_events == 0 {
            return Err(Error::InvalidParams("max_events must be positive".into()));
        }
        if let Some(init) = &self.initial {
            if init.events().last().is_some_and(|e| e.time > self.horizon) {
                return Err(Error::InvalidParams("initial history extends past the horizon".into()));
            }
        }
        Ok(())
    }
}

/// Cumulative items started, users registered and contributions by a time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cumulative {
    pub items: u64,
    pub users: u64,
    pub contributions: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub replication: usize,
    pub log: EventLog,
    /// Cumulative counts at days `0, 1, …, ⌊horizon⌋`.
    pub daily: Vec<Cumulative>,
    pub counts: EventCounts,
    /// The event cap stopped the run; `log` is the partial history and its
    /// horizon is the last event time.
    pub cap_exceeded: bool,
}

/// Independent stream for replication `rep` of `seed`.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn uniform_open_closed(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

fn exponential(rng: &mut impl Rng, rate: f64) -> f64 {
    if rate > 0.0 {
        let e: f64 = Exp1.sample(rng);
        e / rate
    } else {
        f64::INFINITY
    }
}

/// Waiting time from `s` until the pair's next contribution for the uniform
/// draw `q`, or `None` when the remaining mass is exhausted first.
pub fn sample_contribution_waiting(
    p: &Params,
    state: &PlatformState,
    user: UserId,
    item: ItemId,
    s: f64,
    q: f64,
) -> Result<Option<f64>> {
    let rec = state.user(user).ok_or(Error::UnknownUser(user))?;
    let popularity = state
        .relative_popularity(item)
        .map_err(|_| Error::Domain(format!("{item} is not active; pair is not at risk")))?;
    if s < rec.registered {
        return Err(Error::Domain(format!("s={s} precedes registration of {user}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("q={q} outside (0, 1]")));
    }
    let c = rec.regime().index();
    let multiplier = p.psi[c] + p.gamma[c] * popularity;
    Ok(DecayKernel::power_law(p).invert_waiting(multiplier, s - rec.registered, q))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Event(Event),
    HorizonReached,
}

/// One literal competing-risks step from `state.now()`: a fresh candidate
/// for every Poisson stream and every at-risk pair, realizing the earliest.
pub fn step(p: &Params, state: &PlatformState, horizon: f64, rng: &mut impl Rng) -> Result<StepOutcome> {
    let now = state.now();
    let n_items = state.n_active() as f64;
    let mut best: Option<(f64, EventKind)> = None;
    let mut offer = |t: f64, kind: EventKind| {
        if t.is_finite() && best.is_none_or(|(b, _)| t < b) {
            best = Some((t, kind));
        }
    };
    offer(now + exponential(rng, p.phi), EventKind::ItemStart(ItemId(state.n_items_seen() as u32)));
    let end_at = now + exponential(rng, p.mu * n_items);
    if end_at.is_finite() {
        let k = rng.random_range(0..state.n_active());
        offer(end_at, EventKind::ItemEnd(state.active_item_at(k).expect("index in range")));
    }
    offer(now + exponential(rng, p.sigma * n_items), EventKind::UserRegistration(UserId(state.n_users() as u32)));
    let mut users: Vec<UserId> = state.users().map(|(u, _)| u).collect();
    users.sort_unstable();
    let items: Vec<ItemId> = state.active_items().map(|(i, _)| i).collect();
    for &u in &users {
        for &i in &items {
            let q = uniform_open_closed(rng);
            if let Some(x) = sample_contribution_waiting(p, state, u, i, now, q)? {
                offer(now + x, EventKind::Contribution { user: u, item: i });
            }
        }
    }
    Ok(match best {
        Some((t, kind)) if t <= horizon => StepOutcome::Event(Event::new(t, kind)),
        _ => StepOutcome::HorizonReached,
    })
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    time: f64,
    user: u32,
    version: u32,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    // Reversed so the max-heap pops the earliest time.
    fn cmp(&self, o: &Self) -> Ordering {
        o.time.total_cmp(&self.time).then_with(|| o.user.cmp(&self.user))
    }
}

struct FastUser {
    id: UserId,
    registered: f64,
    regime: usize,
    version: u32,
}

struct FastEngine<'a> {
    p: &'a Params,
    kernel: DecayKernel,
    users: Vec<FastUser>,
    heap: BinaryHeap<Pending>,
}

impl FastEngine<'_> {
    fn multiplier(&self, regime: usize, state: &PlatformState) -> f64 {
        let pop = if state.total_backers() > 0 { 1.0 } else { 0.0 };
        self.p.psi[regime] * state.n_active() as f64 + self.p.gamma[regime] * pop
    }

    fn draw(&self, u: usize, now: f64, state: &PlatformState, rng: &mut impl Rng) -> Option<f64> {
        let rec = &self.users[u];
        let w = self.multiplier(rec.regime, state);
        let q = uniform_open_closed(rng);
        self.kernel.invert_waiting(w, now - rec.registered, q).map(|x| now + x)
    }

    fn redraw_one(&mut self, u: usize, now: f64, state: &PlatformState, rng: &mut impl Rng) {
        self.users[u].version += 1;
        if let Some(time) = self.draw(u, now, state, rng) {
            self.heap.push(Pending { time, user: u as u32, version: self.users[u].version });
        }
    }

    fn redraw_all(&mut self, now: f64, state: &PlatformState, rng: &mut impl Rng) {
        let mut entries = Vec::with_capacity(self.users.len());
        for u in 0..self.users.len() {
            self.users[u].version += 1;
            if let Some(time) = self.draw(u, now, state, rng) {
                entries.push(Pending { time, user: u as u32, version: self.users[u].version });
            }
        }
        self.heap = BinaryHeap::from(entries);
    }

    fn peek(&mut self) -> Option<Pending> {
        while let Some(top) = self.heap.peek() {
            if top.version == self.users[top.user as usize].version {
                return Some(*top);
            }
            self.heap.pop();
        }
        None
    }

    /// Item for a contribution by a user in `regime`, drawn proportionally to
    /// `ψ_c + γ_c pop_i`.
    fn pick_item(&self, regime: usize, state: &PlatformState, rng: &mut impl Rng) -> ItemId {
        let (psi, gamma) = (self.p.psi[regime], self.p.gamma[regime]);
        let tb = state.total_backers();
        let weight = |backers: u32| psi + if tb > 0 { gamma * backers as f64 / tb as f64 } else { 0.0 };
        let total: f64 = state.active_items().map(|(_, it)| weight(it.backers)).sum();
        let mut target = rng.random::<f64>() * total;
        let mut last = None;
        for (id, it) in state.active_items() {
            target -= weight(it.backers);
            last = Some(id);
            if target < 0.0 {
                return id;
            }
        }
        last.expect("contributions only fire with active items")
    }
}

fn simulate_one(p: &Params, cfg: &SimConfig, rep: usize) -> Result<SimOutput> {
    let mut rng = replication_rng(cfg.seed, rep);
    let mut state = PlatformState::new();
    let mut events: Vec<Event> = Vec::new();
    if let Some(init) = &cfg.initial {
        for e in init.events() {
            state.apply(e)?;
            events.push(*e);
        }
    }
    let mut cap_exceeded = false;
    match cfg.engine {
        Engine::Reference => loop {
            if events.len() >= cfg.max_events {
                cap_exceeded = true;
                break;
            }
            match step(p, &state, cfg.horizon, &mut rng)? {
                StepOutcome::Event(e) => {
                    state.apply(&e)?;
                    events.push(e);
                }
                StepOutcome::HorizonReached => break,
            }
        },
        Engine::Fast => {
            let mut eng =
                FastEngine { p, kernel: DecayKernel::power_law(p), users: Vec::new(), heap: BinaryHeap::new() };
            let mut index_of = std::collections::HashMap::new();
            let mut initial_users: Vec<(UserId, f64, usize)> =
                state.users().map(|(id, r)| (id, r.registered, r.regime().index())).collect();
            initial_users.sort_by_key(|u| u.0);
            for (id, registered, regime) in initial_users {
                index_of.insert(id, eng.users.len());
                eng.users.push(FastUser { id, registered, regime, version: 0 });
            }
            let mut now = state.now();
            eng.redraw_all(now, &state, &mut rng);
            loop {
                if events.len() >= cfg.max_events {
                    cap_exceeded = true;
                    break;
                }
                let n = state.n_active() as f64;
                let exo_rate = p.phi + (p.mu + p.sigma) * n;
                let t_exo = now + exponential(&mut rng, exo_rate);
                let next_user = eng.peek();
                let t_user = next_user.map_or(f64::INFINITY, |x| x.time);
                let t = t_exo.min(t_user);
                if !(t <= cfg.horizon) {
                    break;
                }
                let n_before = state.n_active();
                let pop_before = state.total_backers() > 0;
                let kind = if t_user < t_exo {
                    let u = next_user.expect("finite time implies an entry").user as usize;
                    let item = eng.pick_item(eng.users[u].regime, &state, &mut rng);
                    EventKind::Contribution { user: eng.users[u].id, item }
                } else {
                    let x = rng.random::<f64>() * exo_rate;
                    if x < p.phi {
                        EventKind::ItemStart(ItemId(state.n_items_seen() as u32))
                    } else if x < p.phi + p.mu * n {
                        let k = rng.random_range(0..state.n_active());
                        EventKind::ItemEnd(state.active_item_at(k).expect("index in range"))
                    } else {
                        EventKind::UserRegistration(UserId(state.n_users() as u32))
                    }
                };
                let e = Event::new(t, kind);
                state.apply(&e)?;
                events.push(e);
                now = t;
                let env_changed = state.n_active() != n_before || (state.total_backers() > 0) != pop_before;
                match kind {
                    EventKind::UserRegistration(id) => {
                        index_of.insert(id, eng.users.len());
                        eng.users.push(FastUser { id, registered: t, regime: 0, version: 0 });
                        if !env_changed {
                            eng.redraw_one(eng.users.len() - 1, now, &state, &mut rng);
                        }
                    }
                    EventKind::Contribution { user, .. } => {
                        let u = index_of[&user];
                        eng.users[u].regime = state.contribution_count(user)?.index();
                        if !env_changed {
                            eng.redraw_one(u, now, &state, &mut rng);
                        }
                    }
                    _ => {}
                }
                if env_changed {
                    eng.redraw_all(now, &state, &mut rng);
                }
            }
        }
    }
    let horizon = if cap_exceeded { events.last().map_or(0.0, |e| e.time) } else { cfg.horizon };
    let log = EventLog::new(events, Some(horizon))?;
    let days: Vec<f64> = (0..=cfg.horizon.floor() as usize).map(|d| d as f64).collect();
    Ok(SimOutput { replication: rep, daily: cumulative_at(&log, &days), counts: log.counts(), log, cap_exceeded })
}

/// Single replication (index 0).
pub fn run(p: &Params, cfg: &SimConfig) -> Result<SimOutput> {
    p.validate()?;
    cfg.validate()?;
    simulate_one(p, cfg, 0)
}

/// `cfg.replications` independent runs; replication `r` uses stream `r`.
pub fn replicate(p: &Params, cfg: &SimConfig) -> Result<Vec<SimOutput>> {
    p.validate()?;
    cfg.validate()?;
    (0..cfg.replications).into_par_iter().map(|r| simulate_one(p, cfg, r)).collect()
}

/// Cumulative counts at each of the sorted `times` (events at `t` included).
pub fn cumulative_at(log: &EventLog, times: &[f64]) -> Vec<Cumulative> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = Cumulative::default();
    let mut events = log.events().iter().peekable();
    for &t in times {
        while let Some(e) = events.next_if(|e| e.time <= t) {
            match e.kind {
                EventKind::ItemStart(_) => acc.items += 1,
                EventKind::UserRegistration(_) => acc.users += 1,
                EventKind::Contribution { .. } => acc.contributions += 1,
                EventKind::ItemEnd(_) => {}
            }
        }
        out.push(acc);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub day: usize,
    pub items: [f64; 3],
    pub users: [f64; 3],
    pub contributions: [f64; 3],
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise 5%, 50% and 95% quantiles of the daily cumulative series.
pub fn envelope(outputs: &[SimOutput]) -> Vec<EnvelopeRow> {
    let days = outputs.iter().map(|o| o.daily.len()).min().unwrap_or(0);
    let band = |get: &dyn Fn(&Cumulative) -> u64, d: usize| {
        let mut v: Vec<f64> = outputs.iter().map(|o| get(&o.daily[d]) as f64).collect();
        v.sort_by(f64::total_cmp);
        [quantile(&v, 0.05), quantile(&v, 0.5), quantile(&v, 0.95)]
    };
    (0..days)
        .map(|d| EnvelopeRow {
            day: d,
            items: band(&|c| c.items, d),
            users: band(&|c| c.users, d),
            contributions: band(&|c| c.contributions, d),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waiting_time_limits() {
        let p = Params::PLATFORM_B;
        let mut s = PlatformState::new();
        s.apply(&Event::new(0.0, EventKind::ItemStart(ItemId(0)))).unwrap();
        s.apply(&Event::new(0.5, EventKind::UserRegistration(UserId(0)))).unwrap();
        assert_eq!(sample_contribution_waiting(&p, &s, UserId(0), ItemId(0), 0.7, 1.0).unwrap(), Some(0.0));
        assert_eq!(sample_contribution_waiting(&p, &s, UserId(0), ItemId(0), 0.7, 1e-300).unwrap(), None);
        assert!(matches!(sample_contribution_waiting(&p, &s, UserId(0), ItemId(9), 0.7, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_platform_only_starts() {
        let p = Params::PLATFORM_A;
        let mut rng = replication_rng(1, 0);
        for _ in 0..50 {
            match step(&p, &PlatformState::new(), 1e9, &mut rng).unwrap() {
                StepOutcome::Event(e) => assert_eq!(e.kind, EventKind::ItemStart(ItemId(0))),
                StepOutcome::HorizonReached => panic!("infinite horizon"),
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SimConfig::new(60.0, 42);
        let a = run(&Params::PLATFORM_B, &cfg).unwrap();
        let b = run(&Params::PLATFORM_B, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert!(a.counts.contributions > 0);
        a.log.replay().unwrap();
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.05), 1.2);
    }
}
