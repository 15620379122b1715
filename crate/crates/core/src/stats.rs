//! Sufficient statistics for likelihood evaluation.
//!
//! One replay of the log produces everything the likelihood needs, so that
//! re-evaluating at new parameters never touches the raw events again.
//!
//! The compensator of all pairs is stored per user and per regime: because a
//! registered user is at risk with every active item, summing the pair
//! compensators over items gives
//!
//! ```text
//! Σ_i Λ_ui = ∫ (ψ_c · |I(v)| + γ_c · Σ_i pop_i(v)) K(v − t_u0) dv
//! ```
//!
//! and `Σ_i pop_i(v)` is 1 whenever some active item has a backer and 0
//! otherwise. Both `|I(v)|` and that indicator are piecewise constant and
//! global, so a user segment only needs an index range into the shared
//! [`Environment`] timeline.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::event::{EventCounts, EventKind, EventLog, ItemId, PlatformState, Regime, Transition, REGIMES};

/// Right-continuous record of the global quantities that change the at-risk
/// mass: the number of active items and whether popularity is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Change times; entry 0 is the empty platform before any event.
    pub times: Vec<f64>,
    pub n_items: Vec<u32>,
    pub popularity_on: Vec<bool>,
}

impl Environment {
    fn new() -> Self {
        Environment { times: vec![f64::NEG_INFINITY], n_items: vec![0], popularity_on: vec![false] }
    }

    fn push(&mut self, t: f64, n_items: usize, popularity_on: bool) {
        let last = self.times.len() - 1;
        if self.n_items[last] == n_items as u32 && self.popularity_on[last] == popularity_on {
            return;
        }
        self.times.push(t);
        self.n_items.push(n_items as u32);
        self.popularity_on.push(popularity_on);
    }

    /// Index of the state in effect at `t` (changes at `t` included).
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x <= t) - 1
    }

    /// `∫_0^T |I(v)| dv`, exact for the piecewise-constant count.
    pub fn item_exposure(&self, horizon: f64) -> f64 {
        let mut total = 0.0;
        for k in 1..self.times.len() {
            if self.times[k] >= horizon {
                break;
            }
            let next = self.times.get(k + 1).copied().unwrap_or(horizon).min(horizon);
            total += self.n_items[k] as f64 * (next - self.times[k]);
        }
        total
    }
}

/// One contribution's log-intensity inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTerm {
    /// Dense user index (registration order).
    pub user: u32,
    /// Regime in effect just before the contribution.
    pub regime: Regime,
    /// Relative popularity of the target item just before the contribution.
    pub popularity: f64,
    /// Time since the user's registration.
    pub age: f64,
}

/// A maximal interval `[lo, hi)` on which a user stays in one regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSegment {
    pub user: u32,
    pub registered: f64,
    pub lo: f64,
    pub hi: f64,
    pub regime: Regime,
    /// Environment state in effect at `lo`.
    pub env_lo: u32,
    /// One past the last environment change strictly before `hi`.
    pub env_hi: u32,
}

/// A user-item risk window piece on which the regime is constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskSegment {
    pub user: u32,
    pub item: ItemId,
    pub lo: f64,
    pub hi: f64,
    pub regime: Regime,
    pub registered: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub counts: EventCounts,
    pub horizon: f64,
    /// `∫_0^T |I(v)| dv` in item-days.
    pub item_exposure: f64,
    /// `Σ ln |I(s_r⁻)|` over item ends and registrations.
    pub log_item_count_sum: f64,
    /// Registrations observed while no item was active (rate `σ·0`); their
    /// constant log terms are left out of the likelihood.
    pub zero_rate_registrations: usize,
    pub contributions_by_regime: [usize; REGIMES],
    pub repeat_pair_contributions: usize,
    pub event_terms: Vec<EventTerm>,
    pub user_segments: Vec<UserSegment>,
    pub environment: Environment,
    /// `(item, start, end-or-horizon)` for every item that started.
    pub item_windows: Vec<(ItemId, f64, f64)>,
    pub registrations: Vec<f64>,
}

impl SufficientStats {
    pub fn build(log: &EventLog) -> Result<SufficientStats> {
        let horizon = log.horizon();
        let mut state = PlatformState::new();
        let mut env = Environment::new();
        let mut log_item_count_sum = 0.0;
        let mut zero_rate_registrations = 0;
        let mut contributions_by_regime = [0usize; REGIMES];
        let mut repeat_pair_contributions = 0;
        let mut event_terms = Vec::new();
        let mut item_windows: Vec<(ItemId, f64, f64)> = Vec::new();
        let mut item_slot = std::collections::HashMap::new();
        let mut user_index = std::collections::HashMap::new();
        let mut registrations: Vec<f64> = Vec::new();
        // Regime change times t_u^(1..3) per dense user.
        let mut changes: Vec<Vec<f64>> = Vec::new();

        for e in log.events() {
            let n_before = state.n_active();
            let transition = state.apply(e)?;
            let t = e.time;
            match (e.kind, transition) {
                (EventKind::ItemStart(item), _) => {
                    item_slot.insert(item, item_windows.len());
                    item_windows.push((item, t, horizon));
                }
                (EventKind::ItemEnd(item), _) => {
                    log_item_count_sum += (n_before as f64).ln();
                    item_windows[item_slot[&item]].2 = t;
                }
                (EventKind::UserRegistration(user), _) => {
                    if n_before == 0 {
                        zero_rate_registrations += 1;
                    } else {
                        log_item_count_sum += (n_before as f64).ln();
                    }
                    user_index.insert(user, registrations.len() as u32);
                    registrations.push(t);
                    changes.push(Vec::new());
                }
                (
                    EventKind::Contribution { user, .. },
                    Transition::Contributed { regime_before, popularity_before, first_for_pair },
                ) => {
                    let u = user_index[&user];
                    contributions_by_regime[regime_before.index()] += 1;
                    if !first_for_pair {
                        repeat_pair_contributions += 1;
                    }
                    if first_for_pair && regime_before.index() < REGIMES - 1 {
                        changes[u as usize].push(t);
                    }
                    event_terms.push(EventTerm {
                        user: u,
                        regime: regime_before,
                        popularity: popularity_before,
                        age: t - registrations[u as usize],
                    });
                }
                _ => unreachable!("apply returns the transition matching the event kind"),
            }
            env.push(t, state.n_active(), state.total_backers() > 0);
        }

        let mut user_segments = Vec::new();
        for (u, (&t0, ch)) in registrations.iter().zip(&changes).enumerate() {
            let mut bounds = Vec::with_capacity(ch.len() + 2);
            bounds.push(t0);
            bounds.extend_from_slice(ch);
            bounds.push(horizon);
            for (c, w) in bounds.windows(2).enumerate() {
                let (lo, hi) = (w[0], w[1]);
                if hi <= lo {
                    continue;
                }
                user_segments.push(UserSegment {
                    user: u as u32,
                    registered: t0,
                    lo,
                    hi,
                    regime: Regime::new(c),
                    env_lo: env.index_at(lo) as u32,
                    env_hi: env.times.partition_point(|&x| x < hi) as u32,
                });
            }
        }

        Ok(SufficientStats {
            counts: log.counts(),
            horizon,
            item_exposure: env.item_exposure(horizon),
            log_item_count_sum,
            zero_rate_registrations,
            contributions_by_regime,
            repeat_pair_contributions,
            event_terms,
            user_segments,
            environment: env,
            item_windows,
            registrations,
        })
    }

    pub fn n_users(&self) -> usize {
        self.registrations.len()
    }

    /// Expands the aggregated user segments into per-pair risk pieces. Costs
    /// O(pairs); intended for diagnostics and consistency checks.
    pub fn risk_segments(&self) -> impl Iterator<Item = RiskSegment> + '_ {
        self.user_segments.iter().flat_map(move |seg| {
            self.item_windows.iter().filter_map(move |&(item, start, end)| {
                let lo = seg.lo.max(start);
                let hi = seg.hi.min(end);
                (hi > lo).then_some(RiskSegment {
                    user: seg.user,
                    item,
                    lo,
                    hi,
                    regime: seg.regime,
                    registered: seg.registered,
                })
            })
        })
    }

    /// Keeps only the contribution-model records of users accepted by
    /// `keep`; item-flow fields are carried over unchanged.
    pub fn restrict_to_users(&self, keep: impl Fn(u32) -> bool) -> SufficientStats {
        let mut out = self.clone();
        out.event_terms.retain(|e| keep(e.user));
        out.user_segments.retain(|s| keep(s.user));
        out
    }
}
