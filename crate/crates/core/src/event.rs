//! Event vocabulary and the right-continuous platform state.
//!
//! The platform is described by four kinds of events: items start and end,
//! users register, and users contribute to active items. [`PlatformState`]
//! is the state just after the most recent applied event; quantities read
//! from it at time `t` are therefore the left limits needed by intensities
//! evaluated at the next event.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of contribution-count regimes (0, 1, 2, 3-or-more).
pub const REGIMES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "item#{}", self.0)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "user#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ItemStart(ItemId),
    ItemEnd(ItemId),
    UserRegistration(UserId),
    Contribution { user: UserId, item: ItemId },
}

impl EventKind {
    /// Canonical short name used by the event CSV format.
    pub fn tag(&self) -> &'static str {
        match self {
            EventKind::ItemStart(_) => "start",
            EventKind::ItemEnd(_) => "end",
            EventKind::UserRegistration(_) => "register",
            EventKind::Contribution { .. } => "contribute",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Days since platform launch.
    pub time: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn new(time: f64, kind: EventKind) -> Self {
        Event { time, kind }
    }
}

/// Per-kind event totals (`a`, `b`, `d`, `k`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub starts: usize,
    pub ends: usize,
    pub registrations: usize,
    pub contributions: usize,
}

impl EventCounts {
    pub fn total(&self) -> usize {
        self.starts + self.ends + self.registrations + self.contributions
    }
}

/// A strictly time-ordered platform history observed on `[0, horizon]`.
/// Construction replays every event, so a log always satisfies causality.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
    horizon: f64,
    item_labels: Vec<String>,
    user_labels: Vec<String>,
}

impl EventLog {
    /// Builds a log with generated labels. `horizon` defaults to the last
    /// event time (0 for an empty log).
    pub fn new(events: Vec<Event>, horizon: Option<f64>) -> Result<Self> {
        let max_item = events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::ItemStart(i) | EventKind::ItemEnd(i) => Some(i.0),
                EventKind::Contribution { item, .. } => Some(item.0),
                _ => None,
            })
            .max();
        let max_user = events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::UserRegistration(u) => Some(u.0),
                EventKind::Contribution { user, .. } => Some(user.0),
                _ => None,
            })
            .max();
        let item_labels = (0..max_item.map_or(0, |m| m + 1)).map(|i| format!("i{i}")).collect();
        let user_labels = (0..max_user.map_or(0, |m| m + 1)).map(|u| format!("u{u}")).collect();
        Self::with_labels(events, horizon, item_labels, user_labels)
    }

    pub fn with_labels(
        events: Vec<Event>,
        horizon: Option<f64>,
        item_labels: Vec<String>,
        user_labels: Vec<String>,
    ) -> Result<Self> {
        let mut prev = f64::NEG_INFINITY;
        for (idx, e) in events.iter().enumerate() {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::MalformedLog(format!("event {idx} has invalid time {}", e.time)));
            }
            if e.time <= prev {
                return Err(Error::MalformedLog(format!(
                    "event {idx} at t={} does not strictly follow t={prev}",
                    e.time
                )));
            }
            prev = e.time;
            let (item, user) = match e.kind {
                EventKind::ItemStart(i) | EventKind::ItemEnd(i) => (Some(i), None),
                EventKind::UserRegistration(u) => (None, Some(u)),
                EventKind::Contribution { user, item } => (Some(item), Some(user)),
            };
            if item.is_some_and(|i| i.0 as usize >= item_labels.len())
                || user.is_some_and(|u| u.0 as usize >= user_labels.len())
            {
                return Err(Error::MalformedLog(format!("event {idx} references an unlabelled id")));
            }
        }
        let last = events.last().map_or(0.0, |e| e.time);
        let horizon = horizon.unwrap_or(last);
        if !horizon.is_finite() || horizon < last {
            return Err(Error::MalformedLog(format!("horizon {horizon} precedes the last event at {last}")));
        }
        let log = EventLog { events, horizon, item_labels, user_labels };
        log.replay()?;
        Ok(log)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn item_label(&self, item: ItemId) -> &str {
        &self.item_labels[item.0 as usize]
    }

    pub fn user_label(&self, user: UserId) -> &str {
        &self.user_labels[user.0 as usize]
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    pub fn user_labels(&self) -> &[String] {
        &self.user_labels
    }

    /// Returns the same events observed on a different window end.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        let last = self.events.last().map_or(0.0, |e| e.time);
        if !horizon.is_finite() || horizon < last {
            return Err(Error::MalformedLog(format!("horizon {horizon} precedes the last event at {last}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn counts(&self) -> EventCounts {
        let mut c = EventCounts::default();
        for e in &self.events {
            match e.kind {
                EventKind::ItemStart(_) => c.starts += 1,
                EventKind::ItemEnd(_) => c.ends += 1,
                EventKind::UserRegistration(_) => c.registrations += 1,
                EventKind::Contribution { .. } => c.contributions += 1,
            }
        }
        c
    }

    /// Replays every event, failing on the first invalid transition.
    pub fn replay(&self) -> Result<PlatformState> {
        let mut state = PlatformState::new();
        for e in &self.events {
            state.apply(e)?;
        }
        Ok(state)
    }
}

/// Contribution-count regime `C_u(t)`; `3` stands for "3 or more".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Regime(u8);

impl Regime {
    pub const ZERO: Regime = Regime(0);

    /// Regime for index `c`, capped at 3.
    pub fn new(c: usize) -> Regime {
        Regime::from_distinct(c)
    }

    pub fn from_distinct(count: usize) -> Regime {
        Regime(count.min(REGIMES - 1) as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActiveItem {
    pub start: f64,
    pub backers: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub registered: f64,
    /// Distinct items backed, in order of first contribution.
    pub backed: Vec<ItemId>,
}

impl UserRecord {
    pub fn regime(&self) -> Regime {
        Regime::from_distinct(self.backed.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ItemStatus {
    Active,
    Ended,
}

/// What a successfully applied event changed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transition {
    Started,
    Ended {
        backers: u32,
    },
    Registered,
    Contributed {
        /// Regime and popularity in effect just before the contribution.
        regime_before: Regime,
        popularity_before: f64,
        first_for_pair: bool,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlatformState {
    now: f64,
    active: IndexMap<ItemId, ActiveItem>,
    status: HashMap<ItemId, ItemStatus>,
    users: HashMap<UserId, UserRecord>,
    total_backers: u64,
}

impl Default for PlatformState {
    fn default() -> Self {
        Self::new()
    }
}

impl PlatformState {
    pub fn new() -> Self {
        PlatformState {
            now: 0.0,
            active: IndexMap::new(),
            status: HashMap::new(),
            users: HashMap::new(),
            total_backers: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn active_items(&self) -> impl Iterator<Item = (ItemId, &ActiveItem)> + '_ {
        self.active.iter().map(|(id, it)| (*id, it))
    }

    pub fn active_item(&self, item: ItemId) -> Option<&ActiveItem> {
        self.active.get(&item)
    }

    /// The `n`-th active item in insertion order (used for uniform draws).
    pub fn active_item_at(&self, n: usize) -> Option<ItemId> {
        self.active.get_index(n).map(|(id, _)| *id)
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn users(&self) -> impl Iterator<Item = (UserId, &UserRecord)> + '_ {
        self.users.iter().map(|(id, r)| (*id, r))
    }

    pub fn user(&self, user: UserId) -> Option<&UserRecord> {
        self.users.get(&user)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Items that have ever started, active or ended.
    pub fn n_items_seen(&self) -> usize {
        self.status.len()
    }

    pub fn total_backers(&self) -> u64 {
        self.total_backers
    }

    pub fn contribution_count(&self, user: UserId) -> Result<Regime> {
        self.users.get(&user).map(UserRecord::regime).ok_or(Error::UnknownUser(user))
    }

    /// `|U_i| / Σ_j |U_j|` over active items, or 0 before anyone has backed
    /// an active item.
    pub fn relative_popularity(&self, item: ItemId) -> Result<f64> {
        let it = self.active.get(&item).ok_or(Error::InactiveItem(item))?;
        Ok(self.popularity_of(it))
    }

    pub(crate) fn popularity_of(&self, it: &ActiveItem) -> f64 {
        if self.total_backers == 0 {
            0.0
        } else {
            it.backers as f64 / self.total_backers as f64
        }
    }

    pub fn apply(&mut self, e: &Event) -> Result<Transition> {
        let t = e.time;
        if !t.is_finite() || t < self.now {
            return Err(self.invalid(t, format!("time precedes current time {}", self.now)));
        }
        let transition = match e.kind {
            EventKind::ItemStart(item) => {
                if self.status.contains_key(&item) {
                    return Err(self.invalid(t, format!("{item} started twice")));
                }
                self.status.insert(item, ItemStatus::Active);
                self.active.insert(item, ActiveItem { start: t, backers: 0 });
                Transition::Started
            }
            EventKind::ItemEnd(item) => {
                let Some(it) = self.active.shift_remove(&item) else {
                    return Err(self.invalid(t, format!("end of {item}, which is not active")));
                };
                self.status.insert(item, ItemStatus::Ended);
                self.total_backers -= it.backers as u64;
                Transition::Ended { backers: it.backers }
            }
            EventKind::UserRegistration(user) => {
                if self.users.contains_key(&user) {
                    return Err(self.invalid(t, format!("{user} registered twice")));
                }
                self.users.insert(user, UserRecord { registered: t, backed: Vec::new() });
                Transition::Registered
            }
            EventKind::Contribution { user, item } => {
                let Some(it) = self.active.get(&item) else {
                    let why = match self.status.get(&item) {
                        Some(ItemStatus::Ended) => "has ended",
                        _ => "has not started",
                    };
                    return Err(self.invalid(t, format!("contribution to {item}, which {why}")));
                };
                let popularity_before = self.popularity_of(it);
                let Some(rec) = self.users.get_mut(&user) else {
                    return Err(Error::InvalidTransition {
                        time: t,
                        reason: format!("contribution by unregistered {user}"),
                    });
                };
                let regime_before = rec.regime();
                let first_for_pair = !rec.backed.contains(&item);
                if first_for_pair {
                    rec.backed.push(item);
                    self.active.get_mut(&item).expect("checked above").backers += 1;
                    self.total_backers += 1;
                }
                Transition::Contributed { regime_before, popularity_before, first_for_pair }
            }
        };
        self.now = t;
        Ok(transition)
    }

    fn invalid(&self, time: f64, reason: String) -> Error {
        Error::InvalidTransition { time, reason }
    }
}

/// Functional form of [`PlatformState::apply`].
pub fn apply_event(state: &PlatformState, e: &Event) -> Result<PlatformState> {
    let mut next = state.clone();
    next.apply(e)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64, kind: EventKind) -> Event {
        Event::new(t, kind)
    }

    const I1: ItemId = ItemId(1);
    const I2: ItemId = ItemId(2);
    const U: UserId = UserId(7);

    #[test]
    fn ending_removes_item() {
        let mut s = PlatformState::new();
        s.apply(&ev(0.0, EventKind::ItemStart(I1))).unwrap();
        s.apply(&ev(1.0, EventKind::ItemEnd(I1))).unwrap();
        assert!(s.active_item(I1).is_none());
        assert_eq!(s.relative_popularity(I1), Err(Error::InactiveItem(I1)));
    }

    #[test]
    fn repeat_contribution_keeps_counts() {
        let mut s = PlatformState::new();
        s.apply(&ev(0.0, EventKind::ItemStart(I1))).unwrap();
        s.apply(&ev(0.1, EventKind::UserRegistration(U))).unwrap();
        s.apply(&ev(0.2, EventKind::Contribution { user: U, item: I1 })).unwrap();
        let tr = s.apply(&ev(0.3, EventKind::Contribution { user: U, item: I1 })).unwrap();
        assert!(matches!(tr, Transition::Contributed { first_for_pair: false, .. }));
        assert_eq!(s.contribution_count(U).unwrap().index(), 1);
        assert_eq!(s.active_item(I1).unwrap().backers, 1);
    }

    #[test]
    fn contribution_count_caps_at_three() {
        let mut s = PlatformState::new();
        s.apply(&ev(0.0, EventKind::UserRegistration(U))).unwrap();
        assert_eq!(s.contribution_count(U).unwrap().index(), 0);
        for k in 0..5u32 {
            let item = ItemId(10 + k);
            s.apply(&ev(1.0 + k as f64, EventKind::ItemStart(item))).unwrap();
            s.apply(&ev(1.5 + k as f64, EventKind::Contribution { user: U, item })).unwrap();
            if k == 1 {
                assert_eq!(s.contribution_count(U).unwrap().index(), 2);
            }
        }
        assert_eq!(s.contribution_count(U).unwrap().index(), 3);
        assert_eq!(s.contribution_count(UserId(99)), Err(Error::UnknownUser(UserId(99))));
    }

    #[test]
    fn popularity_cases() {
        let mut s = PlatformState::new();
        s.apply(&ev(0.0, EventKind::ItemStart(I1))).unwrap();
        s.apply(&ev(0.1, EventKind::ItemStart(I2))).unwrap();
        assert_eq!(s.relative_popularity(I1).unwrap(), 0.0);
        for u in 0..3 {
            s.apply(&ev(1.0 + u as f64, EventKind::UserRegistration(UserId(u)))).unwrap();
            s.apply(&ev(1.5 + u as f64, EventKind::Contribution { user: UserId(u), item: I1 })).unwrap();
        }
        assert_eq!(s.relative_popularity(I1).unwrap(), 1.0);
        s.apply(&ev(5.0, EventKind::UserRegistration(UserId(3)))).unwrap();
        s.apply(&ev(5.5, EventKind::Contribution { user: UserId(3), item: I2 })).unwrap();
        assert_eq!(s.relative_popularity(I1).unwrap(), 0.75);
        assert_eq!(s.relative_popularity(I2).unwrap(), 0.25);
        s.apply(&ev(6.0, EventKind::ItemEnd(I2))).unwrap();
        assert_eq!(s.total_backers(), 3);
        assert_eq!(s.relative_popularity(I1).unwrap(), 1.0);
    }

    #[test]
    fn invalid_transitions() {
        let mut s = PlatformState::new();
        let bad_end = s.apply(&ev(0.0, EventKind::ItemEnd(I1)));
        assert!(matches!(bad_end, Err(Error::InvalidTransition { .. })));
        s.apply(&ev(0.0, EventKind::ItemStart(I1))).unwrap();
        s.apply(&ev(0.5, EventKind::ItemEnd(I1))).unwrap();
        s.apply(&ev(0.6, EventKind::UserRegistration(U))).unwrap();
        let late = s.apply(&ev(1.0, EventKind::Contribution { user: U, item: I1 }));
        assert!(matches!(late, Err(Error::InvalidTransition { .. })));
        let unregistered = s.apply(&ev(1.0, EventKind::Contribution { user: UserId(1), item: I1 }));
        assert!(unregistered.is_err());
        let backwards = s.apply(&ev(0.1, EventKind::ItemStart(I2)));
        assert!(backwards.is_err());
    }

    #[test]
    fn log_rejects_ties_and_short_horizon() {
        let evs = vec![ev(1.0, EventKind::ItemStart(I1)), ev(1.0, EventKind::ItemStart(I2))];
        assert!(EventLog::new(evs, None).is_err());
        let evs = vec![ev(1.0, EventKind::ItemStart(I1))];
        assert!(EventLog::new(evs.clone(), Some(0.5)).is_err());
        let log = EventLog::new(evs, None).unwrap();
        assert_eq!(log.horizon(), 1.0);
        assert_eq!(log.counts().starts, 1);
    }
}
