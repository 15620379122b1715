//! Raw table loading, tie-breaking jitter, canonical event CSV, and
//! descriptive summaries.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventCounts, EventKind, EventLog, ItemId, PlatformState, Transition, UserId};

pub const MS_PER_DAY: f64 = 86_400_000.0;
/// One millisecond in days.
pub const MILLISECOND: f64 = 1.0 / MS_PER_DAY;
/// Raw ordering violations up to this size (days) are repaired by clamping.
pub const REPAIR_TOLERANCE: f64 = 1000.0 * MILLISECOND;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeFormat {
    #[default]
    Iso,
    Days,
}

impl std::str::FromStr for TimeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" => Ok(TimeFormat::Iso),
            "days" => Ok(TimeFormat::Days),
            _ => Err(Error::InvalidParams(format!("unknown time format `{s}` (expected iso or days)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawItem {
    pub id: String,
    pub start: f64,
    pub end: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawUser {
    pub id: String,
    pub registered: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawContribution {
    pub id: String,
    pub user: String,
    pub item: String,
    pub time: f64,
}

/// Parsed tables with times in days since `origin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTables {
    pub items: Vec<RawItem>,
    pub users: Vec<RawUser>,
    pub contributions: Vec<RawContribution>,
    /// Origin in the input's own units: epoch milliseconds for ISO input,
    /// days for day input.
    pub origin: f64,
    pub format: TimeFormat,
}

pub struct TablePaths<'a> {
    pub items: &'a Path,
    pub users: &'a Path,
    pub contributions: &'a Path,
}

fn parse_iso_ms(s: &str) -> Option<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp_millis());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp_millis());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp_millis())
}

/// Raw timestamp in input units (epoch ms or days).
fn parse_time(cell: &str, format: TimeFormat) -> Option<f64> {
    let s = cell.trim();
    match format {
        TimeFormat::Iso => parse_iso_ms(s).map(|ms| ms as f64),
        TimeFormat::Days => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path, required: &[&str]) -> Result<Table> {
        let file = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{file}: {e}")))?;
        Table::from_reader(f, &file, required)
    }

    fn from_reader(r: impl Read, file: &str, required: &[&str]) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Schema { file: file.into(), message: e.to_string() })?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect();
        for col in required {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::Schema {
                    file: file.into(),
                    message: format!("missing column `{col}` (found {})", headers.join(",")),
                });
            }
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            rows.push(rec.map_err(|e| Error::Parse {
                file: file.into(),
                row: i + 1,
                column: String::new(),
                message: e.to_string(),
            })?);
        }
        Ok(Table { file: file.into(), headers, rows })
    }

    fn col(&self, name: &str) -> usize {
        self.headers.iter().position(|h| h == name).expect("checked on read")
    }

    fn err(&self, row: usize, column: &str, message: impl Into<String>) -> Error {
        Error::Parse { file: self.file.clone(), row: row + 1, column: column.into(), message: message.into() }
    }

    fn id(&self, row: usize, column: &str) -> Result<String> {
        let v = self.rows[row].get(self.col(column)).unwrap_or("").trim();
        if v.is_empty() {
            return Err(self.err(row, column, "empty identifier"));
        }
        Ok(v.to_string())
    }

    fn time(&self, row: usize, column: &str, format: TimeFormat) -> Result<Option<f64>> {
        let cell = self.rows[row].get(self.col(column)).unwrap_or("").trim();
        if cell.is_empty() {
            return Ok(None);
        }
        parse_time(cell, format)
            .map(Some)
            .ok_or_else(|| self.err(row, column, format!("cannot parse `{cell}` as {format:?} time")))
    }

    fn required_time(&self, row: usize, column: &str, format: TimeFormat) -> Result<f64> {
        self.time(row, column, format)?.ok_or_else(|| self.err(row, column, "missing timestamp"))
    }
}

fn unique(table: &Table, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for (row, id) in ids.iter().enumerate() {
        if !seen.insert(id) {
            return Err(Error::Schema {
                file: table.file.clone(),
                message: format!("duplicate id `{id}` at row {}", row + 1),
            });
        }
    }
    Ok(())
}

fn parse_tables(items: Table, users: Table, contributions: Table, format: TimeFormat) -> Result<RawTables> {
    let mut raw_items = Vec::with_capacity(items.rows.len());
    for r in 0..items.rows.len() {
        raw_items.push(RawItem {
            id: items.id(r, "item_id")?,
            start: items.required_time(r, "start_time", format)?,
            end: items.time(r, "end_time", format)?,
        });
    }
    let mut raw_users = Vec::with_capacity(users.rows.len());
    for r in 0..users.rows.len() {
        raw_users.push(RawUser {
            id: users.id(r, "user_id")?,
            registered: users.required_time(r, "registration_time", format)?,
        });
    }
    let mut raw_contribs = Vec::with_capacity(contributions.rows.len());
    for r in 0..contributions.rows.len() {
        raw_contribs.push(RawContribution {
            id: contributions.id(r, "contribution_id")?,
            user: contributions.id(r, "user_id")?,
            item: contributions.id(r, "item_id")?,
            time: contributions.required_time(r, "time", format)?,
        });
    }
    unique(&items, &raw_items.iter().map(|x| x.id.clone()).collect::<Vec<_>>())?;
    unique(&users, &raw_users.iter().map(|x| x.id.clone()).collect::<Vec<_>>())?;
    unique(&contributions, &raw_contribs.iter().map(|x| x.id.clone()).collect::<Vec<_>>())?;

    let origin = raw_items
        .iter()
        .flat_map(|i| std::iter::once(i.start).chain(i.end))
        .chain(raw_users.iter().map(|u| u.registered))
        .chain(raw_contribs.iter().map(|c| c.time))
        .fold(f64::INFINITY, f64::min);
    let origin = if origin.is_finite() { origin } else { 0.0 };
    // ISO values are integer milliseconds, so the subtraction is exact.
    let scale = match format {
        TimeFormat::Iso => 1.0 / MS_PER_DAY,
        TimeFormat::Days => 1.0,
    };
    let to_days = |v: f64| (v - origin) * scale;
    for i in &mut raw_items {
        i.start = to_days(i.start);
        i.end = i.end.map(to_days);
    }
    for u in &mut raw_users {
        u.registered = to_days(u.registered);
    }
    for c in &mut raw_contribs {
        c.time = to_days(c.time);
    }
    Ok(RawTables { items: raw_items, users: raw_users, contributions: raw_contribs, origin, format })
}

/// Reads `items.csv`, `users.csv` and `contributions.csv`; times become days
/// since the earliest timestamp in any table.
pub fn load_tables(paths: &TablePaths<'_>, format: TimeFormat) -> Result<RawTables> {
    let items = Table::read(paths.items, &["item_id", "start_time", "end_time"])?;
    let users = Table::read(paths.users, &["user_id", "registration_time"])?;
    let contributions = Table::read(paths.contributions, &["contribution_id", "user_id", "item_id", "time"])?;
    parse_tables(items, users, contributions, format)
}

/// As [`load_tables`] from in-memory readers.
pub fn load_tables_from_readers(
    items: impl Read,
    users: impl Read,
    contributions: impl Read,
    format: TimeFormat,
) -> Result<RawTables> {
    let items = Table::from_reader(items, "items.csv", &["item_id", "start_time", "end_time"])?;
    let users = Table::from_reader(users, "users.csv", &["user_id", "registration_time"])?;
    let contributions =
        Table::from_reader(contributions, "contributions.csv", &["contribution_id", "user_id", "item_id", "time"])?;
    parse_tables(items, users, contributions, format)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowNote {
    pub table: String,
    pub row: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub counts: EventCounts,
    pub dropped: Vec<RowNote>,
    pub repaired: Vec<RowNote>,
    pub repeat_pair_contributions: usize,
    /// Registrations while no item was active.
    pub zero_rate_registrations: usize,
    pub time_format: TimeFormat,
    pub origin: f64,
    pub jitter_seed: u64,
    /// Largest shift applied to any event, in milliseconds.
    pub max_shift_ms: f64,
}

/// Jitter stream for a table: stream id per table, word position per row.
#[derive(Clone, Copy)]
enum JitterTable {
    ItemStart = 0,
    ItemEnd = 1,
    Users = 2,
    Contributions = 3,
}

fn jitter(seed: u64, table: JitterTable, row: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(table as u64);
    rng.set_word_pos(2 * row as u128);
    rng.random::<f64>() * MILLISECOND
}

/// Processing order for equal raw timestamps: a start before anything that
/// uses the item, a registration before the user's contributions, and
/// contributions before the item's end.
fn rank(kind: &Pending) -> u8 {
    match kind {
        Pending::Start(_) => 0,
        Pending::Register(_) => 1,
        Pending::Contribute(..) => 2,
        Pending::End(_) => 3,
    }
}

#[derive(Clone, Copy, Debug)]
enum Pending {
    Start(usize),
    End(usize),
    Register(usize),
    Contribute(usize, usize),
}

/// Adds U[0, 1 ms) noise to every event, resolves ties causally, renumbers
/// ids by first appearance and returns a strictly ordered log.
pub fn jitter_and_merge(tables: &RawTables, seed: u64, horizon: Option<f64>) -> Result<(EventLog, IngestReport)> {
    let mut dropped = Vec::new();
    let mut repaired = Vec::new();
    let item_index: HashMap<&str, usize> = tables.items.iter().enumerate().map(|(k, i)| (i.id.as_str(), k)).collect();
    let user_index: HashMap<&str, usize> = tables.users.iter().enumerate().map(|(k, u)| (u.id.as_str(), k)).collect();

    // (raw time, rank, jitter, event)
    let mut pending: Vec<(f64, u8, f64, Pending)> = Vec::new();
    let mut push = |raw: f64, jit: f64, p: Pending| pending.push((raw, rank(&p), jit, p));

    let mut item_end: Vec<Option<f64>> = Vec::with_capacity(tables.items.len());
    for (k, it) in tables.items.iter().enumerate() {
        let mut end = it.end;
        if let Some(e) = end {
            if e < it.start {
                if it.start - e > REPAIR_TOLERANCE {
                    return Err(Error::Causality(format!(
                        "item `{}` ends {:.6} days before it starts",
                        it.id,
                        it.start - e
                    )));
                }
                repaired.push(RowNote {
                    table: "items".into(),
                    row: k + 1,
                    id: it.id.clone(),
                    reason: "end clamped to start".into(),
                });
                end = Some(it.start);
            }
        }
        item_end.push(end);
        push(it.start, jitter(seed, JitterTable::ItemStart, k), Pending::Start(k));
        if let Some(e) = end {
            push(e, jitter(seed, JitterTable::ItemEnd, k), Pending::End(k));
        }
    }
    for (k, u) in tables.users.iter().enumerate() {
        push(u.registered, jitter(seed, JitterTable::Users, k), Pending::Register(k));
    }
    for (k, c) in tables.contributions.iter().enumerate() {
        let note = |reason: String| RowNote { table: "contributions".into(), row: k + 1, id: c.id.clone(), reason };
        let (Some(&ui), Some(&ii)) = (user_index.get(c.user.as_str()), item_index.get(c.item.as_str())) else {
            let what = if !user_index.contains_key(c.user.as_str()) {
                format!("unknown user `{}`", c.user)
            } else {
                format!("unknown item `{}`", c.item)
            };
            dropped.push(note(what));
            continue;
        };
        let mut t = c.time;
        let floor = tables.users[ui].registered.max(tables.items[ii].start);
        if t < floor {
            if floor - t > REPAIR_TOLERANCE {
                return Err(Error::Causality(format!(
                    "contribution `{}` precedes its user's registration or its item's start by {:.6} days",
                    c.id,
                    floor - t
                )));
            }
            repaired.push(note("time clamped up to registration/start".into()));
            t = floor;
        }
        if let Some(end) = item_end[ii] {
            if t > end {
                if t - end > REPAIR_TOLERANCE {
                    return Err(Error::Causality(format!(
                        "contribution `{}` follows the end of item `{}` by {:.6} days",
                        c.id,
                        c.item,
                        t - end
                    )));
                }
                repaired.push(note("time clamped down to item end".into()));
                t = end;
            }
        }
        push(t, jitter(seed, JitterTable::Contributions, k), Pending::Contribute(k, ui));
    }

    pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    // Within a group of equal raw times, hand out the group's jitter values in
    // ascending order so the causal order survives the noise.
    let mut g = 0;
    while g < pending.len() {
        let mut h = g + 1;
        while h < pending.len() && pending[h].0 == pending[g].0 {
            h += 1;
        }
        if h - g > 1 {
            let mut jits: Vec<f64> = pending[g..h].iter().map(|p| p.2).collect();
            jits.sort_by(f64::total_cmp);
            for (p, j) in pending[g..h].iter_mut().zip(jits) {
                p.2 = j;
            }
        }
        g = h;
    }

    let mut events = Vec::with_capacity(pending.len());
    let mut item_ids: HashMap<usize, ItemId> = HashMap::new();
    let mut user_ids: HashMap<usize, UserId> = HashMap::new();
    let mut item_labels = Vec::new();
    let mut user_labels = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut max_shift = 0.0f64;
    for &(raw, _, jit, p) in &pending {
        let mut t = raw + jit;
        if t <= prev {
            t = prev.next_up();
        }
        let shift = t - raw;
        if shift >= MILLISECOND {
            return Err(Error::Causality(format!(
                "events within one millisecond of t={raw:.9} days cannot be ordered without moving one by 1 ms or more"
            )));
        }
        max_shift = max_shift.max(shift);
        prev = t;
        let kind = match p {
            Pending::Start(k) => {
                let id = ItemId(item_labels.len() as u32);
                item_labels.push(tables.items[k].id.clone());
                item_ids.insert(k, id);
                EventKind::ItemStart(id)
            }
            Pending::End(k) => EventKind::ItemEnd(item_ids[&k]),
            Pending::Register(k) => {
                let id = UserId(user_labels.len() as u32);
                user_labels.push(tables.users[k].id.clone());
                user_ids.insert(k, id);
                EventKind::UserRegistration(id)
            }
            Pending::Contribute(k, ui) => {
                let ii = item_index[tables.contributions[k].item.as_str()];
                EventKind::Contribution { user: user_ids[&ui], item: item_ids[&ii] }
            }
        };
        events.push(Event::new(t, kind));
    }
    if let Some(h) = horizon {
        if let Some(last) = events.last() {
            if h < last.time {
                return Err(Error::InvalidParams(format!("horizon {h} precedes the last event at {}", last.time)));
            }
        }
    }
    let log = EventLog::with_labels(events, horizon, item_labels, user_labels)?;

    let mut state = PlatformState::new();
    let mut repeat_pair_contributions = 0;
    let mut zero_rate_registrations = 0;
    for e in log.events() {
        if matches!(e.kind, EventKind::UserRegistration(_)) && state.n_active() == 0 {
            zero_rate_registrations += 1;
        }
        if let Transition::Contributed { first_for_pair: false, .. } = state.apply(e)? {
            repeat_pair_contributions += 1;
        }
    }
    let report = IngestReport {
        counts: log.counts(),
        dropped,
        repaired,
        repeat_pair_contributions,
        zero_rate_registrations,
        time_format: tables.format,
        origin: tables.origin,
        jitter_seed: seed,
        max_shift_ms: max_shift * MS_PER_DAY,
    };
    Ok((log, report))
}

/// Writes the canonical `time_days,kind,user_id,item_id` form.
pub fn write_events_csv(log: &EventLog, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wtr.write_record(["time_days", "kind", "user_id", "item_id"]).map_err(io)?;
    for e in log.events() {
        let (user, item) = match e.kind {
            EventKind::ItemStart(i) | EventKind::ItemEnd(i) => (String::new(), log.item_label(i).to_string()),
            EventKind::UserRegistration(u) => (log.user_label(u).to_string(), String::new()),
            EventKind::Contribution { user, item } => {
                (log.user_label(user).to_string(), log.item_label(item).to_string())
            }
        };
        wtr.write_record([format!("{:.16e}", e.time), e.kind.tag().to_string(), user, item]).map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the canonical event form. Ids are assigned by first appearance, so a
/// log written by [`write_events_csv`] reads back identically.
pub fn read_events_csv(r: impl Read, horizon: Option<f64>) -> Result<EventLog> {
    let table = Table::from_reader(r, "events.csv", &["time_days", "kind", "user_id", "item_id"])?;
    let (ct, ck) = (table.col("time_days"), table.col("kind"));
    let mut items: HashMap<String, ItemId> = HashMap::new();
    let mut users: HashMap<String, UserId> = HashMap::new();
    let mut item_labels = Vec::new();
    let mut user_labels = Vec::new();
    let mut events = Vec::with_capacity(table.rows.len());
    for (row, rec) in table.rows.iter().enumerate() {
        let cell = rec.get(ct).unwrap_or("");
        let t = parse_time(cell, TimeFormat::Days)
            .ok_or_else(|| table.err(row, "time_days", format!("bad time `{cell}`")))?;
        let kind = match rec.get(ck).unwrap_or("").trim() {
            "start" => {
                let label = table.id(row, "item_id")?;
                if items.contains_key(&label) {
                    return Err(table.err(row, "item_id", format!("item `{label}` started twice")));
                }
                let id = ItemId(item_labels.len() as u32);
                items.insert(label.clone(), id);
                item_labels.push(label);
                EventKind::ItemStart(id)
            }
            "end" => {
                let label = table.id(row, "item_id")?;
                EventKind::ItemEnd(
                    *items.get(&label).ok_or_else(|| table.err(row, "item_id", format!("unknown item `{label}`")))?,
                )
            }
            "register" => {
                let label = table.id(row, "user_id")?;
                if users.contains_key(&label) {
                    return Err(table.err(row, "user_id", format!("user `{label}` registered twice")));
                }
                let id = UserId(user_labels.len() as u32);
                users.insert(label.clone(), id);
                user_labels.push(label);
                EventKind::UserRegistration(id)
            }
            "contribute" => {
                let ul = table.id(row, "user_id")?;
                let il = table.id(row, "item_id")?;
                let user = *users.get(&ul).ok_or_else(|| table.err(row, "user_id", format!("unknown user `{ul}`")))?;
                let item = *items.get(&il).ok_or_else(|| table.err(row, "item_id", format!("unknown item `{il}`")))?;
                EventKind::Contribution { user, item }
            }
            other => return Err(table.err(row, "kind", format!("unknown kind `{other}`"))),
        };
        events.push(Event::new(t, kind));
    }
    EventLog::with_labels(events, horizon, item_labels, user_labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemActivity {
    pub item: String,
    pub start: f64,
    pub end: Option<f64>,
    pub contributions: usize,
    pub backers: usize,
}

/// Kaplan–Meier estimate of time from registration to first contribution,
/// censored at the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub time: f64,
    pub at_risk: usize,
    pub events: usize,
    pub survival: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyRow {
    pub day: usize,
    pub new_items: usize,
    pub ended_items: usize,
    /// Active items at the end of the day.
    pub active_items: usize,
    pub new_users: usize,
    pub contributions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityRow {
    pub day: usize,
    pub item: String,
    pub popularity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// `(distinct items backed, users)`; the last bucket is exact, not capped.
    pub users_by_items_backed: Vec<(usize, usize)>,
    pub items: Vec<ItemActivity>,
    pub first_contribution_survival: Vec<SurvivalRow>,
    pub daily: Vec<DailyRow>,
    /// End-of-day relative popularity of every active item.
    pub popularity: Vec<PopularityRow>,
}

pub fn summarize(log: &EventLog) -> Result<DatasetSummary> {
    if log.is_empty() {
        return Ok(DatasetSummary::default());
    }
    let horizon = log.horizon();
    let n_days = horizon.floor() as usize + 1;
    let mut daily: Vec<DailyRow> = (0..n_days)
        .map(|day| DailyRow { day, new_items: 0, ended_items: 0, active_items: 0, new_users: 0, contributions: 0 })
        .collect();
    let mut items: Vec<ItemActivity> = Vec::new();
    let mut registered: Vec<f64> = Vec::new();
    let mut first: Vec<Option<f64>> = Vec::new();
    let mut distinct: Vec<HashSet<ItemId>> = Vec::new();
    let mut popularity = Vec::new();
    let mut state = PlatformState::new();
    let mut day_cursor = 0usize;

    let mut close_days_before = |t: f64, state: &PlatformState, daily: &mut Vec<DailyRow>, cursor: &mut usize| {
        while *cursor < n_days && (*cursor as f64 + 1.0) <= t {
            daily[*cursor].active_items = state.n_active();
            for (id, _) in state.active_items() {
                popularity.push(PopularityRow {
                    day: *cursor,
                    item: log.item_label(id).to_string(),
                    popularity: state.relative_popularity(id).expect("active"),
                });
            }
            *cursor += 1;
        }
    };

    for e in log.events() {
        close_days_before(e.time, &state, &mut daily, &mut day_cursor);
        let d = (e.time.floor() as usize).min(n_days - 1);
        state.apply(e)?;
        match e.kind {
            EventKind::ItemStart(i) => {
                daily[d].new_items += 1;
                debug_assert_eq!(i.0 as usize, items.len());
                items.push(ItemActivity {
                    item: log.item_label(i).to_string(),
                    start: e.time,
                    end: None,
                    contributions: 0,
                    backers: 0,
                });
            }
            EventKind::ItemEnd(i) => {
                daily[d].ended_items += 1;
                items[i.0 as usize].end = Some(e.time);
            }
            EventKind::UserRegistration(_) => {
                daily[d].new_users += 1;
                registered.push(e.time);
                first.push(None);
                distinct.push(HashSet::new());
            }
            EventKind::Contribution { user, item } => {
                daily[d].contributions += 1;
                let u = user.0 as usize;
                first[u].get_or_insert(e.time);
                let it = &mut items[item.0 as usize];
                it.contributions += 1;
                if distinct[u].insert(item) {
                    it.backers += 1;
                }
            }
        }
    }
    close_days_before(f64::INFINITY, &state, &mut daily, &mut day_cursor);

    let max_backed = distinct.iter().map(HashSet::len).max().unwrap_or(0);
    let mut hist = vec![0usize; max_backed + 1];
    for d in &distinct {
        hist[d.len()] += 1;
    }
    let users_by_items_backed = hist.into_iter().enumerate().collect();

    // (duration, observed)
    let mut obs: Vec<(f64, bool)> = registered
        .iter()
        .zip(&first)
        .map(|(&r, f)| match f {
            Some(t) => (t - r, true),
            None => (horizon - r, false),
        })
        .collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut survival = 1.0;
    let mut at_risk = obs.len();
    let mut km = Vec::new();
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let (mut events, mut censored) = (0, 0);
        while i < obs.len() && obs[i].0 == t {
            if obs[i].1 {
                events += 1;
            } else {
                censored += 1;
            }
            i += 1;
        }
        if events > 0 {
            survival *= 1.0 - events as f64 / at_risk as f64;
            km.push(SurvivalRow { time: t, at_risk, events, survival });
        }
        at_risk -= events + censored;
    }

    Ok(DatasetSummary { users_by_items_backed, items, first_contribution_survival: km, daily, popularity })
}
