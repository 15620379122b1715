use std::fs;
use std::path::Path;

use crowdpulse_core::gof::KsResult;
use crowdpulse_core::ingest::TablePaths;
use crowdpulse_core::{
    build_sufficient_stats, envelope, fit_variant, goodness_of_fit, jitter_and_merge, load_tables, read_events_csv,
    replicate, summarize, write_events_csv, EventLog, FitOptions, FitResult, IngestReport, Init, ModelVariant, Params,
    SimConfig, N_PARAMS, PARAM_NAMES,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::args::{DataArgs, FitArgs, FitOptionArgs, GofArgs, SelectArgs, SimulateArgs, SummarizeArgs};
use crate::output::{hash_input, num, opt, CliResult, Failure, InputRecord, OutDir};

/// Accepted forms of `--params`: a bare parameter object, or a fit.json
/// whose components are all present.
#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsFile {
    Plain(Params),
    Fit { theta: Vec<Option<f64>> },
}

fn read_params(path: &Path, inputs: &mut Vec<InputRecord>) -> CliResult<Params> {
    inputs.push(hash_input("params", path)?);
    let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let parsed: ParamsFile = serde_json::from_str(&text)
        .map_err(|e| Failure::data(format!("{}: not a parameter file: {e}", path.display())))?;
    let p = match parsed {
        ParamsFile::Plain(p) => p,
        ParamsFile::Fit { theta } => {
            if theta.len() != N_PARAMS {
                return Err(Failure::data(format!("{}: theta has {} entries", path.display(), theta.len())));
            }
            let mut v = [0.0; N_PARAMS];
            for (j, t) in theta.iter().enumerate() {
                v[j] = t.ok_or_else(|| {
                    Failure::data(format!(
                        "{}: {} is null; a full parameter vector is required",
                        path.display(),
                        PARAM_NAMES[j]
                    ))
                })?;
            }
            Params::from_slice(&v)?
        }
    };
    p.validate()?;
    Ok(p)
}

/// Loads the log and records the hashed inputs. The ingest report is
/// returned for raw tables only.
fn load_log(data: &DataArgs, seed: u64, inputs: &mut Vec<InputRecord>) -> CliResult<(EventLog, Option<IngestReport>)> {
    if let Some(h) = data.horizon {
        if !(h.is_finite() && h > 0.0) {
            return Err(Failure::usage(format!("--horizon {h} must be positive")));
        }
    }
    match (&data.events, &data.items, &data.users, &data.contributions) {
        (Some(events), None, None, None) => {
            inputs.push(hash_input("events", events)?);
            let f = fs::File::open(events).map_err(|e| Failure::data(format!("{}: {e}", events.display())))?;
            let log = read_events_csv(std::io::BufReader::new(f), data.horizon)?;
            Ok((log, None))
        }
        (None, Some(items), Some(users), Some(contributions)) => {
            for (role, p) in [("items", items), ("users", users), ("contributions", contributions)] {
                inputs.push(hash_input(role, p)?);
            }
            let tables = load_tables(&TablePaths { items, users, contributions }, data.time_format)?;
            let (log, report) = jitter_and_merge(&tables, seed, data.horizon)?;
            for d in &report.dropped {
                warn!("dropped {} row {} ({}): {}", d.table, d.row, d.id, d.reason);
            }
            Ok((log, Some(report)))
        }
        _ => Err(Failure::usage("give either --events or all of --items, --users and --contributions")),
    }
}

fn fit_options(args: &FitOptionArgs, inputs: &mut Vec<InputRecord>) -> CliResult<FitOptions> {
    let init = match &args.params {
        Some(p) => Init::Params(read_params(p, inputs)?),
        None => Init::Auto,
    };
    Ok(FitOptions { init, freeze: args.freeze.clone(), ..FitOptions::default() })
}

fn check_converged(fits: &[&FitResult], allow: bool) -> CliResult<()> {
    let failed: Vec<String> =
        fits.iter().filter(|f| !f.converged).map(|f| format!("{} ({})", f.variant, f.warnings.join("; "))).collect();
    if failed.is_empty() || allow {
        return Ok(());
    }
    Err(Failure::numerical(format!(
        "no convergence for {}; rerun with --allow-nonconverged to accept",
        failed.join(", ")
    )))
}

pub fn fit(args: &FitArgs, config: &impl Serialize) -> CliResult<()> {
    let mut inputs = Vec::new();
    let (log, report) = load_log(&args.data, args.common.seed, &mut inputs)?;
    let opts = fit_options(&args.fit, &mut inputs)?;
    let stats = build_sufficient_stats(&log)?;
    let result = fit_variant(&stats, ModelVariant::Full, &opts)?;
    info!("fit: loglik {:.6}, {} iterations, converged {}", result.loglik, result.iterations, result.converged);
    let mut out = OutDir::create(&args.common.out)?;
    if let Some(r) = &report {
        out.json("ingest_report.json", r)?;
    }
    out.json("fit.json", &result)?;
    out.manifest("fit", args.common.seed, config, inputs)?;
    check_converged(&[&result], args.fit.allow_nonconverged)
}

pub fn simulate(args: &SimulateArgs, config: &impl Serialize) -> CliResult<()> {
    if !(args.horizon.is_finite() && args.horizon > 0.0) {
        return Err(Failure::usage(format!("--horizon {} must be positive", args.horizon)));
    }
    if args.reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }
    let mut inputs = Vec::new();
    let p = read_params(&args.params, &mut inputs)?;
    let cfg = SimConfig { replications: args.reps, ..SimConfig::new(args.horizon, args.common.seed) };
    let outputs = replicate(&p, &cfg)?;
    let mut out = OutDir::create(&args.common.out)?;
    let width = (args.reps - 1).to_string().len().max(4);
    for o in &outputs {
        if o.cap_exceeded {
            warn!("replication {} hit the event cap at t = {}", o.replication, o.log.horizon());
        }
        let rel = format!("rep_{:0width$}/events.csv", o.replication);
        write_events_csv(&o.log, out.file(&rel)?)?;
    }
    out.csv(
        "replications.csv",
        &["replication", "starts", "ends", "registrations", "contributions", "horizon", "cap_exceeded"],
        outputs.iter().map(|o| {
            [
                o.replication.to_string(),
                o.counts.starts.to_string(),
                o.counts.ends.to_string(),
                o.counts.registrations.to_string(),
                o.counts.contributions.to_string(),
                num(o.log.horizon()),
                o.cap_exceeded.to_string(),
            ]
        }),
    )?;
    let header = [
        "day",
        "items_p05",
        "items_p50",
        "items_p95",
        "users_p05",
        "users_p50",
        "users_p95",
        "contributions_p05",
        "contributions_p50",
        "contributions_p95",
    ];
    out.csv(
        "envelope.csv",
        &header,
        envelope(&outputs).iter().map(|r| {
            std::iter::once(r.day.to_string())
                .chain([r.items, r.users, r.contributions].into_iter().flatten().map(num))
                .collect::<Vec<_>>()
        }),
    )?;
    out.manifest("simulate", args.common.seed, config, inputs)
}

/// Test statistics only; the per-contribution series go to gof_series.csv.
#[derive(Serialize)]
struct GofSummary {
    n_contributions: usize,
    final_transformed_time: f64,
    ks_exponential: KsResult,
    lewis: KsResult,
    lewis_qq_max_deviation: f64,
    lag1_correlation: Option<f64>,
    autocorrelation_constant: Option<bool>,
}

pub fn gof(args: &GofArgs, config: &impl Serialize) -> CliResult<()> {
    let mut inputs = Vec::new();
    let (log, _) = load_log(&args.data, args.common.seed, &mut inputs)?;
    let p = read_params(&args.params, &mut inputs)?;
    let report = goodness_of_fit(&p, &log)?;
    let u = &report.uniformity;
    let ac = report.autocorrelation.as_ref();
    let summary = GofSummary {
        n_contributions: report.n_contributions,
        final_transformed_time: report.transformed_times.last().copied().unwrap_or(0.0),
        ks_exponential: u.ks_exponential,
        lewis: u.lewis,
        lewis_qq_max_deviation: u.lewis_qq_max_deviation,
        lag1_correlation: ac.map(|a| a.lag1_correlation),
        autocorrelation_constant: ac.map(|a| a.constant),
    };
    info!("gof: KS p = {:.4}, Lewis p = {:.4}", u.ks_exponential.p_value, u.lewis.p_value);
    let mut out = OutDir::create(&args.common.out)?;
    out.json("gof.json", &summary)?;
    out.csv(
        "gof_series.csv",
        &["r", "t_star", "interarrival", "p_r", "v_r", "conditional"],
        report.transformed_times.iter().enumerate().map(|(k, &t)| {
            vec![
                (k + 1).to_string(),
                num(t),
                num(u.interarrivals[k]),
                num(u.p_values[k]),
                opt(ac.map(|a| a.v[k])),
                opt(u.conditional_times.get(k).copied()),
            ]
        }),
    )?;
    out.manifest("gof", args.common.seed, config, inputs)
}

pub fn select(args: &SelectArgs, config: &impl Serialize) -> CliResult<()> {
    if args.variants.is_empty() {
        return Err(Failure::usage("--variants is empty"));
    }
    let mut inputs = Vec::new();
    let (log, report) = load_log(&args.data, args.common.seed, &mut inputs)?;
    let opts = fit_options(&args.fit, &mut inputs)?;
    let stats = build_sufficient_stats(&log)?;
    let mut variants = args.variants.clone();
    variants.dedup();
    let mut fits = Vec::with_capacity(variants.len());
    for &v in &variants {
        let f = fit_variant(&stats, v, &opts)?;
        info!("{v}: loglik {:.6}, AIC {:.3}, converged {}", f.loglik_contrib, f.aic, f.converged);
        fits.push(f);
    }
    fits.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    let mut out = OutDir::create(&args.common.out)?;
    if let Some(r) = &report {
        out.json("ingest_report.json", r)?;
    }
    for f in &fits {
        out.json(&format!("fit_{}.json", f.variant.tag()), f)?;
    }
    let best = fits[0].aic;
    out.csv(
        "selection.csv",
        &["variant", "n_params", "loglik", "aic", "bic", "delta_aic", "converged"],
        fits.iter().map(|f| {
            [
                f.variant.tag().to_string(),
                f.n_params.to_string(),
                num(f.loglik_contrib),
                num(f.aic),
                num(f.bic),
                num(f.aic - best),
                f.converged.to_string(),
            ]
        }),
    )?;
    out.manifest("select", args.common.seed, config, inputs)?;
    check_converged(&fits.iter().collect::<Vec<_>>(), args.fit.allow_nonconverged)
}

pub fn summarize_cmd(args: &SummarizeArgs, config: &impl Serialize) -> CliResult<()> {
    let mut inputs = Vec::new();
    let (log, report) = load_log(&args.data, args.common.seed, &mut inputs)?;
    let s = summarize(&log)?;
    let mut out = OutDir::create(&args.common.out)?;
    if let Some(r) = &report {
        out.json("ingest_report.json", r)?;
    }
    out.csv(
        "users_by_items_backed.csv",
        &["items_backed", "users"],
        s.users_by_items_backed.iter().map(|(k, n)| [k.to_string(), n.to_string()]),
    )?;
    out.csv(
        "items.csv",
        &["item_id", "start_days", "end_days", "contributions", "backers"],
        s.items
            .iter()
            .map(|i| [i.item.clone(), num(i.start), opt(i.end), i.contributions.to_string(), i.backers.to_string()]),
    )?;
    out.csv(
        "first_contribution_survival.csv",
        &["days_since_registration", "at_risk", "events", "survival"],
        s.first_contribution_survival
            .iter()
            .map(|r| [num(r.time), r.at_risk.to_string(), r.events.to_string(), num(r.survival)]),
    )?;
    out.csv(
        "daily.csv",
        &["day", "new_items", "ended_items", "active_items", "new_users", "contributions"],
        s.daily.iter().map(|d| {
            [d.day, d.new_items, d.ended_items, d.active_items, d.new_users, d.contributions].map(|v| v.to_string())
        }),
    )?;
    out.csv(
        "popularity.csv",
        &["day", "item_id", "popularity"],
        s.popularity.iter().map(|r| [r.day.to_string(), r.item.clone(), num(r.popularity)]),
    )?;
    out.manifest("summarize", args.common.seed, config, inputs)
}
