mod common;

use crowdpulse_core::estimate::loglik_rounding;
use crowdpulse_core::likelihood::{contribution_loglik, contribution_vector, KernelFamily};
use crowdpulse_core::{
    build_sufficient_stats, closed_form_rates, fit_newton, fit_variant, Error, Event, EventKind, EventLog, FitOptions,
    Init, ItemId, ModelVariant, ParamIndex, Params, SufficientStats, UserId,
};
use std::sync::OnceLock;

/// One simulated year at the Platform B magnitudes, shared by the tests.
fn year() -> &'static SufficientStats {
    static S: OnceLock<SufficientStats> = OnceLock::new();
    S.get_or_init(|| build_sufficient_stats(&common::simulated_log(&Params::PLATFORM_B, 365.0, 1)).unwrap())
}

#[test]
fn flow_rates_equal_closed_forms() {
    let s = year();
    let fit = fit_newton(s, &FitOptions::default()).unwrap();
    let (phi, mu, sigma) = closed_form_rates(s).require().unwrap();
    for (j, want) in [(0, phi), (1, mu), (2, sigma)] {
        let got = fit.theta[j].unwrap();
        assert!((got - want).abs() <= 1e-10 * want, "component {j}: {got} vs {want}");
    }
}

#[test]
fn converged_fit_satisfies_gradient_test_and_ascends() {
    let fit = fit_newton(year(), &FitOptions::default()).unwrap();
    assert!(fit.converged, "{:?}", fit.warnings);
    assert!(fit.final_grad_norm <= FitOptions::default().grad_tol);
    // Steps in the final quadratic phase may move ℓ within its rounding error.
    for w in fit.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - loglik_rounding(w[0]), "log-likelihood decreased: {} -> {}", w[0], w[1]);
    }
    for j in 3..13 {
        let [lo, hi] = fit.ci95[j].unwrap();
        assert!(lo > 0.0 && lo < fit.theta[j].unwrap() && hi > fit.theta[j].unwrap());
    }
}

#[test]
fn restart_at_optimum_takes_no_iterations() {
    let s = year();
    let first = fit_newton(s, &FitOptions::default()).unwrap();
    let opts = FitOptions { init: Init::Params(first.params().unwrap()), ..FitOptions::default() };
    let again = fit_newton(s, &opts).unwrap();
    assert!(again.converged);
    assert_eq!(again.iterations, 0);
    for (a, b) in again.theta.iter().zip(&first.theta) {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert!((a - b).abs() <= 1e-9 * b, "{a} vs {b}");
    }
}

#[test]
fn analytic_flow_case_needs_no_contribution_iterations() {
    // Only item flow plus a single contribution whose parameters are held
    // fixed: the free block is empty and the fit is immediate.
    let log = EventLog::new(
        vec![
            Event::new(0.0, EventKind::ItemStart(ItemId(0))),
            Event::new(1.0, EventKind::UserRegistration(UserId(0))),
            Event::new(2.0, EventKind::Contribution { user: UserId(0), item: ItemId(0) }),
            Event::new(5.0, EventKind::ItemEnd(ItemId(0))),
        ],
        Some(5.0),
    )
    .unwrap();
    let s = build_sufficient_stats(&log).unwrap();
    let freeze: Vec<ParamIndex> = (3..13).filter_map(ParamIndex::from_position).collect();
    let opts = FitOptions { init: Init::Params(Params::PLATFORM_A), freeze, ..FitOptions::default() };
    let fit = fit_newton(&s, &opts).unwrap();
    assert_eq!(fit.iterations, 0);
    assert!(fit.converged);
    assert_eq!(fit.theta[0], Some(0.2));
    assert_eq!(fit.theta[1], Some(0.2));
    assert_eq!(fit.theta[2], Some(0.2));
    assert_eq!(fit.theta[3], Some(Params::PLATFORM_A.psi[0]));
}

#[test]
fn nested_variants_never_beat_the_full_model() {
    let s = year();
    let opts = FitOptions::default();
    let full = fit_variant(s, ModelVariant::Full, &opts).unwrap();
    for v in [ModelVariant::ConstantGamma, ModelVariant::PsiOnly] {
        let r = fit_variant(s, v, &opts).unwrap();
        assert!(r.converged, "{v}: {:?}", r.warnings);
        assert_eq!(r.n_params, v.n_params());
        assert!(full.loglik_contrib >= r.loglik_contrib - 1e-6, "{v}: {} > {}", r.loglik_contrib, full.loglik_contrib);
        // Item-flow terms are shared, so the totals differ by the same amount.
        assert!(((full.loglik - r.loglik) - (full.loglik_contrib - r.loglik_contrib)).abs() < 1e-6);
    }
}

#[test]
fn every_variant_converges_when_a_rate_sits_at_zero() {
    // In this year the shared-γ fit drives ψ₁ to the boundary.
    let s = build_sufficient_stats(&common::simulated_log(&Params::PLATFORM_B, 365.0, 8)).unwrap();
    let opts = FitOptions::default();
    let fits: Vec<_> = ModelVariant::ALL.iter().map(|&v| fit_variant(&s, v, &opts).unwrap()).collect();
    for f in &fits {
        assert!(f.converged, "{}: {:?}", f.variant, f.warnings);
        assert!(f.final_grad_norm <= opts.grad_tol);
    }
    let ll = |v: ModelVariant| fits.iter().find(|f| f.variant == v).unwrap().loglik_contrib;
    assert!(ll(ModelVariant::Full) >= ll(ModelVariant::ConstantGamma));
    assert!(ll(ModelVariant::ConstantGamma) >= ll(ModelVariant::PsiOnly));
}

#[test]
fn psi_only_equals_full_with_zero_popularity_coefficients() {
    let s = year();
    let r = fit_variant(s, ModelVariant::PsiOnly, &FitOptions::default()).unwrap();
    assert!(r.theta[7..11].iter().all(Option::is_none));
    let mut theta = [0.0; 10];
    for (t, v) in theta.iter_mut().zip(&r.theta[3..7]) {
        *t = v.unwrap();
    }
    theta[8] = r.theta[11].unwrap();
    theta[9] = r.theta[12].unwrap();
    let full_at_boundary = contribution_loglik(&theta, KernelFamily::PowerLaw, s).unwrap();
    assert!((full_at_boundary - r.loglik_contrib).abs() <= 1e-9 * r.loglik_contrib.abs());
}

#[test]
fn constant_gamma_shares_one_coefficient() {
    let r = fit_variant(year(), ModelVariant::ConstantGamma, &FitOptions::default()).unwrap();
    let g: Vec<f64> = r.theta[7..11].iter().map(|x| x.unwrap()).collect();
    assert!(g.iter().all(|&x| x == g[0]));
    assert_eq!(r.se[7], r.se[10]);
}

#[test]
fn exp_decay_reports_no_offset() {
    let r = fit_variant(year(), ModelVariant::ExpDecay, &FitOptions::default()).unwrap();
    assert_eq!(r.theta[11], None);
    assert_eq!(r.n_params, 6);
    assert!(r.theta[12].unwrap() > 0.0);
}

#[test]
fn information_criteria_follow_the_contribution_likelihood() {
    let r = fit_newton(year(), &FitOptions::default()).unwrap();
    let n = r.n_contributions as f64;
    assert!((r.aic - (20.0 - 2.0 * r.loglik_contrib)).abs() < 1e-9);
    assert!((r.bic - (10.0 * n.ln() - 2.0 * r.loglik_contrib)).abs() < 1e-9);
}

#[test]
fn tiny_dataset_is_flagged() {
    // Five contributions: at most regimes 0..2 are populated, so the
    // remaining regime parameters cannot be estimated.
    let p = Params::PLATFORM_B;
    let mut cfg = crowdpulse_core::SimConfig::new(365.0, 0);
    cfg.max_events = 1_000_000;
    let full = crowdpulse_core::run(&p, &cfg).unwrap().log;
    let mut events = Vec::new();
    let mut contributions = 0;
    for e in full.events() {
        if matches!(e.kind, EventKind::Contribution { .. }) {
            if contributions == 5 {
                break;
            }
            contributions += 1;
        }
        events.push(*e);
    }
    let horizon = events.last().unwrap().time;
    let log = EventLog::new(events, Some(horizon)).unwrap();
    let s = build_sufficient_stats(&log).unwrap();
    assert_eq!(s.event_terms.len(), 5);
    match fit_newton(&s, &FitOptions::default()) {
        Ok(fit) => {
            let flagged = fit.warnings.iter().any(|w| w.contains("empty regime")) || !fit.converged;
            assert!(flagged, "no flag on a five-contribution fit: {:?}", fit.warnings);
            for c in 0..4 {
                if s.contributions_by_regime[c] == 0 {
                    assert!(!fit.estimated[3 + c] && fit.se[3 + c].is_none());
                }
            }
        }
        Err(e) => assert!(matches!(e, Error::SingularHessian { .. } | Error::NotNegativeDefinite), "{e}"),
    }
}

#[test]
fn no_contributions_is_insufficient_data() {
    let log = EventLog::new(vec![Event::new(0.0, EventKind::ItemStart(ItemId(0)))], Some(3.0)).unwrap();
    let s = build_sufficient_stats(&log).unwrap();
    assert!(matches!(fit_newton(&s, &FitOptions::default()), Err(Error::InsufficientData(_))));
}

#[test]
fn frozen_components_keep_their_initial_values() {
    let s = year();
    let mut init = Params::PLATFORM_B;
    init.delta = 0.3;
    let opts = FitOptions { init: Init::Params(init), freeze: vec![ParamIndex::Delta], ..FitOptions::default() };
    let fit = fit_newton(s, &opts).unwrap();
    assert_eq!(fit.theta[12], Some(0.3));
    assert!(!fit.estimated[12]);
    assert!(fit.se[12].is_none());
    let free = fit_newton(s, &FitOptions::default()).unwrap();
    assert!(free.loglik_contrib >= fit.loglik_contrib);
}

#[test]
fn fit_uses_contribution_vector_ordering() {
    let p = Params::PLATFORM_B;
    let v = contribution_vector(&p);
    assert_eq!(&v[..4], &p.psi);
    assert_eq!(&v[4..8], &p.gamma);
    assert_eq!((v[8], v[9]), (p.kappa, p.delta));
}
