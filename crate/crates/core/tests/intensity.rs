mod common;

use common::{pair_histories, pair_pieces, quad};
use crowdpulse_core::event::Regime;
use crowdpulse_core::{pair_compensator, pair_intensity, DecayKernel, PairSegment, Params};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn compensator_matches_quadrature_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let p = common::perturbed(&Params::PLATFORM_B, rng.random(), 0.5);
        let log = common::small_log(&p, rng.random(), 60);
        for hist in pair_histories(&p, &log) {
            if checked >= 100 {
                break;
            }
            let segments: Vec<PairSegment> = hist.iter().map(|h| h.0).collect();
            // A random evaluation point inside the covered window.
            let k = rng.random_range(0..hist.len());
            let seg = segments[k];
            let t = seg.lo + rng.random::<f64>() * (seg.hi - seg.lo);
            let closed = pair_compensator(&p, &segments, t).unwrap();
            let f = |v: f64| {
                let c = seg.regime.index();
                (p.psi[c] + p.gamma[c] * seg.popularity) * (v - seg.registered + p.kappa).powf(-(1.0 + p.delta))
            };
            let numeric: f64 = hist[..k].iter().map(|h| h.1).sum::<f64>() + quad(&f, seg.lo, t, 1e-14);
            if numeric > 0.0 {
                let rel = (closed - numeric).abs() / numeric;
                worst = worst.max(rel);
                assert!(rel <= 1e-8, "closed {closed} vs quadrature {numeric} (rel {rel:e})");
                checked += 1;
            }
        }
    }
    assert!(worst < 1e-8);
}

#[test]
fn pieces_oracle_matches_pair_compensator_at_horizon() {
    let p = Params::PLATFORM_B;
    let log = common::small_log(&p, 9, 80);
    let pieces = pair_pieces(&log);
    let oracle: f64 = pieces.iter().map(|x| common::piece_mass(&p, x)).sum();
    let mut lib = 0.0;
    for hist in pair_histories(&p, &log) {
        let segs: Vec<PairSegment> = hist.iter().map(|h| h.0).collect();
        lib += pair_compensator(&p, &segs, segs.last().unwrap().hi).unwrap();
    }
    assert!((oracle - lib).abs() <= 1e-12 * oracle.max(1.0), "{oracle} vs {lib}");
}

#[test]
fn compensator_rejects_gaps_and_out_of_window_times() {
    let p = Params::PLATFORM_A;
    let seg = |lo, hi| PairSegment { lo, hi, regime: Regime::ZERO, popularity: 0.0, registered: 0.0 };
    assert!(pair_compensator(&p, &[seg(0.0, 1.0), seg(1.5, 2.0)], 1.8).is_err());
    assert!(pair_compensator(&p, &[seg(0.0, 1.0)], 1.5).is_err());
    assert!(pair_compensator(&p, &[], 0.0).is_err());
}

#[test]
fn intensity_requires_registered_user_and_active_item() {
    let p = Params::PLATFORM_A;
    let log = common::small_log(&p, 3, 40);
    let state = log.replay().unwrap();
    assert!(pair_intensity(&p, &state, crowdpulse_core::UserId(9999), crowdpulse_core::ItemId(0), 1.0).is_err());
}

fn kernel_strategy() -> impl Strategy<Value = DecayKernel> {
    prop_oneof![
        (1e-4f64..10.0, 1e-3f64..3.0).prop_map(|(kappa, delta)| DecayKernel::PowerLaw { kappa, delta }),
        (1e-3f64..5.0).prop_map(|rate| DecayKernel::Exponential { delta: rate }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernel_integral_is_additive(k in kernel_strategy(), a in 0.0f64..50.0, b in 0.0f64..50.0, c in 0.0f64..50.0) {
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        let whole = k.integral(v[0], v[2]);
        let parts = k.integral(v[0], v[1]) + k.integral(v[1], v[2]);
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.abs().max(1e-300) + 1e-300);
    }

    #[test]
    fn kernel_integral_matches_quadrature(k in kernel_strategy(), a in 0.0f64..20.0, w in 1e-6f64..20.0) {
        let exact = k.integral(a, a + w);
        let numeric = quad(&|x| k.decay(x), a, a + w, 1e-15 * exact.max(1e-300));
        prop_assert!((exact - numeric).abs() <= 1e-9 * exact, "{} vs {}", exact, numeric);
    }

    #[test]
    fn waiting_time_inverts_the_tail(k in kernel_strategy(), m in 1e-5f64..5.0, age in 0.0f64..100.0, q in 1e-12f64..1.0) {
        let mass = m * k.tail(age);
        match k.invert_waiting(m, age, q) {
            Some(w) => {
                prop_assert!(w >= 0.0);
                let used = m * k.integral(age, age + w);
                prop_assert!((used - (-q.ln())).abs() <= 1e-9 * (-q.ln()).max(1e-12) + 1e-12 * mass);
            }
            None => prop_assert!(-q.ln() >= mass * (1.0 - 1e-12)),
        }
    }

    #[test]
    fn compensator_is_linear_in_rates(scale in 0.1f64..10.0, seed in 0u64..1000) {
        let p = Params::PLATFORM_B;
        let mut q = p;
        for c in 0..4 {
            q.psi[c] *= scale;
            q.gamma[c] *= scale;
        }
        let log = common::small_log(&p, seed, 30);
        let a: f64 = pair_pieces(&log).iter().map(|x| common::piece_mass(&p, x)).sum();
        let pieces = pair_pieces(&log);
        let hist: Vec<PairSegment> = pieces.iter().take(1).map(|x| PairSegment {
            lo: x.lo, hi: x.hi, regime: Regime::new(x.regime), popularity: x.popularity, registered: x.registered,
        }).collect();
        if let Some(seg) = hist.first() {
            let lp = pair_compensator(&p, &hist, seg.hi).unwrap();
            let lq = pair_compensator(&q, &hist, seg.hi).unwrap();
            prop_assert!((lq - scale * lp).abs() <= 1e-12 * lq.abs().max(1e-300));
        }
        prop_assert!(a >= 0.0);
    }
}
