use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use crowdpulse_bench::platform;
use crowdpulse_core::{
    build_sufficient_stats, derivatives, fit_newton, log_likelihood, rescale_times, run, FitOptions, Params, SimConfig,
};

fn likelihood(c: &mut Criterion) {
    let log = platform(180.0, 1);
    let s = build_sufficient_stats(&log).unwrap();
    let p = Params::PLATFORM_B;
    let mut g = c.benchmark_group("likelihood");
    g.bench_function("sufficient_stats_180d", |b| b.iter(|| build_sufficient_stats(&log).unwrap()));
    g.bench_function("loglik_180d", |b| b.iter(|| log_likelihood(&p, &s).unwrap()));
    g.bench_function("derivatives_180d", |b| b.iter(|| derivatives(&p, &s).unwrap()));
    g.sample_size(10);
    g.bench_function("fit_180d", |b| b.iter(|| fit_newton(&s, &FitOptions::default()).unwrap()));
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("one_year", |b| {
        let mut seed = 0;
        b.iter_batched(
            || {
                seed += 1;
                SimConfig::new(365.0, seed)
            },
            |cfg| run(&Params::PLATFORM_B, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn rescaling(c: &mut Criterion) {
    let log = platform(180.0, 2);
    c.bench_function("rescale_times_180d", |b| b.iter(|| rescale_times(&Params::PLATFORM_B, &log).unwrap()));
}

criterion_group!(benches, likelihood, simulation, rescaling);
criterion_main!(benches);
