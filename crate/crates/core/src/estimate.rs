//! Newton–Raphson maximum likelihood, standard errors, contagion intervals
//! and information criteria.
//!
//! The item-flow rates have closed-form maximizers and are set directly. The
//! contribution sub-model is fitted by Newton steps on a reduced vector `r`
//! that maps linearly into `(ψ₀..ψ₃, γ₀..γ₃, κ, δ)`, so every variant shares
//! one likelihood implementation: `g_r = Jᵀg` and `H_r = JᵀHJ`.

use std::fmt;
use std::str::FromStr;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::REGIMES;
use crate::likelihood::{
    closed_form_rates, contribution_derivatives, contribution_derivatives_with_sums, contribution_loglik, flow_loglik,
    kernel_sums, KernelFamily, Matrix13, DELTA, KAPPA, N_CONTRIB,
};
use crate::params::{ParamIndex, Params, N_PARAMS, PARAM_NAMES};
use crate::stats::SufficientStats;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Regime-specific `ψ_c` and `γ_c` with power-law decay.
    Full,
    /// One popularity coefficient shared by all regimes.
    ConstantGamma,
    /// No popularity term.
    PsiOnly,
    /// Exponential decay `exp(−δ a)` and one shared popularity coefficient.
    ExpDecay,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] =
        [ModelVariant::Full, ModelVariant::ConstantGamma, ModelVariant::PsiOnly, ModelVariant::ExpDecay];

    pub fn tag(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::ConstantGamma => "const-gamma",
            ModelVariant::PsiOnly => "psi-only",
            ModelVariant::ExpDecay => "exp-decay",
        }
    }

    pub fn family(self) -> KernelFamily {
        match self {
            ModelVariant::ExpDecay => KernelFamily::Exponential,
            _ => KernelFamily::PowerLaw,
        }
    }

    /// Contribution parameters of the variant.
    pub fn n_params(self) -> usize {
        self.layout().len()
    }

    /// For each reduced component, its name and the contribution-vector
    /// positions it drives.
    fn layout(self) -> Vec<(&'static str, Vec<usize>)> {
        let psi = |c: usize| (PARAM_NAMES[3 + c], vec![c]);
        let mut v: Vec<(&'static str, Vec<usize>)> = (0..REGIMES).map(psi).collect();
        match self {
            ModelVariant::Full => {
                v.extend((0..REGIMES).map(|c| (PARAM_NAMES[7 + c], vec![4 + c])));
                v.push(("kappa", vec![KAPPA]));
            }
            ModelVariant::ConstantGamma => {
                v.push(("gamma", vec![4, 5, 6, 7]));
                v.push(("kappa", vec![KAPPA]));
            }
            ModelVariant::PsiOnly => v.push(("kappa", vec![KAPPA])),
            ModelVariant::ExpDecay => v.push(("gamma", vec![4, 5, 6, 7])),
        }
        v.push(("delta", vec![DELTA]));
        v
    }

    /// `J` with `θ₁₀ = J r`.
    fn jacobian(self) -> DMatrix<f64> {
        let layout = self.layout();
        let mut j = DMatrix::zeros(N_CONTRIB, layout.len());
        for (col, (_, rows)) in layout.iter().enumerate() {
            for &r in rows {
                j[(r, col)] = 1.0;
            }
        }
        j
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "full" => Ok(ModelVariant::Full),
            "const-gamma" | "constant-gamma" => Ok(ModelVariant::ConstantGamma),
            "psi-only" => Ok(ModelVariant::PsiOnly),
            "exp-decay" => Ok(ModelVariant::ExpDecay),
            other => Err(Error::InvalidParams(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Auto,
    Params(Params),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub init: Init,
    pub max_iter: usize,
    /// Bound on `max_j |θ_j ∂ℓ/∂θ_j| / max(1, |ℓ|)` over estimated
    /// components.
    pub grad_tol: f64,
    /// Bound on `max_j |Δθ_j / θ_j|`.
    pub step_tol: f64,
    pub max_halvings: usize,
    /// Components held at their initial values.
    pub freeze: Vec<ParamIndex>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            init: Init::Auto,
            max_iter: 200,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            max_halvings: 30,
            freeze: Vec::new(),
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::InvalidParams("tolerances must be positive".into()));
        }
        if let Init::Params(p) = &self.init {
            p.validate()?;
        }
        Ok(())
    }
}

/// Uncertainty summaries in the 13-vector order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub se: [Option<f64>; N_PARAMS],
    pub ci95: [Option<[f64; 2]>; N_PARAMS],
    pub beta: [Option<f64>; REGIMES],
    pub beta_se: [Option<f64>; REGIMES],
    pub beta_ci95: [Option<[f64; 2]>; REGIMES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: ModelVariant,
    pub param_names: Vec<String>,
    /// Estimates in 13-vector order; `null` where the variant has no such
    /// component or the data cannot identify it.
    pub theta: [Option<f64>; N_PARAMS],
    pub estimated: [bool; N_PARAMS],
    pub se: [Option<f64>; N_PARAMS],
    pub ci95: [Option<[f64; 2]>; N_PARAMS],
    pub beta: [Option<f64>; REGIMES],
    pub beta_ci95: [Option<[f64; 2]>; REGIMES],
    /// Full log-likelihood including the item-flow terms.
    pub loglik: f64,
    /// Contribution part, the basis of AIC and BIC.
    pub loglik_contrib: f64,
    pub n_params: usize,
    pub n_contributions: usize,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub warnings: Vec<String>,
    /// Contribution log-likelihood after each accepted iterate.
    pub loglik_trace: Vec<f64>,
}

impl FitResult {
    /// Estimates as a full parameter set; components the variant lacks are
    /// mapped to their nearest nested values (`γ = 0`, `κ` unused).
    pub fn params(&self) -> Option<Params> {
        let v: Vec<f64> = self.theta.iter().map(|x| x.unwrap_or(0.0)).collect();
        Params::from_slice(&v).ok()
    }
}

pub fn information_criteria(loglik: f64, n_params: usize, n_contributions: usize) -> (f64, f64) {
    let k = n_params as f64;
    (2.0 * k - 2.0 * loglik, k * (n_contributions as f64).ln() - 2.0 * loglik)
}

/// SEs, 95% intervals and contagion intervals from a 13-vector covariance.
pub fn uncertainty_from_covariance(
    theta: &[f64; N_PARAMS],
    cov: &Matrix13,
    estimated: &[bool; N_PARAMS],
) -> Uncertainty {
    let mut u = Uncertainty {
        se: [None; N_PARAMS],
        ci95: [None; N_PARAMS],
        beta: [None; REGIMES],
        beta_se: [None; REGIMES],
        beta_ci95: [None; REGIMES],
    };
    for j in 0..N_PARAMS {
        if estimated[j] && cov[(j, j)] >= 0.0 {
            let se = cov[(j, j)].sqrt();
            u.se[j] = Some(se);
            u.ci95[j] = Some([theta[j] - Z95 * se, theta[j] + Z95 * se]);
        }
    }
    for c in 0..REGIMES {
        let (ip, ig) = (3 + c, 7 + c);
        let (psi, gamma) = (theta[ip], theta[ig]);
        if !(psi > 0.0 && gamma > 0.0) {
            continue;
        }
        let beta = gamma / psi;
        u.beta[c] = Some(beta);
        if !(estimated[ip] || estimated[ig]) {
            continue;
        }
        let rel = cov[(ig, ig)] / (gamma * gamma) + cov[(ip, ip)] / (psi * psi) - 2.0 * cov[(ip, ig)] / (psi * gamma);
        if rel >= 0.0 {
            let se = beta * rel.sqrt();
            u.beta_se[c] = Some(se);
            u.beta_ci95[c] = Some([beta - Z95 * se, beta + Z95 * se]);
        }
    }
    u
}

/// Inverse of `−H` restricted to the `estimated` components, zero elsewhere.
pub fn covariance_from_hessian(hess: &Matrix13, estimated: &[bool; N_PARAMS]) -> Result<Matrix13> {
    let idx: Vec<usize> = (0..N_PARAMS).filter(|&j| estimated[j]).collect();
    let m = idx.len();
    let neg = DMatrix::from_fn(m, m, |a, b| -hess[(idx[a], idx[b])]);
    let chol = neg.cholesky().ok_or(Error::NotNegativeDefinite)?;
    let inv = chol.inverse();
    let mut cov = Matrix13::zeros();
    for a in 0..m {
        for b in 0..m {
            cov[(idx[a], idx[b])] = inv[(a, b)];
        }
    }
    Ok(cov)
}

/// SEs from the inverse observed information and Wald intervals.
pub fn standard_errors_and_ci(theta: &Params, hess: &Matrix13, estimated: &[bool; N_PARAMS]) -> Result<Uncertainty> {
    let cov = covariance_from_hessian(hess, estimated)?;
    Ok(uncertainty_from_covariance(&theta.to_array(), &cov, estimated))
}

struct Problem<'a> {
    s: &'a SufficientStats,
    family: KernelFamily,
    jac: DMatrix<f64>,
    free: Vec<usize>,
}

struct Eval {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Problem<'_> {
    fn theta10(&self, r: &DVector<f64>) -> [f64; N_CONTRIB] {
        let t = &self.jac * r;
        std::array::from_fn(|i| t[i])
    }

    fn value(&self, r: &DVector<f64>) -> Option<f64> {
        contribution_loglik(&self.theta10(r), self.family, self.s).ok().filter(|v| v.is_finite())
    }

    fn eval(&self, r: &DVector<f64>) -> Result<Eval> {
        let d = contribution_derivatives(&self.theta10(r), self.family, self.s)?;
        let g10 = DVector::from_column_slice(d.grad.as_slice());
        let h10 = DMatrix::from_column_slice(N_CONTRIB, N_CONTRIB, d.hess.as_slice());
        Ok(Eval { loglik: d.loglik, grad: self.jac.transpose() * g10, hess: self.jac.transpose() * h10 * &self.jac })
    }

    /// Invariant to rescaling any parameter or the likelihood itself, so one
    /// tolerance sits above the rounding floor of the sums at every data size.
    fn scaled_grad_norm(&self, r: &DVector<f64>, e: &Eval) -> f64 {
        let g = &e.grad;
        self.free.iter().map(|&j| (r[j] * g[j]).abs()).fold(0.0, f64::max) / e.loglik.abs().max(1.0)
    }
}

/// Solves `(−H_F + λI) x = g_F` with the smallest boost `λ` that makes the
/// system positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>, free: &[usize]) -> Result<(DVector<f64>, f64)> {
    let m = free.len();
    let neg = DMatrix::from_fn(m, m, |a, b| -hess[(free[a], free[b])]);
    let g = DVector::from_fn(m, |a, _| grad[free[a]]);
    let scale = neg.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut boost = 0.0;
    for attempt in 0..=24 {
        let mut a = neg.clone();
        for k in 0..m {
            a[(k, k)] += boost;
        }
        if let Some(ch) = a.cholesky() {
            return Ok((ch.solve(&g), boost));
        }
        boost = 1e-8 * scale * 10f64.powi(attempt);
    }
    let eig = neg.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    Err(Error::SingularHessian { condition: hi / lo })
}

/// Free components minus those pressed against zero: gradient pointing out of
/// the domain and a scaled gradient entry already below `tol`.
fn off_bound(r: &DVector<f64>, e: &Eval, free: &[usize], tol: f64) -> Vec<usize> {
    let scale = e.loglik.abs().max(1.0);
    free.iter().copied().filter(|&j| !(e.grad[j] < 0.0 && (r[j] * e.grad[j]).abs() <= tol * scale)).collect()
}

/// Bound on the rounding error of an evaluated log-likelihood.
pub fn loglik_rounding(loglik: f64) -> f64 {
    64.0 * f64::EPSILON * loglik.abs().max(1.0)
}

/// Largest step along `dir` that keeps every free component above a tenth of
/// its current value, capped at the full Newton step.
fn max_step(r: &DVector<f64>, dir: &DVector<f64>, free: &[usize]) -> f64 {
    free.iter().enumerate().filter(|&(a, _)| dir[a] < 0.0).map(|(a, &j)| -0.9 * r[j] / dir[a]).fold(1.0, f64::min)
}

/// Newton direction over `free` after holding components that would cut the
/// step below `MIN_STEP`: a component that close to zero blocks every other
/// coordinate, so it stays put while the rest move. Returns the moving set,
/// the direction, the diagonal boost and the step cap.
fn bounded_direction(r: &DVector<f64>, e: &Eval, mut free: Vec<usize>) -> Result<(Vec<usize>, DVector<f64>, f64, f64)> {
    const MIN_STEP: f64 = 1e-6;
    loop {
        let (dir, boost) = newton_direction(&e.hess, &e.grad, &free)?;
        let alpha = max_step(r, &dir, &free);
        if alpha >= MIN_STEP || free.len() == 1 {
            return Ok((free, dir, boost, alpha));
        }
        free = free
            .iter()
            .enumerate()
            .filter(|&(a, &j)| dir[a] >= 0.0 || -0.9 * r[j] / dir[a] >= MIN_STEP)
            .map(|(_, &j)| j)
            .collect();
    }
}

struct NewtonRun {
    r: DVector<f64>,
    last: Eval,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Maximizes over the `free` components of `r` by damped Newton with step
/// halving. Returns the final iterate, iterations, convergence flag and trace.
fn newton(prob: &Problem<'_>, mut r: DVector<f64>, opts: &FitOptions, warnings: &mut Vec<String>) -> Result<NewtonRun> {
    let mut cur = prob.eval(&r)?;
    let mut trace = vec![cur.loglik];
    let mut iterations = 0;
    let mut converged = false;
    if prob.free.is_empty() {
        return Ok(NewtonRun { r, last: cur, iterations: 0, converged: true, trace });
    }
    loop {
        let gnorm = prob.scaled_grad_norm(&r, &cur);
        debug!("newton iter {iterations}: loglik {:.12e}, scaled grad {gnorm:.3e}", cur.loglik);
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            warnings.push(format!("no convergence after {iterations} iterations"));
            break;
        }
        let (active, dir, boost, mut alpha) =
            bounded_direction(&r, &cur, off_bound(&r, &cur, &prob.free, opts.grad_tol))?;
        if boost > 0.0 {
            debug!("diagonal boost {boost:.3e}");
        }
        // Once the predicted gain is below the rounding error of ℓ, comparing
        // values says nothing; the full step of a definite quadratic model is
        // taken as is.
        let predicted = 0.5 * active.iter().enumerate().map(|(a, &j)| cur.grad[j] * dir[a]).sum::<f64>();
        let pure_newton = boost == 0.0 && alpha >= 1.0 && predicted <= loglik_rounding(cur.loglik);
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut cand = r.clone();
            for (a, &j) in active.iter().enumerate() {
                cand[j] += alpha * dir[a];
            }
            if prob.free.iter().all(|&j| cand[j] > 0.0 && cand[j].is_finite()) {
                if let Some(v) = prob.value(&cand) {
                    if v >= cur.loglik || (pure_newton && v >= cur.loglik - loglik_rounding(cur.loglik)) {
                        accepted = Some(cand);
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            warnings.push(format!("step halving exhausted at iteration {iterations} (scaled gradient {gnorm:.3e})"));
            break;
        };
        let rel_step = prob.free.iter().map(|&j| ((next[j] - r[j]) / r[j]).abs()).fold(0.0, f64::max);
        r = next;
        cur = prob.eval(&r)?;
        trace.push(cur.loglik);
        iterations += 1;
        if rel_step <= opts.step_tol {
            converged = prob.scaled_grad_norm(&r, &cur) <= opts.grad_tol;
            if !converged {
                warnings.push(format!("iterates stalled at iteration {iterations} before the gradient test passed"));
            }
            break;
        }
    }
    Ok(NewtonRun { r, last: cur, iterations, converged, trace })
}

/// Maximizes the concave `(ψ, γ)` block at fixed kernel parameters, which
/// only needs the kernel sums once.
fn presolve_rates(prob: &Problem<'_>, r: &mut DVector<f64>, kernel_idx: &[usize]) -> Result<()> {
    let theta = prob.theta10(r);
    let sums = kernel_sums(prob.s, &prob.family.kernel(theta[KAPPA], theta[DELTA]));
    let free: Vec<usize> = prob.free.iter().copied().filter(|j| !kernel_idx.contains(j)).collect();
    if free.is_empty() {
        return Ok(());
    }
    let eval = |r: &DVector<f64>| -> Option<Eval> {
        let d = contribution_derivatives_with_sums(&prob.theta10(r), prob.family, &sums, prob.s).ok()?;
        let g10 = DVector::from_column_slice(d.grad.as_slice());
        let h10 = DMatrix::from_column_slice(N_CONTRIB, N_CONTRIB, d.hess.as_slice());
        Some(Eval { loglik: d.loglik, grad: prob.jac.transpose() * g10, hess: prob.jac.transpose() * h10 * &prob.jac })
    };
    let Some(mut cur) = eval(r) else { return Ok(()) };
    for _ in 0..100 {
        let gnorm = free.iter().map(|&j| (r[j] * cur.grad[j]).abs()).fold(0.0, f64::max) / cur.loglik.abs().max(1.0);
        if gnorm <= 1e-12 {
            break;
        }
        let Ok((active, dir, _, mut alpha)) = bounded_direction(r, &cur, off_bound(r, &cur, &free, 1e-12)) else {
            break;
        };
        let mut moved = false;
        for _ in 0..60 {
            let mut cand = r.clone();
            for (a, &j) in active.iter().enumerate() {
                cand[j] += alpha * dir[a];
            }
            if free.iter().all(|&j| cand[j] > 0.0) {
                if let Some(e) = eval(&cand) {
                    if e.loglik >= cur.loglik {
                        *r = cand;
                        cur = e;
                        moved = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(())
}

/// Fits the full model.
pub fn fit_newton(s: &SufficientStats, opts: &FitOptions) -> Result<FitResult> {
    fit_variant(s, ModelVariant::Full, opts)
}

pub fn fit_variant(s: &SufficientStats, variant: ModelVariant, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let n_contributions = s.event_terms.len();
    if n_contributions == 0 {
        return Err(Error::InsufficientData("no contributions to fit".into()));
    }
    let mut warnings = Vec::new();
    let family = variant.family();
    let layout = variant.layout();
    let jac = variant.jacobian();
    let m = layout.len();

    // Item flow.
    let rates = closed_form_rates(s);
    let frozen13 = |j: usize| opts.freeze.iter().any(|f| f.position() == j);
    let init_params = match &opts.init {
        Init::Params(p) => Some(*p),
        Init::Auto => None,
    };
    let mut flow = [None; 3];
    for (j, (name, est)) in ["phi", "mu", "sigma"].iter().zip([rates.phi, rates.mu, rates.sigma]).enumerate() {
        flow[j] = match (frozen13(j), init_params) {
            (true, Some(p)) => Some(p.to_array()[j]),
            _ => est,
        };
        if flow[j].is_none() {
            warnings.push(format!("{name} is not identified (zero denominator)"));
        }
    }

    // Contribution sub-model: initial reduced vector.
    let empty: Vec<bool> = (0..REGIMES).map(|c| s.contributions_by_regime[c] == 0).collect();
    let mut r = DVector::zeros(m);
    let kernel_idx: Vec<usize> = layout
        .iter()
        .enumerate()
        .filter(|(_, (_, rows))| rows == &vec![KAPPA] || rows == &vec![DELTA])
        .map(|(j, _)| j)
        .collect();
    match init_params {
        Some(p) => {
            let t = crate::likelihood::contribution_vector(&p);
            for (j, (_, rows)) in layout.iter().enumerate() {
                r[j] = rows.iter().map(|&i| t[i]).sum::<f64>() / rows.len() as f64;
            }
        }
        None => auto_init(s, variant, &layout, &mut r),
    }

    // Free set.
    let mut free = Vec::new();
    let mut frozen_names = Vec::new();
    for (j, (name, rows)) in layout.iter().enumerate() {
        let regimes_empty = rows.iter().all(|&i| i < 8 && empty[i % 4]);
        let user_frozen = rows.iter().any(|&i| frozen13(3 + i));
        if regimes_empty {
            warnings.push(format!("empty regime: {name} has no contributions and is fixed at {:.6e}", r[j]));
        } else if user_frozen {
            frozen_names.push(*name);
        } else {
            free.push(j);
        }
    }
    if !frozen_names.is_empty() {
        info!("frozen: {}", frozen_names.join(", "));
    }

    let prob = Problem { s, family, jac: jac.clone(), free };
    if matches!(opts.init, Init::Auto) {
        presolve_rates(&prob, &mut r, &kernel_idx)?;
        if family == KernelFamily::Exponential {
            profile_exp_rate(&prob, &mut r, &kernel_idx)?;
        }
    }
    let NewtonRun { r, last, iterations, converged, trace } = newton(&prob, r, opts, &mut warnings)?;
    let final_grad_norm = prob.scaled_grad_norm(&r, &last);
    if !converged {
        warn!("{variant} fit did not converge (scaled gradient {final_grad_norm:.3e})");
    }

    // Assemble 13-vectors.
    let theta10 = prob.theta10(&r);
    let mut theta = [None; N_PARAMS];
    theta[..3].copy_from_slice(&flow);
    let mut estimated = [false; N_PARAMS];
    for j in 0..3 {
        estimated[j] = flow[j].is_some() && !frozen13(j);
    }
    for (j, (_, rows)) in layout.iter().enumerate() {
        for &i in rows {
            theta[3 + i] = Some(theta10[i]);
            estimated[3 + i] = prob.free.contains(&j);
        }
    }

    // Covariance: reduced block mapped through J, flow block diagonal.
    let mut cov13 = Matrix13::zeros();
    let mut cov_ok = true;
    if !prob.free.is_empty() {
        let f = &prob.free;
        let neg = DMatrix::from_fn(f.len(), f.len(), |a, b| -last.hess[(f[a], f[b])]);
        match neg.cholesky() {
            Some(ch) => {
                let inv = ch.inverse();
                let mut cov_r = DMatrix::zeros(m, m);
                for a in 0..f.len() {
                    for b in 0..f.len() {
                        cov_r[(f[a], f[b])] = inv[(a, b)];
                    }
                }
                let cov10 = &jac * cov_r * jac.transpose();
                for a in 0..N_CONTRIB {
                    for b in 0..N_CONTRIB {
                        cov13[(3 + a, 3 + b)] = cov10[(a, b)];
                    }
                }
            }
            None => {
                cov_ok = false;
                warnings.push("Hessian is not negative definite at the estimate; standard errors omitted".into());
            }
        }
    }
    let counts = [s.counts.starts, s.counts.ends, s.counts.registrations - s.zero_rate_registrations];
    for j in 0..3 {
        if let (true, Some(v)) = (estimated[j], flow[j]) {
            if counts[j] > 0 {
                cov13[(j, j)] = v * v / counts[j] as f64;
            }
        }
    }
    let mut est_for_se = estimated;
    if !cov_ok {
        for e in est_for_se.iter_mut().skip(3) {
            *e = false;
        }
    }
    let theta_arr: [f64; N_PARAMS] = std::array::from_fn(|j| theta[j].unwrap_or(0.0));
    let unc = uncertainty_from_covariance(&theta_arr, &cov13, &est_for_se);

    let flow_params = Params {
        phi: flow[0].unwrap_or(0.0),
        mu: flow[1].unwrap_or(0.0),
        sigma: flow[2].unwrap_or(0.0),
        ..Params::PLATFORM_A
    };
    let loglik = flow_loglik(&flow_params, s) + last.loglik;
    let n_params = prob.free.len();
    let (aic, bic) = information_criteria(last.loglik, n_params, n_contributions);

    // Components absent from the variant are reported as null.
    let mut theta_out = theta;
    let mut se = unc.se;
    let mut ci95 = unc.ci95;
    let absent: Vec<usize> = match variant {
        ModelVariant::PsiOnly => (7..11).collect(),
        ModelVariant::ExpDecay => vec![11],
        _ => Vec::new(),
    };
    for &j in &absent {
        theta_out[j] = None;
        se[j] = None;
        ci95[j] = None;
        estimated[j] = false;
    }

    Ok(FitResult {
        variant,
        param_names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        theta: theta_out,
        estimated,
        se,
        ci95,
        beta: unc.beta,
        beta_ci95: unc.beta_ci95,
        loglik,
        loglik_contrib: last.loglik,
        n_params,
        n_contributions,
        aic,
        bic,
        iterations,
        converged,
        final_grad_norm,
        warnings,
        loglik_trace: trace,
    })
}

/// Default starting point: rates from regime counts over decay-discounted
/// exposure at `κ = 1e-3`, `δ = 0.1`, with `γ = 10ψ`.
fn auto_init(s: &SufficientStats, variant: ModelVariant, layout: &[(&str, Vec<usize>)], r: &mut DVector<f64>) {
    let (kappa, delta) = (1e-3, 0.1);
    let kernel = variant.family().kernel(kappa, delta);
    let (psi_exposure, _) = crate::likelihood::kernel_values(s, &kernel);
    let mut psi = [0.0; REGIMES];
    for c in 0..REGIMES {
        let k = s.contributions_by_regime[c] as f64;
        let k = if k == 0.0 { 0.5 } else { k };
        psi[c] = if psi_exposure[c] > 0.0 { k / psi_exposure[c] } else { 1e-3 };
    }
    for (j, (_, rows)) in layout.iter().enumerate() {
        r[j] = match rows.as_slice() {
            [i] if *i < 4 => psi[*i],
            [i] if *i < 8 => 10.0 * psi[*i - 4],
            [KAPPA] => kappa,
            [DELTA] => delta,
            many => 10.0 * many.iter().map(|&i| psi[i - 4]).sum::<f64>() / many.len() as f64,
        };
    }
}

/// Exponential decay rates live on a different scale from the power-law
/// exponent; start from the best point of a coarse profile over `δ`.
fn profile_exp_rate(prob: &Problem<'_>, r: &mut DVector<f64>, kernel_idx: &[usize]) -> Result<()> {
    let Some(&jd) = kernel_idx.last() else { return Ok(()) };
    if !prob.free.contains(&jd) {
        return Ok(());
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in -4..=4 {
        let mut cand = r.clone();
        cand[jd] = 10f64.powi(k);
        presolve_rates(prob, &mut cand, kernel_idx)?;
        if let Some(v) = prob.value(&cand) {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, cand));
            }
        }
    }
    if let Some((_, b)) = best {
        *r = b;
    }
    Ok(())
}
