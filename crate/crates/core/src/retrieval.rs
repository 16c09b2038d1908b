//! Magnitude-only solvers: spectral initialization, Wirtinger-flow descent on
//! the intensity cost, and the multi-frequency retrieval pipeline.

use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent f64 methods whenever std is linked
use num_traits::Float;

use num_complex::Complex64;

use crate::linalg::{abs, phase, rel_diff_real, CMat, CVec, RVec};
use crate::operators::{stack_multifreq, BundleSummary, RelativePhaseData, TruncatedSvd, DEFAULT_REL_TOL};
use crate::rng;
use crate::{Error, Result};

/// `find x such that |A x| = b`.
#[derive(Debug, Clone, Copy)]
pub struct PhaselessProblem<'a> {
    pub operator: &'a CMat,
    pub magnitudes: &'a RVec,
}

impl<'a> PhaselessProblem<'a> {
    pub fn new(operator: &'a CMat, magnitudes: &'a RVec) -> Result<Self> {
        if operator.nrows() != magnitudes.len() {
            return Err(Error::shape("magnitude count differs from operator rows"));
        }
        if operator.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        if magnitudes.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid("magnitudes must be finite and non-negative"));
        }
        Ok(Self { operator, magnitudes })
    }

    pub fn unknowns(&self) -> usize {
        self.operator.ncols()
    }

    pub fn samples(&self) -> usize {
        self.operator.nrows()
    }

    /// `‖|A x| − b‖ / ‖b‖`.
    pub fn residual(&self, x: &CVec) -> f64 {
        rel_diff_real(&abs(&(self.operator * x)), self.magnitudes)
    }

    /// `f(x) = (1/2M) Σ (|a_mᴴx|² − b_m²)²`.
    pub fn cost(&self, x: &CVec) -> f64 {
        intensity_cost(&(self.operator * x), self.magnitudes)
    }

    /// Scales `x` so that `‖A x‖ = ‖b‖` (zero stays zero).
    fn scale_to_data(&self, x: CVec) -> CVec {
        let ax = (self.operator * &x).norm();
        if ax > 0.0 {
            x * Complex64::from(self.magnitudes.norm() / ax)
        } else {
            x
        }
    }
}

fn intensity_cost(ax: &CVec, b: &RVec) -> f64 {
    let m = ax.len() as f64;
    ax.iter()
        .zip(b.iter())
        .map(|(z, bm)| {
            let d = z.norm_sqr() - bm * bm;
            d * d
        })
        .sum::<f64>()
        / (2.0 * m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectralOptions {
    pub max_iter: usize,
    /// Stop when successive unit iterates differ by less than this.
    pub tol: f64,
    /// Seed of the power-iteration start vector.
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum InitStatus {
    Ok,
    /// Every magnitude was zero; the returned vector is zero.
    ZeroMagnitudes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInit {
    pub x0: CVec,
    pub status: InitStatus,
    pub iterations: usize,
}

/// Leading eigenvector of `Y = (1/M) Σ b_m² a_m a_mᴴ` (rows of the operator
/// are `a_mᴴ`) by power iteration, scaled so that `‖A x₀‖ = ‖b‖`.
pub fn spectral_init(problem: &PhaselessProblem<'_>, options: &SpectralOptions) -> SpectralInit {
    let a = problem.operator;
    let n = problem.unknowns();
    if problem.magnitudes.iter().all(|&b| b == 0.0) {
        return SpectralInit {
            x0: CVec::zeros(n),
            status: InitStatus::ZeroMagnitudes,
            iterations: 0,
        };
    }
    let weights = problem
        .magnitudes
        .map(|b| Complex64::from(b * b / problem.samples() as f64));
    let apply_y = |v: &CVec| a.adjoint() * (a * v).component_mul(&weights);

    let mut r = rng::seeded(options.seed);
    let mut v = rng::complex_normal_vector(&mut r, n).normalize();
    let mut iterations = 0;
    for it in 0..options.max_iter {
        iterations = it + 1;
        let w = apply_y(&v);
        let norm = w.norm();
        if !(norm > 0.0) {
            break;
        }
        let w = w / Complex64::from(norm);
        let delta = (&w - &v).norm();
        v = w;
        if delta < options.tol {
            break;
        }
    }
    SpectralInit {
        x0: problem.scale_to_data(v),
        status: InitStatus::Ok,
        iterations,
    }
}

/// Complex-normal initial guess scaled like [`spectral_init`].
pub fn random_init(problem: &PhaselessProblem<'_>, seed: u64) -> CVec {
    let mut r = rng::seeded(seed);
    problem.scale_to_data(rng::complex_normal_vector(&mut r, problem.unknowns()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WirtingerOptions {
    pub max_iter: usize,
    /// Step ramp time constant `t₀` in `μ_t = min(1 − e^{−t/t₀}, μ_max)`.
    pub t0: f64,
    pub mu_max: f64,
    /// Stop once the relative magnitude residual drops below this.
    pub stop_tol: f64,
}

impl Default for WirtingerOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            t0: 330.0,
            mu_max: 0.2,
            stop_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No cost-decreasing step was found even after repeated step halving.
    Stalled,
    /// The iterate became non-finite.
    Diverged,
    /// All target magnitudes were zero and the start was already zero.
    Trivial,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveReport {
    pub solution: CVec,
    pub iterations: usize,
    /// Relative magnitude residual after every accepted iterate, starting
    /// with the initial guess.
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub termination: Termination,
    /// Seed of the initial guess, if it was random.
    pub seed: Option<u64>,
    /// Filled in by callers that own a clock.
    pub wall_time_s: Option<f64>,
}

impl SolveReport {
    pub fn residual_history_db(&self) -> Vec<f64> {
        self.residual_history.iter().map(|&r| crate::linalg::db20(r)).collect()
    }

    /// Running minimum of the residual history.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.residual_history
            .iter()
            .map(|&r| {
                best = best.min(r);
                best
            })
            .collect()
    }

    /// Equality ignoring wall time.
    pub fn same_result(&self, other: &SolveReport) -> bool {
        SolveReport {
            wall_time_s: None,
            ..self.clone()
        } == SolveReport {
            wall_time_s: None,
            ..other.clone()
        }
    }
}

const MAX_STEP_HALVINGS: usize = 40;

/// Wirtinger-flow descent on `f(x) = (1/2M) Σ (|a_mᴴx|² − b_m²)²` with
/// gradient `g = (1/M) Σ (|a_mᴴx|² − b_m²)(a_mᴴx)·a_m` and step
/// `μ_t / ‖x₀‖²`.
///
/// The step is additionally divided by `s⁴`, with `s² = ‖A‖_F²/(MN)` the mean
/// squared operator entry, which makes the canonical parameters apply to
/// operators of arbitrary physical scale (`s = 1` for a standard complex
/// Gaussian operator). A step that would increase the cost is halved until
/// it does not; the halving persists for later iterations.
pub fn wirtinger_solve(problem: &PhaselessProblem<'_>, x0: &CVec, options: &WirtingerOptions) -> Result<SolveReport> {
    let a = problem.operator;
    if x0.len() != problem.unknowns() {
        return Err(Error::shape("initial guess length differs from operator columns"));
    }
    let m = problem.samples() as f64;
    let n = problem.unknowns() as f64;
    let b = problem.magnitudes;
    let b_sq = b.map(|v| v * v);

    let x0_norm_sq = x0.norm_squared();
    let entry_scale_sq = a.norm_squared() / (m * n);
    let mut x = x0.clone();
    let mut ax = a * &x;
    let mut cost = intensity_cost(&ax, b);
    let residual = |ax: &CVec| rel_diff_real(&abs(ax), b);
    let mut history = alloc::vec![residual(&ax)];

    let finish = |x: CVec, iterations: usize, history: Vec<f64>, termination: Termination| {
        let final_residual = *history.last().expect("history holds the initial residual");
        Ok(SolveReport {
            solution: x,
            iterations,
            residual_history: history,
            final_residual,
            termination,
            seed: None,
            wall_time_s: None,
        })
    };

    if history[0] < options.stop_tol {
        return finish(x, 0, history, Termination::Converged);
    }
    if !(x0_norm_sq > 0.0) || !(entry_scale_sq > 0.0) {
        return finish(x, 0, history, Termination::Trivial);
    }
    let base_step = 1.0 / (x0_norm_sq * entry_scale_sq * entry_scale_sq);
    let mut damping = 1.0;

    for t in 1..=options.max_iter {
        let mu = (1.0 - (-(t as f64) / options.t0).exp()).min(options.mu_max);
        let weights = CVec::from_fn(ax.len(), |l, _| ax[l] * (ax[l].norm_sqr() - b_sq[l]));
        let grad = a.adjoint() * weights / Complex64::from(m);

        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let step = Complex64::from(mu * base_step * damping);
            let candidate = &x - &grad * step;
            let a_candidate = a * &candidate;
            let c = intensity_cost(&a_candidate, b);
            if !c.is_finite() {
                return finish(x, t - 1, history, Termination::Diverged);
            }
            if c <= cost {
                accepted = Some((candidate, a_candidate, c));
                break;
            }
            damping *= 0.5;
        }
        let Some((nx, nax, ncost)) = accepted else {
            return finish(x, t - 1, history, Termination::Stalled);
        };
        x = nx;
        ax = nax;
        cost = ncost;
        let r = residual(&ax);
        history.push(r);
        if r < options.stop_tol {
            return finish(x, t, history, Termination::Converged);
        }
    }
    finish(x, options.max_iter, history, Termination::MaxIterations)
}

/// Minimum-norm least-squares solution `A† b` via the truncated SVD.
pub fn linear_solve(a: &CMat, b: &CVec, rel_tol: f64) -> Result<CVec> {
    if a.nrows() != b.len() {
        return Err(Error::shape("right-hand side length differs from operator rows"));
    }
    if b.iter().all(|z| *z == crate::linalg::ZERO) {
        return Ok(CVec::zeros(a.ncols()));
    }
    let svd = TruncatedSvd::new(a, rel_tol)?;
    let coeffs = svd.u.adjoint() * b;
    let scaled = CVec::from_fn(coeffs.len(), |j, _| coeffs[j] / svd.sigma[j]);
    Ok(&svd.v * scaled)
}

/// How the first solve is started.
#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    Spectral,
    Random(u64),
    Given(CVec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieveOptions {
    pub solver: WirtingerOptions,
    pub spectral: SpectralOptions,
    pub rel_tol: f64,
    pub init: InitPolicy,
    /// `false` stops after the single-frequency stage (steps 1 and 4).
    pub multi_frequency: bool,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self {
            solver: WirtingerOptions::default(),
            spectral: SpectralOptions::default(),
            rel_tol: DEFAULT_REL_TOL,
            init: InitPolicy::Spectral,
            multi_frequency: true,
        }
    }
}

/// Forward matrices and relative-phase measurements of one scenario.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub forwards: &'a [CMat],
    pub data: &'a RelativePhaseData,
    pub reference: usize,
}

impl Scenario<'_> {
    pub fn n_freq(&self) -> usize {
        self.forwards.len()
    }

    fn check(&self) -> Result<()> {
        if self.forwards.len() != self.data.n_freq() {
            return Err(Error::shape("one forward matrix per frequency required"));
        }
        if self.reference >= self.forwards.len() {
            return Err(Error::invalid("reference index out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    /// Per-frequency source estimates `x_k`.
    pub currents: Vec<CVec>,
    /// Per-frequency complex sample estimates (measured magnitudes with
    /// estimated phases). Only the reference frequency in single mode.
    pub sample_estimates: Vec<Option<CVec>>,
    pub single: SolveReport,
    pub multi: Option<SolveReport>,
    pub bundle: Option<BundleSummary>,
    pub init_status: InitStatus,
}

impl RetrievalResult {
    /// Source estimate at the reference frequency after the phaseless stages.
    pub fn reference_solution(&self) -> &CVec {
        self.multi.as_ref().map_or(&self.single.solution, |r| &r.solution)
    }
}

/// Measured magnitudes combined with the phases of an estimate
/// (`phase(0) = 0`).
pub fn combine_phases(magnitudes: &RVec, estimate: &CVec) -> CVec {
    CVec::from_fn(magnitudes.len(), |l, _| {
        Complex64::from_polar(magnitudes[l], phase(estimate[l]))
    })
}

/// Full pipeline:
/// 1. single-frequency solve at the reference frequency,
/// 2. multi-frequency solve on the stabilized stack started from step 1,
/// 3. block phases combined with the measured magnitudes,
/// 4. per-frequency linear least squares for the sources.
///
/// With one frequency or `multi_frequency = false`, only steps 1 and 4 run
/// (for the reference frequency).
pub fn multifreq_retrieve(scenario: &Scenario<'_>, options: &RetrieveOptions) -> Result<RetrievalResult> {
    scenario.check()?;
    let i = scenario.reference;
    let a_i = &scenario.forwards[i];
    let mags_i = &scenario.data.magnitudes[i];
    let single_problem = PhaselessProblem::new(a_i, mags_i).map_err(|e| e.in_stage("single-frequency"))?;

    let (x0, init_status, seed) = match &options.init {
        InitPolicy::Spectral => {
            let s = spectral_init(&single_problem, &options.spectral);
            (s.x0, s.status, None)
        }
        InitPolicy::Random(seed) => (random_init(&single_problem, *seed), InitStatus::Ok, Some(*seed)),
        InitPolicy::Given(x) => (x.clone(), InitStatus::Ok, None),
    };
    let mut single =
        wirtinger_solve(&single_problem, &x0, &options.solver).map_err(|e| e.in_stage("single-frequency"))?;
    single.seed = seed;

    let nf = scenario.n_freq();
    let mut sample_estimates: Vec<Option<CVec>> = alloc::vec![None; nf];
    let mut currents = alloc::vec![CVec::zeros(0); nf];

    if nf == 1 || !options.multi_frequency {
        let b_i = combine_phases(mags_i, &(a_i * &single.solution));
        currents[i] = linear_solve(a_i, &b_i, options.rel_tol).map_err(|e| e.in_stage("linear-solve"))?;
        sample_estimates[i] = Some(b_i);
        currents.retain(|c| !c.is_empty());
        return Ok(RetrievalResult {
            currents,
            sample_estimates,
            single,
            multi: None,
            bundle: None,
            init_status,
        });
    }

    let bundle =
        stack_multifreq(scenario.forwards, scenario.data, i, options.rel_tol).map_err(|e| e.in_stage("stack"))?;
    let multi_problem =
        PhaselessProblem::new(&bundle.stacked, &bundle.rhs).map_err(|e| e.in_stage("multi-frequency"))?;
    let mut multi = wirtinger_solve(&multi_problem, &single.solution, &options.solver)
        .map_err(|e| e.in_stage("multi-frequency"))?;
    multi.seed = seed;

    let blocks = bundle.split(&(&bundle.stacked * &multi.solution));
    for (k, block) in blocks.iter().enumerate() {
        let b_k = combine_phases(&scenario.data.magnitudes[k], block);
        currents[k] =
            linear_solve(&scenario.forwards[k], &b_k, options.rel_tol).map_err(|e| e.in_stage("linear-solve"))?;
        sample_estimates[k] = Some(b_k);
    }
    Ok(RetrievalResult {
        currents,
        sample_estimates,
        single,
        multi: Some(multi),
        bundle: Some(bundle.summary()),
        init_status,
    })
}
