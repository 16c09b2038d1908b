//! Information-content and error measures: independent-sample counting,
//! frequency-step planning, near/far-field deviations and local-minimum
//! scatter studies.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // shadowed by inherent f64 methods whenever std is linked
use num_traits::Float;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use crate::consts::C0;
use crate::forward::{assemble_forward, probe_array_rows, DipoleSet, ObservationSet, ProbeArray};
use crate::geometry::{random_directions, Point3};
use crate::linalg::{abs, alignment_phasor, db20, rel_diff, rel_diff_real, CMat, CVec, RVec};
use crate::operators::{stack_multifreq, RelativePhaseData, DEFAULT_REL_TOL};
use crate::retrieval::{
    linear_solve, spectral_init, wirtinger_solve, PhaselessProblem, Scenario, SpectralOptions, WirtingerOptions,
};
use crate::rng;
use crate::{Error, Result};

/// Default singular-value ratio cut for [`count_independent`].
pub const DEFAULT_THRESHOLD: f64 = 1e-5;

/// Floor applied to dB error curves.
pub const DB_FLOOR: f64 = -200.0;

/// `Q_{mn} = |⟨row_m, row_n⟩|²`.
pub fn magnitude_gram(a: &CMat) -> DMatrix<f64> {
    let g = a * a.adjoint();
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)].norm_sqr())
}

/// Number of singular values of `Q` (see [`magnitude_gram`]) with
/// `σ_i/σ₁ ≥ threshold`.
pub fn count_independent(a: &CMat, threshold: f64) -> Result<usize> {
    if a.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    // Q is real symmetric positive semidefinite: its singular values are the
    // absolute eigenvalues.
    let eig = magnitude_gram(a).symmetric_eigenvalues();
    let s_max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if s_max == 0.0 {
        return Ok(0);
    }
    Ok(eig.iter().filter(|v| v.abs() / s_max >= threshold).count())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IndependenceCurve {
    pub label: String,
    /// Actual row counts (requested counts rounded down to whole locations).
    pub sample_counts: Vec<usize>,
    pub counts: Vec<usize>,
    pub threshold: f64,
}

impl IndependenceCurve {
    /// Count at the largest sample count.
    pub fn saturation(&self) -> usize {
        self.counts.last().copied().unwrap_or(0)
    }
}

/// Measurement setups compared at equal row count `M`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum IndependenceSetup {
    /// i.i.d. complex normal `M × n` matrix.
    Gaussian { n: usize, seed: u64 },
    /// θ̂/φ̂ samples on one sphere (2 rows per location).
    SingleSphere { radius: f64 },
    /// The same directions on two spheres (4 rows per direction).
    TwoSpheres { r1: f64, r2: f64 },
    /// Probe array on one sphere (8 rows per location).
    ProbeArray { radius: f64, probe: ProbeArray },
    /// Stabilized multi-frequency stack, 2 rows per location per frequency.
    /// The first frequency is the reference.
    MultiFrequency { radius: f64, frequencies: Vec<f64> },
}

impl IndependenceSetup {
    pub fn label(&self) -> String {
        let s = match self {
            Self::Gaussian { .. } => "gaussian",
            Self::SingleSphere { .. } => "single-sphere",
            Self::TwoSpheres { .. } => "two-spheres",
            Self::ProbeArray { .. } => "probe-array",
            Self::MultiFrequency { .. } => "multi-frequency",
        };
        String::from(s)
    }

    pub fn rows_per_location(&self) -> usize {
        match self {
            Self::Gaussian { .. } => 1,
            Self::SingleSphere { .. } => 2,
            Self::TwoSpheres { .. } => 4,
            Self::ProbeArray { .. } => ProbeArray::ROWS_PER_LOCATION,
            Self::MultiFrequency { frequencies, .. } => 2 * frequencies.len(),
        }
    }
}

/// Source model and sampling directions shared by all setups of a sweep.
#[derive(Debug, Clone)]
pub struct IndependenceScenario {
    pub dipoles: DipoleSet,
    /// Frequency of the single-frequency setups.
    pub frequency: f64,
    /// Seed of the (nested) random sampling directions.
    pub direction_seed: u64,
}

impl IndependenceScenario {
    /// Operator with (at most) `m` rows for `setup`; locations are the first
    /// `⌊m / rows_per_location⌋` directions of a fixed random sequence.
    pub fn operator(&self, setup: &IndependenceSetup, m: usize) -> Result<CMat> {
        let n_loc = m / setup.rows_per_location();
        if n_loc == 0 {
            return Err(Error::invalid("sample count below one location"));
        }
        let dirs = random_directions(n_loc, self.direction_seed);
        let on_sphere = |r: f64| dirs.iter().map(|d| d * r).collect::<Vec<Point3>>();
        let f = self.frequency;
        match setup {
            IndependenceSetup::Gaussian { n, seed } => {
                let mut r = rng::seeded(*seed);
                Ok(rng::complex_normal_matrix(&mut r, m, *n))
            }
            IndependenceSetup::SingleSphere { radius } => Ok(assemble_forward(
                &self.dipoles,
                &ObservationSet::two_polarizations(&on_sphere(*radius)),
                f,
            )?
            .matrix),
            IndependenceSetup::TwoSpheres { r1, r2 } => {
                let mut pts = on_sphere(*r1);
                pts.extend(on_sphere(*r2));
                Ok(assemble_forward(&self.dipoles, &ObservationSet::two_polarizations(&pts), f)?.matrix)
            }
            IndependenceSetup::ProbeArray { radius, probe } => {
                Ok(probe_array_rows(&self.dipoles, &on_sphere(*radius), probe, f)?.matrix)
            }
            IndependenceSetup::MultiFrequency { radius, frequencies } => {
                if frequencies.is_empty() {
                    return Err(Error::invalid("multi-frequency setup needs frequencies"));
                }
                let obs = ObservationSet::two_polarizations(&on_sphere(*radius));
                let x = self.dipoles.excitation_vector();
                let forwards = frequencies
                    .iter()
                    .map(|&fk| assemble_forward(&self.dipoles, &obs, fk).map(|a| a.matrix))
                    .collect::<Result<Vec<_>>>()?;
                let samples: Vec<CVec> = forwards.iter().map(|a| a * &x).collect();
                let data = RelativePhaseData::from_complex(&samples, 0)?;
                Ok(stack_multifreq(&forwards, &data, 0, DEFAULT_REL_TOL)?.stacked)
            }
        }
    }
}

/// Independent-sample count for every requested `M`.
pub fn independence_sweep(
    label: String,
    mut generator: impl FnMut(usize) -> Result<CMat>,
    sample_counts: &[usize],
    threshold: f64,
) -> Result<IndependenceCurve> {
    let mut curve = IndependenceCurve {
        label,
        sample_counts: Vec::with_capacity(sample_counts.len()),
        counts: Vec::with_capacity(sample_counts.len()),
        threshold,
    };
    for &m in sample_counts {
        let a = generator(m)?;
        curve.sample_counts.push(a.nrows());
        curve.counts.push(count_independent(&a, threshold)?);
    }
    Ok(curve)
}

/// `|σ₂/σ₁|` of the 2×N matrix whose rows map the sources to `E_z` at `obs`,
/// one row per frequency, each scaled by `1/ω`.
pub fn freq_step_ratio(dipoles: &DipoleSet, obs: &Point3, f1: f64, f2: f64) -> Result<f64> {
    if !(f1 > 0.0 && f2 > 0.0) || !f1.is_finite() || !f2.is_finite() {
        return Err(Error::invalid("frequencies must be positive"));
    }
    let set = ObservationSet::new(alloc::vec![*obs], alloc::vec![Vector3::z()])?;
    let row = |f: f64| -> Result<CVec> {
        let a = assemble_forward(dipoles, &set, f)?.matrix;
        Ok(a.row(0).transpose() / Complex64::from(2.0 * PI * f))
    };
    let r1 = row(f1)?;
    let r2 = row(f2)?;
    // eigenvalues of the 2×2 Gram matrix; the determinant form gives an exact
    // zero for identical rows
    let n1 = r1.norm_squared();
    let n2 = r2.norm_squared();
    let det = (n1 * n2 - r1.dotc(&r2).norm_sqr()).max(0.0);
    let tr = n1 + n2;
    let l1 = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
    if l1 == 0.0 {
        return Ok(0.0);
    }
    Ok((det / l1 / l1).sqrt())
}

/// `(Δf, ratio)` pairs for `f₂ = f₁ + Δf`.
pub fn freq_step_curve(dipoles: &DipoleSet, obs: &Point3, f1: f64, steps: &[f64]) -> Result<Vec<(f64, f64)>> {
    steps
        .iter()
        .map(|&df| freq_step_ratio(dipoles, obs, f1, f1 + df).map(|r| (df, r)))
        .collect()
}

/// Largest useful frequency step `c₀/(2d)` (ordinary frequency, Hz) for a
/// source enclosed by a sphere of radius `d`.
pub fn max_freq_step(d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid("enclosing radius must be positive"));
    }
    Ok(C0 / (2.0 * d))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FfErrorCurve {
    /// `20·log₁₀| |E|/max|E| − |E_ref|/max|E_ref| |`, floored at [`DB_FLOOR`].
    pub db: Vec<f64>,
    pub max_db: f64,
}

pub fn ff_error_curve(e: &CVec, e_ref: &CVec) -> Result<FfErrorCurve> {
    if e.len() != e_ref.len() {
        return Err(Error::shape("pattern cuts differ in length"));
    }
    let ref_max = e_ref.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if ref_max == 0.0 {
        return Err(Error::ZeroReference("reference pattern"));
    }
    let e_max = e.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let db: Vec<f64> = e
        .iter()
        .zip(e_ref.iter())
        .map(|(a, r)| {
            let na = if e_max > 0.0 { a.norm() / e_max } else { 0.0 };
            db20((na - r.norm() / ref_max).abs()).max(DB_FLOOR)
        })
        .collect();
    let max_db = db.iter().fold(DB_FLOOR, |m, &v| m.max(v));
    Ok(FfErrorCurve { db, max_db })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorMetrics {
    /// `‖|b| − |b_ref|‖ / ‖b_ref‖`.
    pub mag: f64,
    /// `‖b − b_ref‖ / ‖b_ref‖`.
    pub compl: f64,
}

impl ErrorMetrics {
    pub fn mag_db(&self) -> f64 {
        db20(self.mag)
    }

    pub fn compl_db(&self) -> f64 {
        db20(self.compl)
    }
}

fn check_pair(b: &CVec, b_ref: &CVec) -> Result<()> {
    if b.len() != b_ref.len() {
        return Err(Error::shape("sample vectors differ in length"));
    }
    if b_ref.norm() == 0.0 {
        return Err(Error::ZeroReference("reference samples"));
    }
    Ok(())
}

/// Magnitude and complex near-field deviations, phase taken literally.
pub fn nf_errors(b: &CVec, b_ref: &CVec) -> Result<ErrorMetrics> {
    check_pair(b, b_ref)?;
    Ok(ErrorMetrics {
        mag: rel_diff_real(&abs(b), &abs(b_ref)),
        compl: rel_diff(b, b_ref),
    })
}

/// As [`nf_errors`] after removing the best global phase from `b`.
pub fn nf_errors_aligned(b: &CVec, b_ref: &CVec) -> Result<ErrorMetrics> {
    check_pair(b, b_ref)?;
    nf_errors(&(b * alignment_phasor(b, b_ref)), b_ref)
}

/// Initial guess used in a scatter-study trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum InitKind {
    Spectral,
    /// Solution of the single-frequency problem (spectral start).
    SingleFrequency,
    Random,
    /// The true sources (noiseless sanity check).
    Truth,
}

impl InitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Spectral => "spectral",
            Self::SingleFrequency => "single-frequency",
            Self::Random => "random",
            Self::Truth => "truth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScatterMode {
    /// Phaseless problem at the reference frequency only.
    SingleFrequency,
    /// Stabilized multi-frequency stack.
    MultiFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScatterPoint {
    pub trial: usize,
    pub mag_dev_db: f64,
    pub compl_dev_db: f64,
    pub init_kind: InitKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOptions {
    pub mode: ScatterMode,
    pub n_trials: usize,
    /// Initial guess of trial 0; all other trials start at random.
    pub special: Option<InitKind>,
    /// Trial `t` draws its random start from `derive_seed(base_seed, t)`.
    pub base_seed: u64,
    pub solver: WirtingerOptions,
    pub spectral: SpectralOptions,
    pub rel_tol: f64,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self {
            mode: ScatterMode::MultiFrequency,
            n_trials: 20,
            special: Some(InitKind::SingleFrequency),
            base_seed: 0,
            solver: WirtingerOptions::default(),
            spectral: SpectralOptions::default(),
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

/// Prepared scatter study: one phaseless solve per trial, recording the
/// magnitude deviation `‖|Ax| − b‖/‖b‖` and the phase-aligned complex
/// deviation `‖Ax − Ax_true‖/‖Ax_true‖` of the solved problem (the
/// reference-frequency operator, or the stabilized stack), both in dB.
#[derive(Debug, Clone)]
pub struct ScatterStudy {
    options: ScatterOptions,
    single_operator: CMat,
    single_magnitudes: RVec,
    operator: CMat,
    magnitudes: RVec,
    x_true: CVec,
    target: CVec,
}

impl ScatterStudy {
    /// `truth` holds the true complex samples per frequency.
    pub fn new(scenario: &Scenario<'_>, truth: &[CVec], options: &ScatterOptions) -> Result<Self> {
        if options.n_trials == 0 {
            return Err(Error::invalid("scatter study needs at least one trial"));
        }
        if truth.len() != scenario.n_freq() || scenario.reference >= truth.len() {
            return Err(Error::shape("one truth vector per frequency required"));
        }
        let i = scenario.reference;
        let a_i = scenario.forwards[i].clone();
        let mags_i = scenario.data.magnitudes[i].clone();
        PhaselessProblem::new(&a_i, &mags_i)?;
        let x_true = linear_solve(&a_i, &truth[i], options.rel_tol)?;
        let (operator, magnitudes) = match options.mode {
            ScatterMode::SingleFrequency => (a_i.clone(), mags_i.clone()),
            ScatterMode::MultiFrequency => {
                let bundle = stack_multifreq(scenario.forwards, scenario.data, i, options.rel_tol)?;
                (bundle.stacked, bundle.rhs)
            }
        };
        let target = &operator * &x_true;
        Ok(Self {
            options: options.clone(),
            single_operator: a_i,
            single_magnitudes: mags_i,
            operator,
            magnitudes,
            x_true,
            target,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.options.n_trials
    }

    pub fn init_kind(&self, trial: usize) -> InitKind {
        match self.options.special {
            Some(k) if trial == 0 => k,
            _ => InitKind::Random,
        }
    }

    /// Trials are independent; each depends only on its index.
    pub fn trial(&self, trial: usize) -> Result<ScatterPoint> {
        let o = &self.options;
        let problem = PhaselessProblem::new(&self.operator, &self.magnitudes)?;
        let kind = self.init_kind(trial);
        let x0 = match kind {
            InitKind::Random => crate::retrieval::random_init(&problem, rng::derive_seed(o.base_seed, trial as u64)),
            InitKind::Truth => self.x_true.clone(),
            InitKind::Spectral => spectral_init(&problem, &o.spectral).x0,
            InitKind::SingleFrequency => {
                let single = PhaselessProblem::new(&self.single_operator, &self.single_magnitudes)?;
                let s = spectral_init(&single, &o.spectral);
                wirtinger_solve(&single, &s.x0, &o.solver)?.solution
            }
        };
        let report = wirtinger_solve(&problem, &x0, &o.solver)?;
        let ax = &self.operator * &report.solution;
        let m = nf_errors_aligned(&ax, &self.target)?;
        Ok(ScatterPoint {
            trial,
            mag_dev_db: db20(rel_diff_real(&abs(&ax), &self.magnitudes)).max(DB_FLOOR),
            compl_dev_db: m.compl_db().max(DB_FLOOR),
            init_kind: kind,
        })
    }
}

/// All trials of a [`ScatterStudy`] in order.
pub fn scatter_study(scenario: &Scenario<'_>, truth: &[CVec], options: &ScatterOptions) -> Result<Vec<ScatterPoint>> {
    let study = ScatterStudy::new(scenario, truth, options)?;
    (0..study.n_trials()).map(|t| study.trial(t)).collect()
}

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median complex deviation of non-converged trials minus that of converged
/// ones, where converged means `compl_dev_db < converged_db`. `None` when
/// either group is empty.
pub fn minima_gap(points: &[ScatterPoint], converged_db: f64) -> Option<f64> {
    let (good, bad): (Vec<f64>, Vec<f64>) = {
        let good = points
            .iter()
            .filter(|p| p.compl_dev_db < converged_db)
            .map(|p| p.compl_dev_db)
            .collect();
        let bad = points
            .iter()
            .filter(|p| p.compl_dev_db >= converged_db)
            .map(|p| p.compl_dev_db)
            .collect();
        (good, bad)
    };
    Some(median(&bad)? - median(&good)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dipole_hull_sphere, dipole_ring, fibonacci_sphere};
    use crate::rng::{complex_normal_matrix, seeded};
    use alloc::vec;

    fn count(a: &CMat) -> usize {
        count_independent(a, DEFAULT_THRESHOLD).unwrap()
    }

    #[test]
    fn single_row_counts_one() {
        let mut r = seeded(1);
        assert_eq!(count(&complex_normal_matrix(&mut r, 1, 5)), 1);
        assert!(count_independent(&CMat::zeros(0, 3), DEFAULT_THRESHOLD).is_err());
    }

    #[test]
    fn gaussian_n4_saturates() {
        // Regression value L₄ from a dense brute-force sweep M = 4, 8, …, 64:
        // counts follow min(M, 16), i.e. the N² dimension of Hermitian 4×4
        // matrices a·aᴴ.
        for m in (4..=64).step_by(4) {
            let mut r = seeded(40 + m as u64);
            assert_eq!(count(&complex_normal_matrix(&mut r, m, 4)), m.min(16), "M = {m}");
        }
    }

    #[test]
    fn gram_matches_definition() {
        let mut r = seeded(2);
        let a = complex_normal_matrix(&mut r, 5, 3);
        let q = magnitude_gram(&a);
        for m in 0..5 {
            for n in 0..5 {
                let mut s = Complex64::new(0.0, 0.0);
                for c in 0..3 {
                    s += a[(m, c)] * a[(n, c)].conj();
                }
                assert!((q[(m, n)] - s.norm_sqr()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_row_never_increases_count() {
        let mut r = seeded(3);
        let a = complex_normal_matrix(&mut r, 12, 3);
        let base = count(&a);
        let mut b = CMat::zeros(13, 3);
        b.rows_mut(0, 12).copy_from(&a);
        b.row_mut(12).copy_from(&a.row(4));
        assert!(count(&b) <= base);
    }

    #[test]
    fn orthogonal_rows_count_fully() {
        let a = CMat::identity(7, 7) * Complex64::new(0.0, 3.0);
        assert_eq!(count(&a), 7);
    }

    #[test]
    fn sweep_reports_actual_rows() {
        let hull = dipole_hull_sphere(12, 0.02, 1).unwrap();
        let sc = IndependenceScenario {
            dipoles: hull,
            frequency: 3e9,
            direction_seed: 4,
        };
        let setup = IndependenceSetup::ProbeArray {
            radius: 1.0,
            probe: ProbeArray::new(0.05, crate::forward::Displacement::Alternate).unwrap(),
        };
        let curve = independence_sweep(setup.label(), |m| sc.operator(&setup, m), &[17, 40], 1e-5).unwrap();
        assert_eq!(curve.sample_counts, vec![16, 40]);
        assert!(curve.counts.iter().zip(&curve.sample_counts).all(|(c, m)| c <= m));
        assert!(sc.operator(&setup, 7).is_err());
    }

    #[test]
    fn single_sphere_curve_non_decreasing() {
        let hull = dipole_hull_sphere(16, 0.03, 2).unwrap();
        let sc = IndependenceScenario {
            dipoles: hull,
            frequency: 3e9,
            direction_seed: 5,
        };
        let setup = IndependenceSetup::SingleSphere { radius: 0.5 };
        let ms: Vec<usize> = (1..=10).map(|k| 20 * k).collect();
        let curve = independence_sweep(setup.label(), |m| sc.operator(&setup, m), &ms, 1e-5).unwrap();
        assert!(curve.counts.windows(2).all(|w| w[1] >= w[0]), "{:?}", curve.counts);
    }

    #[test]
    fn freq_step_ratio_basics() {
        let ring = dipole_ring(50, 0.3).unwrap();
        let obs = Point3::new(2.1, 0.0, 0.0);
        assert_eq!(freq_step_ratio(&ring, &obs, 1e9, 1e9).unwrap(), 0.0);
        let a = freq_step_ratio(&ring, &obs, 1e9, 1.2e9).unwrap();
        let b = freq_step_ratio(&ring, &obs, 1.2e9, 1e9).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a > 0.0 && a <= 1.0);
        let scaled = ring
            .with_excitations(&(ring.excitation_vector() * Complex64::new(0.0, 7.0)))
            .unwrap();
        assert!((freq_step_ratio(&scaled, &obs, 1e9, 1.2e9).unwrap() - a).abs() < 1e-12);
        assert!(freq_step_ratio(&ring, &obs, 0.0, 1e9).is_err());
    }

    #[test]
    fn freq_step_ratio_matches_dense_svd() {
        let ring = dipole_ring(40, 0.5).unwrap();
        let obs = Point3::new(2.1, 0.0, 0.0);
        let set = ObservationSet::new(vec![obs], vec![Vector3::z()]).unwrap();
        let (f1, f2) = (1e9, 1.13e9);
        let mut m = CMat::zeros(2, 40);
        for (r, f) in [f1, f2].into_iter().enumerate() {
            let a = assemble_forward(&ring, &set, f).unwrap().matrix;
            m.row_mut(r).copy_from(&(a.row(0) / Complex64::from(2.0 * PI * f)));
        }
        let s = m.singular_values();
        let want = s.min() / s.max();
        assert!((freq_step_ratio(&ring, &obs, f1, f2).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn max_freq_step_values() {
        for (d, want) in [(0.18, 832.8e6), (1.38, 108.6e6), (0.5, 299.8e6)] {
            let got = max_freq_step(d).unwrap();
            assert!((got - want).abs() / want < 1e-3, "{d}: {got}");
        }
        assert!(max_freq_step(0.0).is_err());
    }

    #[test]
    fn ff_error_curve_normalization() {
        let mut r = seeded(6);
        let e = rng::complex_normal_vector(&mut r, 30);
        let c = ff_error_curve(&e, &e).unwrap();
        assert!(c.db.iter().all(|&v| v == DB_FLOOR));
        let c2 = ff_error_curve(&(&e * Complex64::new(2.0, 0.0)), &e).unwrap();
        assert!(c2.db.iter().all(|&v| v == DB_FLOOR));
        let other = rng::complex_normal_vector(&mut r, 30);
        let base = ff_error_curve(&other, &e).unwrap();
        let scaled = ff_error_curve(&(&other * Complex64::new(0.0, 3.0)), &(&e * Complex64::new(-0.5, 0.5))).unwrap();
        for (a, b) in base.db.iter().zip(&scaled.db) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(ff_error_curve(&e, &CVec::zeros(30)).is_err());
        assert!(ff_error_curve(&e, &CVec::zeros(3)).is_err());
    }

    #[test]
    fn nf_error_cases() {
        let mut r = seeded(7);
        let b = rng::complex_normal_vector(&mut r, 20);
        let same = nf_errors(&b, &b).unwrap();
        assert_eq!((same.mag, same.compl), (0.0, 0.0));
        let flip = nf_errors(&(-&b), &b).unwrap();
        assert!(flip.mag < 1e-15);
        assert!((flip.compl - 2.0).abs() < 1e-12);
        assert!((flip.compl_db() - 6.0206).abs() < 1e-3);
        let aligned = nf_errors_aligned(&(&b * Complex64::from_polar(1.0, 2.0)), &b).unwrap();
        assert!(aligned.compl < 1e-12);
        assert!(nf_errors(&b, &CVec::zeros(20)).is_err());
    }

    #[test]
    fn magnitude_match_does_not_imply_field_match() {
        // planar near-field samples: a phase-conjugate-like solution can match
        // magnitudes while the complex field is far off
        let hull = dipole_hull_sphere(40, 0.05, 3).unwrap();
        let pts = crate::geometry::planar_grid(0.4, 0.4, 0.05, 0.3).unwrap();
        let obs = ObservationSet::cartesian_xy(&pts);
        let a = assemble_forward(&hull, &obs, 3.5e9).unwrap().matrix;
        let b = &a * hull.excitation_vector();
        let wrong = CVec::from_fn(b.len(), |l, _| {
            Complex64::from_polar(b[l].norm(), (l as f64 * 1.7).sin() * 2.0)
        });
        let m = nf_errors_aligned(&wrong, &b).unwrap();
        assert!(m.mag_db() < -100.0);
        assert!(m.compl_db() > -6.0);
    }

    #[test]
    fn scatter_truth_start_and_determinism() {
        let hull = dipole_hull_sphere(12, 0.03, 4).unwrap();
        let pts = fibonacci_sphere(30, 0.5).unwrap();
        let obs = ObservationSet::two_polarizations(&pts);
        let freqs = [3e9, 3.5e9];
        let forwards: Vec<CMat> = freqs
            .iter()
            .map(|&f| assemble_forward(&hull, &obs, f).unwrap().matrix)
            .collect();
        let truth: Vec<CVec> = forwards.iter().map(|a| a * hull.excitation_vector()).collect();
        let data = RelativePhaseData::from_complex(&truth, 0).unwrap();
        let scen = Scenario {
            forwards: &forwards,
            data: &data,
            reference: 0,
        };
        for mode in [ScatterMode::SingleFrequency, ScatterMode::MultiFrequency] {
            let opts = ScatterOptions {
                mode,
                n_trials: 1,
                special: Some(InitKind::Truth),
                ..ScatterOptions::default()
            };
            let p = scatter_study(&scen, &truth, &opts).unwrap();
            assert!(p[0].mag_dev_db <= -120.0 && p[0].compl_dev_db <= -120.0, "{p:?}");
            assert_eq!(p[0].init_kind, InitKind::Truth);
        }
        let opts = ScatterOptions {
            n_trials: 3,
            solver: WirtingerOptions {
                max_iter: 200,
                ..WirtingerOptions::default()
            },
            ..ScatterOptions::default()
        };
        let a = scatter_study(&scen, &truth, &opts).unwrap();
        let b = scatter_study(&scen, &truth, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].init_kind, InitKind::SingleFrequency);
        assert_eq!(a[1].init_kind, InitKind::Random);
    }

    #[test]
    fn gap_and_median() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let pt = |d: f64| ScatterPoint {
            trial: 0,
            mag_dev_db: -40.0,
            compl_dev_db: d,
            init_kind: InitKind::Random,
        };
        let pts = [pt(-80.0), pt(-60.0), pt(-5.0), pt(-3.0), pt(-1.0)];
        assert_eq!(minima_gap(&pts, -30.0), Some(-3.0 - (-70.0)));
        assert_eq!(minima_gap(&pts[..2], -30.0), None);
    }
}
