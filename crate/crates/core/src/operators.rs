//! Pseudo-inverses, projections onto the physically realizable measurement
//! space, inter-frequency diagonal maps and the stacked multi-frequency
//! operators.
//!
//! A measurement vector is physical at frequency `k` when the sources can
//! produce it, i.e. when it is a fixed point of `P_k = A_k A_k†`. Relative
//! phase data ties every frequency to a reference frequency `i`, so a single
//! source vector `x_i` has to explain the magnitudes at all frequencies at
//! once.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::linalg::{scale_rows, CMat, CVec, RVec, ZERO};
use crate::{Error, Result};

/// Default relative singular-value cut for every pseudo-inverse.
pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Oversampling below this factor (samples per unknown at the highest
/// frequency) leaves the projections close to identity.
pub const OVERSAMPLING_WARN_FACTOR: usize = 2;

/// Thin SVD restricted to singular values with `σ/σ_max ≥ rel_tol`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// Left singular vectors, `M × r`.
    pub u: CMat,
    pub sigma: RVec,
    /// Right singular vectors, `N × r`.
    pub v: CMat,
    pub sigma_max: f64,
}

impl TruncatedSvd {
    pub fn new(a: &CMat, rel_tol: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        check_tol(rel_tol)?;
        let svd = a.clone().svd(true, true);
        let u_full = svd.u.expect("left singular vectors requested");
        let v_t = svd.v_t.expect("right singular vectors requested");
        let sigma_max = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s));
        let keep: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| sigma_max > 0.0 && s / sigma_max >= rel_tol)
            .map(|(i, _)| i)
            .collect();
        let r = keep.len();
        let mut u = CMat::zeros(a.nrows(), r);
        let mut v = CMat::zeros(a.ncols(), r);
        let mut sigma = RVec::zeros(r);
        for (j, &i) in keep.iter().enumerate() {
            u.set_column(j, &u_full.column(i));
            v.set_column(j, &v_t.row(i).adjoint());
            sigma[j] = svd.singular_values[i];
        }
        Ok(Self { u, sigma, v, sigma_max })
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `σ_max / σ_min` over the retained values.
    pub fn condition(&self) -> f64 {
        let min = self.sigma.iter().fold(f64::INFINITY, |m, &s| m.min(s));
        if self.rank() == 0 {
            f64::INFINITY
        } else {
            self.sigma_max / min
        }
    }

    /// `V Σ⁻¹`, the factor shared by the pseudo-inverse and scaled projections.
    fn v_sigma_inv(&self) -> CMat {
        let mut out = self.v.clone();
        for (j, &s) in self.sigma.iter().enumerate() {
            out.column_mut(j).scale_mut(1.0 / s);
        }
        out
    }
}

fn check_tol(rel_tol: f64) -> Result<()> {
    if rel_tol > 0.0 && rel_tol < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("rel_tol must lie in (0, 1)"))
    }
}

/// SVD-based pseudo-inverse; singular values with `σ/σ_max < rel_tol` are
/// treated as zero.
pub fn truncated_pinv(a: &CMat, rel_tol: f64) -> Result<CMat> {
    let svd = TruncatedSvd::new(a, rel_tol)?;
    Ok(svd.v_sigma_inv() * svd.u.adjoint())
}

/// Rank-`r` operator `left · rightᴴ` on `C^M`, kept factored so that
/// applying it costs `O(M r)` instead of `O(M²)`.
#[derive(Debug, Clone)]
pub struct Projector {
    left: CMat,
    right: CMat,
}

impl Projector {
    pub fn dim(&self) -> usize {
        self.left.nrows()
    }

    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    pub fn apply(&self, b: &CVec) -> CVec {
        &self.left * (self.right.adjoint() * b)
    }

    pub fn apply_mat(&self, m: &CMat) -> CMat {
        &self.left * (self.right.adjoint() * m)
    }

    pub fn to_dense(&self) -> CMat {
        &self.left * self.right.adjoint()
    }
}

/// Orthogonal projection `P = A A†` onto the column space of `A`.
pub fn projection(a: &CMat, rel_tol: f64) -> Result<Projector> {
    let svd = TruncatedSvd::new(a, rel_tol)?;
    Ok(Projector {
        left: svd.u.clone(),
        right: svd.u,
    })
}

/// `P̃_k = A_k (B A_k)†` with `B = diag(scaling)`. Maps scaled physical data
/// `B b_k` back to `b_k`; rows with zero scaling drop out of the
/// pseudo-inverse.
pub fn scaled_projection(a_k: &CMat, scaling: &RVec, rel_tol: f64) -> Result<Projector> {
    if scaling.len() != a_k.nrows() {
        return Err(Error::shape(format!(
            "scaling has {} entries, operator has {} rows",
            scaling.len(),
            a_k.nrows()
        )));
    }
    if scaling.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("scaling entries must be finite and non-negative"));
    }
    let ba = scale_rows(&scaling.map(Complex64::from), a_k);
    let svd = TruncatedSvd::new(&ba, rel_tol)?;
    let left = a_k * svd.v_sigma_inv();
    Ok(Projector { left, right: svd.u })
}

/// Per-frequency magnitudes and phase differences at every sample.
///
/// `phase_differences[k][ℓ] = φ_k(ℓ) − φ_r(ℓ)` against the fixed data
/// reference `r = reference`; differences between any other pair follow by
/// subtraction.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelativePhaseData {
    pub magnitudes: Vec<RVec>,
    pub phase_differences: Vec<RVec>,
    pub reference: usize,
}

impl RelativePhaseData {
    pub fn new(magnitudes: Vec<RVec>, phase_differences: Vec<RVec>, reference: usize) -> Result<Self> {
        if magnitudes.is_empty() || magnitudes.len() != phase_differences.len() {
            return Err(Error::shape(
                "relative phase data: need one magnitude and phase vector per frequency",
            ));
        }
        let m = magnitudes[0].len();
        if magnitudes.iter().chain(&phase_differences).any(|v| v.len() != m) {
            return Err(Error::shape("relative phase data: vectors differ in length"));
        }
        if magnitudes
            .iter()
            .flat_map(|v| v.iter())
            .any(|x| !(*x >= 0.0) || !x.is_finite())
        {
            return Err(Error::invalid("magnitudes must be finite and non-negative"));
        }
        if phase_differences.iter().flat_map(|v| v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("phase differences must be finite"));
        }
        if reference >= magnitudes.len() {
            return Err(Error::invalid("reference index out of range"));
        }
        Ok(Self {
            magnitudes,
            phase_differences,
            reference,
        })
    }

    /// Magnitudes and phase differences of known complex samples.
    pub fn from_complex(samples: &[CVec], reference: usize) -> Result<Self> {
        if reference >= samples.len() {
            return Err(Error::invalid("reference index out of range"));
        }
        let r = &samples[reference];
        let mags = samples.iter().map(crate::linalg::abs).collect();
        let diffs = samples
            .iter()
            .map(|b| {
                if b.len() != r.len() {
                    return RVec::zeros(0);
                }
                RVec::from_fn(b.len(), |l, _| {
                    crate::linalg::wrap_phase(crate::linalg::phase(b[l]) - crate::linalg::phase(r[l]))
                })
            })
            .collect();
        Self::new(mags, diffs, reference)
    }

    pub fn n_freq(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn n_samples(&self) -> usize {
        self.magnitudes[0].len()
    }

    /// `(φ_k − φ_i)` at sample `l`.
    pub fn phase_diff(&self, k: usize, i: usize, l: usize) -> f64 {
        self.phase_differences[k][l] - self.phase_differences[i][l]
    }

    /// Magnitudes of all frequencies stacked in frequency order.
    pub fn stacked_magnitudes(&self) -> RVec {
        let m = self.n_samples();
        let mut out = RVec::zeros(m * self.n_freq());
        for (k, mag) in self.magnitudes.iter().enumerate() {
            out.rows_mut(k * m, m).copy_from(mag);
        }
        out
    }

    fn check_pair(&self, k: usize, i: usize) -> Result<()> {
        if k >= self.n_freq() || i >= self.n_freq() {
            Err(Error::invalid("frequency index out of range"))
        } else {
            Ok(())
        }
    }
}

/// Diagonal of `U_{k,i}`: `(|b_k|/|b_i|)·e^{j(φ_k−φ_i)}`.
pub fn build_u(data: &RelativePhaseData, k: usize, i: usize) -> Result<CVec> {
    data.check_pair(k, i)?;
    let (mk, mi) = (&data.magnitudes[k], &data.magnitudes[i]);
    let mut out = CVec::zeros(data.n_samples());
    for l in 0..data.n_samples() {
        if mi[l] == 0.0 {
            return Err(Error::ZeroReferenceMagnitude { index: l });
        }
        out[l] = if k == i {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::from_polar(mk[l] / mi[l], data.phase_diff(k, i, l))
        };
    }
    Ok(out)
}

/// Diagonal of `Ũ_{k,i} = B·U_{k,i}`: `|b_k|·e^{j(φ_k−φ_i)}`. No division.
pub fn build_u_tilde(data: &RelativePhaseData, k: usize, i: usize) -> Result<CVec> {
    data.check_pair(k, i)?;
    let mk = &data.magnitudes[k];
    Ok(CVec::from_fn(data.n_samples(), |l, _| {
        if k == i {
            Complex64::new(mk[l], 0.0)
        } else {
            Complex64::from_polar(mk[l], data.phase_diff(k, i, l))
        }
    }))
}

/// Non-fatal findings recorded while building a stacked operator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BundleWarning {
    /// Fewer than `OVERSAMPLING_WARN_FACTOR·N` samples at the highest
    /// frequency; the projections there are near identity.
    Undersampled { samples: usize, unknowns: usize },
}

/// Shapes, ranks and conditioning of a stacked operator, for run reports.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BundleSummary {
    pub rows: usize,
    pub cols: usize,
    pub n_freq: usize,
    pub reference: usize,
    pub rel_tol: f64,
    pub projection_ranks: Vec<Option<usize>>,
    pub warnings: Vec<BundleWarning>,
}

/// Everything needed to evaluate `|Ã x_i|` against the stacked magnitudes.
#[derive(Debug, Clone)]
pub struct OperatorBundle {
    /// `Ã`, `N_f·M × N` with row blocks in frequency order.
    pub stacked: CMat,
    /// Stacked measured magnitudes (right-hand side).
    pub rhs: RVec,
    pub reference: usize,
    pub block_rows: usize,
    /// Diagonal of `B = diag(|b_i|)` (stabilized form) or ones (basic form).
    pub scaling: RVec,
    /// Diagonal maps per frequency (`Ũ_{k,i}` or `U_{k,i}`).
    pub maps: Vec<CVec>,
    /// `P̃_k` (or `P_k`) per frequency; `None` for the reference block.
    pub projections: Vec<Option<Projector>>,
    pub rel_tol: f64,
    pub warnings: Vec<BundleWarning>,
}

impl OperatorBundle {
    pub fn n_freq(&self) -> usize {
        self.maps.len()
    }

    /// Rows of `Ã` belonging to frequency `k`.
    pub fn block(&self, k: usize) -> CMat {
        self.stacked.rows(k * self.block_rows, self.block_rows).into_owned()
    }

    /// Splits a stacked vector into per-frequency blocks.
    pub fn split(&self, v: &CVec) -> Vec<CVec> {
        (0..self.n_freq())
            .map(|k| v.rows(k * self.block_rows, self.block_rows).into_owned())
            .collect()
    }

    pub fn summary(&self) -> BundleSummary {
        BundleSummary {
            rows: self.stacked.nrows(),
            cols: self.stacked.ncols(),
            n_freq: self.n_freq(),
            reference: self.reference,
            rel_tol: self.rel_tol,
            projection_ranks: self
                .projections
                .iter()
                .map(|p| p.as_ref().map(Projector::rank))
                .collect(),
            warnings: self.warnings.clone(),
        }
    }
}

fn check_stack_inputs(forwards: &[CMat], data: &RelativePhaseData, reference: usize) -> Result<()> {
    if forwards.len() != data.n_freq() {
        return Err(Error::shape(format!(
            "{} forward matrices for {} frequencies",
            forwards.len(),
            data.n_freq()
        )));
    }
    if reference >= forwards.len() {
        return Err(Error::invalid("reference index out of range"));
    }
    let m = data.n_samples();
    for (k, a) in forwards.iter().enumerate() {
        if a.nrows() != m {
            return Err(Error::shape(format!(
                "A_{k} has {} rows, data has {m} samples",
                a.nrows()
            )));
        }
        if a.ncols() == 0 {
            return Err(Error::EmptyMatrix);
        }
    }
    Ok(())
}

fn oversampling_warnings(forwards: &[CMat]) -> Vec<BundleWarning> {
    // frequencies are stored in increasing order, so the last block is the highest
    let a = forwards.last().expect("non-empty");
    if a.nrows() < OVERSAMPLING_WARN_FACTOR * a.ncols() {
        alloc::vec![BundleWarning::Undersampled {
            samples: a.nrows(),
            unknowns: a.ncols(),
        }]
    } else {
        Vec::new()
    }
}

fn assemble_stack(
    forwards: &[CMat],
    data: &RelativePhaseData,
    reference: usize,
    rel_tol: f64,
    scaling: RVec,
    maps: Vec<CVec>,
    make_projection: impl Fn(&CMat) -> Result<Projector>,
) -> Result<OperatorBundle> {
    let m = data.n_samples();
    let a_i = &forwards[reference];
    let n = a_i.ncols();
    let mut stacked = CMat::from_element(m * forwards.len(), n, ZERO);
    let mut projections = Vec::with_capacity(forwards.len());
    for (k, a_k) in forwards.iter().enumerate() {
        if k == reference {
            stacked.rows_mut(k * m, m).copy_from(a_i);
            projections.push(None);
            continue;
        }
        let p = make_projection(a_k)?;
        let block = p.apply_mat(&scale_rows(&maps[k], a_i));
        stacked.rows_mut(k * m, m).copy_from(&block);
        projections.push(Some(p));
    }
    Ok(OperatorBundle {
        stacked,
        rhs: data.stacked_magnitudes(),
        reference,
        block_rows: m,
        scaling,
        maps,
        projections,
        rel_tol,
        warnings: oversampling_warnings(forwards),
    })
}

/// Stabilized multi-frequency operator: block `k` is `P̃_k Ũ_{k,i} A_i`,
/// block `i` is `A_i` itself.
pub fn stack_multifreq(
    forwards: &[CMat],
    data: &RelativePhaseData,
    reference: usize,
    rel_tol: f64,
) -> Result<OperatorBundle> {
    check_tol(rel_tol)?;
    check_stack_inputs(forwards, data, reference)?;
    let scaling = data.magnitudes[reference].clone();
    let maps = (0..forwards.len())
        .map(|k| build_u_tilde(data, k, reference))
        .collect::<Result<Vec<_>>>()?;
    let s = scaling.clone();
    assemble_stack(forwards, data, reference, rel_tol, scaling, maps, move |a| {
        scaled_projection(a, &s, rel_tol)
    })
}

/// Unstabilized multi-frequency operator with blocks `P_k U_{k,i} A_i`.
/// Fails on any zero reference magnitude.
pub fn stack_multifreq_basic(
    forwards: &[CMat],
    data: &RelativePhaseData,
    reference: usize,
    rel_tol: f64,
) -> Result<OperatorBundle> {
    check_tol(rel_tol)?;
    check_stack_inputs(forwards, data, reference)?;
    let maps = (0..forwards.len())
        .map(|k| build_u(data, k, reference))
        .collect::<Result<Vec<_>>>()?;
    let scaling = RVec::from_element(data.n_samples(), 1.0);
    assemble_stack(forwards, data, reference, rel_tol, scaling, maps, |a| {
        projection(a, rel_tol)
    })
}

/// Per-sample choice of the frequency whose sample becomes the unknown.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePolicy {
    /// Frequency with the largest magnitude at each sample (ties: lowest index).
    MaxMagnitude,
    Explicit(Vec<usize>),
}

/// Operator of the reference-free formulation acting on the unknown
/// measurement samples `b̂` (one per sample location).
#[derive(Debug, Clone)]
pub struct NoRefBundle {
    /// `Â`, `N_f·M × M`; block `k` is `P̃_k Û_k`.
    pub stacked: CMat,
    pub rhs: RVec,
    pub block_rows: usize,
    /// Frequency index chosen at each sample.
    pub choice: Vec<usize>,
    /// Samples whose magnitudes vanish at every frequency; their unknown is
    /// pinned to zero (the corresponding column of `Â` is zero).
    pub pinned: Vec<usize>,
    /// Diagonals of `Û_k`.
    pub maps: Vec<CVec>,
    pub projections: Vec<Projector>,
}

impl NoRefBundle {
    /// Zeroes the pinned entries of a candidate `b̂`.
    pub fn pin(&self, b_hat: &mut CVec) {
        for &l in &self.pinned {
            b_hat[l] = ZERO;
        }
    }
}

/// Reference-free stack: `[Û_k]_{ℓℓ} = |b_k|_ℓ·e^{j(φ_k − φ_{c(ℓ)})_ℓ}` with
/// `c(ℓ)` the chosen frequency, and `P̃_k = A_k (B̂ A_k)†` with
/// `B̂ = diag(|b_{c(ℓ)}|_ℓ)`, so that `P̃_k Û_k b̂ = b_k` for physical data.
pub fn stack_noref(
    forwards: &[CMat],
    data: &RelativePhaseData,
    policy: &ReferencePolicy,
    rel_tol: f64,
) -> Result<NoRefBundle> {
    check_tol(rel_tol)?;
    check_stack_inputs(forwards, data, 0)?;
    let m = data.n_samples();
    let nf = data.n_freq();
    let choice: Vec<usize> = match policy {
        ReferencePolicy::MaxMagnitude => (0..m)
            .map(|l| {
                let mut best = 0;
                for k in 1..nf {
                    if data.magnitudes[k][l] > data.magnitudes[best][l] {
                        best = k;
                    }
                }
                best
            })
            .collect(),
        ReferencePolicy::Explicit(c) => {
            if c.len() != m || c.iter().any(|&k| k >= nf) {
                return Err(Error::invalid("explicit reference choice has wrong length or index"));
            }
            c.clone()
        }
    };
    let pinned: Vec<usize> = (0..m)
        .filter(|&l| (0..nf).all(|k| data.magnitudes[k][l] == 0.0))
        .collect();
    let scaling = RVec::from_fn(m, |l, _| data.magnitudes[choice[l]][l]);
    let maps: Vec<CVec> = (0..nf)
        .map(|k| {
            CVec::from_fn(m, |l, _| {
                if k == choice[l] {
                    Complex64::new(data.magnitudes[k][l], 0.0)
                } else {
                    Complex64::from_polar(data.magnitudes[k][l], data.phase_diff(k, choice[l], l))
                }
            })
        })
        .collect();
    let mut stacked = CMat::from_element(m * nf, m, ZERO);
    let mut projections = Vec::with_capacity(nf);
    for (k, a_k) in forwards.iter().enumerate() {
        let p = scaled_projection(a_k, &scaling, rel_tol)?;
        let mut block = p.to_dense();
        for (l, &u) in maps[k].iter().enumerate() {
            for r in 0..m {
                block[(r, l)] *= u;
            }
        }
        stacked.rows_mut(k * m, m).copy_from(&block);
        projections.push(p);
    }
    Ok(NoRefBundle {
        stacked,
        rhs: data.stacked_magnitudes(),
        block_rows: m,
        choice,
        pinned,
        maps,
        projections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{abs, rel_diff, rel_diff_mat, rel_diff_real, spectral_norm};
    use crate::rng::{complex_normal_matrix, complex_normal_vector, seeded};
    use alloc::vec;
    use core::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pinv_of_identity() {
        let i = CMat::identity(5, 5);
        assert!(rel_diff_mat(&truncated_pinv(&i, 1e-8).unwrap(), &i) < 1e-15);
    }

    #[test]
    fn pinv_of_rank_one() {
        let mut rng = seeded(1);
        let u = complex_normal_vector(&mut rng, 6).normalize();
        let v = complex_normal_vector(&mut rng, 4).normalize();
        let sigma = 3.5;
        let a = &u * v.adjoint() * c(sigma, 0.0);
        let expect = &v * u.adjoint() / c(sigma, 0.0);
        assert!((spectral_norm(&a) - sigma).abs() < 1e-12);
        assert!(rel_diff_mat(&truncated_pinv(&a, 1e-8).unwrap(), &expect) < 1e-12);
    }

    #[test]
    fn pinv_reproduces_full_column_rank_matrix() {
        let mut rng = seeded(2);
        let a = complex_normal_matrix(&mut rng, 40, 12);
        let p = truncated_pinv(&a, 1e-8).unwrap();
        assert!(rel_diff_mat(&(&a * &p * &a), &a) < 1e-10);
    }

    #[test]
    fn pinv_guards() {
        assert_eq!(
            truncated_pinv(&CMat::zeros(0, 0), 1e-8).unwrap_err(),
            Error::EmptyMatrix
        );
        let a = CMat::identity(2, 2);
        assert!(truncated_pinv(&a, 0.0).is_err());
        assert!(truncated_pinv(&a, 1.0).is_err());
    }

    #[test]
    fn projection_is_identity_when_undersampled() {
        let mut rng = seeded(3);
        let a = complex_normal_matrix(&mut rng, 8, 20);
        let p = projection(&a, 1e-8).unwrap().to_dense();
        assert!(rel_diff_mat(&p, &CMat::identity(8, 8)) < 1e-12);
    }

    #[test]
    fn projection_properties() {
        let mut rng = seeded(4);
        let a = complex_normal_matrix(&mut rng, 60, 10);
        let proj = projection(&a, 1e-8).unwrap();
        let p = proj.to_dense();
        assert!(spectral_norm(&(&p * &p - &p)) < 1e-10);
        assert!(rel_diff_mat(&p.adjoint(), &p) < 1e-12);
        assert!(rel_diff_mat(&(&p * &a), &a) < 1e-12);
        let x = complex_normal_vector(&mut rng, 10);
        let b = &a * x;
        assert!(rel_diff(&proj.apply(&b), &b) < 1e-10);
        let noise = complex_normal_vector(&mut rng, 60);
        assert!(proj.apply(&noise).norm() < noise.norm());
    }

    fn data_from(samples: &[CVec], reference: usize) -> RelativePhaseData {
        RelativePhaseData::from_complex(samples, reference).unwrap()
    }

    #[test]
    fn u_diagonal_entries() {
        let b_i = CVec::from_vec(vec![c(2.0, 0.0)]);
        let b_k = CVec::from_vec(vec![Complex64::from_polar(4.0, PI / 3.0)]);
        let data = data_from(&[b_i, b_k], 0);
        let u = build_u(&data, 1, 0).unwrap();
        assert!((u[0] - Complex64::from_polar(2.0, PI / 3.0)).norm() < 1e-14);
        let same = build_u(&data, 0, 0).unwrap();
        assert_eq!(same[0], c(1.0, 0.0));
    }

    #[test]
    fn u_rejects_zero_reference() {
        let data = RelativePhaseData::new(
            vec![RVec::from_vec(vec![1.0, 0.0]), RVec::from_vec(vec![1.0, 1.0])],
            vec![RVec::zeros(2), RVec::zeros(2)],
            0,
        )
        .unwrap();
        assert_eq!(
            build_u(&data, 1, 0).unwrap_err(),
            Error::ZeroReferenceMagnitude { index: 1 }
        );
        let ut = build_u_tilde(&data, 1, 0).unwrap();
        assert_eq!(ut.len(), 2);
        let ref_block = build_u_tilde(&data, 0, 0).unwrap();
        assert_eq!(ref_block[1], ZERO);
        assert_eq!(ref_block[0], c(1.0, 0.0));
    }

    #[test]
    fn u_tilde_is_scaled_u() {
        let mut rng = seeded(5);
        let samples: Vec<CVec> = (0..3).map(|_| complex_normal_vector(&mut rng, 30)).collect();
        let data = data_from(&samples, 1);
        for k in 0..3 {
            for i in 0..3 {
                let u = build_u(&data, k, i).unwrap();
                let ut = build_u_tilde(&data, k, i).unwrap();
                for l in 0..30 {
                    let bu = u[l] * data.magnitudes[i][l];
                    assert!((ut[l] - bu).norm() <= 1e-14 * ut[l].norm().max(1.0));
                }
                // the maps carry b_i onto b_k exactly for complex data
                let mapped = u.component_mul(&samples[i]);
                assert!(rel_diff(&mapped, &samples[k]) < 1e-13);
            }
        }
    }

    #[test]
    fn scaled_projection_reduces_and_fixes_physical_data() {
        let mut rng = seeded(6);
        let a = complex_normal_matrix(&mut rng, 50, 12);
        let ones = RVec::from_element(50, 1.0);
        let pt = scaled_projection(&a, &ones, 1e-8).unwrap().to_dense();
        let p = projection(&a, 1e-8).unwrap().to_dense();
        assert!(rel_diff_mat(&pt, &p) < 1e-12);

        let scaling = RVec::from_fn(50, |l, _| 0.5 + (l as f64 * 0.37).sin().abs());
        let proj = scaled_projection(&a, &scaling, 1e-8).unwrap();
        let ba = scale_rows(&scaling.map(Complex64::from), &a);
        assert!(rel_diff_mat(&proj.apply_mat(&ba), &a) < 1e-10);
        let x = complex_normal_vector(&mut rng, 12);
        let b = &a * x;
        let scaled_b = b.component_mul(&scaling.map(Complex64::from));
        assert!(rel_diff(&proj.apply(&scaled_b), &b) < 1e-10);
    }

    #[test]
    fn scaled_projection_tolerates_zero_scaling() {
        let mut rng = seeded(7);
        let a = complex_normal_matrix(&mut rng, 30, 8);
        let mut scaling = RVec::from_element(30, 1.0);
        scaling[4] = 0.0;
        let proj = scaled_projection(&a, &scaling, 1e-8).unwrap();
        // the excluded row cannot influence the result
        let mut e = CVec::zeros(30);
        e[4] = c(1.0, 0.0);
        assert!(proj.apply(&e).norm() < 1e-12);
        let x = complex_normal_vector(&mut rng, 8);
        let b = &a * x;
        let sb = b.component_mul(&scaling.map(Complex64::from));
        assert!(rel_diff(&proj.apply(&sb), &b) < 1e-10);
    }

    /// Random scenario: `nf` operators with `m` rows, common source vector.
    fn scenario(seed: u64, m: usize, n: usize, nf: usize) -> (Vec<CMat>, Vec<CVec>, CVec) {
        let mut rng = seeded(seed);
        let forwards: Vec<CMat> = (0..nf).map(|_| complex_normal_matrix(&mut rng, m, n)).collect();
        let x = complex_normal_vector(&mut rng, n);
        let samples = forwards.iter().map(|a| a * &x).collect();
        (forwards, samples, x)
    }

    #[test]
    fn stack_single_frequency_is_reference_operator() {
        let (f, s, _) = scenario(8, 20, 5, 1);
        let data = data_from(&s, 0);
        let b = stack_multifreq(&f, &data, 0, DEFAULT_REL_TOL).unwrap();
        assert_eq!(b.stacked, f[0]);
        let basic = stack_multifreq_basic(&f, &data, 0, DEFAULT_REL_TOL).unwrap();
        assert_eq!(basic.stacked, f[0]);
    }

    #[test]
    fn stack_forward_consistency() {
        let (f, s, x) = scenario(9, 60, 10, 3);
        for reference in 0..3 {
            let data = data_from(&s, reference);
            let bundle = stack_multifreq(&f, &data, reference, DEFAULT_REL_TOL).unwrap();
            assert_eq!(bundle.stacked.shape(), (180, 10));
            assert_eq!(bundle.block(reference), f[reference]);
            let predicted = abs(&(&bundle.stacked * &x));
            assert!(rel_diff_real(&predicted, &bundle.rhs) < 1e-8);
            // each block reproduces the complex samples, not just magnitudes
            let blocks = bundle.split(&(&bundle.stacked * &x));
            for k in 0..3 {
                assert!(rel_diff(&blocks[k], &s[k]) < 1e-8);
            }
            let basic = stack_multifreq_basic(&f, &data, reference, DEFAULT_REL_TOL).unwrap();
            assert!(rel_diff_real(&abs(&(&basic.stacked * &x)), &basic.rhs) < 1e-8);
        }
    }

    #[test]
    fn stack_is_global_phase_blind() {
        let (f, s, x) = scenario(10, 40, 8, 2);
        let bundle = stack_multifreq(&f, &data_from(&s, 0), 0, DEFAULT_REL_TOL).unwrap();
        let base = abs(&(&bundle.stacked * &x));
        for theta in [0.3, PI / 2.0, PI, 4.0] {
            let rotated = abs(&(&bundle.stacked * (&x * Complex64::from_polar(1.0, theta))));
            assert!(rel_diff_real(&rotated, &base) < 1e-13);
        }
    }

    #[test]
    fn basic_equals_stabilized_for_unit_reference_magnitudes() {
        let (f, s, _) = scenario(11, 30, 6, 3);
        let mut data = data_from(&s, 0);
        data.magnitudes[0] = RVec::from_element(30, 1.0);
        let stab = stack_multifreq(&f, &data, 0, DEFAULT_REL_TOL).unwrap();
        let basic = stack_multifreq_basic(&f, &data, 0, DEFAULT_REL_TOL).unwrap();
        assert!(rel_diff_mat(&stab.stacked, &basic.stacked) < 1e-10);
    }

    #[test]
    fn basic_rejects_zero_reference() {
        let (f, s, _) = scenario(12, 20, 4, 2);
        let mut data = data_from(&s, 0);
        data.magnitudes[0][3] = 0.0;
        assert_eq!(
            stack_multifreq_basic(&f, &data, 0, DEFAULT_REL_TOL).unwrap_err(),
            Error::ZeroReferenceMagnitude { index: 3 }
        );
        assert!(stack_multifreq(&f, &data, 0, DEFAULT_REL_TOL).is_ok());
    }

    #[test]
    fn stack_shape_mismatch() {
        let (mut f, s, _) = scenario(13, 20, 4, 2);
        f[1] = CMat::zeros(19, 4);
        assert!(matches!(
            stack_multifreq(&f, &data_from(&s, 0), 0, DEFAULT_REL_TOL),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            stack_multifreq(&f[..1], &data_from(&s, 0), 0, DEFAULT_REL_TOL),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn undersampling_warning() {
        let (f, s, _) = scenario(14, 10, 8, 2);
        let b = stack_multifreq(&f, &data_from(&s, 0), 0, DEFAULT_REL_TOL).unwrap();
        assert_eq!(
            b.warnings,
            vec![BundleWarning::Undersampled {
                samples: 10,
                unknowns: 8
            }]
        );
        assert_eq!(b.summary().projection_ranks, vec![None, Some(8)]);
    }

    #[test]
    fn noref_single_frequency_is_magnitude_scaling() {
        let (f, s, _) = scenario(15, 12, 4, 1);
        let data = data_from(&s, 0);
        let nb = stack_noref(&f, &data, &ReferencePolicy::MaxMagnitude, DEFAULT_REL_TOL).unwrap();
        assert_eq!(nb.stacked.shape(), (12, 12));
        assert!(nb.choice.iter().all(|&c| c == 0));
        for l in 0..12 {
            assert_eq!(nb.maps[0][l], c(data.magnitudes[0][l], 0.0));
        }
    }

    #[test]
    fn noref_matches_fixed_reference_when_one_frequency_dominates() {
        let (f, mut s, x) = scenario(16, 40, 8, 3);
        // frequency 1 carries 100x stronger sources, so it wins every sample
        s[1] = &f[1] * (&x * c(100.0, 0.0));
        let data = data_from(&s, 0);
        let nb = stack_noref(&f, &data, &ReferencePolicy::MaxMagnitude, DEFAULT_REL_TOL).unwrap();
        assert!(nb.choice.iter().all(|&k| k == 1));
        assert_eq!(nb.stacked.shape(), (120, 40));
        let fixed = stack_multifreq(&f, &data, 1, DEFAULT_REL_TOL).unwrap();
        let x1 = &x * c(100.0, 0.0);
        let b_hat = &f[1] * &x1;
        let via_noref = abs(&(&nb.stacked * b_hat));
        let via_fixed = abs(&(&fixed.stacked * &x1));
        assert!(rel_diff_real(&via_noref, &via_fixed) < 1e-8);
        assert!(rel_diff_real(&via_noref, &nb.rhs) < 1e-8);
    }

    #[test]
    fn noref_pins_silent_locations() {
        let (f, mut s, _) = scenario(17, 20, 4, 2);
        s[0][7] = ZERO;
        s[1][7] = ZERO;
        let nb = stack_noref(&f, &data_from(&s, 0), &ReferencePolicy::MaxMagnitude, DEFAULT_REL_TOL).unwrap();
        assert_eq!(nb.pinned, vec![7]);
        assert!(nb.stacked.column(7).iter().all(|z| *z == ZERO));
        let mut b = CVec::from_element(20, c(1.0, 1.0));
        nb.pin(&mut b);
        assert_eq!(b[7], ZERO);
    }
}
