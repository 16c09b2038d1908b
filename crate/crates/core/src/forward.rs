//! Hertzian-dipole fields and the per-frequency forward matrices.
//!
//! Time convention is `e^{+jωt}`; outgoing waves carry `e^{−jkR}`. Columns of
//! every forward matrix are unit-excitation (1 A·m) dipole responses, rows are
//! polarization projections of the field at one sample.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // shadowed by inherent f64 methods whenever std is linked
use num_traits::Float;

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::consts::{wavenumber, ETA0};
use crate::geometry::{spherical_basis, Point3, Unit3};
use crate::linalg::{CMat, CVec, J, ONE, ZERO};
use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-12;

pub type CVec3 = Vector3<Complex64>;

/// Elementary dipoles: positions, unit orientations and complex excitations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DipoleSet {
    pub positions: Vec<Point3>,
    pub orientations: Vec<Unit3>,
    pub excitations: Vec<Complex64>,
}

impl DipoleSet {
    pub fn new(positions: Vec<Point3>, orientations: Vec<Unit3>, excitations: Vec<Complex64>) -> Result<Self> {
        if positions.len() != orientations.len() || positions.len() != excitations.len() {
            return Err(Error::shape(format!(
                "dipole set: {} positions, {} orientations, {} excitations",
                positions.len(),
                orientations.len(),
                excitations.len()
            )));
        }
        check_units(&orientations, "dipole orientation")?;
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("dipole position is not finite"));
        }
        Ok(Self {
            positions,
            orientations,
            excitations,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn excitation_vector(&self) -> CVec {
        CVec::from_column_slice(&self.excitations)
    }

    /// Same geometry with new excitations.
    pub fn with_excitations(&self, excitations: &CVec) -> Result<Self> {
        if excitations.len() != self.len() {
            return Err(Error::shape("excitation count differs from dipole count"));
        }
        Ok(Self {
            excitations: excitations.iter().copied().collect(),
            ..self.clone()
        })
    }

    /// Radius of the smallest origin-centred sphere enclosing all dipoles.
    pub fn enclosing_radius(&self) -> f64 {
        self.positions.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// How the two elements of a probe array are displaced from the nominal
/// location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Displacement {
    Theta,
    Phi,
    /// θ̂ at even location indices, φ̂ at odd ones.
    Alternate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeArray {
    /// Distance between the two array elements, meters.
    pub separation: f64,
    pub displacement: Displacement,
}

/// Combination weights `(1, w)` applied as `s₁ + w·s₂`.
pub const PROBE_COMBINATIONS: [Complex64; 4] =
    [ONE, Complex64 { re: -1.0, im: 0.0 }, J, Complex64 { re: 0.0, im: -1.0 }];

impl ProbeArray {
    pub fn new(separation: f64, displacement: Displacement) -> Result<Self> {
        if !(separation > 0.0) || !separation.is_finite() {
            return Err(Error::invalid("probe array separation must be positive"));
        }
        Ok(Self {
            separation,
            displacement,
        })
    }

    /// Rows produced per nominal location.
    pub const ROWS_PER_LOCATION: usize = 8;

    fn direction_at(&self, index: usize, theta_hat: Unit3, phi_hat: Unit3) -> Unit3 {
        match self.displacement {
            Displacement::Theta => theta_hat,
            Displacement::Phi => phi_hat,
            Displacement::Alternate if index.is_multiple_of(2) => theta_hat,
            Displacement::Alternate => phi_hat,
        }
    }

    /// The four plain samples behind one array location, ordered
    /// `(θ̂@p₁, θ̂@p₂, φ̂@p₁, φ̂@p₂)` with `p₁,₂ = r ∓ (s/2)·d̂`.
    pub fn element_samples(&self, index: usize, location: &Point3) -> ObservationSet {
        let (_, t, f) = spherical_basis(location);
        let d = self.direction_at(index, t, f);
        let p1 = location - d * (0.5 * self.separation);
        let p2 = location + d * (0.5 * self.separation);
        ObservationSet {
            locations: alloc::vec![p1, p2, p1, p2],
            polarizations: alloc::vec![t, t, f, f],
        }
    }
}

/// Measurement samples: one location/polarization pair per row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservationSet {
    pub locations: Vec<Point3>,
    pub polarizations: Vec<Unit3>,
}

impl ObservationSet {
    pub fn new(locations: Vec<Point3>, polarizations: Vec<Unit3>) -> Result<Self> {
        if locations.len() != polarizations.len() {
            return Err(Error::shape(
                "observation set: locations and polarizations differ in length",
            ));
        }
        check_units(&polarizations, "polarization")?;
        Ok(Self {
            locations,
            polarizations,
        })
    }

    /// θ̂ and φ̂ samples at every location, location-major.
    pub fn two_polarizations(locations: &[Point3]) -> Self {
        let mut locs = Vec::with_capacity(2 * locations.len());
        let mut pols = Vec::with_capacity(2 * locations.len());
        for p in locations {
            let (_, t, f) = spherical_basis(p);
            locs.push(*p);
            pols.push(t);
            locs.push(*p);
            pols.push(f);
        }
        Self {
            locations: locs,
            polarizations: pols,
        }
    }

    /// x̂ and ŷ samples at every location (planar scanners).
    pub fn cartesian_xy(locations: &[Point3]) -> Self {
        let mut locs = Vec::with_capacity(2 * locations.len());
        let mut pols = Vec::with_capacity(2 * locations.len());
        for p in locations {
            locs.push(*p);
            pols.push(Vector3::x());
            locs.push(*p);
            pols.push(Vector3::y());
        }
        Self {
            locations: locs,
            polarizations: pols,
        }
    }

    /// Far-field cut at fixed azimuth: directions `θ = 0, step, …, 180°`,
    /// θ̂-polarized. Used with [`farfield_operator`].
    pub fn farfield_theta_cut(phi_degrees: f64, step_degrees: f64) -> Result<Self> {
        let n = (180.0 / step_degrees).round();
        if !(step_degrees > 0.0) || (n * step_degrees - 180.0).abs() > 1e-9 {
            return Err(Error::invalid("far-field cut step must divide 180 degrees"));
        }
        let phi = phi_degrees.to_radians();
        let mut dirs = Vec::new();
        let mut pols = Vec::new();
        for i in 0..=(n as usize) {
            let theta = (i as f64 * step_degrees).to_radians();
            dirs.push(crate::geometry::direction(theta, phi));
            // θ̂ from the angles so the poles keep a well-defined cut direction
            pols.push(Vector3::new(
                theta.cos() * phi.cos(),
                theta.cos() * phi.sin(),
                -theta.sin(),
            ));
        }
        Self::new(dirs, pols)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn concat(sets: &[ObservationSet]) -> Self {
        let mut out = ObservationSet {
            locations: Vec::new(),
            polarizations: Vec::new(),
        };
        for s in sets {
            out.locations.extend_from_slice(&s.locations);
            out.polarizations.extend_from_slice(&s.polarizations);
        }
        out
    }
}

/// Strictly increasing frequencies with a chosen reference index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencyGrid {
    pub frequencies: Vec<f64>,
    pub reference: usize,
}

impl FrequencyGrid {
    pub fn new(frequencies: Vec<f64>, reference: usize) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::invalid("frequency grid is empty"));
        }
        if frequencies.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::invalid("frequencies must be positive"));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frequencies must be strictly increasing"));
        }
        if reference >= frequencies.len() {
            return Err(Error::invalid("reference index out of range"));
        }
        Ok(Self { frequencies, reference })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// `n` equally spaced frequencies from `start` to `stop` inclusive.
    pub fn linspace(start: f64, stop: f64, n: usize, reference: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(alloc::vec![start], reference);
        }
        let step = (stop - start) / (n - 1) as f64;
        Self::new((0..n).map(|i| start + step * i as f64).collect(), reference)
    }
}

/// Forward matrix `A_k` (samples × dipoles) at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMatrix {
    pub matrix: CMat,
    pub frequency: f64,
}

impl ForwardMatrix {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Measurement vector `b = A·x`.
    pub fn apply(&self, x: &CVec) -> CVec {
        &self.matrix * x
    }
}

/// Electric field at `obs` of a unit-moment Hertzian dipole at `position`
/// oriented along `orientation`, for wavenumber `k`:
///
/// `E = (η₀/4π)·e^{−jkR}·[ −jk·û_⊥/R + (3R̂(R̂·û) − û)·(1/R² + 1/(jkR³)) ]`
///
/// with `û_⊥ = (R̂×û)×R̂` the part of `û` transverse to the separation.
pub fn dipole_efield(position: &Point3, orientation: &Unit3, obs: &Point3, k: f64) -> Result<CVec3> {
    if !(k > 0.0) {
        return Err(Error::invalid("wavenumber must be positive"));
    }
    let sep = obs - position;
    let r = sep.norm();
    if !(r > 0.0) {
        return Err(Error::CoincidentPoint {
            observation: 0,
            source_index: 0,
        });
    }
    Ok(efield_unchecked(&sep, r, orientation, k))
}

#[inline]
fn efield_unchecked(sep: &Point3, r: f64, u: &Unit3, k: f64) -> CVec3 {
    let r_hat = sep / r;
    let cos_ru = r_hat.dot(u);
    let transverse = u - r_hat * cos_ru;
    let quasi_static = r_hat * (3.0 * cos_ru) - u;
    let kr = k * r;
    let phasor = Complex64::from_polar(ETA0 / (4.0 * PI), -kr);
    let radiative = Complex64::new(0.0, -k / r);
    let near = Complex64::new(1.0 / (r * r), -1.0 / (kr * r * r));
    Vector3::new(
        phasor * (radiative * transverse.x + near * quasi_static.x),
        phasor * (radiative * transverse.y + near * quasi_static.y),
        phasor * (radiative * transverse.z + near * quasi_static.z),
    )
}

#[inline]
fn project(pol: &Unit3, e: &CVec3) -> Complex64 {
    e.x * pol.x + e.y * pol.y + e.z * pol.z
}

/// `[A]_{ℓn} = p̂_ℓ · E_n(r_ℓ)` for unit-excitation dipoles.
pub fn assemble_forward(dipoles: &DipoleSet, obs: &ObservationSet, frequency: f64) -> Result<ForwardMatrix> {
    if dipoles.is_empty() || obs.is_empty() {
        return Err(Error::invalid("assemble_forward: empty dipole or observation set"));
    }
    check_frequency(frequency)?;
    let k = wavenumber(frequency);
    let mut a = CMat::from_element(obs.len(), dipoles.len(), ZERO);
    for (l, (loc, pol)) in obs.locations.iter().zip(&obs.polarizations).enumerate() {
        for (n, (pos, ori)) in dipoles.positions.iter().zip(&dipoles.orientations).enumerate() {
            let sep = loc - pos;
            let r = sep.norm();
            if !(r > 0.0) {
                return Err(Error::CoincidentPoint {
                    observation: l,
                    source_index: n,
                });
            }
            a[(l, n)] = project(pol, &efield_unchecked(&sep, r, ori, k));
        }
    }
    Ok(ForwardMatrix { matrix: a, frequency })
}

/// Probe-array rows: for every nominal location the two displaced elements
/// are sampled in θ̂ and φ̂, and each polarization pair `(s₁, s₂)` yields the
/// four combinations `s₁+s₂, s₁−s₂, s₁+js₂, s₁−js₂`. 8 rows per location,
/// polarization-major.
pub fn probe_array_rows(
    dipoles: &DipoleSet,
    array_locations: &[Point3],
    probe: &ProbeArray,
    frequency: f64,
) -> Result<ForwardMatrix> {
    if !(probe.separation > 0.0) {
        return Err(Error::invalid("probe array separation must be positive"));
    }
    if array_locations.is_empty() {
        return Err(Error::invalid("probe_array_rows: no locations"));
    }
    let n = dipoles.len();
    let mut out = CMat::from_element(ProbeArray::ROWS_PER_LOCATION * array_locations.len(), n, ZERO);
    for (i, loc) in array_locations.iter().enumerate() {
        let plain = assemble_forward(dipoles, &probe.element_samples(i, loc), frequency)?.matrix;
        for pol in 0..2 {
            let s1 = plain.row(2 * pol);
            let s2 = plain.row(2 * pol + 1);
            for (c, w) in PROBE_COMBINATIONS.iter().enumerate() {
                let row = ProbeArray::ROWS_PER_LOCATION * i + 4 * pol + c;
                for col in 0..n {
                    out[(row, col)] = s1[col] + w * s2[col];
                }
            }
        }
    }
    Ok(ForwardMatrix { matrix: out, frequency })
}

/// Far-field pattern operator: radiation term only, with the common
/// `e^{−jkr}/r` factor removed,
/// `E_FF(r̂) = (−jkη₀/4π)·e^{+jk r̂·r'}·(r̂×û)×r̂`.
/// `directions.locations` holds unit directions.
pub fn farfield_operator(dipoles: &DipoleSet, directions: &ObservationSet, frequency: f64) -> Result<ForwardMatrix> {
    if dipoles.is_empty() || directions.is_empty() {
        return Err(Error::invalid("farfield_operator: empty input"));
    }
    check_frequency(frequency)?;
    check_units(&directions.locations, "far-field direction")?;
    let k = wavenumber(frequency);
    let scale = Complex64::new(0.0, -k * ETA0 / (4.0 * PI));
    let mut a = CMat::from_element(directions.len(), dipoles.len(), ZERO);
    for (l, (dir, pol)) in directions.locations.iter().zip(&directions.polarizations).enumerate() {
        for (n, (pos, u)) in dipoles.positions.iter().zip(&dipoles.orientations).enumerate() {
            let transverse = u - dir * dir.dot(u);
            let phase = Complex64::from_polar(1.0, k * dir.dot(pos));
            a[(l, n)] = scale * phase * pol.dot(&transverse);
        }
    }
    Ok(ForwardMatrix { matrix: a, frequency })
}

fn check_frequency(f: f64) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("frequency must be positive"))
    }
}

fn check_units(v: &[Unit3], what: &str) -> Result<()> {
    for (i, u) in v.iter().enumerate() {
        if !((u.norm() - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::invalid(format!("{what} {i} is not a unit vector")));
        }
    }
    Ok(())
}
