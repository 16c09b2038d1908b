//! Source and observation geometries: Fibonacci spheres, regular angular
//! grids, planar rasters, tangential dipole hulls and dipole rings.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // shadowed by inherent f64 methods whenever std is linked
use num_traits::Float;

use nalgebra::Vector3;

use crate::forward::DipoleSet;
use crate::rng;
use crate::{Error, Result};

/// Cartesian position in meters.
pub type Point3 = Vector3<f64>;

/// Real unit 3-vector (orientation or polarization).
pub type Unit3 = Vector3<f64>;

const POLE_EPS: f64 = 1e-12;

/// Local spherical unit vectors `(r̂, θ̂, φ̂)` at `p`.
///
/// On the z-axis θ̂ and φ̂ are undefined; the fixed pair `(x̂, ŷ)` is used
/// instead, which is still tangential to the sphere there.
pub fn spherical_basis(p: &Point3) -> (Unit3, Unit3, Unit3) {
    let r = p.norm();
    let r_hat = if r > 0.0 { p / r } else { Vector3::z() };
    let rho = (r_hat.x * r_hat.x + r_hat.y * r_hat.y).sqrt();
    if rho < POLE_EPS {
        return (r_hat, Vector3::x(), Vector3::y());
    }
    let (cos_t, sin_t) = (r_hat.z, rho);
    let (cos_p, sin_p) = (r_hat.x / rho, r_hat.y / rho);
    let theta_hat = Vector3::new(cos_t * cos_p, cos_t * sin_p, -sin_t);
    let phi_hat = Vector3::new(-sin_p, cos_p, 0.0);
    (r_hat, theta_hat, phi_hat)
}

/// Unit direction for polar angle `theta` and azimuth `phi` (radians).
pub fn direction(theta: f64, phi: f64) -> Unit3 {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Which surface a point list was sampled from.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum SamplingSurface {
    FibonacciSphere {
        n_locations: usize,
        radius: f64,
    },
    RegularSphereGrid {
        step_degrees: f64,
        radius: f64,
    },
    PlanarGrid {
        size_x: f64,
        size_y: f64,
        step: f64,
        distance: f64,
    },
}

impl SamplingSurface {
    pub fn points(&self) -> Result<Vec<Point3>> {
        match *self {
            SamplingSurface::FibonacciSphere { n_locations, radius } => fibonacci_sphere(n_locations, radius),
            SamplingSurface::RegularSphereGrid { step_degrees, radius } => regular_sphere_grid(step_degrees, radius),
            SamplingSurface::PlanarGrid {
                size_x,
                size_y,
                step,
                distance,
            } => planar_grid(size_x, size_y, step, distance),
        }
    }

    /// Number of points [`Self::points`] will produce.
    pub fn expected_count(&self) -> Result<usize> {
        match *self {
            SamplingSurface::FibonacciSphere { n_locations, .. } => Ok(n_locations),
            SamplingSurface::RegularSphereGrid { step_degrees, .. } => {
                let n = polar_steps(step_degrees)?;
                Ok((n + 1) * (2 * n + 1))
            }
            SamplingSurface::PlanarGrid {
                size_x, size_y, step, ..
            } => {
                check_planar(size_x, size_y, step)?;
                Ok(raster_count(size_x, step) * raster_count(size_y, step))
            }
        }
    }
}

/// Golden-angle spiral on a sphere: point `i` sits at `z = 1 − (2i+1)/n`
/// and azimuth `i·π(3−√5)`.
pub fn fibonacci_sphere(n_locations: usize, radius: f64) -> Result<Vec<Point3>> {
    if n_locations == 0 {
        return Err(Error::invalid("fibonacci_sphere: n_locations must be positive"));
    }
    check_radius(radius)?;
    let golden_angle = PI * (3.0 - 5.0_f64.sqrt());
    let n = n_locations as f64;
    Ok((0..n_locations)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            let u = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
            // renormalize so |p| = radius holds to rounding
            u / u.norm() * radius
        })
        .collect())
}

fn polar_steps(step_degrees: f64) -> Result<usize> {
    if !(step_degrees > 0.0) || !step_degrees.is_finite() {
        return Err(Error::invalid("regular_sphere_grid: step must be positive"));
    }
    let n = (180.0 / step_degrees).round();
    if n < 1.0 || (n * step_degrees - 180.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "regular_sphere_grid: step must divide 180 degrees evenly",
        ));
    }
    Ok(n as usize)
}

/// θ/φ grid with both ends included in each angle, so the φ = 360° seam
/// column duplicates φ = 0° and every pole row repeats one point.
/// Points are θ-major.
pub fn regular_sphere_grid(step_degrees: f64, radius: f64) -> Result<Vec<Point3>> {
    let n_theta = polar_steps(step_degrees)?;
    check_radius(radius)?;
    let n_phi = 2 * n_theta;
    let step = step_degrees.to_radians();
    let mut out = Vec::with_capacity((n_theta + 1) * (n_phi + 1));
    for it in 0..=n_theta {
        let theta = step * it as f64;
        for ip in 0..=n_phi {
            let phi = step * ip as f64;
            out.push(direction(theta, phi) * radius);
        }
    }
    Ok(out)
}

fn check_planar(size_x: f64, size_y: f64, step: f64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid("planar_grid: step must be positive"));
    }
    if !(size_x >= step && size_y >= step) {
        return Err(Error::invalid("planar_grid: sizes must be at least one step"));
    }
    Ok(())
}

fn raster_count(size: f64, step: f64) -> usize {
    (size / step + 1e-9).floor() as usize + 1
}

/// Raster in the plane `z = distance`, centered on the z-axis, x-major.
pub fn planar_grid(size_x: f64, size_y: f64, step: f64, distance: f64) -> Result<Vec<Point3>> {
    check_planar(size_x, size_y, step)?;
    if !distance.is_finite() {
        return Err(Error::invalid("planar_grid: distance must be finite"));
    }
    let nx = raster_count(size_x, step);
    let ny = raster_count(size_y, step);
    let x0 = -0.5 * (nx - 1) as f64 * step;
    let y0 = -0.5 * (ny - 1) as f64 * step;
    let mut out = Vec::with_capacity(nx * ny);
    for ix in 0..nx {
        for iy in 0..ny {
            out.push(Vector3::new(x0 + ix as f64 * step, y0 + iy as f64 * step, distance));
        }
    }
    Ok(out)
}

/// `n` seeded uniformly random unit directions. Prefixes of a longer draw
/// with the same seed are identical, so growing `n` gives nested sets.
pub fn random_directions(n: usize, seed: u64) -> Vec<Point3> {
    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Vector3::new(
            rng::real_normal(&mut r),
            rng::real_normal(&mut r),
            rng::real_normal(&mut r),
        );
        let norm = v.norm();
        if norm > 1e-12 {
            out.push(v / norm);
        }
    }
    out
}

/// Tangential dipole pairs on a Fibonacci sphere.
///
/// `n_dipoles / 2` locations each carry a θ̂- and a φ̂-oriented dipole (in that
/// order); excitations are i.i.d. complex standard normal from `rng_seed`.
pub fn dipole_hull_sphere(n_dipoles: usize, radius: f64, rng_seed: u64) -> Result<DipoleSet> {
    if n_dipoles == 0 || !n_dipoles.is_multiple_of(2) {
        return Err(Error::invalid(
            "dipole_hull_sphere: n_dipoles must be even and positive",
        ));
    }
    let locations = fibonacci_sphere(n_dipoles / 2, radius)?;
    let mut positions = Vec::with_capacity(n_dipoles);
    let mut orientations = Vec::with_capacity(n_dipoles);
    for p in &locations {
        let (_, t, f) = spherical_basis(p);
        positions.push(*p);
        orientations.push(t);
        positions.push(*p);
        orientations.push(f);
    }
    let mut rng = rng::seeded(rng_seed);
    let excitations = (0..n_dipoles).map(|_| rng::complex_normal(&mut rng)).collect();
    DipoleSet::new(positions, orientations, excitations)
}

/// `n` z-oriented unit-excitation dipoles evenly spaced on a circle of
/// radius `ring_radius` in the xy-plane, the first one on the +x axis.
pub fn dipole_ring(n: usize, ring_radius: f64) -> Result<DipoleSet> {
    if n == 0 {
        return Err(Error::invalid("dipole_ring: n must be positive"));
    }
    if !(ring_radius >= 0.0) || !ring_radius.is_finite() {
        return Err(Error::invalid("dipole_ring: radius must be non-negative"));
    }
    let positions = (0..n)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / n as f64;
            Vector3::new(ring_radius * phi.cos(), ring_radius * phi.sin(), 0.0)
        })
        .collect();
    let orientations = alloc::vec![Vector3::z(); n];
    let excitations = alloc::vec![crate::linalg::ONE; n];
    DipoleSet::new(positions, orientations, excitations)
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("radius must be positive and finite"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_on_sphere(points: &[Point3], r: f64) -> bool {
        points.iter().all(|p| ((p.norm() - r) / r).abs() < 1e-12)
    }

    #[test]
    fn random_directions_nested_and_unit() {
        let a = random_directions(10, 3);
        let b = random_directions(25, 3);
        assert_eq!(&b[..10], &a[..]);
        assert!(b.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn fibonacci_single_point() {
        let p = fibonacci_sphere(1, 1.0).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fibonacci_measurement_sphere_size() {
        let p = fibonacci_sphere(8000, 0.9).unwrap();
        assert_eq!(p.len(), 8000);
        assert!(all_on_sphere(&p, 0.9));
    }

    #[test]
    fn fibonacci_spacing_is_uniform() {
        // brute-force nearest neighbours over all pairs
        let p = fibonacci_sphere(500, 1.0).unwrap();
        let nn: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, a)| {
                p.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| (a - b).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mean = nn.iter().sum::<f64>() / nn.len() as f64;
        let var = nn.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / nn.len() as f64;
        let cv = var.sqrt() / mean;
        assert!(cv < 0.25, "coefficient of variation {cv}");
    }

    #[test]
    fn fibonacci_rejects_bad_input() {
        assert!(fibonacci_sphere(0, 1.0).is_err());
        assert!(fibonacci_sphere(10, 0.0).is_err());
        assert!(fibonacci_sphere(10, -1.0).is_err());
    }

    #[test]
    fn regular_grid_counts() {
        assert_eq!(regular_sphere_grid(90.0, 1.0).unwrap().len(), 15);
        assert_eq!(regular_sphere_grid(180.0, 1.0).unwrap().len(), 6);
        let one_degree = regular_sphere_grid(1.0, 2.512).unwrap();
        assert_eq!(one_degree.len(), 65341);
        assert_eq!(2 * one_degree.len(), 130682);
        assert!(all_on_sphere(&one_degree, 2.512));
    }

    #[test]
    fn regular_grid_count_formula_for_every_divisor() {
        for step in [
            1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0, 10.0, 12.0, 15.0, 18.0, 20.0, 30.0, 36.0, 45.0, 60.0, 90.0, 180.0,
        ] {
            let n = (180.0 / step) as usize;
            let s = SamplingSurface::RegularSphereGrid {
                step_degrees: step,
                radius: 1.0,
            };
            assert_eq!(s.points().unwrap().len(), (n + 1) * (2 * n + 1));
            assert_eq!(s.expected_count().unwrap(), (n + 1) * (2 * n + 1));
        }
    }

    #[test]
    fn regular_grid_rejects_non_divisor() {
        assert!(regular_sphere_grid(7.0, 1.0).is_err());
        assert!(regular_sphere_grid(0.0, 1.0).is_err());
        assert!(regular_sphere_grid(200.0, 1.0).is_err());
    }

    #[test]
    fn planar_counts() {
        assert_eq!(planar_grid(3.0, 3.0, 0.03, 1.5).unwrap().len(), 10201);
        assert_eq!(planar_grid(0.06, 0.03, 0.03, 1.0).unwrap().len(), 6);
        assert!(planar_grid(0.0, 0.0, 0.03, 1.0).is_err());
        assert!(planar_grid(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(planar_grid(1.0, 1.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn planar_is_centered_in_plane() {
        let g = planar_grid(0.06, 0.03, 0.03, 1.7).unwrap();
        let c = g.iter().fold(Vector3::zeros(), |a, p| a + p) / g.len() as f64;
        assert!(c.x.abs() < 1e-15 && c.y.abs() < 1e-15);
        assert!(g.iter().all(|p| p.z == 1.7));
    }

    #[test]
    fn hull_dipoles_are_tangential() {
        let lambda = crate::consts::wavelength(3e9);
        let d = dipole_hull_sphere(300, lambda, 7).unwrap();
        assert_eq!(d.len(), 300);
        for (p, o) in d.positions.iter().zip(&d.orientations) {
            assert!((p.norm() - lambda).abs() / lambda < 1e-12);
            assert!((p / p.norm()).dot(o).abs() < 1e-12);
            assert!((o.norm() - 1.0).abs() < 1e-12);
        }
        for pair in d.orientations.chunks(2) {
            assert!(pair[0].dot(&pair[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn hull_is_seeded() {
        let a = dipole_hull_sphere(20, 1.0, 11).unwrap();
        let b = dipole_hull_sphere(20, 1.0, 11).unwrap();
        let c = dipole_hull_sphere(20, 1.0, 12).unwrap();
        assert_eq!(a.excitations, b.excitations);
        assert_ne!(a.excitations, c.excitations);
        assert!(dipole_hull_sphere(21, 1.0, 0).is_err());
    }

    #[test]
    fn pole_fallback_basis() {
        let (_, t, f) = spherical_basis(&Vector3::new(0.0, 0.0, -2.0));
        assert_eq!(t, Vector3::x());
        assert_eq!(f, Vector3::y());
    }

    #[test]
    fn ring_geometry() {
        let r = dipole_ring(4, 1.0).unwrap();
        let expect = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (p, (x, y)) in r.positions.iter().zip(expect) {
            assert!((p.x - x).abs() < 1e-15 && (p.y - y).abs() < 1e-15 && p.z == 0.0);
        }
        for d in [0.18, 1.38] {
            let ring = dipole_ring(1000, d).unwrap();
            let c = ring.positions.iter().fold(Vector3::zeros(), |a, p| a + p) / 1000.0;
            assert!(c.norm() < 1e-12);
            assert!(ring.orientations.iter().all(|o| *o == Vector3::z()));
        }
        assert!(dipole_ring(0, 1.0).is_err());
    }
}
