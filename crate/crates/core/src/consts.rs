//! Physical constants (SI).

use core::f64::consts::PI;

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Free-space wave impedance, ohm.
pub const ETA0: f64 = 376.730_313_668;

/// Wavenumber `2πf/c₀` in rad/m.
#[inline]
pub fn wavenumber(frequency_hz: f64) -> f64 {
    2.0 * PI * frequency_hz / C0
}

/// Free-space wavelength in meters.
#[inline]
pub fn wavelength(frequency_hz: f64) -> f64 {
    C0 / frequency_hz
}
