//! Jones-calculus model of Bob's projector: quarter-wave plate, then
//! half-wave plate, then a polarizing beam splitter whose transmitted port
//! (horizontal polarization) feeds the detector.
//!
//! Bloch convention for a Jones vector `(a, b)` in the H/V basis:
//! `z = |a|² − |b|²`, `x = 2 Re(a* b)`, `y = 2 Im(a* b)`.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{numeric, Result};
use crate::geometry::Direction;

type Mat2 = [[Complex64; 2]; 2];
type Vec2 = [Complex64; 2];

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[c(0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn adjoint(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

fn apply(a: &Mat2, v: &Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

/// Linear retarder with fast axis at `angle` (radians from horizontal).
pub fn retarder(angle: f64, retardance: f64) -> Mat2 {
    let (s, co) = angle.sin_cos();
    let rot = [[c(co), c(-s)], [c(s), c(co)]];
    let rot_inv = [[c(co), c(s)], [c(-s), c(co)]];
    let phase = [
        [c(1.0), c(0.0)],
        [c(0.0), Complex64::from_polar(1.0, retardance)],
    ];
    mul(&mul(&rot, &phase), &rot_inv)
}

pub fn bloch_vector(v: &Vec2) -> [f64; 3] {
    let (a, b) = (v[0], v[1]);
    let norm = a.norm_sqr() + b.norm_sqr();
    let ab = a.conj() * b;
    [
        2.0 * ab.re / norm,
        2.0 * ab.im / norm,
        (a.norm_sqr() - b.norm_sqr()) / norm,
    ]
}

/// Physical state of one waveplate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waveplate {
    pub angle: f64,
    pub retardance: f64,
}

/// Plate angles realizing one projector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateSetting {
    pub quarter: f64,
    pub half: f64,
}

/// Bloch vector of the state the detector projects onto.
pub fn projected_direction(quarter: Waveplate, half: Waveplate) -> [f64; 3] {
    let total = mul(
        &retarder(half.angle, half.retardance),
        &retarder(quarter.angle, quarter.retardance),
    );
    let h = [c(1.0), c(0.0)];
    bloch_vector(&apply(&adjoint(&total), &h))
}

fn ideal(setting: PlateSetting) -> [f64; 3] {
    projected_direction(
        Waveplate {
            angle: setting.quarter,
            retardance: FRAC_PI_2,
        },
        Waveplate {
            angle: setting.half,
            retardance: PI,
        },
    )
}

fn rotate(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, co) = angle.sin_cos();
    let d = axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2];
    let cr = [
        axis[1] * v[2] - axis[2] * v[1],
        axis[2] * v[0] - axis[0] * v[2],
        axis[0] * v[1] - axis[1] * v[0],
    ];
    [0, 1, 2].map(|i| v[i] * co + cr[i] * s + axis[i] * d * (1.0 - co))
}

/// Nominal plate angles whose ideal projector is `target`.
///
/// An ideal quarter-wave plate turns the Bloch sphere by a quarter turn about
/// its fast-axis direction in the x–z plane, so that axis must lie along the
/// x–z projection of `target`; the half-wave plate then selects the linear
/// polarization the quarter turn maps onto `target`.
pub fn nominal_setting(target: Direction) -> Result<PlateSetting> {
    let t = target.to_array();
    let quarter = if t[0].abs() < 1e-15 && t[2].abs() < 1e-15 {
        0.0
    } else {
        0.5 * t[0].atan2(t[2])
    };
    let axis = [(2.0 * quarter).sin(), 0.0, (2.0 * quarter).cos()];
    let mut best: Option<(f64, PlateSetting)> = None;
    for turn in [FRAC_PI_2, -FRAC_PI_2] {
        let p = rotate(t, axis, turn);
        let half = 0.25 * p[0].atan2(p[2]);
        let setting = PlateSetting { quarter, half };
        let got = ideal(setting);
        let err = (0..3).map(|i| (got[i] - t[i]).powi(2)).sum::<f64>().sqrt();
        if best.is_none_or(|b| err < b.0) {
            best = Some((err, setting));
        }
    }
    match best {
        Some((err, setting)) if err < 1e-10 => Ok(setting),
        _ => Err(numeric(format!(
            "direction {target} is not reachable by the waveplate model"
        ))),
    }
}
