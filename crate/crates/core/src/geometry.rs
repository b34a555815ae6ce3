//! Bloch-sphere measurement sets and the qubit state primitives used by the
//! bound computation and the simulator.
//!
//! The built-in sets are the vertex-to-vertex axes of the Platonic solids, one
//! axis per antipodal vertex pair, plus `geodesic16`, the union of the
//! dodecahedron axes with the axes of its dual icosahedron. Orientations are
//! fixed so that golden values are exact; every bound is rotation invariant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result, SteeringError};

/// Tolerance on unit norms and rotation orthogonality.
pub const UNIT_TOL: f64 = 1e-12;
/// Two axes closer than this to (anti)parallel are treated as the same observable.
pub const PARALLEL_TOL: f64 = 1e-9;

const PHI: f64 = 1.618_033_988_749_895;

/// Names accepted by [`MeasurementSet::builtin`].
pub const BUILTIN_SETS: [&str; 6] = [
    "pair2",
    "octahedron3",
    "cube4",
    "icosahedron6",
    "dodecahedron10",
    "geodesic16",
];

/// A unit vector on the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    /// Builds a direction from components that must already be unit length.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let d = Direction { x, y, z };
        if !(d.norm() - 1.0).abs().le(&UNIT_TOL) {
            return Err(numeric(format!(
                "direction ({x}, {y}, {z}) is not unit length (|v| = {})",
                d.norm()
            )));
        }
        Ok(d)
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(numeric(format!("cannot normalize vector ({x}, {y}, {z})")));
        }
        Ok(Direction {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub(crate) fn from_array_unchecked(v: [f64; 3]) -> Self {
        Direction {
            x: v[0],
            y: v[1],
            z: v[2],
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Direction) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn negated(self) -> Direction {
        Direction {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// The antipodal representative whose first nonzero coordinate is positive.
    pub fn canonical(self) -> Direction {
        let first = [self.x, self.y, self.z]
            .into_iter()
            .find(|c| c.abs() > UNIT_TOL)
            .unwrap_or(0.0);
        if first < 0.0 {
            self.negated()
        } else {
            self
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.x, self.y, self.z)
    }
}

/// A proper rotation of the Bloch sphere, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    /// Validates orthogonality and unit determinant within [`UNIT_TOL`].
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|r| m[r][i] * m[r][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > UNIT_TOL {
                    return Err(numeric("rotation matrix is not orthogonal"));
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if (det - 1.0).abs() > UNIT_TOL {
            return Err(numeric(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Rotation { m })
    }

    pub fn identity() -> Self {
        Rotation {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Right-handed rotation by `angle` radians about `axis` (Rodrigues).
    pub fn about_axis(axis: Direction, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let Direction { x, y, z } = axis;
        Rotation {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    /// Rotation from a (not necessarily normalized) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(numeric("zero quaternion"));
        }
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Rotation::new([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn apply(&self, d: Direction) -> Direction {
        let v = d.to_array();
        let r = |row: [f64; 3]| row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        Direction::from_array_unchecked([r(self.m[0]), r(self.m[1]), r(self.m[2])])
    }
}

/// A named, ordered collection of Bob's measurement axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    name: String,
    axes: Vec<Direction>,
}

impl MeasurementSet {
    /// Validates unit norms and that no two axes are (anti)parallel.
    pub fn new(name: impl Into<String>, axes: Vec<Direction>) -> Result<Self> {
        let name = name.into();
        if axes.is_empty() {
            return Err(invalid("a measurement set needs at least one axis"));
        }
        for (i, a) in axes.iter().enumerate() {
            if (a.norm() - 1.0).abs() > UNIT_TOL {
                return Err(numeric(format!("axis {i} of `{name}` is not unit length")));
            }
            for (j, b) in axes.iter().enumerate().take(i) {
                if a.dot(*b).abs() >= 1.0 - PARALLEL_TOL {
                    return Err(invalid(format!(
                        "axes {j} and {i} of `{name}` are parallel or antiparallel"
                    )));
                }
            }
        }
        Ok(MeasurementSet { name, axes })
    }

    /// One of [`BUILTIN_SETS`], in its canonical orientation.
    pub fn builtin(name: &str) -> Result<Self> {
        let raw: Vec<[f64; 3]> = match name {
            "pair2" => vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
            "octahedron3" => octahedron_vertices(),
            "cube4" => cube_diagonals(),
            "icosahedron6" => icosahedron_vertices(),
            "dodecahedron10" => dodecahedron_vertices(),
            "geodesic16" => {
                let mut v = dodecahedron_vertices();
                v.extend(icosahedron_vertices());
                v
            }
            _ => {
                return Err(SteeringError::UnknownSet {
                    name: name.to_string(),
                    valid: BUILTIN_SETS.join(", "),
                })
            }
        };
        let axes = raw
            .into_iter()
            .map(|[x, y, z]| Direction::normalized(x, y, z).map(Direction::canonical))
            .collect::<Result<Vec<_>>>()?;
        MeasurementSet::new(name, axes)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Direction] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> Direction {
        self.axes[k]
    }

    /// Serializes to the line-oriented text format read by [`FromStr`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("# format_version: 1\n");
        out.push_str(&format!("set: {} n: {}\n", self.name, self.n()));
        for a in &self.axes {
            out.push_str(&format!("{a}\n"));
        }
        out
    }
}

impl FromStr for MeasurementSet {
    type Err = SteeringError;

    /// Parses `set: <name> n: <n>` followed by `n` lines of three floats.
    /// `#` lines and blank lines are ignored; axes are normalized on read.
    fn from_str(text: &str) -> Result<Self> {
        let mut header: Option<(String, usize)> = None;
        let mut axes = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: String| SteeringError::Parse {
                line: lineno,
                message,
            };
            if let Some(rest) = line.strip_prefix("set:") {
                if header.is_some() {
                    return Err(perr("duplicate header".into()));
                }
                let parts: Vec<&str> = rest.split_whitespace().collect();
                match parts.as_slice() {
                    [name, "n:", n] => {
                        let n: usize = n.parse().map_err(|_| perr(format!("bad n `{n}`")))?;
                        header = Some((name.to_string(), n));
                    }
                    _ => return Err(perr("expected `set: <name> n: <n>`".into())),
                }
                continue;
            }
            if header.is_none() {
                return Err(perr("axis line before `set:` header".into()));
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(format!("bad float: {e}")))?;
            let [x, y, z] = vals[..] else {
                return Err(perr(format!("expected 3 floats, found {}", vals.len())));
            };
            axes.push(Direction::normalized(x, y, z).map_err(|e| perr(e.to_string()))?);
        }
        let (name, n) = header.ok_or_else(|| SteeringError::Parse {
            line: 0,
            message: "missing `set:` header".into(),
        })?;
        if axes.len() != n {
            return Err(SteeringError::Schema(format!(
                "header declares n = {n} but {} axes were given",
                axes.len()
            )));
        }
        MeasurementSet::new(name, axes)
    }
}

fn octahedron_vertices() -> Vec<[f64; 3]> {
    vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn cube_diagonals() -> Vec<[f64; 3]> {
    vec![
        [1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0],
        [1.0, -1.0, 1.0],
        [1.0, -1.0, -1.0],
    ]
}

fn icosahedron_vertices() -> Vec<[f64; 3]> {
    vec![
        [0.0, 1.0, PHI],
        [0.0, 1.0, -PHI],
        [1.0, PHI, 0.0],
        [1.0, -PHI, 0.0],
        [PHI, 0.0, 1.0],
        [-PHI, 0.0, 1.0],
    ]
}

// Dual of `icosahedron_vertices`: its vertices sit over the icosahedron's face centres.
fn dodecahedron_vertices() -> Vec<[f64; 3]> {
    let ip = 1.0 / PHI;
    let mut v = cube_diagonals();
    v.extend([
        [0.0, PHI, ip],
        [0.0, PHI, -ip],
        [PHI, ip, 0.0],
        [PHI, -ip, 0.0],
        [ip, 0.0, PHI],
        [-ip, 0.0, PHI],
    ]);
    v
}

/// Sorted `|u_i · u_j|` over all pairs `i < j`.
pub fn pairwise_overlap_spectrum(set: &MeasurementSet) -> Vec<f64> {
    let axes = set.axes();
    let mut out: Vec<f64> = axes
        .iter()
        .enumerate()
        .flat_map(|(i, a)| axes[i + 1..].iter().map(move |b| a.dot(*b).abs()))
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Maps every axis through `rotation`; orientation of each axis is preserved.
pub fn rotate_set(set: &MeasurementSet, rotation: &Rotation) -> Result<MeasurementSet> {
    let axes = set.axes().iter().map(|a| rotation.apply(*a)).collect();
    MeasurementSet::new(set.name(), axes)
}

/// Singlet mixed with white noise: `V |ψ⁻⟩⟨ψ⁻| + (1 − V) I/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WernerState {
    visibility: f64,
}

impl WernerState {
    pub fn new(visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(numeric(format!(
                "Werner visibility {visibility} outside [0, 1]"
            )));
        }
        Ok(WernerState { visibility })
    }

    pub fn visibility(&self) -> f64 {
        self.visibility
    }

    /// Singlet fidelity `(1 + 3V) / 4`.
    pub fn fidelity(&self) -> f64 {
        (1.0 + 3.0 * self.visibility) / 4.0
    }
}

/// Inverts `F = (1 + 3V)/4`; requires `1/4 ≤ F ≤ 1`.
pub fn werner_from_fidelity(fidelity: f64) -> Result<WernerState> {
    if !(0.25..=1.0).contains(&fidelity) {
        return Err(numeric(format!(
            "singlet fidelity {fidelity} outside [1/4, 1]"
        )));
    }
    WernerState::new(((4.0 * fidelity - 1.0) / 3.0).clamp(0.0, 1.0))
}

/// Joint probabilities of ±1 outcomes for spin measurements along two axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeDistribution {
    /// Indexed `[alice][bob]` with index 0 for +1 and 1 for −1.
    pub p: [[f64; 2]; 2],
}

impl OutcomeDistribution {
    pub fn prob(&self, a: i8, b: i8) -> f64 {
        let idx = |s: i8| if s > 0 { 0 } else { 1 };
        self.p[idx(a)][idx(b)]
    }
}

/// `P(a, b) = (1 − a b V (alice_axis · bob_axis)) / 4`.
pub fn joint_outcome_distribution(
    state: WernerState,
    alice_axis: Direction,
    bob_axis: Direction,
) -> OutcomeDistribution {
    let c = state.visibility() * alice_axis.dot(bob_axis);
    let same = ((1.0 - c) / 4.0).max(0.0);
    let diff = ((1.0 + c) / 4.0).max(0.0);
    OutcomeDistribution {
        p: [[same, diff], [diff, same]],
    }
}
