//! Deterministic cheating strategies and the loss-dependent steering bound.
//!
//! A deterministic strategy answers exactly `m` of Bob's `n` settings with a
//! fixed sign and sends the eigenstate of `(1/m) Σ A_k u_k·σ`. For a qubit the
//! largest eigenvalue is `|Σ A_k u_k| / m` with Bloch vector along the sum, so
//! `D_n(m)` is a maximum of vector norms over sign assignments.
//!
//! Mixing deterministic strategies with round probabilities `w_m` gives an
//! apparent efficiency `ε = Σ w_m m/n`. Bob post-selects on conclusive rounds,
//! so the steering parameter of the mixture is `Σ w_m (m/n) D_n(m) / ε`. The
//! bound `C_n(ε)` is therefore the upper concave envelope of the points
//! `(m/n, (m/n) D_n(m))` evaluated at `ε` and divided by `ε`; at most two
//! strategies are ever mixed.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{invalid, numeric, Result};
use crate::geometry::{Direction, MeasurementSet};

/// Largest `n` for which `deterministic_bound` enumerates every assignment.
pub const EXACT_ENUMERATION_LIMIT: usize = 16;

/// Assignments within `TIE_TOL · m` (absolute, on the norm) of the maximum
/// are all members of the optimal ensemble.
pub const TIE_TOL: f64 = 1e-9;

const ZERO_NORM: f64 = 1e-12;

/// Alice's announcement per setting: `+1`, `-1`, or `0` for null.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct SignAssignment {
    values: Vec<i8>,
}

impl SignAssignment {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.iter().any(|v| !(-1..=1).contains(v)) {
            return Err(invalid("sign assignment entries must be -1, 0 or +1"));
        }
        Ok(SignAssignment { values })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn get(&self, k: usize) -> i8 {
        self.values[k]
    }

    /// Number of settings answered with a non-null result.
    pub fn answered(&self) -> usize {
        self.values.iter().filter(|v| **v != 0).count()
    }

    fn negated(&self) -> Self {
        SignAssignment {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

/// One state of a cheating ensemble together with its row of the look-up table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMember {
    pub state: Direction,
    pub assignment: SignAssignment,
}

/// The optimal deterministic strategies that answer `m` settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyFamily {
    pub m: usize,
    /// `D_n(m)`.
    pub value: f64,
    pub members: Vec<EnsembleMember>,
    /// `false` when the family came from the large-`n` search rather than
    /// full enumeration; `value` is then a lower bound on `D_n(m)`.
    pub exact: bool,
}

impl StrategyFamily {
    /// `p(m)`, the ensemble size.
    pub fn p(&self) -> usize {
        self.members.len()
    }

    /// Look-up table entry `A^(m)_{k,i}`.
    pub fn lookup(&self, k: usize, i: usize) -> i8 {
        self.members[i].assignment.get(k)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "m": self.m,
            "value": self.value,
            "p": self.p(),
            "exact": self.exact,
            "members": self.members.iter().map(|mem| json!({
                "state": mem.state.to_array(),
                "assignment": mem.assignment.values(),
            })).collect::<Vec<_>>(),
        })
    }
}

fn sum_with_signs(axes: &[Direction], idx: &[usize], negative: u32) -> [f64; 3] {
    let mut s = [0.0; 3];
    for (j, &k) in idx.iter().enumerate() {
        let sign = if negative >> j & 1 == 1 { -1.0 } else { 1.0 };
        let u = axes[k];
        s[0] += sign * u.x;
        s[1] += sign * u.y;
        s[2] += sign * u.z;
    }
    s
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Subsets of `0..n` with `m` elements as bitmasks, in increasing order.
fn subsets(n: usize, m: usize) -> Vec<u32> {
    let mut out = Vec::new();
    if m == 0 || m > n {
        return out;
    }
    let mut mask: u32 = (1u32 << m) - 1;
    let limit: u64 = 1u64 << n;
    while (mask as u64) < limit {
        out.push(mask);
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        if r == 0 {
            break;
        }
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    out
}

fn mask_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|b| mask >> b & 1 == 1).collect()
}

/// Best norms inside one subset: sweeps the `2^(m-1)` sign patterns with the
/// first sign fixed to `+` in Gray-code order.
fn scan_subset(axes: &[Direction], mask: u32, tol: f64) -> (f64, Vec<(u32, u32)>) {
    let idx = mask_indices(mask);
    let m = idx.len();
    let mut s = sum_with_signs(axes, &idx, 0);
    let mut negative: u32 = 0;
    let mut best = norm3(s);
    let mut hits = vec![(mask, 0u32, best)];
    for t in 1u32..(1u32 << (m - 1)) {
        let j = t.trailing_zeros() as usize + 1;
        negative ^= 1 << j;
        let u = axes[idx[j]];
        let sign = if negative >> j & 1 == 1 { -2.0 } else { 2.0 };
        s[0] += sign * u.x;
        s[1] += sign * u.y;
        s[2] += sign * u.z;
        let nrm = norm3(s);
        if nrm >= best - tol {
            if nrm > best {
                best = nrm;
            }
            hits.push((mask, negative, nrm));
        }
    }
    let keep = hits
        .into_iter()
        .filter(|h| h.2 >= best - tol)
        .map(|h| (h.0, h.1))
        .collect();
    (best, keep)
}

fn exact_family(set: &MeasurementSet, m: usize) -> StrategyFamily {
    let axes = set.axes();
    let n = set.n();
    let tol = TIE_TOL * m as f64;
    let masks = subsets(n, m);
    // Rayon preserves input order in `collect`, so the reduction below is the
    // same as a sequential sweep.
    let scanned: Vec<(f64, Vec<(u32, u32)>)> = masks
        .par_iter()
        .map(|&mask| scan_subset(axes, mask, tol))
        .collect();
    let approx_best = scanned.iter().map(|s| s.0).fold(0.0, f64::max);
    let mut candidates: Vec<(u32, u32, [f64; 3], f64)> = scanned
        .into_iter()
        .filter(|s| s.0 >= approx_best - 2.0 * tol)
        .flat_map(|s| s.1)
        .map(|(mask, negative)| {
            let v = sum_with_signs(axes, &mask_indices(mask), negative);
            (mask, negative, v, norm3(v))
        })
        .collect();
    let best = candidates.iter().map(|c| c.3).fold(0.0, f64::max);
    candidates.retain(|c| c.3 >= best - tol && c.3 > ZERO_NORM);

    let mut members = Vec::with_capacity(2 * candidates.len());
    for (mask, negative, v, nrm) in candidates {
        let mut values = vec![0i8; n];
        for (j, k) in mask_indices(mask).into_iter().enumerate() {
            values[k] = if negative >> j & 1 == 1 { -1 } else { 1 };
        }
        let assignment = SignAssignment { values };
        let state = Direction::from_array_unchecked([v[0] / nrm, v[1] / nrm, v[2] / nrm]);
        let negated = EnsembleMember {
            state: state.negated(),
            assignment: assignment.negated(),
        };
        members.push(EnsembleMember { state, assignment });
        members.push(negated);
    }
    StrategyFamily {
        m,
        value: best / m as f64,
        members,
        exact: true,
    }
}

/// `D_n(m)` and its optimal ensemble.
///
/// Sets with `n ≤ EXACT_ENUMERATION_LIMIT` (every built-in set) are solved by
/// enumerating all `C(n, m)·2^m` assignments. Larger sets use
/// [`search_families`], which is a heuristic lower bound.
pub fn deterministic_bound(set: &MeasurementSet, m: usize) -> Result<StrategyFamily> {
    let n = set.n();
    if m == 0 || m > n {
        return Err(invalid(format!("m = {m} outside 1..={n}")));
    }
    if n <= EXACT_ENUMERATION_LIMIT {
        Ok(exact_family(set, m))
    } else {
        Ok(search_families(set).swap_remove(m - 1))
    }
}

/// Every family `m = 1..=n`.
pub fn all_families(set: &MeasurementSet) -> Vec<StrategyFamily> {
    if set.n() <= EXACT_ENUMERATION_LIMIT {
        (1..=set.n()).map(|m| exact_family(set, m)).collect()
    } else {
        search_families(set)
    }
}

fn fibonacci_sphere(count: usize) -> Vec<Direction> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Direction::from_array_unchecked([r * phi.cos(), r * phi.sin(), z])
        })
        .collect()
}

/// Best `m`-assignment for a fixed trial state: the `m` axes with the largest
/// `|u_k · ξ|`, signed by `u_k · ξ`. Returns the assignment and `|Σ A_k u_k|`.
fn assignment_for_state(axes: &[Direction], xi: Direction, m: usize) -> (Vec<i8>, [f64; 3]) {
    let mut order: Vec<(usize, f64)> = axes.iter().map(|u| u.dot(xi)).enumerate().collect();
    order.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let mut values = vec![0i8; axes.len()];
    let mut v = [0.0; 3];
    for &(k, d) in order.iter().take(m) {
        let s = if d >= 0.0 { 1.0 } else { -1.0 };
        values[k] = s as i8;
        v[0] += s * axes[k].x;
        v[1] += s * axes[k].y;
        v[2] += s * axes[k].z;
    }
    (values, v)
}

/// Large-`n` search for every `m`.
///
/// `D_n(m) = max_ξ (1/m) Σ_{top m} |u_k·ξ|`, so each trial state yields a
/// candidate for every `m` at once from sorted overlaps. Trial states are the
/// axes plus a Fibonacci lattice; the best few per `m` are then refined by
/// alternating "assignment from state" and "state from assignment" steps,
/// which never decrease the value. Deterministic, but only a lower bound.
pub fn search_families(set: &MeasurementSet) -> Vec<StrategyFamily> {
    const LATTICE: usize = 4000;
    const REFINE: usize = 8;
    let axes = set.axes();
    let n = set.n();
    let mut trials: Vec<Direction> = axes.to_vec();
    trials.extend(fibonacci_sphere(LATTICE));

    // prefix[t][m-1] = Σ of the m largest |u·ξ_t|
    let prefix: Vec<Vec<f64>> = trials
        .par_iter()
        .map(|xi| {
            let mut d: Vec<f64> = axes.iter().map(|u| u.dot(*xi).abs()).collect();
            d.sort_by(|a, b| b.total_cmp(a));
            d.iter()
                .scan(0.0, |acc, x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect()
        })
        .collect();

    (1..=n)
        .into_par_iter()
        .map(|m| {
            let mut ranked: Vec<usize> = (0..trials.len()).collect();
            ranked.sort_by(|&a, &b| {
                prefix[b][m - 1]
                    .total_cmp(&prefix[a][m - 1])
                    .then(a.cmp(&b))
            });
            let mut best: Option<(f64, Vec<i8>, [f64; 3])> = None;
            for &t in ranked.iter().take(REFINE) {
                let mut xi = trials[t];
                let mut last = f64::NEG_INFINITY;
                for _ in 0..100 {
                    let (values, v) = assignment_for_state(axes, xi, m);
                    let nrm = norm3(v);
                    if nrm <= last + 1e-15 || nrm < ZERO_NORM {
                        break;
                    }
                    last = nrm;
                    if best.as_ref().is_none_or(|b| nrm > b.0) {
                        best = Some((nrm, values, v));
                    }
                    xi = Direction::from_array_unchecked([v[0] / nrm, v[1] / nrm, v[2] / nrm]);
                }
            }
            let (nrm, values, v) = best.expect("at least one trial state");
            let state = Direction::from_array_unchecked([v[0] / nrm, v[1] / nrm, v[2] / nrm]);
            let assignment = SignAssignment { values };
            StrategyFamily {
                m,
                value: nrm / m as f64,
                members: vec![
                    EnsembleMember {
                        state,
                        assignment: assignment.clone(),
                    },
                    EnsembleMember {
                        state: state.negated(),
                        assignment: assignment.negated(),
                    },
                ],
                exact: false,
            }
        })
        .collect()
}

/// The bound with every setting answered, `C_n = C_n(1) = D_n(n)`.
pub fn ideal_bound(set: &MeasurementSet) -> Result<f64> {
    Ok(deterministic_bound(set, set.n())?.value)
}

/// Analytic bound for infinitely many uniformly distributed settings.
pub fn c_infinity(epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(1.0 - epsilon / 2.0)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(numeric(format!("epsilon = {epsilon} outside (0, 1]")));
    }
    Ok(())
}

/// One deterministic strategy in a mixture. `m = 0` is the always-null strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureComponent {
    pub m: usize,
    pub weight: f64,
}

/// Per-round probabilities of at most two deterministic strategies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mixture {
    pub components: Vec<MixtureComponent>,
    pub epsilon: f64,
}

impl Mixture {
    pub fn pure(m: usize, n: usize) -> Self {
        Mixture {
            components: vec![MixtureComponent { m, weight: 1.0 }],
            epsilon: m as f64 / n as f64,
        }
    }

    /// Checks weights in `[0, 1]`, summing to one, with `Σ (m/n) w_m = ε`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.components.is_empty() || self.components.len() > 2 {
            return Err(invalid("a mixture has one or two components"));
        }
        let mut total = 0.0;
        let mut eps = 0.0;
        for c in &self.components {
            if !(0.0..=1.0).contains(&c.weight) || c.m > n {
                return Err(invalid(format!("bad mixture component {c:?}")));
            }
            total += c.weight;
            eps += c.weight * c.m as f64 / n as f64;
        }
        if (total - 1.0).abs() > 1e-12 || (eps - self.epsilon).abs() > 1e-12 {
            return Err(numeric(format!(
                "mixture weights sum to {total} with efficiency {eps}, expected 1 and {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A hull vertex of the bound: the deterministic strategy `m` at `ε = m/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundVertex {
    pub m: usize,
    pub epsilon: f64,
    pub value: f64,
}

/// `ε ↦ C_n(ε)` for one measurement set.
#[derive(Debug, Clone)]
pub struct BoundCurve {
    n: usize,
    set_name: String,
    families: Vec<StrategyFamily>,
    vertices: Vec<BoundVertex>,
}

impl BoundCurve {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set_name(&self) -> &str {
        &self.set_name
    }

    pub fn vertices(&self) -> &[BoundVertex] {
        &self.vertices
    }

    /// Every deterministic family, `m = 1..=n`, hull member or not.
    pub fn families(&self) -> &[StrategyFamily] {
        &self.families
    }

    pub fn family(&self, m: usize) -> Option<&StrategyFamily> {
        m.checked_sub(1).and_then(|i| self.families.get(i))
    }

    /// Families backing the hull vertices, in vertex order.
    pub fn vertex_families(&self) -> Vec<&StrategyFamily> {
        self.vertices
            .iter()
            .map(|v| &self.families[v.m - 1])
            .collect()
    }

    /// `D_n(m)` for `m = 1..=n`.
    pub fn deterministic_values(&self) -> Vec<f64> {
        self.families.iter().map(|f| f.value).collect()
    }

    /// `m` values whose deterministic point lies strictly below the envelope,
    /// with the gap `C_n(m/n) − D_n(m)`.
    pub fn excluded(&self) -> Vec<(usize, f64)> {
        self.families
            .iter()
            .filter(|f| !self.vertices.iter().any(|v| v.m == f.m))
            .map(|f| {
                let eps = f.m as f64 / self.n as f64;
                (f.m, self.evaluate(eps).0 - f.value)
            })
            .collect()
    }

    /// `C_n(ε)` and the mixture that attains it.
    pub fn at(&self, epsilon: f64) -> Result<(f64, Mixture)> {
        check_epsilon(epsilon)?;
        Ok(self.evaluate(epsilon))
    }

    fn evaluate(&self, epsilon: f64) -> (f64, Mixture) {
        let n = self.n as f64;
        let first = self.vertices[0];
        if epsilon <= first.epsilon {
            // Mix the always-null strategy with single-axis states.
            let w1 = (epsilon * n).min(1.0);
            let mut components = vec![MixtureComponent { m: 1, weight: w1 }];
            if w1 < 1.0 {
                components.insert(
                    0,
                    MixtureComponent {
                        m: 0,
                        weight: 1.0 - w1,
                    },
                );
            }
            return (
                1.0,
                Mixture {
                    components,
                    epsilon,
                },
            );
        }
        for pair in self.vertices.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if epsilon > b.epsilon && (epsilon - b.epsilon).abs() > 1e-12 {
                continue;
            }
            if (epsilon - b.epsilon).abs() <= 1e-12 {
                return (b.value, Mixture::pure(b.m, self.n));
            }
            let wb = (epsilon - a.epsilon) / (b.epsilon - a.epsilon);
            let wa = 1.0 - wb;
            let gain = wa * a.epsilon * a.value + wb * b.epsilon * b.value;
            let components = vec![
                MixtureComponent { m: a.m, weight: wa },
                MixtureComponent { m: b.m, weight: wb },
            ];
            return (
                gain / epsilon,
                Mixture {
                    components,
                    epsilon,
                },
            );
        }
        let last = *self.vertices.last().expect("non-empty hull");
        (last.value, Mixture::pure(last.m, self.n))
    }

    /// Samples on `resolution` evenly spaced efficiencies in `(0, 1]` merged
    /// with the exact vertex efficiencies.
    pub fn sample(&self, resolution: usize) -> Result<Vec<(f64, f64)>> {
        if resolution < 2 {
            return Err(invalid("curve resolution must be at least 2"));
        }
        let mut eps: Vec<f64> = (1..=resolution)
            .map(|i| i as f64 / resolution as f64)
            .chain(self.vertices.iter().map(|v| v.epsilon))
            .collect();
        eps.sort_by(f64::total_cmp);
        eps.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        Ok(eps.into_iter().map(|e| (e, self.evaluate(e).0)).collect())
    }
}

/// Upper concave envelope of `(m/n, (m/n) D_n(m))` by a monotone chain.
fn hull_vertices(values: &[f64]) -> Vec<BoundVertex> {
    let n = values.len() as f64;
    let mut hull: Vec<BoundVertex> = Vec::new();
    for (i, &d) in values.iter().enumerate() {
        let m = i + 1;
        let p = BoundVertex {
            m,
            epsilon: m as f64 / n,
            value: d,
        };
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let (ax, ay) = (a.epsilon, a.epsilon * a.value);
            let (bx, by) = (b.epsilon, b.epsilon * b.value);
            let (px, py) = (p.epsilon, p.epsilon * p.value);
            let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            // Drop `b` unless it is strictly above the chord a→p.
            if cross >= -1e-14 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// The full bound curve for `set`.
pub fn bound_curve(set: &MeasurementSet) -> Result<BoundCurve> {
    let families = all_families(set);
    let values: Vec<f64> = families.iter().map(|f| f.value).collect();
    Ok(BoundCurve {
        n: set.n(),
        set_name: set.name().to_string(),
        vertices: hull_vertices(&values),
        families,
    })
}

/// `C_n(ε)` with its supporting mixture. Builds the whole curve; reuse a
/// [`BoundCurve`] when evaluating many efficiencies.
pub fn bound_at(set: &MeasurementSet, epsilon: f64) -> Result<(f64, Mixture)> {
    check_epsilon(epsilon)?;
    bound_curve(set)?.at(epsilon)
}

fn family_for(families: &[StrategyFamily], m: usize) -> Result<&StrategyFamily> {
    families
        .iter()
        .find(|f| f.m == m)
        .ok_or_else(|| invalid(format!("no strategy family supplied for m = {m}")))
}

/// Protocol-level expectation of a cheating mixture, setting by setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheatExpectation {
    /// Probability of a conclusive announcement given setting `k`.
    pub conclusive: Vec<f64>,
    /// Correlation post-selected on conclusive rounds for setting `k`.
    pub correlation: Vec<f64>,
    /// Mean of `correlation`, the value Bob's analysis converges to.
    pub steering: f64,
}

fn mixture_sums(
    set: &MeasurementSet,
    mixture: &Mixture,
    families: &[StrategyFamily],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = set.n();
    mixture.validate(n)?;
    let mut conclusive = vec![0.0; n];
    let mut numerator = vec![0.0; n];
    for c in mixture.components.iter().filter(|c| c.m > 0) {
        let fam = family_for(families, c.m)?;
        if fam.members.first().map(|m| m.assignment.values().len()) != Some(n) {
            return Err(invalid(format!(
                "family m = {} does not match a set of {n} settings",
                c.m
            )));
        }
        let scale = c.weight / fam.p() as f64;
        for (i, member) in fam.members.iter().enumerate() {
            for (k, u) in set.axes().iter().enumerate() {
                let a = fam.lookup(k, i);
                if a != 0 {
                    conclusive[k] += scale;
                    numerator[k] += scale * a as f64 * u.dot(member.state);
                }
            }
        }
    }
    Ok((conclusive, numerator))
}

/// Steering parameter a noiseless cheater obtains from the look-up tables:
/// `(1/ε)(1/n) Σ_k Σ_m w_m (1/p(m)) Σ_i A^(m)_{k,i} (u_k · ξ^(m)_i)`.
pub fn expected_cheat_value(
    set: &MeasurementSet,
    mixture: &Mixture,
    families: &[StrategyFamily],
) -> Result<f64> {
    let (_, numerator) = mixture_sums(set, mixture, families)?;
    let n = set.n() as f64;
    Ok(numerator.iter().sum::<f64>() / n / mixture.epsilon)
}

/// Per-setting conclusive rates and post-selected correlations of a mixture.
/// Equal to [`expected_cheat_value`] whenever the ensembles answer every
/// setting equally often.
pub fn cheat_expectation(
    set: &MeasurementSet,
    mixture: &Mixture,
    families: &[StrategyFamily],
) -> Result<CheatExpectation> {
    let (conclusive, numerator) = mixture_sums(set, mixture, families)?;
    let correlation: Vec<f64> = conclusive
        .iter()
        .zip(&numerator)
        .map(|(c, x)| if *c > 0.0 { x / c } else { 0.0 })
        .collect();
    let steering = correlation.iter().sum::<f64>() / set.n() as f64;
    Ok(CheatExpectation {
        conclusive,
        correlation,
        steering,
    })
}

/// Fraction of ensemble members announcing null for setting `k`.
pub fn apparent_null_rate(family: &StrategyFamily, k: usize) -> f64 {
    let nulls = family
        .members
        .iter()
        .filter(|m| m.assignment.get(k) == 0)
        .count();
    nulls as f64 / family.p() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(name: &str) -> MeasurementSet {
        MeasurementSet::builtin(name).unwrap()
    }

    #[test]
    fn subset_enumeration_counts() {
        assert_eq!(subsets(16, 8).len(), 12870);
        assert_eq!(subsets(3, 3), vec![0b111]);
        assert_eq!(
            subsets(4, 2),
            vec![0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100]
        );
    }

    #[test]
    fn octahedron_families() {
        let s = set("octahedron3");
        let f1 = deterministic_bound(&s, 1).unwrap();
        assert_abs_diff_eq!(f1.value, 1.0, epsilon = 1e-15);
        assert_eq!(f1.p(), 6);
        let f2 = deterministic_bound(&s, 2).unwrap();
        assert_abs_diff_eq!(f2.value, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(f2.p(), 12);
        let f3 = deterministic_bound(&s, 3).unwrap();
        assert_abs_diff_eq!(f3.value, (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(f3.p(), 8);
    }

    #[test]
    fn m_out_of_range() {
        let s = set("pair2");
        assert!(deterministic_bound(&s, 0).is_err());
        assert!(deterministic_bound(&s, 3).is_err());
    }

    #[test]
    fn ideal_bounds() {
        assert_abs_diff_eq!(
            ideal_bound(&set("pair2")).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            ideal_bound(&set("octahedron3")).unwrap(),
            (1.0f64 / 3.0).sqrt(),
            epsilon = 1e-15
        );
        let one = MeasurementSet::new("z", vec![Direction::new(0.0, 0.0, 1.0).unwrap()]).unwrap();
        assert_eq!(ideal_bound(&one).unwrap(), 1.0);
    }

    #[test]
    fn members_are_eigenstates_of_their_rows() {
        let s = set("icosahedron6");
        for m in 1..=6 {
            let f = deterministic_bound(&s, m).unwrap();
            for mem in &f.members {
                let a = &mem.assignment;
                assert_eq!(a.answered(), m);
                let mut v = [0.0; 3];
                for (k, u) in s.axes().iter().enumerate() {
                    v[0] += a.get(k) as f64 * u.x;
                    v[1] += a.get(k) as f64 * u.y;
                    v[2] += a.get(k) as f64 * u.z;
                }
                let nrm = norm3(v);
                assert_abs_diff_eq!(nrm / m as f64, f.value, epsilon = 1e-9);
                for c in 0..3 {
                    assert_abs_diff_eq!(v[c] / nrm, mem.state.to_array()[c], epsilon = 1e-12);
                }
                for (k, u) in s.axes().iter().enumerate() {
                    if a.get(k) != 0 {
                        assert_eq!(a.get(k) as f64, u.dot(mem.state).signum());
                    }
                }
            }
        }
    }

    #[test]
    fn octahedron_curve_keeps_every_strategy() {
        let c = bound_curve(&set("octahedron3")).unwrap();
        let ms: Vec<usize> = c.vertices().iter().map(|v| v.m).collect();
        assert_eq!(ms, vec![1, 2, 3]);
        assert!(c.excluded().is_empty());
    }

    #[test]
    fn dodecahedron_curve_skips_m4() {
        let c = bound_curve(&set("dodecahedron10")).unwrap();
        let ms: Vec<usize> = c.vertices().iter().map(|v| v.m).collect();
        assert_eq!(ms, vec![1, 2, 3, 5, 7, 8, 10]);
        let ex = c.excluded();
        assert!(ex.iter().any(|(m, gap)| *m == 4 && *gap > 0.0));
    }

    #[test]
    fn bound_at_examples() {
        let s = set("octahedron3");
        let (c, mix) = bound_at(&s, 1.0 / 3.0).unwrap();
        assert_eq!(c, 1.0);
        assert_eq!(mix.components, vec![MixtureComponent { m: 1, weight: 1.0 }]);

        let (c, mix) = bound_at(&s, 2.0 / 3.0).unwrap();
        assert_abs_diff_eq!(c, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(mix.components.len(), 1);
        assert_eq!(mix.components[0].m, 2);

        // Halfway between m = 1 and m = 2: (1/2·1/3·1 + 1/2·2/3·√2/2) / (1/2).
        let (c, mix) = bound_at(&s, 0.5).unwrap();
        let expect = (0.5 / 3.0 + 0.5 * 2.0 / 3.0 * 0.5f64.sqrt()) / 0.5;
        assert_abs_diff_eq!(c, expect, epsilon = 1e-12);
        mix.validate(3).unwrap();
        assert_abs_diff_eq!(mix.components[0].weight, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn below_threshold_mixes_in_null_strategy() {
        let s = set("cube4");
        let (c, mix) = bound_at(&s, 0.1).unwrap();
        assert_eq!(c, 1.0);
        mix.validate(4).unwrap();
        assert_eq!(mix.components[0].m, 0);
        assert_abs_diff_eq!(mix.components[0].weight, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn epsilon_range_checked() {
        let s = set("pair2");
        assert!(bound_at(&s, 0.0).is_err());
        assert!(bound_at(&s, 1.0001).is_err());
        assert!(c_infinity(0.0).is_err());
        assert!(c_infinity(1.5).is_err());
    }

    #[test]
    fn c_infinity_values() {
        assert_eq!(c_infinity(1.0).unwrap(), 0.5);
        assert_eq!(c_infinity(1e-9).unwrap(), 1.0 - 5e-10);
        assert_abs_diff_eq!(c_infinity(0.132).unwrap(), 0.934, epsilon = 1e-15);
    }

    #[test]
    fn cheat_value_examples() {
        let s = set("octahedron3");
        let curve = bound_curve(&s).unwrap();
        let pure = Mixture::pure(3, 3);
        let v = expected_cheat_value(&s, &pure, curve.families()).unwrap();
        assert_abs_diff_eq!(v, (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);

        let (_, mix) = curve.at(2.0 / 3.0).unwrap();
        let v = expected_cheat_value(&s, &mix, curve.families()).unwrap();
        assert_abs_diff_eq!(v, 0.5f64.sqrt(), epsilon = 1e-12);

        let p = set("pair2");
        let pc = bound_curve(&p).unwrap();
        let v = expected_cheat_value(&p, &Mixture::pure(2, 2), pc.families()).unwrap();
        assert_abs_diff_eq!(v, 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn cheat_value_rejects_missing_family() {
        let s = set("octahedron3");
        let f1 = deterministic_bound(&s, 1).unwrap();
        assert!(expected_cheat_value(&s, &Mixture::pure(3, 3), &[f1]).is_err());
    }

    #[test]
    fn null_rates() {
        let s = set("octahedron3");
        let f3 = deterministic_bound(&s, 3).unwrap();
        let f1 = deterministic_bound(&s, 1).unwrap();
        for k in 0..3 {
            assert_eq!(apparent_null_rate(&f3, k), 0.0);
            assert_abs_diff_eq!(apparent_null_rate(&f1, k), 2.0 / 3.0, epsilon = 1e-15);
        }
        let d = set("dodecahedron10");
        let f = deterministic_bound(&d, 3).unwrap();
        for k in 0..10 {
            assert_abs_diff_eq!(apparent_null_rate(&f, k), 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn family_json_has_rows() {
        let f = deterministic_bound(&set("pair2"), 2).unwrap();
        let j = f.to_json();
        assert_eq!(j["m"], 2);
        assert_eq!(j["p"], 4);
        assert_eq!(j["members"][0]["assignment"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn sampled_curve_includes_vertices_and_is_monotone() {
        let c = bound_curve(&set("dodecahedron10")).unwrap();
        let pts = c.sample(7).unwrap();
        for v in c.vertices() {
            assert!(pts.iter().any(|p| (p.0 - v.epsilon).abs() < 1e-12));
        }
        for w in pts.windows(2) {
            assert!(w[0].1 >= w[1].1 - 1e-15);
        }
        assert!(c.sample(1).is_err());
    }

    #[test]
    fn search_matches_enumeration_on_small_set() {
        let s = set("icosahedron6");
        let exact = all_families(&s);
        let found = search_families(&s);
        for (e, f) in exact.iter().zip(&found) {
            assert!(!f.exact);
            assert_abs_diff_eq!(e.value, f.value, epsilon = 1e-12);
        }
    }
}
