//! Round-level Monte Carlo of the steering protocol.
//!
//! Every round draws its randomness from its own ChaCha8 stream, keyed by the
//! run seed and indexed by the round number. Rounds are grouped in fixed-size
//! chunks that run in parallel and are merged by addition, so the resulting
//! table does not depend on the number of worker threads.

pub mod counts;
pub mod jones;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{invalid, numeric, Result};
use crate::geometry::{joint_outcome_distribution, Direction, MeasurementSet, WernerState};
use crate::strategies::{bound_curve, BoundCurve, Mixture, StrategyFamily};

pub use counts::{Announcement, CountsTable, ProjectorSign, COUNTS_FORMAT_VERSION};
use jones::{nominal_setting, projected_direction, Waveplate};

const CHUNK: u64 = 1 << 16;

/// Round-indexed random streams derived from one 64-bit seed.
#[derive(Debug, Clone)]
pub struct StreamFactory {
    key: [u8; 32],
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        StreamFactory {
            key: ChaCha8Rng::seed_from_u64(seed).get_seed(),
        }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("{name} = {p} outside (0, 1]")));
    }
    Ok(())
}

fn check_rounds(rounds: u64) -> Result<()> {
    if rounds == 0 {
        return Err(invalid("rounds must be at least 1"));
    }
    Ok(())
}

fn set_echo(set: &MeasurementSet) -> Value {
    json!({
        "name": set.name(),
        "axes": set.axes().iter().map(|u| u.to_array()).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Clone)]
pub struct HonestConfig {
    pub set: MeasurementSet,
    pub state: WernerState,
    /// Per-round probability that Alice announces, independent of `k`.
    pub alice_heralding: f64,
    pub bob_efficiency: f64,
    pub rounds: u64,
    pub seed: u64,
}

impl HonestConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("alice_heralding", self.alice_heralding)?;
        check_probability("bob_efficiency", self.bob_efficiency)?;
        check_rounds(self.rounds)
    }

    pub fn echo(&self) -> Value {
        json!({
            "mode": "honest",
            "set": set_echo(&self.set),
            "visibility": self.state.visibility(),
            "alice_heralding": self.alice_heralding,
            "bob_efficiency": self.bob_efficiency,
            "rounds": self.rounds,
            "seed": self.seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheatConfig {
    pub set: MeasurementSet,
    pub target_epsilon: f64,
    pub bob_efficiency: f64,
    pub rounds: u64,
    pub seed: u64,
}

impl CheatConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("target_epsilon", self.target_epsilon)?;
        check_probability("bob_efficiency", self.bob_efficiency)?;
        check_rounds(self.rounds)
    }

    pub fn echo(&self) -> Value {
        json!({
            "mode": "cheat",
            "set": set_echo(&self.set),
            "target_epsilon": self.target_epsilon,
            "bob_efficiency": self.bob_efficiency,
            "rounds": self.rounds,
            "seed": self.seed,
        })
    }
}

/// Waveplate imperfections of Bob's projector, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MisalignmentConfig {
    /// Optic-axis offset of each plate in its mount, one draw per run.
    pub waveplate_alignment_sigma: f64,
    /// Rotation-stage error, one draw per plate and projector setting.
    pub stage_repeatability_sigma: f64,
    /// Retardance offsets are uniform in `±retardance_tolerance`.
    pub retardance_tolerance: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MisalignmentConfig {
    /// The two sigmas are tuned, not measured: together with the retardance
    /// tolerance they put the worst-case `1 − X_k` near `2e-4`.
    fn default() -> Self {
        MisalignmentConfig {
            waveplate_alignment_sigma: 0.04f64.to_radians(),
            stage_repeatability_sigma: 0.02f64.to_radians(),
            retardance_tolerance: PI / 250.0,
            samples: 10_000,
            seed: 0x5EED,
        }
    }
}

impl MisalignmentConfig {
    pub fn ideal(samples: usize, seed: u64) -> Self {
        MisalignmentConfig {
            waveplate_alignment_sigma: 0.0,
            stage_repeatability_sigma: 0.0,
            retardance_tolerance: 0.0,
            samples,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("waveplate_alignment_sigma", self.waveplate_alignment_sigma),
            ("stage_repeatability_sigma", self.stage_repeatability_sigma),
            ("retardance_tolerance", self.retardance_tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.samples < 1000 {
            return Err(invalid(format!(
                "misalignment samples = {} below the minimum of 1000",
                self.samples
            )));
        }
        Ok(())
    }
}

fn run_chunks<F>(rounds: u64, n: usize, seed: u64, round: F) -> CountsTable
where
    F: Fn(&mut ChaCha8Rng, &mut CountsTable) + Sync,
{
    let streams = StreamFactory::new(seed);
    let chunks = rounds.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut table = CountsTable::new("", n);
            let end = ((c + 1) * CHUNK).min(rounds);
            for r in c * CHUNK..end {
                let mut rng = streams.stream(r);
                round(&mut rng, &mut table);
            }
            table
        })
        .reduce(
            || CountsTable::new("", n),
            |mut a, b| {
                a.merge(&b);
                a
            },
        )
}

/// Honest Alice sharing a Werner state with Bob, ideal projectors.
pub fn run_honest(config: &HonestConfig) -> Result<CountsTable> {
    let axes: Vec<(Direction, Direction)> = config.set.axes().iter().map(|&u| (u, u)).collect();
    let mut table = apply_misalignment(config, &axes)?;
    table.config = config.echo();
    Ok(table)
}

/// Honest run where Bob's `+` projector for setting `k` measures along
/// `perturbed[k].0` and his `−` projector projects onto `−perturbed[k].1`.
pub fn apply_misalignment(
    config: &HonestConfig,
    perturbed: &[(Direction, Direction)],
) -> Result<CountsTable> {
    config.validate()?;
    let set = &config.set;
    let n = set.n();
    if perturbed.len() != n {
        return Err(invalid(format!(
            "{} perturbed axis pairs for a set of {n} settings",
            perturbed.len()
        )));
    }
    for (k, (p, q)) in perturbed.iter().enumerate() {
        let u = set.axis(k);
        if u.dot(*p) <= 0.0 || u.dot(*q) <= 0.0 {
            return Err(numeric(format!(
                "perturbed projectors for setting k={k} are not aligned with the axis"
            )));
        }
    }
    // Cumulative tables of P(a, b) per (k, s), Bob's axis for that projector.
    let cells: Vec<[[f64; 4]; 2]> = (0..n)
        .map(|k| {
            let u = set.axis(k);
            let bob = [perturbed[k].0, perturbed[k].1];
            bob.map(|b| {
                let d = joint_outcome_distribution(config.state, u, b);
                let p = [d.p[0][0], d.p[0][1], d.p[1][0], d.p[1][1]];
                [p[0], p[0] + p[1], p[0] + p[1] + p[2], 1.0]
            })
        })
        .collect();
    let eta = config.bob_efficiency;
    let herald = config.alice_heralding;
    let mut table = run_chunks(config.rounds, n, config.seed, |rng, table| {
        let k = rng.random_range(0..n);
        let s = if rng.random::<bool>() {
            ProjectorSign::Plus
        } else {
            ProjectorSign::Minus
        };
        let cum = &cells[k][if s == ProjectorSign::Plus { 0 } else { 1 }];
        let x: f64 = rng.random();
        let cell = cum.iter().position(|&c| x < c).unwrap_or(3);
        let a: i8 = if cell < 2 { 1 } else { -1 };
        let b: i8 = if cell % 2 == 0 { 1 } else { -1 };
        let detected = rng.random::<f64>() < eta;
        let announced = rng.random::<f64>() < herald;
        if b == s.value() && detected {
            let ann = if announced {
                Announcement::from_sign(-a)
            } else {
                Announcement::Null
            };
            table.record(k, s, ann);
        }
    });
    table.set_name = set.name().to_string();
    table.rounds = config.rounds;
    table.seed = config.seed;
    table.config = json!({
        "mode": "honest_misaligned",
        "honest": config.echo(),
        "perturbed_axes": perturbed.iter().map(|(p, q)| [p.to_array(), q.to_array()]).collect::<Vec<_>>(),
    });
    Ok(table)
}

/// Dishonest Alice with no entanglement, playing the optimal mixture at the
/// target efficiency.
pub fn run_cheat(config: &CheatConfig) -> Result<CountsTable> {
    config.validate()?;
    let curve = bound_curve(&config.set)?;
    run_cheat_with_curve(config, &curve)
}

/// As [`run_cheat`], reusing a precomputed curve for `config.set`.
pub fn run_cheat_with_curve(config: &CheatConfig, curve: &BoundCurve) -> Result<CountsTable> {
    config.validate()?;
    let set = &config.set;
    let n = set.n();
    if curve.n() != n {
        return Err(invalid("bound curve does not belong to the configured set"));
    }
    let (_, mixture) = curve.at(config.target_epsilon)?;
    let strategies = mixture_strategies(&mixture, curve)?;
    let eta = config.bob_efficiency;
    let mut table = run_chunks(config.rounds, n, config.seed, |rng, table| {
        let x: f64 = rng.random();
        let (null, fam) = strategies
            .iter()
            .find(|(w, _, _)| x < *w)
            .map(|(_, null, f)| (*null, *f))
            .unwrap_or_else(|| {
                let last = strategies.last().expect("non-empty mixture");
                (last.1, last.2)
            });
        let i = rng.random_range(0..fam.p());
        let k = rng.random_range(0..n);
        let s = if rng.random::<bool>() {
            ProjectorSign::Plus
        } else {
            ProjectorSign::Minus
        };
        let xi = fam.members[i].state;
        let p_click = 0.5 * (1.0 + s.value() as f64 * set.axis(k).dot(xi)) * eta;
        if rng.random::<f64>() < p_click {
            let ann = if null {
                Announcement::Null
            } else {
                Announcement::from_sign(fam.lookup(k, i))
            };
            table.record(k, s, ann);
        }
    });
    table.set_name = set.name().to_string();
    table.rounds = config.rounds;
    table.seed = config.seed;
    let mut echo = config.echo();
    echo["mixture"] = serde_json::to_value(&mixture)?;
    table.config = echo;
    Ok(table)
}

/// Cumulative weight, always-null flag and family for each mixture component.
/// The always-null strategy still sends a qubit, drawn from the `m = 1` states.
fn mixture_strategies<'a>(
    mixture: &Mixture,
    curve: &'a BoundCurve,
) -> Result<Vec<(f64, bool, &'a StrategyFamily)>> {
    let mut out = Vec::new();
    let mut cum = 0.0;
    for c in &mixture.components {
        cum += c.weight;
        let fam = curve
            .family(c.m.max(1))
            .ok_or_else(|| numeric(format!("no strategy family for m = {}", c.m)))?;
        out.push((cum, c.m == 0, fam));
    }
    Ok(out)
}

/// Achieved `+` and `−` projector axes `(ũ_k, ũ_k')` for one Monte Carlo
/// draw of the waveplate errors; Bob's `−` projector is onto `−ũ_k'`.
pub fn draw_perturbed_axes(
    config: &MisalignmentConfig,
    set: &MeasurementSet,
    sample: u64,
) -> Result<Vec<(Direction, Direction)>> {
    let nominal = nominal_settings(set)?;
    Ok(perturbed_sample(config, &nominal, sample))
}

fn nominal_settings(set: &MeasurementSet) -> Result<Vec<[jones::PlateSetting; 2]>> {
    set.axes()
        .iter()
        .map(|&u| Ok([nominal_setting(u)?, nominal_setting(u.negated())?]))
        .collect()
}

fn perturbed_sample(
    config: &MisalignmentConfig,
    nominal: &[[jones::PlateSetting; 2]],
    sample: u64,
) -> Vec<(Direction, Direction)> {
    let mut rng = StreamFactory::new(config.seed).stream(sample);
    let gauss = |rng: &mut ChaCha8Rng, sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
        } else {
            0.0
        }
    };
    let tol = config.retardance_tolerance;
    let uniform = |rng: &mut ChaCha8Rng| {
        if tol > 0.0 {
            rng.random_range(-tol..=tol)
        } else {
            0.0
        }
    };
    let align_q = gauss(&mut rng, config.waveplate_alignment_sigma);
    let align_h = gauss(&mut rng, config.waveplate_alignment_sigma);
    let ret_q = FRAC_PI_2 + uniform(&mut rng);
    let ret_h = PI + uniform(&mut rng);
    nominal
        .iter()
        .map(|pair| {
            let mut achieved = pair.map(|setting| {
                let rep_q = gauss(&mut rng, config.stage_repeatability_sigma);
                let rep_h = gauss(&mut rng, config.stage_repeatability_sigma);
                let v = projected_direction(
                    Waveplate {
                        angle: setting.quarter + align_q + rep_q,
                        retardance: ret_q,
                    },
                    Waveplate {
                        angle: setting.half + align_h + rep_h,
                        retardance: ret_h,
                    },
                );
                Direction::from_array_unchecked(v)
            });
            achieved[1] = achieved[1].negated();
            (achieved[0], achieved[1])
        })
        .collect()
}

/// Worst-case alignment `X_k = min χ_k` between achieved and ideal projector
/// axes, over all samples and both projector signs.
pub fn estimate_xk(config: &MisalignmentConfig, set: &MeasurementSet) -> Result<Vec<f64>> {
    config.validate()?;
    let nominal = nominal_settings(set)?;
    let n = set.n();
    let worst = (0..config.samples as u64)
        .into_par_iter()
        .map(|sample| {
            perturbed_sample(config, &nominal, sample)
                .iter()
                .enumerate()
                .map(|(k, (p, q))| {
                    let u = set.axis(k);
                    u.dot(*p).min(u.dot(*q))
                })
                .collect::<Vec<f64>>()
        })
        .reduce(
            || vec![f64::INFINITY; n],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect(),
        );
    Ok(worst.into_iter().map(|x| x.min(1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn honest(set: &str, v: f64, herald: f64, rounds: u64, seed: u64) -> HonestConfig {
        HonestConfig {
            set: MeasurementSet::builtin(set).unwrap(),
            state: WernerState::new(v).unwrap(),
            alice_heralding: herald,
            bob_efficiency: 1.0,
            rounds,
            seed,
        }
    }

    fn correlation(t: &CountsTable, k: usize) -> (f64, f64) {
        let mut e = 0.0;
        let mut dp = 0.0;
        for s in ProjectorSign::BOTH {
            let sv = s.value() as f64;
            let plus = t.count(k, s, Announcement::Plus) as f64;
            let minus = t.count(k, s, Announcement::Minus) as f64;
            e += sv * (plus - minus);
            dp += plus - minus;
        }
        let c = t.conclusive(k) as f64;
        (e / c, dp / c)
    }

    #[test]
    fn stream_factory_is_reproducible() {
        let f = StreamFactory::new(7);
        let a: u64 = f.stream(3).random();
        let b: u64 = f.stream(3).random();
        let c: u64 = f.stream(4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn runs_are_deterministic_across_thread_counts() {
        let cfg = honest("cube4", 0.9, 0.5, 200_000, 11);
        let a = run_honest(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| run_honest(&cfg).unwrap());
        assert_eq!(a, b);
        let c = run_honest(&HonestConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn perfect_singlet_is_perfectly_correlated() {
        let t = run_honest(&honest("octahedron3", 1.0, 1.0, 50_000, 1)).unwrap();
        for k in 0..3 {
            assert_eq!(correlation(&t, k).0, 1.0);
        }
        assert_eq!(t.total_conclusive(), t.total_detections());
    }

    #[test]
    fn bob_clicks_on_half_the_rounds() {
        let t = run_honest(&honest("pair2", 0.5, 1.0, 400_000, 2)).unwrap();
        let frac = t.total_detections() as f64 / 400_000.0;
        assert!((frac - 0.5).abs() < 4.0 * (0.25f64 / 400_000.0).sqrt());
    }

    #[test]
    fn identical_axes_reproduce_the_honest_run() {
        let cfg = honest("icosahedron6", 0.95, 0.4, 100_000, 5);
        let ideal: Vec<_> = cfg.set.axes().iter().map(|&u| (u, u)).collect();
        let a = run_honest(&cfg).unwrap();
        let b = apply_misalignment(&cfg, &ideal).unwrap();
        for k in 0..6 {
            for s in ProjectorSign::BOTH {
                for x in [Announcement::Plus, Announcement::Minus, Announcement::Null] {
                    assert_eq!(a.count(k, s, x), b.count(k, s, x));
                }
            }
        }
    }

    fn tilt(u: Direction, degrees: f64) -> Direction {
        let a = u.to_array();
        let perp = Direction::normalized(a[1] - a[2], a[2] - a[0], a[0] - a[1])
            .or_else(|_| Direction::normalized(a[1], -a[0], 0.0))
            .unwrap();
        Rotation::about_axis(perp, degrees.to_radians()).apply(u)
    }

    #[test]
    fn tilted_projector_lowers_correlation_by_cosine() {
        let cfg = honest("pair2", 1.0, 1.0, 2_000_000, 9);
        let axes: Vec<_> = cfg
            .set
            .axes()
            .iter()
            .map(|&u| (tilt(u, 1.0), tilt(u, 1.0)))
            .collect();
        let t = apply_misalignment(&cfg, &axes).unwrap();
        for (k, (p, q)) in axes.iter().enumerate() {
            let u = cfg.set.axis(k);
            let expect = (u.dot(*p) + u.dot(*q)) / 2.0;
            assert!(1.0 - expect <= 1.6e-4);
            let (e, _) = correlation(&t, k);
            let sigma = ((1.0 - expect * expect) / t.conclusive(k) as f64).sqrt();
            assert!((e - expect).abs() < 4.0 * sigma + 1e-12, "{e} vs {expect}");
        }
    }

    #[test]
    fn unequal_projector_tilts_bias_the_marginal() {
        let cfg = honest("pair2", 1.0, 1.0, 2_000_000, 10);
        let axes: Vec<_> = cfg
            .set
            .axes()
            .iter()
            .map(|&u| (tilt(u, 20.0), tilt(u, -2.0)))
            .collect();
        let t = apply_misalignment(&cfg, &axes).unwrap();
        for (k, (p, q)) in axes.iter().enumerate() {
            let u = cfg.set.axis(k);
            let expect = (u.dot(*p) - u.dot(*q)) / 2.0;
            assert!(expect.abs() > 0.02);
            let (_, dp) = correlation(&t, k);
            let sigma = (1.0 / t.conclusive(k) as f64).sqrt();
            assert!((dp - expect).abs() < 4.0 * sigma, "{dp} vs {expect}");
        }
    }

    #[test]
    fn misaligned_axes_must_point_forward() {
        let cfg = honest("pair2", 1.0, 1.0, 10, 1);
        let axes: Vec<_> = cfg.set.axes().iter().map(|&u| (u.negated(), u)).collect();
        assert_eq!(apply_misalignment(&cfg, &axes).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = honest("pair2", 1.0, 1.0, 0, 1);
        assert!(run_honest(&cfg).is_err());
        cfg.rounds = 10;
        cfg.alice_heralding = 0.0;
        assert_eq!(run_honest(&cfg).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn cheat_null_component_below_threshold() {
        let cfg = CheatConfig {
            set: MeasurementSet::builtin("octahedron3").unwrap(),
            target_epsilon: 0.2,
            bob_efficiency: 1.0,
            rounds: 300_000,
            seed: 3,
        };
        let t = run_cheat(&cfg).unwrap();
        let eps = t.total_conclusive() as f64 / t.total_detections() as f64;
        assert!((eps - 0.2).abs() < 0.005);
        for k in 0..3 {
            assert_eq!(correlation(&t, k).0, 1.0);
        }
    }

    #[test]
    fn xk_is_one_without_errors() {
        let set = MeasurementSet::builtin("dodecahedron10").unwrap();
        let x = estimate_xk(&MisalignmentConfig::ideal(1000, 1), &set).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn xk_needs_enough_samples() {
        let set = MeasurementSet::builtin("pair2").unwrap();
        let cfg = MisalignmentConfig::ideal(999, 1);
        assert!(estimate_xk(&cfg, &set).is_err());
    }

    #[test]
    fn retardance_only_infidelity_is_second_order() {
        let set = MeasurementSet::builtin("cube4").unwrap();
        let cfg = MisalignmentConfig {
            retardance_tolerance: PI / 250.0,
            ..MisalignmentConfig::ideal(2000, 4)
        };
        let small_angle = (PI / 250.0).powi(2) / 2.0;
        for x in estimate_xk(&cfg, &set).unwrap() {
            assert!(
                1.0 - x > 0.1 * small_angle && 1.0 - x < 10.0 * small_angle,
                "{x}"
            );
        }
    }

    #[test]
    fn default_infidelity_in_tuned_window() {
        for name in ["dodecahedron10", "geodesic16"] {
            let set = MeasurementSet::builtin(name).unwrap();
            for x in estimate_xk(&MisalignmentConfig::default(), &set).unwrap() {
                assert!((1e-4..=4e-4).contains(&(1.0 - x)), "{name}: {}", 1.0 - x);
            }
        }
    }
}
