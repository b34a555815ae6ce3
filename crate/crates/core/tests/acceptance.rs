//! Acceptance criteria, one line per criterion. Exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use steering_core::analysis::{
    analyze_with_curve, setting_systematic, total_error, verdict, SettingEstimate, XSource,
    DEFAULT_THRESHOLD,
};
use steering_core::geometry::{werner_from_fidelity, Direction, MeasurementSet, BUILTIN_SETS};
use steering_core::simulator::{run_cheat_with_curve, run_honest, CheatConfig, HonestConfig};
use steering_core::strategies::{bound_at, bound_curve, c_infinity, deterministic_bound};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn closed_form() -> Check {
    let mut worst: f64 = 0.0;
    for eps in [0.01, 0.132, 0.5, 1.0] {
        let got = c_infinity(eps).map_err(err)?;
        worst = worst.max((got - (1.0 - eps / 2.0)).abs());
    }
    ensure(worst == 0.0, format!("max deviation {worst:e}"))
}

fn threshold_law() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in BUILTIN_SETS {
        let set = MeasurementSet::builtin(name).map_err(err)?;
        let curve = bound_curve(&set).map_err(err)?;
        let inv = 1.0 / set.n() as f64;
        let (at, _) = curve.at(inv).map_err(err)?;
        let (above, _) = curve.at(inv + 1e-3).map_err(err)?;
        ok &= (at - 1.0).abs() <= 1e-9 && above < 1.0;
        lines.push(format!("{name}: C(1/n)={at:.12} C(1/n+1e-3)={above:.6}"));
    }
    ensure(ok, lines.join("; "))
}

/// `C(m/n) − D(m)`: positive when the deterministic point is below the bound.
fn gap_below_bound(name: &str, m: usize) -> Result<f64, String> {
    let set = MeasurementSet::builtin(name).map_err(err)?;
    let curve = bound_curve(&set).map_err(err)?;
    let d = curve.family(m).ok_or("missing family")?.value;
    let (c, _) = curve.at(m as f64 / set.n() as f64).map_err(err)?;
    Ok(c - d)
}

fn hull_exclusion() -> Check {
    let dodeca = gap_below_bound("dodecahedron10", 4)?;
    let octa = gap_below_bound("octahedron3", 2)?;
    ensure(
        dodeca > 0.0 && octa > 0.0,
        format!(
            "dodecahedron10 m=4 gap {dodeca:.6} (need > 0); octahedron3 m=2 gap {octa:.6} (need > 0, expected ≈ 0.0816)"
        ),
    )
}

/// `max |Σ A_k u_k| / m` over all `3^n` announcement vectors with `m` non-null entries.
fn brute_force_values(axes: &[Direction]) -> Vec<f64> {
    let n = axes.len();
    let mut best = vec![0.0f64; n + 1];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut v = [0.0f64; 3];
        let mut m = 0;
        for u in axes {
            let a = (c % 3) as f64 - 1.0;
            c /= 3;
            if a != 0.0 {
                m += 1;
                let u = u.to_array();
                for i in 0..3 {
                    v[i] += a * u[i];
                }
            }
        }
        if m > 0 {
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() / m as f64;
            best[m] = best[m].max(norm);
        }
    }
    best[1..].to_vec()
}

fn oracle_equivalence() -> Check {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for name in BUILTIN_SETS {
        let set = MeasurementSet::builtin(name).map_err(err)?;
        if set.n() > 6 {
            continue;
        }
        let oracle = brute_force_values(set.axes());
        for (i, want) in oracle.iter().enumerate() {
            let got = deterministic_bound(&set, i + 1).map_err(err)?.value;
            worst = worst.max((got - want).abs());
            count += 1;
        }
    }
    ensure(
        worst <= 1e-12,
        format!("{count} values, max deviation {worst:e}"),
    )
}

fn experiment_consistency() -> Check {
    let dodeca = MeasurementSet::builtin("dodecahedron10").map_err(err)?;
    let geo = MeasurementSet::builtin("geodesic16").map_err(err)?;
    let v10 = verdict(0.985, 0.132, &dodeca, 0.0063, DEFAULT_THRESHOLD).map_err(err)?;
    let v16 = verdict(0.981, 0.130, &geo, 0.0067, DEFAULT_THRESHOLD).map_err(err)?;
    ensure(
        (v10.significance - 2.6).abs() <= 0.3 && (v16.significance - 5.3).abs() <= 0.4,
        format!(
            "C10(0.132)={:.5} significance {:.3}; C16(0.130)={:.5} significance {:.3}",
            v10.bound, v10.significance, v16.bound, v16.significance
        ),
    )
}

fn honest_reproduction() -> Check {
    let state = werner_from_fidelity(0.992).map_err(err)?;
    let mut ok = true;
    let mut lines = Vec::new();
    for (i, name) in [
        "octahedron3",
        "cube4",
        "icosahedron6",
        "dodecahedron10",
        "geodesic16",
    ]
    .iter()
    .enumerate()
    {
        let set = MeasurementSet::builtin(name).map_err(err)?;
        let cfg = HonestConfig {
            set: set.clone(),
            state,
            alice_heralding: 0.354,
            bob_efficiency: 1.0,
            rounds: 10_000_000,
            seed: 600 + i as u64,
        };
        let counts = run_honest(&cfg).map_err(err)?;
        let curve = bound_curve(&set).map_err(err)?;
        let rep = analyze_with_curve(
            &counts,
            &curve,
            &set,
            &XSource::default(),
            DEFAULT_THRESHOLD,
        )
        .map_err(err)?;
        ok &= (0.984..=0.994).contains(&rep.s) && (0.352..=0.356).contains(&rep.epsilon_hat);
        lines.push(format!(
            "n={} S={:.4} eps={:.4}",
            set.n(),
            rep.s,
            rep.epsilon_hat
        ));
    }
    ensure(ok, lines.join("; "))
}

fn cheat_soundness_and_tightness() -> Check {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut runs = 0;
    for (si, name) in BUILTIN_SETS.iter().enumerate() {
        let set = MeasurementSet::builtin(name).map_err(err)?;
        let curve = bound_curve(&set).map_err(err)?;
        let n = set.n() as f64;
        for (ei, eps) in [1.0 / n + 0.01, 0.3, 0.5, 1.0].into_iter().enumerate() {
            let cfg = CheatConfig {
                set: set.clone(),
                target_epsilon: eps,
                bob_efficiency: 1.0,
                rounds: 1_000_000,
                seed: 700 + 10 * si as u64 + ei as u64,
            };
            let counts = run_cheat_with_curve(&cfg, &curve).map_err(err)?;
            let rep = analyze_with_curve(
                &counts,
                &curve,
                &set,
                &XSource::Constant(1.0),
                DEFAULT_THRESHOLD,
            )
            .map_err(err)?;
            let (bound, _) = curve.at(rep.epsilon_hat).map_err(err)?;
            let z = (rep.s - bound) / rep.budget.statistical;
            worst = worst.max(z.abs());
            runs += 1;
            if z.abs() > 4.0 {
                ok = false;
                failures.push(format!(
                    "{name} eps={eps:.3}: S={:.6} eps_hat={:.5} C={bound:.6} stat={:.2e} z={z:.1}",
                    rep.s, rep.epsilon_hat, rep.budget.statistical
                ));
            }
        }
    }
    ensure(
        ok,
        format!(
            "{runs} runs, max |S - C(eps_hat)| = {worst:.2} statistical sigma; {}",
            failures.join("; ")
        ),
    )
}

fn error_budget() -> Check {
    let t10 = total_error(0.0057, 0.0028).map_err(err)?;
    let t3 = total_error(0.0048, 0.0022).map_err(err)?;
    let est = SettingEstimate {
        k: 0,
        e_tilde: 0.99,
        delta_p_tilde: 0.02,
        conclusive: 1,
        bob_clicks: 1,
    };
    let x = 1.0 - 2e-4;
    let p = setting_systematic(x, &est).map_err(err)?;
    let first = (1.0 - x + p.delta_n) * est.e_tilde.abs() / x;
    let second = p.delta_e - first;
    let within2 = |v: f64, r: f64| v / r <= 2.0 && r / v <= 2.0;
    ensure(
        (t10 - 0.0063).abs() <= 5e-5
            && (t3 - 0.0053).abs() <= 5e-5
            && within2(first, 0.0029)
            && within2(second, 0.00195),
        format!("totals {t10:.5} {t3:.5}; per-setting terms {first:.5} {second:.5}"),
    )
}

fn quasi_uniform(n: usize) -> Result<MeasurementSet, String> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let axes = (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Direction::normalized(r * phi.cos(), r * phi.sin(), z)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    MeasurementSet::new("hemisphere200", axes).map_err(err)
}

fn convergence() -> Check {
    let set = quasi_uniform(200)?;
    let mut worst: f64 = 0.0;
    for eps in [0.2, 0.5, 0.8] {
        let (c, _) = bound_at(&set, eps).map_err(err)?;
        worst = worst.max((c - (1.0 - eps / 2.0)).abs());
    }
    ensure(worst <= 0.05, format!("max |C - (1 - eps/2)| = {worst:.5}"))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_steering"))
        .args(args)
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let counts = dir.join("counts.json");
    let report = dir.join("report.json");
    let csv = dir.join("settings.csv");
    let c = counts.to_str().ok_or("path")?;
    cli(&[
        "simulate",
        "honest",
        "--set",
        "dodecahedron10",
        "--rounds",
        "2000000",
        "--seed",
        "99",
        "--fidelity",
        "0.992",
        "--heralding",
        "0.132",
        "--out",
        c,
    ])?;
    cli(&[
        "analyze",
        c,
        "--x-monte-carlo",
        "--out",
        report.to_str().ok_or("path")?,
        "--csv",
        csv.to_str().ok_or("path")?,
    ])?;
    [counts, report, csv]
        .iter()
        .map(|p| std::fs::read(p).map_err(err))
        .collect()
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let manifest = a.path().join("counts.json.manifest.json");
    cli(&["rerun", manifest.to_str().ok_or("path")?])?;
    let rerun = std::fs::read(a.path().join("counts.json")).map_err(err)?;
    ensure(
        first == second && rerun == first[0],
        format!(
            "{} artifacts compared, rerun from manifest identical: {}",
            first.len(),
            rerun == first[0]
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("closed-form infinite-settings bound", closed_form),
        ("threshold law at 1/n", threshold_law),
        ("hull exclusion", hull_exclusion),
        ("brute-force oracle equivalence", oracle_equivalence),
        ("experiment consistency", experiment_consistency),
        ("honest reproduction", honest_reproduction),
        (
            "cheat soundness and tightness",
            cheat_soundness_and_tightness,
        ),
        ("error budget arithmetic", error_budget),
        ("large-n convergence", convergence),
        ("pipeline determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name} [{secs:.1}s]: {detail}", i + 1);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
