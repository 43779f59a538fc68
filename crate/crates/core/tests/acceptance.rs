//! Acceptance criteria 1 to 10, one PASS/FAIL line each.
//!
//! The desk problem is `configs/desk.toml`: unit square clamped on the left,
//! one seed disk, two phases with different stiffness and density.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use accrete::audit::{coarea_crosscheck, energy_history, energy_residual};
use accrete::config::RunConfig;
use accrete::coupling::{iterate, sharp_limit_sweep, CoupledSolution, CouplingOptions, GrowthProblem};
use accrete::eikonal::{solve_eikonal, solve_eikonal_banded, verify_theta_bounds, Disk, InitBand, InitialRegion};
use accrete::fields::{Grid2, ScalarField, VectorField2};
use accrete::gradcheck::{self, GradcheckOptions};
use accrete::io::read_manifest;
use accrete::material::{ForceModel, MaterialParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: usize,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

impl Verdict {
    fn ok(&self) -> bool {
        self.passed && self.limit.map_or(true, |l| self.elapsed <= l)
    }

    fn line(&self) -> String {
        let limit = self.limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
        format!(
            "criterion {:>2}: {} | {} | {:.1}s{}",
            self.id,
            if self.ok() { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64(),
            limit,
        )
    }
}

fn timed(id: usize, limit: Option<u64>, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (passed, detail) = f();
    let v = Verdict {
        id,
        passed,
        detail,
        elapsed: start.elapsed(),
        limit: limit.map(Duration::from_secs),
    };
    println!("{}", v.line());
    v
}

fn desk_config() -> RunConfig {
    RunConfig::from_path(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml")).unwrap()
}

fn desk(n: usize, tau: f64, eps: f64) -> GrowthProblem {
    let mut c = desk_config();
    c.grid.nx = n;
    c.grid.ny = n;
    c.time.tau = tau;
    c.material.eps = eps;
    c.validate().unwrap();
    c.problem().unwrap()
}

fn single_phase(eps: f64) -> MaterialParams {
    MaterialParams {
        eps,
        force: ForceModel {
            rho_a: 0.0,
            rho_r: 0.0,
            ..ForceModel::default()
        },
        ..MaterialParams::default()
    }
}

/// Per-step minimality and admissibility of one coupled solution.
fn minimality(sol: &CoupledSolution) -> (bool, String) {
    let worst = sol.y.reports.iter().map(|r| r.decrease).fold(f64::INFINITY, f64::min);
    let rel = sol
        .y
        .reports
        .iter()
        .map(|r| (r.f_after - r.f_before) / r.f_before.abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_det = sol.y.min_det();
    let ok = worst >= 0.0 && min_det >= 1e-8 && sol.converged && sol.y.all_converged();
    (
        ok,
        format!(
            "{} steps, min decrease {worst:.3e}, max rel F_i(y_i)-F_i(y_(i-1)) {rel:.1e}, min det {min_det:.4}, coupling iters {}",
            sol.y.steps(),
            sol.iterations
        ),
    )
}

/// Stationary single-phase run from the identity with no load.
fn stationary(eps: f64) -> (bool, String) {
    let grid = Arc::new(Grid2::unit_square(33).unwrap());
    let problem = GrowthProblem {
        y0: VectorField2::identity(grid.clone()),
        grid: grid.clone(),
        params: single_phase(eps),
        region: InitialRegion::single([0.5, 0.5], 0.1),
        tau: 0.05,
        t_final: 1.0,
        solver: Default::default(),
        init_band: InitBand::default(),
    };
    let sol = iterate(&problem, &CouplingOptions::default()).unwrap();
    let id = VectorField2::identity(grid);
    let drift = sol.y.snapshots().iter().map(|y| y.max_abs_diff(&id)).fold(0.0, f64::max);
    let history = energy_history(&sol.y, &sol.theta, &problem.params, 8).unwrap();
    let terms = history
        .iter()
        .flat_map(|r| [r.energy - r.energy_initial, r.dissipation, r.load_rate, r.phase_power, r.residual])
        .map(f64::abs)
        .fold(0.0, f64::max);
    (
        drift <= 1e-8 && terms <= 1e-10,
        format!("eps {eps}: max |y - id| {drift:.1e}, max |term| {terms:.1e}"),
    )
}

/// Smooth random speed in `[lo, hi]` from a few seeded Fourier modes.
fn random_speed(grid: &Arc<Grid2>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
    let modes: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                rng.gen_range(0.5..6.0),
                rng.gen_range(0.5..6.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let norm: f64 = modes.iter().map(|m| m[3].abs()).sum();
    ScalarField::from_fn(grid.clone(), |x| {
        let w: f64 = modes.iter().map(|m| m[3] * (m[0] * x.x + m[1] * x.y + m[2]).sin()).sum::<f64>() / norm;
        lo + (hi - lo) * 0.5 * (1.0 + w)
    })
}

fn random_region(rng: &mut ChaCha8Rng) -> InitialRegion {
    let n = rng.gen_range(1..=3);
    InitialRegion::new(
        (0..n)
            .map(|_| Disk {
                center: [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)],
                radius: rng.gen_range(0.04..0.1),
            })
            .collect(),
    )
}

fn point_source_error(n: usize, banded: bool) -> (f64, f64) {
    let grid = Arc::new(Grid2::unit_square(n).unwrap());
    let speed = ScalarField::constant(grid.clone(), 1.0);
    let region = InitialRegion::single([0.0, 0.0], 0.0);
    let front = if banded {
        solve_eikonal_banded(&speed, &region, InitBand { radius: 0.05 }, (1.0, 1.0)).unwrap()
    } else {
        solve_eikonal(&speed, &region.seed_mask(&grid), (1.0, 1.0)).unwrap()
    };
    assert_eq!(front.seed_mask.iter().filter(|&&s| s).count(), 1);
    let err = (0..grid.len())
        .map(|k| (front.theta.values[k] - grid.point(k).norm()).abs())
        .fold(0.0, f64::max);
    (err, grid.h())
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn cli_run(config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_accrete"))
        .args(["simulate", "--quiet", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn criterion_1() -> (bool, String) {
    let params = desk_config().material;
    let opts = GradcheckOptions {
        samples: 100,
        step: 1e-5,
        tol: 1e-6,
    };
    let r = gradcheck::run(&params, &opts, 1).unwrap();
    (
        r.passed() && r.samples == 100,
        format!("max rel err dW {:.1e}, dR {:.1e}, DH {:.1e}", r.stored, r.viscous, r.hyper),
    )
}

fn criterion_2() -> (bool, String) {
    let runs: Vec<(f64, f64)> = [65, 129, 257].iter().map(|&n| point_source_error(n, true)).collect();
    let orders: Vec<f64> = runs.windows(2).map(|w| (w[0].0 / w[1].0).log2()).collect();
    let (e129, h129) = runs[1];
    let plain: Vec<f64> = [65, 129, 257].iter().map(|&n| point_source_error(n, false).0).collect();
    let plain_orders: Vec<f64> = plain.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    (
        e129 <= 2.0 * h129 && orders.iter().all(|&p| p >= 0.9),
        format!(
            "Linf at 129: {:.2}h, orders {:.2} {:.2} (without init band: {:.2}h, orders {:.2} {:.2})",
            e129 / h129,
            orders[0],
            orders[1],
            plain[1] / h129,
            plain_orders[0],
            plain_orders[1]
        ),
    )
}

fn criterion_3() -> (bool, String) {
    let params = desk_config().material;
    let (lo, hi) = (params.gamma_min, params.gamma_max);
    let grid = Arc::new(Grid2::unit_square(129).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut checked = 0;
    let (mut min_g, mut max_g) = (f64::INFINITY, 0.0_f64);
    for _ in 0..20 {
        let speed = random_speed(&grid, &mut rng, lo, hi);
        let region = random_region(&mut rng);
        let front = solve_eikonal_banded(&speed, &region, InitBand::default(), (lo, hi)).unwrap();
        let rep = verify_theta_bounds(&front, Some(&region), (lo, hi)).unwrap();
        violations += rep.violations();
        checked += rep.checked;
        min_g = min_g.min(rep.min_grad);
        max_g = max_g.max(rep.max_grad);
    }
    (
        violations == 0,
        format!(
            "20 fields, {checked} gradients checked, {violations} violations, |grad theta| in [{min_g:.3}, {max_g:.3}] vs [{:.3}, {:.3}]",
            1.0 / hi,
            1.0 / lo
        ),
    )
}

fn criterion_4() -> (bool, String) {
    let p = desk(65, 1.0 / 20.0, 0.2);
    minimality(&iterate(&p, &CouplingOptions::default()).unwrap())
}

fn criterion_6() -> (bool, String) {
    let taus = [0.1, 0.05, 0.025];
    let res: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let p = desk(65, tau, 0.2);
            let sol = iterate(&p, &CouplingOptions::default()).unwrap();
            energy_residual(&sol.y, &sol.theta, p.t_final, &p.params).unwrap().residual
        })
        .collect();
    let ratios = [res[0] / res[1], res[1] / res[2]];
    (
        ratios.iter().all(|r| (1.5..=2.5).contains(r)),
        format!(
            "|residual| {:.3e} {:.3e} {:.3e}, ratios {:.2} {:.2}",
            res[0].abs(),
            res[1].abs(),
            res[2].abs(),
            ratios[0],
            ratios[1]
        ),
    )
}

fn criterion_7() -> (bool, String) {
    let p = desk(65, 0.05, 0.0);
    let sol = iterate(&p, &CouplingOptions::default()).unwrap();
    let h = p.grid.h();
    let gaps: Vec<f64> = [4.0, 2.0, 1.0]
        .iter()
        .map(|&m| {
            let (surface, volume) = coarea_crosscheck(&sol.y, &sol.theta, p.t_final, &p.params, m * h).unwrap();
            (surface - volume).abs() / surface.abs()
        })
        .collect();
    (
        gaps[2] <= 0.05 && gaps[0] > gaps[1] && gaps[1] > gaps[2],
        format!(
            "relative gap at 4h, 2h, h: {:.2}%, {:.2}%, {:.2}%",
            100.0 * gaps[0],
            100.0 * gaps[1],
            100.0 * gaps[2]
        ),
    )
}

fn criterion_8() -> (bool, String) {
    let p = desk(65, 0.025, 0.2);
    let opts = CouplingOptions::default();
    let sweep = sharp_limit_sweep(&p, &[0.2, 0.1, 0.05, 0.0], &opts).unwrap();
    let sharp = sweep.solutions.last().unwrap();
    let bounds_ok = sharp.bounds.is_clean() && sharp.no_touch;
    let (min_ok, min_detail) = minimality(sharp);
    let (stat_ok, stat_detail) = stationary(0.0);
    let gaps: Vec<String> = sweep.gaps.iter().map(|g| format!("{:.2e}", g.theta_gap)).collect();
    (
        sweep.theta_gaps_decrease() && bounds_ok && min_ok && stat_ok,
        format!(
            "theta gaps {}; eps 0: bounds {} ({} violations), minimality {} ({min_detail}), stationary {} ({stat_detail})",
            gaps.join(" "),
            if bounds_ok { "ok" } else { "FAILED" },
            sharp.bounds.violations(),
            if min_ok { "ok" } else { "FAILED" },
            if stat_ok { "ok" } else { "FAILED" },
        ),
    )
}

fn criterion_9() -> (bool, String) {
    let mut p = desk(65, 0.05, 0.2);
    p.params.growth.gain = 0.0;
    let sol = iterate(&p, &CouplingOptions::default()).unwrap();
    let bitwise = sol
        .theta_next
        .values
        .iter()
        .zip(&sol.theta0.values)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    (
        sol.converged && sol.iterations == 1 && bitwise,
        format!("{} correction(s), theta1 == theta0 bitwise: {bitwise}", sol.iterations),
    )
}

fn criterion_10() -> (bool, String) {
    let dir = out_dir("determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let mut c = desk_config();
    c.grid.nx = 33;
    c.grid.ny = 33;
    c.time.tau = 0.1;
    c.initial.amplitude = 0.02;
    let config = dir.join("run.toml");
    std::fs::write(&config, c.to_toml()).unwrap();
    let (a, b) = (dir.join("a"), dir.join("b"));
    let codes = [cli_run(&config, &a), cli_run(&config, &b)];
    let read = |p: &Path| std::fs::read(p).unwrap();
    let same_manifest = read(&a.join("manifest.json")) == read(&b.join("manifest.json"));
    let manifest = read_manifest(&a.join("manifest.json")).unwrap();
    let differing = manifest
        .files
        .iter()
        .filter(|f| read(&a.join(&f.path)) != read(&b.join(&f.path)))
        .count();
    (
        codes == [0, 0] && same_manifest && differing == 0 && !manifest.files.is_empty(),
        format!(
            "exit codes {:?}, manifests identical: {same_manifest}, {} files, {differing} differ",
            codes,
            manifest.files.len()
        ),
    )
}

#[test]
fn acceptance() {
    let verdicts = [
        timed(1, Some(5), criterion_1),
        timed(2, Some(10), criterion_2),
        timed(3, Some(30), criterion_3),
        timed(4, Some(300), criterion_4),
        timed(5, Some(60), || stationary(0.2)),
        timed(6, Some(900), criterion_6),
        timed(7, Some(120), criterion_7),
        timed(8, Some(1200), criterion_8),
        timed(9, Some(60), criterion_9),
        timed(10, None, criterion_10),
    ];
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.ok()).map(|v| v.id).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn desk_problem_is_two_phase() {
    let c = desk_config();
    assert!(c.validate().is_ok());
    assert_ne!(c.material.mu_a, c.material.mu_r);
    assert_ne!(c.material.force.rho_a, c.material.force.rho_r);
}
