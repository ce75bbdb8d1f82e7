//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with the measured quantities. Criteria that the exact dynamics
//! provably cannot meet at the stated parameters are still asserted as
//! stated; see the companion reduced-horizon evidence tests.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use coaglab::diagnostics::{
    delta_schedule, dispersion_decay_report, localized_mass_fraction, moment_scaling_fit,
    SimplexBinning,
};
use coaglab::kernel::{
    check_bounds, check_homogeneity, check_lower_product_bound, default_sample_pairs,
    KernelFamily, KernelParams, KernelSpec, QForm,
};
use coaglab::lattice::{Composition, LatticeState};
use coaglab::selfsimilar::{
    compare_to_explicit, default_profile_grid, explicit_profile, extract_profile,
    residual_weak_selfsimilar, scaling_family_check, TestBattery,
};
use coaglab::solver::{run, SolverConfig, SolverError, Trajectory};
use coaglab::ssa::ssa_run;

fn verdict(label: &str, pass: bool, detail: &str) -> bool {
    println!(
        "ACCEPTANCE {label}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn constant_kernel(value: f64) -> KernelSpec<f64> {
    KernelSpec::new(
        KernelFamily::Constant { value },
        KernelParams::new(0.0, 0.0, value, value).unwrap(),
    )
    .unwrap()
}

fn ray_kernel_one_plus_theta1() -> (KernelSpec<f64>, QForm<f64>) {
    let q = QForm::new(1.0, vec![1.0, 0.0], vec![vec![0.0; 2]; 2]).unwrap();
    (
        KernelSpec::new(
            KernelFamily::RayConstant { q: q.clone() },
            KernelParams::new(0.0, 0.0, 1.0, 2.0).unwrap(),
        )
        .unwrap(),
        q,
    )
}

/// Criterion 1/3/4 share one run: d = 2, K = 1, monomer mix (0.7, 0.3),
/// n_max = 1024, rel_tol 1e-9, t_end 100, snapshots at 1 and 100 included.
fn criterion1_run() -> &'static (Trajectory<f64>, Duration) {
    static RUN: OnceLock<(Trajectory<f64>, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let initial = LatticeState::<f64>::init_monomer_mix(2, &[0.7, 0.3], 1024).unwrap();
        let kernel = constant_kernel(1.0);
        let mut config = SolverConfig::new(100.0);
        config.rel_tol = 1e-9;
        config.abs_tol = 1e-14;
        config.snapshot_floor = 1e-16;
        let mut times = coaglab::solver::default_snapshot_times(100.0);
        times.push(1.0);
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        config.snapshot_times = times;
        let start = Instant::now();
        let trajectory = run(&initial, &kernel, &config).expect("criterion-1 run completes");
        (trajectory, start.elapsed())
    })
}

#[test]
fn acceptance_1_conservation() {
    let (trajectory, elapsed) = criterion1_run();
    let m0 = 1.0;
    let mut worst = 0.0f64;
    for (_, state) in &trajectory.snapshots {
        let m = state.accounted_mass_vector();
        worst = worst.max((m[0] - 0.7).abs() / m0).max((m[1] - 0.3).abs() / m0);
    }
    let escaped = trajectory.report.escaped_fraction;
    let within_budget = elapsed.as_secs_f64() <= 120.0;
    let pass = worst <= 1e-8 && escaped <= 1e-3 && within_budget;
    assert!(verdict(
        "1 (conservation)",
        pass,
        &format!(
            "per-component defect {worst:.2e} (tol 1e-8), escaped {escaped:.2e} (tol 1e-3), runtime {:.1}s (budget 120s)",
            elapsed.as_secs_f64()
        ),
    ));
}

#[test]
fn acceptance_2_riccati_oracle() {
    let initial = LatticeState::<f64>::init_monomer_mix(1, &[1.0], 1024).unwrap();
    let kernel = constant_kernel(2.0);
    let mut config = SolverConfig::new(10.0);
    config.rel_tol = 1e-10;
    config.abs_tol = 1e-16;
    let trajectory = run(&initial, &kernel, &config).unwrap();
    let mut worst = 0.0f64;
    for (t, state) in &trajectory.snapshots {
        let expected = 1.0 / (1.0 + t);
        worst = worst.max((state.moment(0.0).value - expected).abs() / expected);
    }
    assert!(verdict(
        "2 (total-count oracle)",
        worst <= 1e-6,
        &format!("max relative error of M0 against 1/(1+t): {worst:.2e} (tol 1e-6)"),
    ));
}

#[test]
fn acceptance_3_moment_scaling() {
    let (trajectory, _) = criterion1_run();
    let mut source = trajectory.clone();
    let fit2 = moment_scaling_fit(&mut source, 2.0, 0.0, (10.0, 100.0)).unwrap();
    let fit0 = moment_scaling_fit(&mut source, 0.0, 0.0, (10.0, 100.0)).unwrap();
    let pass2 = (fit2.slope - 1.0).abs() <= 0.1;
    let pass0 = (fit0.slope + 1.0).abs() <= 0.05;
    let finite = fit2.max_ratio.is_finite() && fit0.max_ratio.is_finite();
    let detail = format!(
        "M2 slope {:.4} (want 1.0 +/- 0.1), M0 slope {:.4} (want -1.0 +/- 0.05), max ratios {:.3}/{:.3}. \
         Note: the exact summed dynamics give M0 = 2/(2+t), whose log-log slope over [10,100] is -0.933; \
         the stated +/-0.05 box around -1 cannot contain it at this horizon.",
        fit2.slope, fit0.slope, fit2.max_ratio, fit0.max_ratio
    );
    assert!(verdict(
        "3 (moment scaling)",
        pass2 && pass0 && finite,
        &detail
    ));
}

#[test]
fn acceptance_4_localization() {
    let (trajectory, _) = criterion1_run();
    let theta = [0.7, 0.3];
    let gamma = 0.0;

    // (a) localized fraction at t = 100, delta = 0.2.
    let (_, last) = trajectory
        .snapshots
        .iter()
        .find(|(t, _)| (*t - 100.0).abs() < 1e-9)
        .expect("snapshot at t = 100");
    let fraction = localized_mass_fraction(last, gamma, 0.2, &theta).unwrap();
    let pass_a = fraction >= 0.9;

    // (b) empirical delta schedule at target 0.9, non-increasing on [10, 100].
    let mut source = trajectory.clone();
    let schedule = delta_schedule(&mut source, gamma, &theta, 0.9).unwrap();
    let in_window: Vec<_> = schedule
        .points
        .iter()
        .filter(|p| p.time >= 10.0 && p.time <= 100.0)
        .collect();
    let pass_b = in_window.len() >= 3
        && in_window
            .windows(2)
            .all(|w| w[1].delta <= w[0].delta + 1e-9);

    // (c) dispersion decay and (d) plateau of its cumulative integral.
    let binning = SimplexBinning::<f64>::new(2, 40).unwrap();
    let report = dispersion_decay_report(&mut source, gamma, &binning, 0.95, 1e3).unwrap();
    let d_at = |target: f64| {
        report
            .points
            .iter()
            .filter(|p| p.defined)
            .min_by(|a, b| {
                (a.time - target)
                    .abs()
                    .partial_cmp(&(b.time - target).abs())
                    .unwrap()
            })
            .map(|p| p.dispersion)
            .unwrap()
    };
    let d1 = d_at(1.0);
    let d100 = d_at(100.0);
    let pass_c = d100 <= 0.2 * d1;
    let pass_d = report.plateau;

    let detail = format!(
        "fraction(t=100, delta=0.2) = {fraction:.4} (want >= 0.9; the exact multinomial solution caps near 0.877 here); \
         schedule non-increasing on [10,100]: {pass_b} ({} points, {} reached); \
         D(100)/D(1) = {:.4} (want <= 0.2); cumulative-integral plateau: {pass_d}",
        in_window.len(),
        in_window.iter().filter(|p| p.reached).count(),
        d100 / d1
    );
    assert!(verdict(
        "4 (localization)",
        pass_a && pass_b && pass_c && pass_d,
        &detail
    ));
}

/// Criterion 5 exactly as stated: ray-constant kernel Q = 1 + theta_1,
/// n_max = 2048, t_end = 1000, default escape abort. The mean cluster size
/// reaches 1 + Q(theta0) t / 2 = 851 by t_end, so the resolved range is
/// 2.4 mean sizes and about thirty percent of the mass must leave the
/// lattice; the run aborts at the 1% escape threshold near t = 360.
#[test]
fn acceptance_5_attractor_as_stated() {
    let (kernel, q) = ray_kernel_one_plus_theta1();
    let initial = LatticeState::<f64>::init_monomer_mix(2, &[0.7, 0.3], 2048).unwrap();
    let mut config = SolverConfig::new(1000.0);
    config.rel_tol = 1e-7;
    config.abs_tol = 1e-14;
    config.snapshot_floor = 1e-16;
    let result = run(&initial, &kernel, &config);
    match result {
        Err(SolverError::EscapeThreshold { time, fraction, .. }) => {
            assert!(verdict(
                "5 (attractor, stated parameters)",
                false,
                &format!(
                    "run aborts at t = {time:.0} with escaped fraction {fraction:.3} > 1e-2: \
                     n_max = 2048 cannot hold the self-similar region (mean size 851 at t = 1000) \
                     to t = 1000; see the reduced-horizon evidence test"
                ),
            ));
        }
        Err(e) => panic!("unexpected solver failure: {e}"),
        Ok(mut trajectory) => {
            // If it ever completes, grade it faithfully.
            let extracted = extract_profile(&mut trajectory, 0.0, 0.25, 100.0, 48).unwrap();
            let last = extracted.last().unwrap();
            let cmp = compare_to_explicit(last, &q, 1.0).unwrap();
            let rate_ok = (cmp.fitted_decay_rate - cmp.expected_decay_rate).abs()
                <= 0.1 * cmp.expected_decay_rate;
            assert!(verdict(
                "5 (attractor, stated parameters)",
                cmp.l1_error <= 0.10 && rate_ok,
                &format!(
                    "l1 {:.3}, decay rate {:.4} vs {:.4}",
                    cmp.l1_error, cmp.fitted_decay_rate, cmp.expected_decay_rate
                ),
            ));
        }
    }
}

/// Attractor convergence at a horizon the stated lattice actually resolves:
/// same kernel and lattice, t_end = 300 (mean size 256, resolved range 8
/// mean sizes, escape stays under the default 1% threshold).
#[test]
fn acceptance_5_attractor_reduced_horizon_evidence() {
    let (kernel, q) = ray_kernel_one_plus_theta1();
    let initial = LatticeState::<f64>::init_monomer_mix(2, &[0.7, 0.3], 2048).unwrap();
    let mut config = SolverConfig::new(300.0);
    config.rel_tol = 1e-7;
    config.abs_tol = 1e-14;
    config.snapshot_floor = 1e-16;
    let start = Instant::now();
    let mut trajectory = run(&initial, &kernel, &config).unwrap();
    let elapsed = start.elapsed();
    let extracted = extract_profile(&mut trajectory, 0.0, 0.25, 250.0, 48).unwrap();
    let last = extracted.last().unwrap();
    let cmp = compare_to_explicit(last, &q, 1.0).unwrap();
    let rate_ok =
        (cmp.fitted_decay_rate - cmp.expected_decay_rate).abs() <= 0.1 * cmp.expected_decay_rate;
    let pass = cmp.l1_error <= 0.10 && rate_ok && !last.flagged_low_mass;
    assert!(verdict(
        "5' (attractor, reduced horizon)",
        pass,
        &format!(
            "t = {:.0}: l1 {:.3} (tol 0.10), decay rate {:.4} vs expected {:.4} (tol 10%), \
             window mass {:.2}, escaped {:.2e}, runtime {:.0}s",
            last.time,
            cmp.l1_error,
            cmp.fitted_decay_rate,
            cmp.expected_decay_rate,
            cmp.window_mass_fraction,
            trajectory.report.escaped_fraction,
            elapsed.as_secs_f64()
        ),
    ));
}

#[test]
fn acceptance_6_stochastic_consistency() {
    // Deterministic reference at rel_tol 1e-10.
    let initial = LatticeState::<f64>::init_monomer_mix(2, &[0.7, 0.3], 256).unwrap();
    let kernel = constant_kernel(1.0);
    let mut config = SolverConfig::new(1.0);
    config.rel_tol = 1e-10;
    config.abs_tol = 1e-16;
    config.snapshot_times = vec![1.0];
    let reference = run(&initial, &kernel, &config).unwrap();
    let (_, det) = reference.snapshots.last().unwrap();

    // Ensemble: N = 1e4 particles, V = 1e4, 8 seeds, record at t = 1.
    let n = 10_000u64;
    let v = 10_000.0f64;
    let counts = vec![
        (Composition::new(&[1, 0]).unwrap(), (0.7 * n as f64) as u64),
        (Composition::new(&[0, 1]).unwrap(), (0.3 * n as f64) as u64),
    ];
    let initial_mass: [u64; 2] = [7000, 3000];
    let mut runs = Vec::new();
    let mut exact_mass_ok = true;
    for seed in 1..=8u64 {
        let run = ssa_run(&counts, v, &kernel, seed, 1.0, &[1.0]).unwrap();
        // Integer identity: zero tolerance on per-run monomer conservation.
        for state in &run.states {
            let mut sums = [0u64; 2];
            for (comp, &conc) in &state.concentrations {
                let count = (conc * v).round() as u64;
                sums[0] += count * comp.components()[0] as u64;
                sums[1] += count * comp.components()[1] as u64;
            }
            exact_mass_ok &= sums == initial_mass;
        }
        let events_ok = run.events == (run.initial_particles - run.final_particles) as u64;
        exact_mass_ok &= events_ok;
        runs.push(run);
    }

    // Mean within 3 standard errors wherever the expected count is >= 100.
    let mut checked = 0usize;
    let mut failures = 0usize;
    let mut worst_z = 0.0f64;
    for (comp, &n_det) in &det.concentrations {
        if n_det * v < 100.0 {
            continue;
        }
        let values: Vec<f64> = runs
            .iter()
            .map(|r| r.states[0].get(comp))
            .collect();
        let mean = values.iter().sum::<f64>() / 8.0;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 7.0;
        let stderr = (var / 8.0).sqrt().max(1e-12);
        let z = (mean - n_det).abs() / stderr;
        worst_z = worst_z.max(z);
        checked += 1;
        if z > 3.0 {
            failures += 1;
        }
    }
    let pass = exact_mass_ok && failures == 0 && checked >= 5;
    assert!(verdict(
        "6 (stochastic oracle)",
        pass,
        &format!(
            "{checked} compositions with expected count >= 100, worst |z| = {worst_z:.2} (tol 3), \
             integer mass identity exact: {exact_mass_ok}"
        ),
    ));
}

#[test]
fn acceptance_7_weak_residual() {
    let (kernel, q) = ray_kernel_one_plus_theta1();
    let theta0v = [0.7, 0.3];
    let m0 = 1.0;
    let q0 = q.eval(&theta0v);
    let coarse = default_profile_grid(q0, m0, 1024);
    let battery = TestBattery::log_spaced(&coarse, 12);
    let mut truth = Vec::new();
    let mut perturbed = Vec::new();
    for n in [1024usize, 2048, 4096, 8192] {
        let grid = default_profile_grid(q0, m0, n);
        let profile = explicit_profile(&theta0v, &q, m0, 2, &grid).unwrap();
        truth.push(
            residual_weak_selfsimilar(&profile, &kernel, 0.0, &battery, 1.0)
                .unwrap()
                .max_abs,
        );
        perturbed.push(
            residual_weak_selfsimilar(&profile, &kernel, 0.0, &battery, 1.1)
                .unwrap()
                .max_abs,
        );
    }
    let halving_ok = truth.windows(2).all(|w| w[1] <= w[0] / 2.0);
    let defect_floor = perturbed.iter().cloned().fold(f64::INFINITY, f64::min);
    let defect_stable = perturbed
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() <= 0.1 * w[0]);
    let separated = defect_floor > 100.0 * truth[truth.len() - 1];
    let pass = halving_ok && defect_stable && separated;
    assert!(verdict(
        "7 (weak residual)",
        pass,
        &format!(
            "residuals {truth:?} (>= 2x drop per halving: {halving_ok}); \
             perturbed-operator residuals {perturbed:?} stay near {defect_floor:.3e}"
        ),
    ));
}

#[test]
fn acceptance_8_scaling_family() {
    // Near-profile initial data on the ray through (0.7, 0.3), sized so the
    // lattice holds the self-similar range through t = 21.
    let q_theta0 = 1.7;
    let m0 = 13.7;
    let rate = 2.0 / (q_theta0 * m0);
    let amplitude = 4.0 / (q_theta0 * q_theta0 * m0);
    let segment = |a: f64, b: f64| {
        let f = |x: f64| (1.0 + rate * x) * (-rate * x).exp();
        amplitude / (rate * rate) * (f(a) - f(b))
    };
    let mut initial = LatticeState::<f64>::new(2, 2048);
    for s in 1..=100u32 {
        let rho = s as f64;
        let a1 = (0.7 * s as f64).round() as u32;
        let alpha = [a1, s - a1];
        if alpha.iter().all(|&a| a == 0) {
            continue;
        }
        let mass = segment(rho - 0.5, rho + 0.5);
        initial
            .set(Composition::new(&alpha).unwrap(), mass / rho)
            .unwrap();
    }
    let kernel = constant_kernel(q_theta0);
    let mut config = SolverConfig::new(21.0);
    config.rel_tol = 1e-8;
    config.abs_tol = 1e-14;
    config.escape_abort_fraction = 0.05;
    config.snapshot_times = vec![0.0, 10.0, 21.0];
    let mut trajectory = run(&initial, &kernel, &config).unwrap();
    // Angular cells must dominate the lattice's angular width (about 0.046
    // in theta_1 at t = 10 here, shrinking like t^{-1/2}): five cells put
    // the ridge at the center of a 4-sigma-wide cell at both times, which
    // is the faithful discretization of the weak-star comparison.
    let check = scaling_family_check(&mut trajectory, 0.0, 2.0, 10.0, Some(5)).unwrap();
    let pass = check.max_rel_discrepancy <= 0.05 && check.compared_bins >= 10;
    assert!(verdict(
        "8 (scaling family)",
        pass,
        &format!(
            "lambda = 2, t = 10 vs t' = {}: max relative discrepancy {:.4} (tol 0.05) over {} bins \
             holding >= 1% of the mass; escaped {:.2e}",
            check.t2,
            check.max_rel_discrepancy,
            check.compared_bins,
            trajectory.report.escaped_fraction
        ),
    ));
}

#[test]
fn acceptance_9_kernel_validation_suite() {
    let table: Vec<(f64, f64)> = (1..=31)
        .map(|k| {
            let s = k as f64 / 32.0;
            (s, 1.5 * (s * (1.0 - s)).powf(0.1))
        })
        .collect();
    let shipped: Vec<(&str, KernelSpec<f64>)> = vec![
        ("constant", constant_kernel(1.0)),
        (
            "additive",
            KernelSpec::new(
                KernelFamily::Additive,
                KernelParams::new(1.0, 0.0, 1.0, 1.0).unwrap(),
            )
            .unwrap(),
        ),
        (
            "product",
            KernelSpec::new(
                KernelFamily::Product,
                KernelParams::new(2.0, -1.0, 1.0, 1.0).unwrap(),
            )
            .unwrap(),
        ),
        (
            "power_law_pair",
            KernelSpec::new(
                KernelFamily::PowerLawPair {
                    lambda: 0.25,
                    scale: 1.0,
                },
                KernelParams::new(0.5, 0.25, 1.0, 1.0).unwrap(),
            )
            .unwrap(),
        ),
        ("ray_constant", ray_kernel_one_plus_theta1().0),
        (
            "homogeneous_table",
            KernelSpec::new(
                KernelFamily::HomogeneousTable { table },
                KernelParams::new(0.3, -0.1, 1.4, 3.3).unwrap(),
            )
            .unwrap(),
        ),
    ];
    let samples = default_sample_pairs::<f64>(2);
    let scales = [1e-3, 1.0, 1e3];
    let mut all_pass = true;
    let mut notes = Vec::new();
    for (name, spec) in &shipped {
        let b = check_bounds(spec, &samples).unwrap();
        let h = check_homogeneity(spec, &samples, &scales, 1e-12).unwrap();
        let l = check_lower_product_bound(spec, &samples).unwrap();
        if !(b.pass && h.pass && l.pass) {
            all_pass = false;
            notes.push(format!(
                "{name}: bounds {} homogeneity {} lower {}",
                b.pass, h.pass, l.pass
            ));
        }
    }

    // The deliberately mislabeled product kernel must fail with exit 6.
    let dir = std::env::temp_dir().join(format!("coaglab_acc9_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let mislabeled = r#"{
  "version": 1,
  "d": 2,
  "n_max": 64,
  "kernel": {"family": "product", "gamma": 1.0, "p": -0.5, "c1": 1.0, "c2": 1.0},
  "initial": {"type": "monomer_mix", "weights": [0.5, 0.5]},
  "solver": {"t_end": 1.0}
}"#;
    let cfg = dir.join("mislabeled.json");
    std::fs::write(&cfg, mislabeled).unwrap();
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_coaglab"))
        .args(["validate-kernel", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    let exit6 = output.status.code() == Some(6);
    let _ = std::fs::remove_dir_all(&dir);

    let pass = all_pass && exit6;
    assert!(verdict(
        "9 (kernel validation suite)",
        pass,
        &format!(
            "all shipped families pass the default grids: {all_pass} {}; mislabeled product exits 6: {exit6}",
            notes.join("; ")
        ),
    ));
}

#[test]
fn acceptance_10_determinism() {
    let dir = std::env::temp_dir().join(format!("coaglab_acc10_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    // Criterion-1 configuration through the CLI, run twice.
    let run_cfg = r#"{
  "version": 1,
  "d": 2,
  "n_max": 1024,
  "kernel": {"family": "constant", "value": 1.0, "gamma": 0.0, "p": 0.0, "c1": 1.0, "c2": 1.0},
  "initial": {"type": "monomer_mix", "weights": [0.7, 0.3]},
  "solver": {"t_end": 100.0, "rel_tol": 1e-9, "snapshot_floor": 1e-16},
  "diagnostics": {"fit_window": [10.0, 100.0]}
}"#;
    let cfg1 = dir.join("c1.json");
    std::fs::write(&cfg1, run_cfg).unwrap();

    // Criterion-6 configuration (stochastic ensemble), run twice.
    let ssa_cfg = r#"{
  "version": 1,
  "d": 2,
  "n_max": 64,
  "kernel": {"family": "constant", "value": 1.0, "gamma": 0.0, "p": 0.0, "c1": 1.0, "c2": 1.0},
  "initial": {"type": "monomer_mix", "weights": [0.7, 0.3]},
  "solver": {"t_end": 1.0},
  "ssa": {"n_particles": 10000, "volume": 10000.0, "seeds": [1,2,3,4,5,6,7,8], "record_times": [1.0]}
}"#;
    let cfg6 = dir.join("c6.json");
    std::fs::write(&cfg6, ssa_cfg).unwrap();

    let exe = env!("CARGO_BIN_EXE_coaglab");
    let mut identical = true;
    let mut notes = Vec::new();
    for (label, sub, cfg) in [("run", "run", &cfg1), ("ssa", "ssa", &cfg6)] {
        let out_a = dir.join(format!("{label}_a"));
        let out_b = dir.join(format!("{label}_b"));
        for out in [&out_a, &out_b] {
            let output = std::process::Command::new(exe)
                .args([
                    sub,
                    "--config",
                    cfg.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                ])
                .output()
                .unwrap();
            assert_eq!(
                output.status.code(),
                Some(0),
                "{label} failed: {}",
                String::from_utf8_lossy(&output.stderr)
            );
        }
        let mut files = 0usize;
        let same = compare_dirs(&out_a, &out_b, &mut files);
        identical &= same;
        notes.push(format!("{label}: {files} files byte-compared, identical: {same}"));
    }
    let _ = std::fs::remove_dir_all(&dir);
    assert!(verdict("10 (determinism)", identical, &notes.join("; ")));
}

fn compare_dirs(a: &std::path::Path, b: &std::path::Path, files: &mut usize) -> bool {
    let mut names: Vec<_> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut names_b: Vec<_> = std::fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names_b.sort();
    if names != names_b {
        return false;
    }
    for name in names {
        let pa = a.join(&name);
        let pb = b.join(&name);
        if pa.is_dir() {
            if !compare_dirs(&pa, &pb, files) {
                return false;
            }
        } else {
            *files += 1;
            if std::fs::read(&pa).unwrap() != std::fs::read(&pb).unwrap() {
                eprintln!("mismatch in {name:?}");
                return false;
            }
        }
    }
    true
}
