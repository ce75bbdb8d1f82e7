use coaglab::kernel::{KernelFamily, KernelParams, KernelSpec};
use coaglab::lattice::LatticeState;
use coaglab::solver::{run_with, SolverConfig};
use std::time::Instant;

fn main() {
    let n_max: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let t_end: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let rel: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1e-9);
    let kernel = KernelSpec::new(
        KernelFamily::Constant { value: 1.0 },
        KernelParams::new(0.0, 0.0, 1.0, 1.0).unwrap(),
    )
    .unwrap();
    let initial = LatticeState::<f64>::init_monomer_mix(2, &[0.7, 0.3], n_max).unwrap();
    let mut config = SolverConfig::new(t_end);
    config.rel_tol = rel;
    config.abs_tol = 1e-14;
    config.snapshot_floor = 1e-16;
    let start = Instant::now();
    let mut count = 0usize;
    let mut max_defect = 0.0f64;
    let report = run_with(&initial, &kernel, &config, |t, s| {
        count += 1;
        let m = s.accounted_mass_vector();
        let d = (m[0] - 0.7).abs().max((m[1] - 0.3).abs());
        max_defect = max_defect.max(d);
        if count % 10 == 0 {
            eprintln!(
                "t={t:.3e} support={} defect={d:.2e} elapsed={:.1}s",
                s.support_len(),
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })
    .unwrap();
    eprintln!(
        "done in {:.1}s: snaps={count} max_snap_defect={max_defect:.2e} report defect={:.2e} escaped={:.2e} steps={} evals={}",
        start.elapsed().as_secs_f64(),
        report.max_rel_mass_defect,
        report.escaped_fraction,
        report.stats.accepted,
        report.stats.rhs_evals
    );
}
