use coaglab::kernel::{KernelFamily, KernelParams, KernelSpec, QForm};
use coaglab::lattice::LatticeState;
use coaglab::solver::{run_with, SolverConfig};
use std::time::Instant;

fn main() {
    let n_max: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2048);
    let t_end: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1000.0);
    let abort: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let q = QForm::new(1.0, vec![1.0, 0.0], vec![vec![0.0; 2]; 2]).unwrap();
    let kernel = KernelSpec::new(
        KernelFamily::RayConstant { q },
        KernelParams::new(0.0, 0.0, 1.0, 2.0).unwrap(),
    )
    .unwrap();
    let initial = LatticeState::<f64>::init_monomer_mix(2, &[0.7, 0.3], n_max).unwrap();
    let mut config = SolverConfig::new(t_end);
    config.rel_tol = 1e-7;
    config.abs_tol = 1e-14;
    config.snapshot_floor = 1e-16;
    config.escape_abort_fraction = abort;
    let start = Instant::now();
    let result = run_with(&initial, &kernel, &config, |t, s| {
        let m = s.accounted_mass_vector();
        eprintln!(
            "t={t:.3e} support={} mass={:.12} escaped={:.3e} elapsed={:.1}s",
            s.support_len(),
            m[0] + m[1],
            s.escaped_mass.iter().sum::<f64>(),
            start.elapsed().as_secs_f64()
        );
        Ok(())
    });
    match result {
        Ok(report) => eprintln!(
            "done in {:.1}s: defect={:.2e} escaped={:.3e} clipped={:?} steps={} evals={}",
            start.elapsed().as_secs_f64(),
            report.max_rel_mass_defect,
            report.escaped_fraction,
            report.clipped_mass,
            report.stats.accepted,
            report.stats.rhs_evals
        ),
        Err(e) => eprintln!(
            "aborted after {:.1}s: {e}",
            start.elapsed().as_secs_f64()
        ),
    }
}
