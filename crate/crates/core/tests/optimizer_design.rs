use std::sync::{Arc, OnceLock};

use ftn_core::analysis::{autocorr_taps, risi_variance, to_db};
use ftn_core::optimizer::{solve, DesignProblem};
use ftn_core::pswf::{PswfBasis, PswfConfig};
use ftn_core::pulse::Pulse;

fn basis() -> Arc<PswfBasis> {
    static B: OnceLock<Arc<PswfBasis>> = OnceLock::new();
    B.get_or_init(|| Arc::new(PswfBasis::build(PswfConfig::new(15.0, 36)).unwrap()))
        .clone()
}

fn design(n: usize, t: f64, depth: usize) -> f64 {
    let mut p = DesignProblem::new(basis(), n, 15.0, t, depth, 4.4e-4);
    p.restarts = 4;
    let r = solve(&p).unwrap();
    assert!(r.constraint_residuals.0 < 1e-8 && r.constraint_residuals.1 < 1e-8);
    r.objective
}

#[test]
fn rrc_is_nearly_optimal_without_equalization() {
    let opt = design(22, 1.1, 0);
    let rrc = Pulse::truncated_rrc(0.1, 0.5, 15.0).unwrap();
    let rrc_var = risi_variance(&autocorr_taps(&rrc, 1.1).unwrap(), 0);
    let gap = to_db(rrc_var) - to_db(opt);
    assert!((0.0..1.0).contains(&gap), "rrc {} dB, optimum {} dB", to_db(rrc_var), to_db(opt));
}

#[test]
fn larger_basis_gives_no_real_gain() {
    let a = to_db(design(22, 0.7, 2));
    let b = to_db(design(30, 0.7, 2));
    assert!((a - b).abs() < 0.1, "N=22 {a} dB, N=30 {b} dB");
}

#[test]
fn deeper_equalizer_never_hurts() {
    let vals: Vec<f64> = [0usize, 1, 2, 4].iter().map(|&l| design(22, 0.7, l)).collect();
    for w in vals.windows(2) {
        assert!(w[1] <= w[0], "{vals:?}");
    }
}
