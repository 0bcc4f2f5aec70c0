use qfriction_core::engine::*;
use std::time::Instant;

fn main() {
    let cfg = SimConfig::figure1();
    println!("rate estimate: {:.1}", cfg.generator_rate_estimate().unwrap());
    let t0 = Instant::now();
    let rec = propagate(&cfg).unwrap();
    println!("propagate: {:.1}s, rows {}", t0.elapsed().as_secs_f64(), rec.rows.len());
    println!("final trace drift {:.3e}", rec.final_trace_drift);
    println!("min uncert prod {:.9}", rec.min_uncert_prod);
    println!("worst min eig {:.3e}", rec.worst_min_eig);
    // <p>(t) vs -3 exp(-t/6)
    let mut worst_rel = 0.0f64;
    for row in &rec.rows {
        let want = -3.0 * (-row.t / 6.0).exp();
        let rel = (row.p_mean - want).abs() / want.abs();
        worst_rel = worst_rel.max(rel);
    }
    println!("worst <p> rel error vs exp decay: {:.3e}", worst_rel);
    let resid = ehrenfest_residuals(&rec, &cfg.params).unwrap();
    for r in &resid {
        println!("{:55} abs {:.3e} rel {:.3e}", r.name, r.max_abs, r.max_rel);
    }
}
