//! Step-by-step contraction on a seeded quadratic.

use asyncfl::experiment::{convergence_trial, ExperimentConfig};

fn main() -> asyncfl::Result<()> {
    let cfg = ExperimentConfig::default();
    let t = convergence_trial(&cfg, 0)?;
    let r = &t.mixed;
    println!(
        "mixed run: rho_eff={:.4} c={:.3e} nu_min={:.3} pass={} (c=0: {})",
        r.rho_eff, r.c, r.nu_min, r.pass, r.pass_tight
    );
    for s in r.steps.iter().take(8) {
        println!(
            "  event {:>2}: gap {:.4e} -> {:.4e} (bound {:.4e}) {}",
            s.event_index,
            s.gap_before,
            s.gap_after,
            s.bound,
            if s.pass { "ok" } else { "VIOLATED" }
        );
    }
    let g = &t.plain;
    println!(
        "plain averaging: target rate {:.4}, worst epoch ratio {:.4}, asymptotic {:.4}, closed-form rel err {:.1e}, pass={}",
        g.rate, g.worst_epoch_ratio, g.asymptotic_rate, g.closed_form_rel_err, g.pass
    );
    Ok(())
}
