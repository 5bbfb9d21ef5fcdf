//! Calibrating, clipping and perturbing one update, then composing the
//! per-upload budget over many uploads.

use asyncfl::privacy::{self, AccountantState, PrivacyParams};
use asyncfl::rng::Stream;
use asyncfl::ParamVector;

fn main() -> asyncfl::Result<()> {
    let params = PrivacyParams::calibrated(8.0, 1e-3, 1.0)?;
    println!("epsilon=8 delta=1e-3 -> sigma={:.10}", params.sigma);
    println!("noise std per coordinate = sigma * S = {:.6}", params.noise_std());

    let update = ParamVector::from_slice(&[3.0, -4.0, 0.0, 12.0]);
    let clipped = privacy::clip(&update, params.clip_norm);
    println!("|g| = {:.3}, |clip(g)| = {:.3}", update.norm(), clipped.norm());

    let mut stream = Stream::derive(1, "ldp", 0);
    let noisy = privacy::perturb(&clipped, &params, &mut stream)?;
    println!("clipped  {:?}", clipped.values());
    println!("released {:?}", noisy.values());
    // Unclipped input is refused rather than silently released.
    println!("perturb(unclipped) -> {}", privacy::perturb(&update, &params, &mut stream).unwrap_err());

    let mut ledger = AccountantState::new(10);
    for uploads in [1u64, 9, 90] {
        ledger = privacy::account(&ledger, &params, uploads);
        println!(
            "after {:>3} uploads: epsilon={:>6.1} delta={:.3} warning={}",
            ledger.rounds_composed, ledger.total.0, ledger.total.1, ledger.delta_warning
        );
    }
    for sigma in [0.25, 0.5, 1.0, 2.0] {
        println!("sigma={sigma:<4} -> per-upload epsilon {:.3}", privacy::epsilon_for(sigma, 1e-3, 1.0)?);
    }
    Ok(())
}
