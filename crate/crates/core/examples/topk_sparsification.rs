//! Top-k selection with a residual buffer: nothing is lost, only delayed.

use asyncfl::asyncsim::select_topk;
use asyncfl::rng::Stream;
use asyncfl::ParamVector;

fn main() -> asyncfl::Result<()> {
    let mut stream = Stream::from_seed(4);
    let dim = 12;
    let mut residual = ParamVector::from_slice(&vec![0.0; dim]);
    let mut total_in = vec![0.0; dim];
    let mut total_sent = vec![0.0; dim];
    for step in 0..5 {
        let g = ParamVector::from_slice(&(0..dim).map(|_| stream.gaussian()).collect::<Vec<_>>());
        let (sent, rest) = select_topk(&g, &residual, 0.25)?;
        for i in 0..dim {
            total_in[i] += g.values()[i];
            total_sent[i] += sent.values()[i];
        }
        let idx: Vec<usize> = (0..dim).filter(|&i| sent.values()[i] != 0.0).collect();
        println!("step {step}: sent coordinates {idx:?}, residual norm {:.3}", rest.norm());
        residual = rest;
    }
    let gap: f64 = (0..dim)
        .map(|i| (total_in[i] - total_sent[i] - residual.values()[i]).abs())
        .fold(0.0, f64::max);
    println!("max |inputs - sent - residual| = {gap:.2e}");
    Ok(())
}
