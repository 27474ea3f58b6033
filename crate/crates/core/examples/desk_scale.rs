//! Desk-scale feedback-loop run on a synthetic two-cluster corpus.
//!
//! `cargo run --release --example desk_scale -- [seed]`

use echosim_core::simulator::{run_simulation, significance_between, SimConfig};
use echosim_core::synthetic::{generate, SyntheticConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = generate(&SyntheticConfig { seed, ..Default::default() }).expect("corpus");
    let cfg = SimConfig { n_users: 50, k_per_epoch: 10, n_epochs: 30, history_users: 200, seed, ..Default::default() };
    let start = std::time::Instant::now();
    let trace = run_simulation(&corpus.ratings, &corpus.genome, &cfg).expect("simulation");
    println!("baseline {:.4} ± {:.4}", trace.baseline.mean, trace.baseline.sem);
    for rec in &trace.per_epoch {
        let s = rec.stats.expect("stats");
        // share of recommendations drawn from the user's own cluster
        let (mut own, mut total) = (0usize, 0usize);
        for (u, recs) in &rec.recommendations {
            for (m, _) in recs {
                total += 1;
                let idx = corpus.genome.index_of(*m).expect("tagged");
                own += usize::from(corpus.movie_cluster[idx] == corpus.user_cluster[*u as usize - 1]);
            }
        }
        println!("epoch {:>2}: {:.4} ± {:.4}  own {:.2}", rec.epoch, s.mean, s.sem, own as f64 / total as f64);
    }
    let first = trace.per_epoch[0].stats.unwrap();
    let last = trace.per_epoch.last().unwrap().stats.unwrap();
    println!("first→last significance {:.2}; {:?}", significance_between(first, last), start.elapsed());
}
