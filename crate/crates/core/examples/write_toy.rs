//! Regenerates the bundled toy corpus.
//!
//! `cargo run -p echosim-core --example write_toy -- data/toy`

use std::path::PathBuf;

use echosim_core::synthetic::{generate, write_movielens, SyntheticConfig};

fn main() {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()).into();
    let cfg = SyntheticConfig {
        n_movies: 80,
        n_tags: 16,
        n_users: 1000,
        min_ratings: 4,
        max_ratings: 10,
        seed: 2024,
        ..Default::default()
    };
    let corpus = generate(&cfg).expect("toy corpus");
    write_movielens(&corpus, &dir).expect("write toy corpus");
    println!(
        "{} ratings, {} movies, {} tags -> {}",
        corpus.ratings.len(),
        corpus.genome.n_movies(),
        corpus.genome.n_tags(),
        dir.display()
    );
}
