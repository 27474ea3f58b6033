//! Parallel kernels timed on a one-thread rayon pool against the default
//! pool. Build with `--no-default-features` to time the sequential fallback.

use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use echosim_core::diversity::{most_similar_pair, set_diversity, MovieSet};
use echosim_core::recommender::{fit, Hyperparams};
use echosim_core::simulator::{run_simulation, SimConfig};
use echosim_core::somviz::{train_som, SomConfig};
use echosim_core::synthetic::{generate, SyntheticConfig};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let n = std::thread::available_parallelism().map_or(4, |n| n.get());
    vec![
        ("threads=1", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("threads=all", rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()),
    ]
}

fn corpus() -> echosim_core::synthetic::SyntheticCorpus {
    generate(&SyntheticConfig { n_movies: 2000, n_tags: 200, seed: 1, ..Default::default() }).unwrap()
}

fn bench_pairwise(c: &mut Criterion) {
    let corpus = corpus();
    let all = MovieSet::new(corpus.genome.movie_ids()[..400].to_vec()).unwrap();
    let small = corpus.genome.restrict(&corpus.genome.movie_ids()[..600]).unwrap();
    let mut group = c.benchmark_group("pairwise");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("set_diversity_400", label), |b| {
            pool.install(|| b.iter(|| set_diversity(black_box(&corpus.genome), &all).unwrap()))
        });
        group.bench_function(BenchmarkId::new("most_similar_pair_600", label), |b| {
            pool.install(|| b.iter(|| most_similar_pair(black_box(&small)).unwrap()))
        });
    }
    group.finish();
}

fn bench_scoring(c: &mut Criterion) {
    let corpus = corpus();
    let model = fit(&corpus.ratings, &Hyperparams { n_factors: 50, n_sgd_epochs: 5, ..Default::default() }).unwrap();
    let users: Vec<u32> = corpus.ratings.users().take(100).collect();
    let seen: Vec<BTreeSet<u32>> = users.iter().map(|&u| corpus.ratings.user_movies(u)).collect();
    let mut group = c.benchmark_group("top_k");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("100_users", label), |b| {
            pool.install(|| {
                b.iter(|| {
                    echosim_core::par::map_range(users.len(), |i| {
                        model.top_k_unseen(users[i], &seen[i], corpus.genome.movie_ids(), 100)
                    })
                })
            })
        });
    }
    group.finish();
}

fn bench_som_and_loop(c: &mut Criterion) {
    let corpus = generate(&SyntheticConfig::default()).unwrap();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("som_10x10", label), |b| {
            let cfg = SomConfig { train_iterations: Some(2000), ..Default::default() };
            pool.install(|| b.iter(|| train_som(&corpus.genome, &cfg).unwrap()))
        });
        group.bench_function(BenchmarkId::new("simulate_5_epochs", label), |b| {
            let cfg = SimConfig { n_users: 50, k_per_epoch: 10, n_epochs: 5, history_users: 200, ..Default::default() };
            pool.install(|| b.iter(|| run_simulation(&corpus.ratings, &corpus.genome, &cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pairwise, bench_scoring, bench_som_and_loop);
criterion_main!(benches);
