use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use recurrent_forest::{
    harrell_c, importance_report, pseudo_values, Forest, ForestConfig, ImportanceOptions, ScoredRow, TrainingSet,
};
use std::hint::black_box;

// splitmix64, enough for fixture data
struct Mix(u64);

impl Mix {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn training_set(n: usize, p: usize) -> TrainingSet {
    let mut mix = Mix(n as u64 * 31 + p as u64);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| mix.next()).collect()).collect();
    let y = rows.iter().map(|r| f64::from(u8::from(r[0] > 0.5)) + 0.3 * r[1] + 0.1 * mix.next()).collect();
    let subjects: Vec<String> = (0..n).map(|i| format!("s{}", i / 4)).collect();
    let names = (0..p).map(|j| format!("z{j}")).collect();
    TrainingSet::from_rows(names, &rows, y, &subjects).unwrap()
}

fn fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    for n in [500, 2000] {
        let data = training_set(n, 10);
        let config = ForestConfig { n_trees: 100, min_node: 20, seed: 1, threads: 1, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| b.iter(|| Forest::fit(d, &config).unwrap()));
    }
    g.finish();
}

fn predict(c: &mut Criterion) {
    let data = training_set(2000, 10);
    let forest =
        Forest::fit(&data, &ForestConfig { n_trees: 100, min_node: 20, seed: 1, threads: 1, ..Default::default() })
            .unwrap();
    c.bench_function("forest_predict_set_2000", |b| b.iter(|| forest.predict_set(black_box(&data)).unwrap()));
}

fn importance(c: &mut Criterion) {
    let data = training_set(500, 5);
    let forest =
        Forest::fit(&data, &ForestConfig { n_trees: 50, min_node: 10, seed: 1, threads: 1, ..Default::default() })
            .unwrap();
    let opts = ImportanceOptions { permutations: 20, seed: 2, ..Default::default() };
    let mut g = c.benchmark_group("importance");
    g.sample_size(10);
    g.bench_function("500x5_d20", |b| b.iter(|| importance_report(&forest, &data, &opts).unwrap()));
    g.finish();
}

fn pseudo(c: &mut Criterion) {
    let mut mix = Mix(7);
    let window: Vec<(f64, bool)> = (0..1000).map(|_| ((mix.next() * 200.0).round(), mix.next() < 0.7)).collect();
    c.bench_function("pseudo_values_1000", |b| b.iter(|| pseudo_values(black_box(&window), 100.0).unwrap()));
}

fn concordance(c: &mut Criterion) {
    let mut mix = Mix(9);
    let rows: Vec<ScoredRow> = (0..5000)
        .map(|i| ScoredRow {
            subject_id: format!("s{i}"),
            t: 0.0,
            x: (mix.next() * 180.0).round(),
            delta: mix.next() < 0.6,
            score: mix.next(),
        })
        .collect();
    c.bench_function("harrell_c_5000", |b| b.iter(|| harrell_c(black_box(&rows)).unwrap()));
}

criterion_group!(benches, fit, predict, importance, pseudo, concordance);
criterion_main!(benches);
