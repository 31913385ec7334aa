use rand::Rng;
use recurrent_forest::evaluation::{bootstrap_se, harrell_c};
use recurrent_forest::forest::two_stage_bootstrap;
use recurrent_forest::glm::fit_pseudo_logit;
use recurrent_forest::rng::{stream, with_threads};
use recurrent_forest::{GlmOptions, ScoredRow};

fn expit(e: f64) -> f64 {
    1.0 / (1.0 + (-e).exp())
}

#[test]
fn random_scores_give_half() {
    let mut rng = stream(20, &[]);
    let rows: Vec<ScoredRow> = (0..2000)
        .map(|i| ScoredRow { subject_id: i.to_string(), t: 0.0, x: rng.random(), delta: true, score: rng.random() })
        .collect();
    let c = harrell_c(&rows).unwrap();
    assert!((c - 0.5).abs() < 0.02, "{c}");
}

fn one_row_per_subject(n: usize, seed: u64) -> Vec<ScoredRow> {
    let mut rng = stream(seed, &[]);
    (0..n)
        .map(|i| ScoredRow { subject_id: format!("s{i}"), t: 0.0, x: 1.0, delta: true, score: rng.random() })
        .collect()
}

#[test]
fn bootstrap_se_of_a_mean_matches_the_analytic_value() {
    let rows = one_row_per_subject(200, 21);
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let metric = |r: &[ScoredRow]| Ok(r.iter().map(|x| x.score).sum::<f64>() / r.len() as f64);
    let se = bootstrap_se(metric, &rows, 500, 4).unwrap();
    assert!((se.se / (sd / n.sqrt()) - 1.0).abs() < 0.15, "{} vs {}", se.se, sd / n.sqrt());
}

#[test]
fn bootstrap_se_ignores_thread_count() {
    let rows = one_row_per_subject(80, 22);
    let metric = |r: &[ScoredRow]| Ok(r.iter().map(|x| x.score).fold(0.0, f64::max));
    let a = with_threads(1, || bootstrap_se(metric, &rows, 60, 9).unwrap());
    let b = with_threads(4, || bootstrap_se(metric, &rows, 60, 9).unwrap());
    assert_eq!(a, b);
}

fn logistic_sample(seed: u64, n: usize, slope: f64, binary: bool) -> (Vec<Vec<f64>>, Vec<f64>, Vec<String>) {
    let mut rng = stream(seed, &[]);
    let mut design = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x = if binary { f64::from(u8::from(rng.random_bool(0.5))) } else { rng.random_range(-1.0..1.0) };
        y.push(f64::from(u8::from(rng.random::<f64>() < expit(0.3 + slope * x))));
        design.push(vec![x]);
    }
    let clusters = (0..n).map(|i| i.to_string()).collect();
    (design, y, clusters)
}

#[test]
fn null_binary_covariate_is_rarely_significant() {
    let ok = (0..100)
        .filter(|&s| {
            let (d, y, c) = logistic_sample(100 + s, 2000, 0.0, true);
            let fit = fit_pseudo_logit(&["x"], &d, &y, &c, &GlmOptions::default()).unwrap();
            fit.wald_table()[1].z.abs() < 1.96
        })
        .count();
    assert!(ok >= 90, "{ok}");
}

#[test]
fn strong_effect_recovers_its_sign() {
    let ok = (0..100)
        .filter(|&s| {
            let (d, y, c) = logistic_sample(300 + s, 300, -1.5, false);
            let fit = fit_pseudo_logit(&["x"], &d, &y, &c, &GlmOptions::default()).unwrap();
            fit.coefficients[1] < 0.0
        })
        .count();
    assert!(ok >= 95, "{ok}");
}

fn invert2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

#[test]
fn wald_z_matches_a_hand_sandwich_on_twenty_rows() {
    let x =
        [0.1, -0.4, 0.9, 1.3, -1.1, 0.0, 0.5, -0.2, 0.8, -0.9, 1.7, -1.4, 0.3, 0.6, -0.7, 1.1, -0.3, 0.2, 0.4, -1.6];
    let y = [0.9, 1.1, 0.2, 0.0, 1.0, 0.7, 0.4, 0.8, 0.1, 1.2, -0.1, 0.9, 0.6, 0.3, 1.0, 0.2, 0.5, 0.6, 0.4, 1.0];
    let clusters: Vec<String> = (0..20).map(|i| format!("c{}", i / 4)).collect();
    let design: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    let fit = fit_pseudo_logit(&["x"], &design, &y, &clusters, &GlmOptions { tolerance: 1e-12, ..Default::default() })
        .unwrap();
    let b = &fit.coefficients;
    let mut info = [[0.0; 2]; 2];
    let mut meat = [[0.0; 2]; 2];
    for c in 0..5 {
        let mut u = [0.0; 2];
        for i in c * 4..c * 4 + 4 {
            let row = [1.0, x[i]];
            let mu = expit(b[0] + b[1] * x[i]);
            for j in 0..2 {
                u[j] += row[j] * (y[i] - mu);
                for k in 0..2 {
                    info[j][k] += row[j] * row[k] * mu * (1.0 - mu);
                }
            }
        }
        for j in 0..2 {
            for k in 0..2 {
                meat[j][k] += u[j] * u[k];
            }
        }
    }
    let bread = invert2(info);
    let cov = mul2(mul2(bread, meat), bread);
    let table = fit.wald_table();
    for j in 0..2 {
        let z = b[j] / cov[j][j].sqrt();
        assert!((table[j].z - z).abs() < 1e-8, "{} vs {z}", table[j].z);
    }
}

#[test]
fn oob_fraction_at_ten_thousand_subjects() {
    let n = 10_000;
    let mut total = 0.0;
    for seed in 0..100 {
        let counts = two_stage_bootstrap(n, &mut stream(seed, &[]));
        total += counts.iter().filter(|&&c| c == 0).count() as f64 / n as f64;
    }
    let mean = total / 100.0;
    assert!((mean - 0.368).abs() < 0.005, "{mean}");
}
