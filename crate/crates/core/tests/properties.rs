use proptest::prelude::*;
use recurrent_forest::evaluation::harrell_c;
use recurrent_forest::event_data::serialize_events;
use recurrent_forest::forest::TreeNode;
use recurrent_forest::pseudo::km_survival;
use recurrent_forest::simulation::history_covariates;
use recurrent_forest::window::{checkin_times, transform, WindowGrid};
use recurrent_forest::{parse_events, rubin_combine, Forest, ForestConfig, ScoredRow, SubjectRecord, TrainingSet};

fn subject_strategy() -> impl Strategy<Value = SubjectRecord> {
    (prop::collection::vec(1u32..2400, 0..12), 1u32..2400).prop_map(|(mut ev, c)| {
        ev.sort_unstable();
        ev.dedup();
        let c = f64::from(c) / 10.0;
        let events = ev.into_iter().map(|e| f64::from(e) / 10.0).filter(|&e| e <= c).collect();
        SubjectRecord::new("s", events, c)
    })
}

fn cohort_strategy() -> impl Strategy<Value = Vec<SubjectRecord>> {
    prop::collection::vec(subject_strategy(), 1..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                s.subject_id = format!("S{i:02}");
                s
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn event_file_round_trips(records in cohort_strategy()) {
        let text = serialize_events(&records);
        let parsed = parse_events(text.as_bytes()).unwrap();
        prop_assert_eq!(serialize_events(&parsed), text.clone());
        for r in &parsed {
            let events = text.lines().filter(|l| l.starts_with(&format!("{},", r.subject_id)) && l.ends_with(",1")).count();
            prop_assert_eq!(events, r.event_times.len());
        }
    }

    #[test]
    fn transform_rows_respect_censoring(records in cohort_strategy(), spacing in 5u32..60) {
        let grid = WindowGrid::new(0.0, f64::from(spacing), 60.0, 240.0).unwrap();
        let rows = transform(&records, &grid);
        for r in &rows {
            let rec = records.iter().find(|s| s.subject_id == r.subject_id).unwrap();
            prop_assert!(r.t < rec.censoring_time);
            prop_assert!(r.t + r.x <= rec.censoring_time + 1e-9);
            prop_assert!(r.x >= 0.0);
            let hits_event = rec.event_times.iter().any(|&e| e == r.t + r.x || (e - r.t - r.x).abs() < 1e-9);
            prop_assert_eq!(r.delta, hits_event);
        }
        for rec in &records {
            let n = rows.iter().filter(|r| r.subject_id == rec.subject_id).count();
            prop_assert_eq!(n, checkin_times(&grid, rec).len());
        }
        prop_assert_eq!(transform(&records, &grid), rows);
    }

    #[test]
    fn km_is_non_increasing_in_tau(
        window in prop::collection::vec((1u32..100, any::<bool>()), 1..40),
        a in 0u32..110, b in 0u32..110,
    ) {
        let w: Vec<(f64, bool)> = window.iter().map(|&(t, d)| (f64::from(t), d)).collect();
        let (lo, hi) = (a.min(b), a.max(b));
        let s_lo = km_survival(&w, f64::from(lo)).unwrap();
        let s_hi = km_survival(&w, f64::from(hi)).unwrap();
        prop_assert!(s_hi <= s_lo);
        prop_assert!((0.0..=1.0).contains(&s_hi));
    }

    #[test]
    fn c_of_negated_scores_is_complementary(
        rows in prop::collection::vec((1u32..30, any::<bool>()), 2..60),
        seed in any::<u64>(),
    ) {
        // distinct scores from a seeded permutation
        let n = rows.len();
        let mut order: Vec<u64> = (0..n as u64).map(|i| i.wrapping_mul(0x9E37_79B9).wrapping_add(seed) % 1_000_003).collect();
        order.dedup();
        prop_assume!({ let mut o = order.clone(); o.sort_unstable(); o.dedup(); o.len() == n });
        let scored: Vec<ScoredRow> = rows.iter().zip(&order).enumerate().map(|(i, (&(x, d), &s))| ScoredRow {
            subject_id: i.to_string(), t: 0.0, x: f64::from(x), delta: d, score: s as f64,
        }).collect();
        let negated: Vec<ScoredRow> = scored.iter().cloned().map(|mut r| { r.score = -r.score; r }).collect();
        let cubed: Vec<ScoredRow> = scored.iter().cloned().map(|mut r| { r.score = (r.score / 1e5).powi(3) + 2.0; r }).collect();
        if let Ok(c) = harrell_c(&scored) {
            prop_assert!((c + harrell_c(&negated).unwrap() - 1.0).abs() < 1e-12);
            prop_assert_eq!(harrell_c(&cubed).unwrap(), c);
        }
    }

    #[test]
    fn rubin_is_permutation_invariant(values in prop::collection::vec((0.0f64..1.0, 0.0f64..0.1), 2..12), rot in 0usize..12) {
        let (est, var): (Vec<f64>, Vec<f64>) = values.iter().copied().unzip();
        let mut pairs = values.clone();
        pairs.rotate_left(rot % values.len());
        pairs.reverse();
        let (e2, v2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = rubin_combine(&est, &var).unwrap();
        let b = rubin_combine(&e2, &v2).unwrap();
        prop_assert!((a.estimate - b.estimate).abs() < 1e-12);
        prop_assert!((a.total - b.total).abs() < 1e-12);
        prop_assert!(a.total >= a.within);
    }

    #[test]
    fn history_is_capped_and_positive(xs in prop::collection::vec(0.001f64..1.0, 2..30)) {
        let rows: Vec<_> = xs.iter().enumerate().map(|(k, &x)| recurrent_forest::LongitudinalRow {
            subject_id: "s".into(), t: k as f64 / 12.0 - 1.0 / 12.0, x, delta: true,
        }).collect();
        let h = history_covariates(&rows, 1.0 / 12.0, None).unwrap();
        prop_assert_eq!(h.len(), xs.len() - 1);
        prop_assert!(h.iter().all(|&v| v > 0.0 && v <= 1.0 / 12.0 + 1e-15));
        prop_assert_eq!(history_covariates(&rows, 1.0 / 12.0, None).unwrap(), h);
    }
}

fn forest_data(seed: u64, n: usize) -> TrainingSet {
    use rand::Rng;
    let mut rng = recurrent_forest::rng::stream(seed, &[]);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut subjects = Vec::new();
    for i in 0..n {
        let r = vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0), f64::from(rng.random_range(0..3u8))];
        y.push((r[0] * 1.5).sin() + 0.3 * r[2] + rng.random_range(-0.2..0.2));
        rows.push(r);
        subjects.push(format!("s{}", i / 3));
    }
    TrainingSet::from_rows(vec!["a".into(), "b".into(), "c".into()], &rows, y, &subjects).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forest_is_the_mean_of_its_trees(seed in any::<u64>()) {
        let d = forest_data(seed, 90);
        let f = Forest::fit(&d, &ForestConfig { n_trees: 15, min_node: 4, seed, ..Default::default() }).unwrap();
        for i in 0..d.n_rows() {
            let x = d.row(i);
            let mean = f.trees.iter().map(|t| t.predict(&x)).sum::<f64>() / 15.0;
            prop_assert!((f.predict(&x).unwrap() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn cubing_a_covariate_keeps_the_partition(seed in any::<u64>()) {
        let d = forest_data(seed, 90);
        let mut cubed = d.clone();
        cubed.columns[0] = d.columns[0].iter().map(|v| v.powi(3)).collect();
        let cfg = ForestConfig { n_trees: 10, min_node: 4, seed, ..Default::default() };
        let f = Forest::fit(&d, &cfg).unwrap();
        let g = Forest::fit(&cubed, &cfg).unwrap();
        prop_assert_eq!(f.predict_set(&d).unwrap(), g.predict_set(&cubed).unwrap());
        for (a, b) in f.trees.iter().zip(&g.trees) {
            prop_assert_eq!(a.nodes.len(), b.nodes.len());
        }
    }

    #[test]
    fn leaves_respect_min_node(seed in any::<u64>(), min_node in 1usize..12) {
        let d = forest_data(seed, 90);
        let f = Forest::fit(&d, &ForestConfig { n_trees: 8, min_node, seed, ..Default::default() }).unwrap();
        for t in &f.trees {
            for (_, count) in t.leaves() {
                prop_assert!(count >= 1);
                if t.nodes.len() > 1 {
                    prop_assert!(count as usize >= min_node);
                }
            }
            let finite = t.nodes.iter().all(|n| match n {
                TreeNode::Split { threshold, .. } => threshold.is_finite(),
                TreeNode::Leaf { value, .. } => value.is_finite(),
            });
            prop_assert!(finite);
        }
    }

    #[test]
    fn forest_bytes_ignore_thread_count(seed in any::<u64>()) {
        let d = forest_data(seed, 60);
        let cfg = ForestConfig { n_trees: 12, min_node: 3, seed, ..Default::default() };
        let one = Forest::fit(&d, &ForestConfig { threads: 1, ..cfg.clone() }).unwrap().to_bytes();
        let four = Forest::fit(&d, &ForestConfig { threads: 4, ..cfg }).unwrap().to_bytes();
        prop_assert_eq!(one, four);
    }
}
