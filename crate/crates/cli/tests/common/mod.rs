#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use recurrent_forest::rng::stream;

pub const THREE_SUBJECT_EVENTS: &str = "subject_id,time,is_event
S1,80,1
S1,203,1
S1,240,0
S2,125,0
S3,48,1
S3,62,1
S3,75,1
S3,147,1
S3,240,0
";

pub const THREE_SUBJECT_ROWS: &str = "subject_id,t,x,delta
S1,0,80,1
S1,60,20,1
S1,120,83,1
S1,180,23,1
S2,0,125,0
S2,60,65,0
S2,120,5,0
S3,0,48,1
S3,60,2,1
S3,120,27,1
S3,180,60,0
";

pub const THREE_SUBJECT_COVARIATES: &str = "subject_id,z1,z2
S1,0.5,1
S2,-1.25,0
S3,2,1
";

pub fn rfre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfre")).args(args).env_remove("RFRE_THREADS").output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = rfre(args);
    assert!(out.status.success(), "rfre {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// A cohort on a day scale shaped like a clinical follow-up study: baseline
/// covariates of mixed kinds, gaps exponential with a covariate-driven
/// rate, exponential dropout and administrative end at `end`.
pub struct Cohort {
    pub events: String,
    pub covariates: String,
    pub schema: String,
}

pub fn synthetic_cohort(n: usize, p: usize, end: f64, seed: u64) -> Cohort {
    assert!(p >= 5);
    let mut rng = stream(seed, &[]);
    let mut events = String::from("subject_id,time,is_event\n");
    let mut covariates = String::from("subject_id");
    let mut schema = String::from("name,kind\n");
    for k in 0..p {
        let kind = match k % 5 {
            3 => "binary",
            4 => "ordered",
            _ => "continuous",
        };
        let _ = write!(covariates, ",z{}", k + 1);
        let _ = writeln!(schema, "z{},{kind}", k + 1);
    }
    covariates.push('\n');
    let dropout = Exp::new(1.0f64 / 1500.0).unwrap();
    for i in 0..n {
        let id = format!("P{i:04}");
        let z: Vec<f64> = (0..p)
            .map(|k| match k % 5 {
                3 => f64::from(u8::from(rng.random_bool(0.4))),
                4 => f64::from(rng.random_range(0..4u8)),
                _ => {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    (v * 1000.0).round() / 1000.0
                }
            })
            .collect();
        let eta = 0.6 * z[0] - 0.5 * z[1] + 0.7 * z[3] + 0.25 * z[4] + 0.4 * (z[2] * z[5 % p]).tanh();
        let rate = (eta.exp() / 150.0).max(1e-6);
        let gaps = Exp::new(rate).unwrap();
        let c = dropout.sample(&mut rng).round().clamp(1.0, end);
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut rng).round().max(1.0);
            if t > c {
                break;
            }
            let _ = writeln!(events, "{id},{t},1");
        }
        let _ = writeln!(events, "{id},{c},0");
        covariates.push_str(&id);
        for v in z {
            let _ = write!(covariates, ",{v}");
        }
        covariates.push('\n');
    }
    Cohort { events, covariates, schema }
}

/// Files of every regular file under `dir`, keyed by name.
pub fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}
