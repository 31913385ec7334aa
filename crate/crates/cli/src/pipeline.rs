//! End-to-end run: transform, pseudo, fit, predict, evaluate, importance.
//!
//! Files written to the output directory:
//!
//! | file                   | kind         |
//! |------------------------|--------------|
//! | `rows.csv`             | intermediate |
//! | `validation_rows.csv`  | intermediate, only with a holdout |
//! | `pseudo.csv`           | intermediate |
//! | `model.bin`            | artifact     |
//! | `predictions.csv`      | artifact     |
//! | `metrics.json`         | artifact     |
//! | `importance.csv`       | artifact, unless disabled |
//! | `manifest.json`        | run record   |
//!
//! When a stage fails every file written so far gains a `.partial` suffix
//! and `manifest.json.partial` names the stage and cause.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use recurrent_forest::{
    build_pseudo_dataset, transform, validate_dataset, ForestConfig, ImportanceOptions, PairScope, WindowGrid,
};

use crate::args::PipelineArgs;
use crate::commands::{fit_model, importance_csv, metrics_json, predictions_for, Context};
use crate::io::{self, PseudoTable};
use crate::manifest::{Entry, FailureRecord, Manifest, FILE_NAME};
use crate::ops;
use crate::stage::{AtStage, Failure, Stage, StageResult};

/// Fully resolved pipeline settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub events: PathBuf,
    pub covariates: PathBuf,
    pub schema: Option<PathBuf>,
    pub output: PathBuf,
    pub grid: WindowGrid,
    pub forest: ForestConfig,
    pub bootstrap: usize,
    pub scope: PairScope,
    pub validation_fraction: f64,
    pub importance: Option<ImportanceOptions>,
    pub seed: u64,
}

impl Settings {
    /// Resolves flags over config keys and checks every input path before
    /// any computation.
    pub fn resolve(ctx: &Context, a: PipelineArgs) -> StageResult<Self> {
        let seed = ctx.seed()?;
        let output = crate::config::pick_path(a.out_dir, &ctx.config, "paths.output")
            .ok_or_else(|| anyhow!("missing --out-dir (config key paths.output)"))
            .at(Stage::Config)?;
        let events = ctx.input(a.events, "paths.events", "--events")?;
        let covariates = ctx.input(a.covariates, "paths.covariates", "--covariates")?;
        let schema = ctx.optional_input(a.schema, "paths.schema")?;
        let grid = ctx.grid(&a.grid)?;
        let forest = ctx.forest(&a.forest, seed)?;
        let bootstrap = crate::config::pick(a.score.bootstrap, &ctx.config, "evaluation.bootstrap")
            .at(Stage::Config)?
            .unwrap_or(100);
        let scope = ctx.scope(a.score.scope.clone())?;
        let validation_fraction =
            crate::config::pick(a.validation_fraction, &ctx.config, "evaluation.validation_fraction")
                .at(Stage::Config)?
                .unwrap_or(0.3);
        let enabled = !a.no_importance
            && crate::config::pick(None::<bool>, &ctx.config, "importance.enabled").at(Stage::Config)?.unwrap_or(true);
        // the feature count is only known after reading covariates; stratify
        // on the last column, which is always t
        let importance = if enabled { Some(ctx.importance(&a.test, seed, usize::MAX)?) } else { None };
        Ok(Self {
            events,
            covariates,
            schema,
            output,
            grid,
            forest,
            bootstrap,
            scope,
            validation_fraction,
            importance,
            seed,
        })
    }

    fn manifest_settings(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("grid.start", self.grid.times()[0].to_string());
        put("grid.step", self.grid.spacing.to_string());
        put("grid.tau", self.grid.tau.to_string());
        put("grid.end", self.grid.end.to_string());
        put("forest.trees", self.forest.n_trees.to_string());
        put("forest.mtry", self.forest.mtry.map_or("auto".into(), |v| v.to_string()));
        put("forest.min_node", self.forest.min_node.to_string());
        put("forest.max_depth", self.forest.max_depth.map_or("none".into(), |v| v.to_string()));
        put("evaluation.bootstrap", self.bootstrap.to_string());
        put("evaluation.scope", ops::scope_name(self.scope).into());
        put("evaluation.validation_fraction", self.validation_fraction.to_string());
        put("importance.enabled", self.importance.is_some().to_string());
        if let Some(i) = &self.importance {
            put("importance.permutations", i.permutations.to_string());
            put("importance.z_scale", ops::z_scale_name(i.scale).into());
            put("importance.stratify_t", i.stratify_by.is_some().to_string());
        }
        m
    }
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn put(&mut self, name: &str, bytes: &[u8]) -> StageResult<()> {
        let path = self.dir.join(name);
        io::write_file(&path, bytes).at(Stage::Output)?;
        self.written.push(path);
        Ok(())
    }

    fn mark_partial(&self, manifest: &mut Manifest, failure: &Failure) {
        for p in &self.written {
            let mut partial = p.clone().into_os_string();
            partial.push(".partial");
            let _ = std::fs::rename(p, partial);
        }
        manifest.status = "failed".into();
        manifest.failure =
            Some(FailureRecord { stage: failure.stage.name().into(), cause: format!("{:#}", failure.error) });
        let _ = std::fs::write(self.dir.join(format!("{FILE_NAME}.partial")), manifest.to_json());
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn run(ctx: &Context, args: PipelineArgs) -> StageResult<Manifest> {
    let settings = Settings::resolve(ctx, args)?;
    run_settings(&settings)
}

pub fn run_settings(s: &Settings) -> StageResult<Manifest> {
    std::fs::create_dir_all(&s.output).at(Stage::Output)?;
    let stale = s.output.join(FILE_NAME);
    if stale.exists() {
        std::fs::remove_file(&stale).at(Stage::Output)?;
    }
    let mut manifest = Manifest::new(s.seed, s.manifest_settings());
    let mut out = Outputs { dir: s.output.clone(), written: Vec::new() };
    match stages(s, &mut manifest, &mut out) {
        Ok(()) => {
            manifest.status = "complete".into();
            crate::commands::write(&s.output.join(FILE_NAME), manifest.to_json().as_bytes())?;
            Ok(manifest)
        }
        Err(f) => {
            out.mark_partial(&mut manifest, &f);
            Err(f)
        }
    }
}

fn stages(s: &Settings, manifest: &mut Manifest, out: &mut Outputs) -> StageResult<()> {
    let mut inputs = vec![("events", &s.events), ("covariates", &s.covariates)];
    if let Some(schema) = &s.schema {
        inputs.push(("schema", schema));
    }
    for (role, path) in inputs {
        let bytes = std::fs::read(path).at(Stage::Input)?;
        manifest.inputs.push(Entry::new(role, &file_name(path), &bytes));
    }

    let records = io::read_events(&s.events).at(Stage::Input)?;
    let schema = s.schema.as_deref().map(io::read_schema).transpose().at(Stage::Input)?;
    let panel = io::read_covariates(&s.covariates, schema.as_ref(), None).at(Stage::Input)?;
    let report = validate_dataset(&records, &panel, &s.grid);
    if !report.is_ok() {
        let cells: Vec<String> =
            report.missing.iter().take(10).map(|m| format!("({}, {}, {})", m.subject_id, m.t, m.covariate)).collect();
        return Err(anyhow!("{} missing covariate cells, first: {}", report.missing.len(), cells.join(", ")))
            .at(Stage::Input);
    }
    if !report.no_rows.is_empty() {
        manifest.notes.push(format!("{} subjects have no check-in before censoring", report.no_rows.len()));
    }

    let (train, val) = ops::split_holdout(&records, s.validation_fraction, s.seed).at(Stage::Transform)?;
    let rows = transform(&train, &s.grid);
    let rows_csv = io::format_rows(&rows);
    out.put("rows.csv", rows_csv.as_bytes())?;
    manifest.intermediates.push(Entry::new("rows", "rows.csv", rows_csv.as_bytes()));
    let eval_rows = if val.is_empty() {
        manifest.notes.push("no holdout: metrics are in-sample".into());
        rows.clone()
    } else {
        let v = transform(&val, &s.grid);
        let csv = io::format_rows(&v);
        out.put("validation_rows.csv", csv.as_bytes())?;
        manifest.intermediates.push(Entry::new("validation_rows", "validation_rows.csv", csv.as_bytes()));
        v
    };

    let data = build_pseudo_dataset(&rows, s.grid.tau, &panel).at(Stage::Pseudo)?;
    for t in &data.flat_extended {
        manifest.notes.push(format!("Kaplan-Meier curve carried flat at check-in {t}"));
    }
    let pseudo = PseudoTable::from_dataset(&data);
    let pseudo_csv = pseudo.format();
    out.put("pseudo.csv", pseudo_csv.as_bytes())?;
    manifest.intermediates.push(Entry::new("pseudo", "pseudo.csv", pseudo_csv.as_bytes()));

    let forest = fit_model(&pseudo, &s.forest)?;
    let model = forest.to_bytes();
    out.put("model.bin", &model)?;
    manifest.artifacts.push(Entry::new("model", "model.bin", &model));

    let keys: Vec<(String, f64)> = eval_rows.iter().map(|r| (r.subject_id.clone(), r.t)).collect();
    let predictions = predictions_for(&forest, &s.covariates, &keys)?;
    out.put("predictions.csv", predictions.as_bytes())?;
    manifest.artifacts.push(Entry::new("predictions", "predictions.csv", predictions.as_bytes()));

    let metrics = metrics_json(&eval_rows, &predictions, s.bootstrap, s.seed, s.scope)?;
    out.put("metrics.json", metrics.as_bytes())?;
    manifest.artifacts.push(Entry::new("metrics", "metrics.json", metrics.as_bytes()));

    if let Some(opts) = &s.importance {
        let opts = ImportanceOptions { stratify_by: opts.stratify_by.map(|_| pseudo.names.len()), ..*opts };
        let csv = importance_csv(&forest, &pseudo, &opts)?;
        out.put("importance.csv", csv.as_bytes())?;
        manifest.artifacts.push(Entry::new("importance", "importance.csv", csv.as_bytes()));
    }
    Ok(())
}
