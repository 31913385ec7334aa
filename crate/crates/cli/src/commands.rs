//! Subcommand runners: resolve settings, read inputs, call [`crate::ops`],
//! write outputs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use recurrent_forest::rng::with_threads;
use recurrent_forest::simulation::{run_study, CensoringLevel, HistoryMode, SimConfig};
use recurrent_forest::window::recommended_spacing;
use recurrent_forest::{
    build_pseudo_dataset, capture_rate, transform, CovariateSchema, Forest, ForestConfig, GlmOptions,
    ImportanceOptions, WindowGrid,
};

use crate::args::*;
use crate::config::{pick, pick_path, Config};
use crate::io::{self, PseudoTable, Table};
use crate::ops;
use crate::stage::{AtStage, Stage, StageResult};

pub const CONFIG_KEYS: &[&str] = &[
    "paths.events",
    "paths.covariates",
    "paths.schema",
    "paths.output",
    "grid.start",
    "grid.step",
    "grid.tau",
    "grid.end",
    "forest.trees",
    "forest.mtry",
    "forest.min_node",
    "forest.max_depth",
    "evaluation.bootstrap",
    "evaluation.scope",
    "evaluation.validation_fraction",
    "importance.enabled",
    "importance.permutations",
    "importance.z_scale",
    "importance.stratify_t",
    "simulation.rho",
    "simulation.censoring",
    "simulation.history",
    "simulation.n",
    "simulation.replicates",
    "simulation.imputations",
    "simulation.calibration_subjects",
    "run.seed",
    "run.threads",
];

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    pub threads: usize,
    pub seed: Option<u64>,
}

impl Context {
    pub fn new(config_path: Option<&Path>, threads: Option<usize>, seed: Option<u64>) -> StageResult<Self> {
        let config = match config_path {
            Some(p) => {
                if !p.is_file() {
                    return Err(anyhow!("config file not found: {}", p.display())).at(Stage::Config);
                }
                Config::load(p).at(Stage::Config)?
            }
            None => Config::default(),
        };
        config.check_known(CONFIG_KEYS).at(Stage::Config)?;
        let threads = match pick(threads, &config, "run.threads").at(Stage::Config)? {
            Some(0) => return Err(anyhow!("threads must be positive")).at(Stage::Config),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let seed = pick(seed, &config, "run.seed").at(Stage::Config)?;
        Ok(Self { config, threads, seed })
    }

    pub fn seed(&self) -> StageResult<u64> {
        self.seed.ok_or_else(|| anyhow!("this command is stochastic: pass --seed or set run.seed")).at(Stage::Config)
    }

    fn get<T>(&self, flag: Option<T>, key: &str) -> StageResult<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        pick(flag, &self.config, key).at(Stage::Config)
    }

    fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> StageResult<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn need<T>(&self, flag: Option<T>, key: &str, flag_name: &str) -> StageResult<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(flag, key)?.ok_or_else(|| anyhow!("missing {flag_name} (config key {key})")).at(Stage::Config)
    }

    /// An input path from a flag or config key; must name an existing file.
    pub fn input(&self, flag: Option<PathBuf>, key: &str, flag_name: &str) -> StageResult<PathBuf> {
        let p = pick_path(flag, &self.config, key)
            .ok_or_else(|| anyhow!("missing {flag_name} (config key {key})"))
            .at(Stage::Config)?;
        existing(p)
    }

    pub fn optional_input(&self, flag: Option<PathBuf>, key: &str) -> StageResult<Option<PathBuf>> {
        pick_path(flag, &self.config, key).map(existing).transpose()
    }

    pub fn grid(&self, a: &GridArgs) -> StageResult<WindowGrid> {
        let start = self.or(a.grid_start, "grid.start", 0.0)?;
        let step = self.need(a.grid_step, "grid.step", "--grid-step")?;
        let tau = self.need(a.tau, "grid.tau", "--tau")?;
        let end = self.need(a.end, "grid.end", "--end")?;
        WindowGrid::new(start, step, tau, end).at(Stage::Config)
    }

    pub fn forest(&self, a: &ForestArgs, seed: u64) -> StageResult<ForestConfig> {
        Ok(ForestConfig {
            n_trees: self.or(a.trees, "forest.trees", 500)?,
            mtry: self.get(a.mtry, "forest.mtry")?,
            min_node: self.or(a.min_node, "forest.min_node", 40)?,
            max_depth: self.get(a.max_depth, "forest.max_depth")?,
            seed,
            threads: self.threads,
        })
    }

    pub fn importance(&self, a: &TestArgs, seed: u64, n_features: usize) -> StageResult<ImportanceOptions> {
        let scale = self.get(a.z_scale.clone(), "importance.z_scale")?;
        let scale = scale.as_deref().map(ops::parse_z_scale).transpose().at(Stage::Config)?.unwrap_or_default();
        let stratify = self.or(a.stratify_t, "importance.stratify_t", false)?;
        Ok(ImportanceOptions {
            permutations: self.or(a.permutations, "importance.permutations", 100)?,
            seed,
            stratify_by: stratify.then(|| n_features - 1),
            scale,
        })
    }

    pub fn scope(&self, flag: Option<String>) -> StageResult<recurrent_forest::PairScope> {
        let s = self.get(flag, "evaluation.scope")?;
        Ok(s.as_deref().map(ops::parse_scope).transpose().at(Stage::Config)?.unwrap_or_default())
    }
}

fn existing(p: PathBuf) -> StageResult<PathBuf> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(anyhow!("input file not found: {}", p.display())).at(Stage::Input)
    }
}

pub fn write(path: &Path, bytes: &[u8]) -> StageResult<()> {
    io::write_file(path, bytes).at(Stage::Output)
}

fn read_model(path: &Path) -> StageResult<Forest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display())).at(Stage::Input)?;
    Forest::from_bytes(&bytes).with_context(|| format!("in {}", path.display())).at(Stage::Input)
}

fn read_pseudo(path: &Path) -> StageResult<PseudoTable> {
    let table = Table::read(path).at(Stage::Input)?;
    PseudoTable::parse(&table).with_context(|| format!("in {}", path.display())).at(Stage::Input)
}

fn read_rows(path: &Path) -> StageResult<Vec<recurrent_forest::LongitudinalRow>> {
    let table = Table::read(path).at(Stage::Input)?;
    io::parse_rows(&table).with_context(|| format!("in {}", path.display())).at(Stage::Input)
}

pub fn run(cli: Cli) -> StageResult<()> {
    let ctx = Context::new(cli.config.as_deref(), cli.threads, cli.seed)?;
    let threads = ctx.threads;
    with_threads(threads, move || match cli.command {
        Command::Transform(a) => cmd_transform(&ctx, a),
        Command::Pseudo(a) => cmd_pseudo(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Importance(a) => cmd_importance(&ctx, a),
        Command::Glm(a) => cmd_glm(a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Pipeline(a) => crate::pipeline::run(&ctx, a).map(|m| {
            eprintln!("pipeline complete: {} artifacts", m.artifacts.len());
        }),
        Command::Report(a) => cmd_report(a),
    })
}

fn cmd_transform(ctx: &Context, a: TransformArgs) -> StageResult<()> {
    let events = ctx.input(a.events, "paths.events", "--events")?;
    let grid = ctx.grid(&a.grid)?;
    let fraction = ctx.or(a.validation_fraction, "evaluation.validation_fraction", 0.0)?;
    if fraction > 0.0 && a.validation_out.is_none() {
        return Err(anyhow!("a validation fraction needs --validation-out")).at(Stage::Config);
    }
    let seed = if fraction > 0.0 { ctx.seed()? } else { 0 };
    let records = io::read_events(&events).at(Stage::Input)?;
    let (train, val) = ops::split_holdout(&records, fraction, seed).at(Stage::Config)?;
    let rows = transform(&train, &grid);
    write(&a.out, io::format_rows(&rows).as_bytes())?;
    if let Some(path) = &a.validation_out {
        write(path, io::format_rows(&transform(&val, &grid)).as_bytes())?;
    }
    eprintln!("{} rows from {} subjects", rows.len(), train.len());
    match capture_rate(&records, &grid) {
        Ok(rate) => eprintln!("capture rate {rate}"),
        Err(e) => eprintln!("capture rate unavailable: {e}"),
    }
    if let Some(a) = recommended_spacing(&records) {
        eprintln!("recommended spacing {a} (one third of the mean gap time)");
    }
    Ok(())
}

fn cmd_pseudo(ctx: &Context, a: PseudoArgs) -> StageResult<()> {
    let rows_path = existing(a.rows)?;
    let cov = ctx.input(a.covariates, "paths.covariates", "--covariates")?;
    let schema_path = ctx.optional_input(a.schema, "paths.schema")?;
    let tau = ctx.need(a.tau, "grid.tau", "--tau")?;
    let rows = read_rows(&rows_path)?;
    let schema = schema_path.as_deref().map(io::read_schema).transpose().at(Stage::Input)?;
    let panel = io::read_covariates(&cov, schema.as_ref(), None).at(Stage::Input)?;
    let data = build_pseudo_dataset(&rows, tau, &panel).at(Stage::Pseudo)?;
    for t in &data.flat_extended {
        eprintln!("warning: Kaplan-Meier curve carried flat at check-in {t}");
    }
    write(&a.out, PseudoTable::from_dataset(&data).format().as_bytes())
}

pub fn fit_model(pseudo: &PseudoTable, config: &ForestConfig) -> StageResult<Forest> {
    let data = pseudo.training_set().at(Stage::Fit)?;
    Forest::fit(&data, config).at(Stage::Fit)
}

fn cmd_fit(ctx: &Context, a: FitArgs) -> StageResult<()> {
    let pseudo = read_pseudo(&existing(a.pseudo)?)?;
    let config = ctx.forest(&a.forest, ctx.seed()?)?;
    let forest = fit_model(&pseudo, &config)?;
    write(&a.out, &forest.to_bytes())
}

/// Query points of a covariate table: every row with a `t` value.
fn covariate_keys(path: &Path) -> Result<Vec<(String, f64)>> {
    let table = Table::read(path)?;
    let t = table.column("t").context("without --rows the covariate table needs a t column")?;
    let keys: Vec<(String, f64)> = table
        .rows
        .iter()
        .filter(|(_, c)| !c[t].is_empty())
        .map(|(line, c)| Ok((c[0].clone(), io::float(&c[t], *line, "t")?)))
        .collect::<Result<_>>()?;
    if keys.is_empty() {
        bail!("{} has no timed rows to predict at", path.display());
    }
    Ok(keys)
}

pub fn predictions_for(forest: &Forest, covariates: &Path, keys: &[(String, f64)]) -> StageResult<String> {
    let names = ops::model_covariates(forest).at(Stage::Input)?;
    let panel = io::read_covariates(covariates, Some(&CovariateSchema::continuous(names)), None).at(Stage::Input)?;
    let values = ops::predict(forest, &panel, keys).at(Stage::Predict)?;
    Ok(io::format_predictions(keys, &values))
}

fn cmd_predict(ctx: &Context, a: PredictArgs) -> StageResult<()> {
    let model = read_model(&existing(a.model)?)?;
    let cov = ctx.input(a.covariates, "paths.covariates", "--covariates")?;
    let keys = match a.rows {
        Some(p) => read_rows(&existing(p)?)?.into_iter().map(|r| (r.subject_id, r.t)).collect(),
        None => covariate_keys(&cov).at(Stage::Input)?,
    };
    write(&a.out, predictions_for(&model, &cov, &keys)?.as_bytes())
}

pub fn importance_csv(forest: &Forest, pseudo: &PseudoTable, opts: &ImportanceOptions) -> StageResult<String> {
    let data = pseudo.training_set().at(Stage::Importance)?;
    forest.check_schema(&data).at(Stage::Importance)?;
    let report = recurrent_forest::importance_report(forest, &data, opts).at(Stage::Importance)?;
    Ok(io::format_importance(&report))
}

fn cmd_importance(ctx: &Context, a: ImportanceArgs) -> StageResult<()> {
    let model = read_model(&existing(a.model)?)?;
    let pseudo = read_pseudo(&existing(a.data)?)?;
    let opts = ctx.importance(&a.test, ctx.seed()?, pseudo.names.len() + 1)?;
    write(&a.out, importance_csv(&model, &pseudo, &opts)?.as_bytes())
}

fn cmd_glm(a: GlmArgs) -> StageResult<()> {
    let pseudo = read_pseudo(&existing(a.pseudo)?)?;
    let report = ops::glm(&pseudo, &a.design, &GlmOptions::default()).at(Stage::Glm)?;
    if !report.fit.converged {
        eprintln!("warning: fit did not converge in {} iterations", report.fit.iterations);
    }
    let mut json = serde_json::to_string_pretty(&report).at(Stage::Glm)?;
    json.push('\n');
    write(&a.out, json.as_bytes())
}

pub fn metrics_json(
    rows: &[recurrent_forest::LongitudinalRow],
    predictions_csv: &str,
    bootstrap: usize,
    seed: u64,
    scope: recurrent_forest::PairScope,
) -> StageResult<String> {
    let table = Table::parse(predictions_csv).at(Stage::Input)?;
    let preds = io::parse_predictions(&table).at(Stage::Input)?;
    let metrics = ops::evaluate(rows, &preds, bootstrap, seed, scope).at(Stage::Evaluate)?;
    let mut json = serde_json::to_string_pretty(&metrics).at(Stage::Evaluate)?;
    json.push('\n');
    Ok(json)
}

fn cmd_evaluate(ctx: &Context, a: EvaluateArgs) -> StageResult<()> {
    let rows = read_rows(&existing(a.data)?)?;
    let preds = io::read_text(&existing(a.predictions)?).at(Stage::Input)?;
    let bootstrap = ctx.or(a.score.bootstrap, "evaluation.bootstrap", 100)?;
    let scope = ctx.scope(a.score.scope)?;
    let json = metrics_json(&rows, &preds, bootstrap, ctx.seed()?, scope)?;
    write(&a.out, json.as_bytes())
}

fn parse_level<T: std::str::FromStr<Err = recurrent_forest::Error>>(s: Option<String>, default: T) -> StageResult<T> {
    s.map(|v| v.parse::<T>()).transpose().at(Stage::Config).map(|v| v.unwrap_or(default))
}

fn cmd_simulate(ctx: &Context, a: SimulateArgs) -> StageResult<()> {
    let seed = ctx.seed()?;
    let defaults = SimConfig::default();
    let config = SimConfig {
        n: ctx.or(a.n, "simulation.n", defaults.n)?,
        rho: ctx.or(a.rho, "simulation.rho", 0.0)?,
        censoring: parse_level(ctx.get(a.censoring, "simulation.censoring")?, CensoringLevel::None)?,
        history: parse_level(ctx.get(a.history, "simulation.history")?, HistoryMode::None)?,
        replicates: ctx.or(a.replicates, "simulation.replicates", defaults.replicates)?,
        imputations: ctx.or(a.imputations, "simulation.imputations", defaults.imputations)?,
        calibration_subjects: ctx.or(
            a.calibration_subjects,
            "simulation.calibration_subjects",
            defaults.calibration_subjects,
        )?,
        pair_scope: ctx.scope(a.scope)?,
        forest: ctx.forest(&a.forest, seed)?,
        seed,
        threads: ctx.threads,
        ..defaults
    };
    let study = run_study(&config).at(Stage::Simulate)?;
    eprintln!("dropout rate {}", study.dropout_rate);
    let tidy = study_tidy(&study);
    write(&a.out, ops::summarize(&tidy).as_bytes())?;
    if let Some(raw) = &a.emit_raw {
        write(raw, ops::format_tidy(&tidy).as_bytes())?;
    }
    Ok(())
}

pub fn study_tidy(study: &recurrent_forest::simulation::StudyResult) -> Vec<ops::TidyRow> {
    study
        .tidy_rows()
        .into_iter()
        .map(|r| ops::TidyRow {
            method: r.method.to_string(),
            rho: r.rho,
            censoring: r.censoring.to_string(),
            history: r.history.to_string(),
            replicate: r.replicate,
            c: r.c,
        })
        .collect()
}

fn cmd_report(a: ReportArgs) -> StageResult<()> {
    let mut rows = Vec::new();
    for p in a.raw {
        let table = Table::read(&existing(p.clone())?).at(Stage::Input)?;
        rows.extend(ops::parse_tidy(&table).with_context(|| format!("in {}", p.display())).at(Stage::Report)?);
    }
    write(&a.out, ops::format_tidy(&rows).as_bytes())?;
    write(&a.summary, ops::summarize(&rows).as_bytes())
}
