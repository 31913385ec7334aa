//! Stage-tagged failures and their exit codes.

use std::fmt;

/// Where a run failed. Each stage has its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Input,
    Output,
    Transform,
    Pseudo,
    Fit,
    Predict,
    Evaluate,
    Importance,
    Glm,
    Simulate,
    Report,
    Manifest,
}

impl Stage {
    pub const ALL: [Stage; 13] = [
        Stage::Config,
        Stage::Input,
        Stage::Output,
        Stage::Transform,
        Stage::Pseudo,
        Stage::Fit,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Importance,
        Stage::Glm,
        Stage::Simulate,
        Stage::Report,
        Stage::Manifest,
    ];

    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Config => 2,
            Stage::Input => 3,
            Stage::Output => 4,
            Stage::Transform => 10,
            Stage::Pseudo => 11,
            Stage::Fit => 12,
            Stage::Predict => 13,
            Stage::Evaluate => 14,
            Stage::Importance => 15,
            Stage::Glm => 16,
            Stage::Simulate => 17,
            Stage::Report => 18,
            Stage::Manifest => 19,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Input => "input",
            Stage::Output => "output",
            Stage::Transform => "transform",
            Stage::Pseudo => "pseudo",
            Stage::Fit => "fit",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Importance => "importance",
            Stage::Glm => "glm",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
            Stage::Manifest => "manifest",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub struct Failure {
    pub stage: Stage,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {:#}", self.stage, self.error)
    }
}

impl std::error::Error for Failure {}

pub type StageResult<T> = std::result::Result<T, Failure>;

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T, E: Into<anyhow::Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|e| Failure { stage, error: e.into() })
    }
}
