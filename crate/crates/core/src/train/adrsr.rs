//! Staged training of the pyramid network: each level is fitted coarsest-first
//! with everything else frozen, then one joint stage trains all weights.

use std::fmt;

use crate::data::{ImagePair, PatchConfig};
use crate::imaging::sobel;
use crate::models::{level_prefixes, ModelKind};
use crate::tensor::Tensor;

use super::{train, MetricsLog, TrainConfig, TrainError, TrainOptions, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Level(usize),
    Joint,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageKind::Level(k) => write!(f, "level={k}"),
            StageKind::Joint => f.write_str("joint"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub kind: StageKind,
    pub steps: u64,
    /// Parameter-name prefixes trained in this stage; empty means all.
    pub prefixes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdrsrSchedule {
    pub stages: Vec<Stage>,
}

impl AdrsrSchedule {
    /// Every level from coarsest to finest with its default prefixes, then a joint stage.
    pub fn standard(levels: usize, level_steps: u64, joint_steps: u64) -> Self {
        let mut stages: Vec<Stage> = (0..levels)
            .rev()
            .map(|k| Stage {
                kind: StageKind::Level(k),
                steps: level_steps,
                prefixes: level_prefixes(levels, k),
            })
            .collect();
        stages.push(Stage {
            kind: StageKind::Joint,
            steps: joint_steps,
            prefixes: Vec::new(),
        });
        Self { stages }
    }

    /// Parses lines such as `level=2 steps=300 prefixes=level2.,fuse2.` and
    /// `joint steps=500`. `#` starts a comment.
    pub fn parse(text: &str, levels: usize) -> Result<Self, TrainError> {
        let mut stages = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| TrainError::Schedule(format!("line {}: {msg}", n + 1));
            let mut kind = None;
            let mut steps = None;
            let mut prefixes = None;
            for tok in line.split_whitespace() {
                let (key, value) = tok.split_once('=').unwrap_or((tok, ""));
                match key {
                    "joint" if value.is_empty() => kind = Some(StageKind::Joint),
                    "level" => {
                        let k = value.parse().map_err(|_| bad(format!("bad level `{value}`")))?;
                        kind = Some(StageKind::Level(k));
                    }
                    "steps" => steps = Some(value.parse().map_err(|_| bad(format!("bad steps `{value}`")))?),
                    "prefixes" => {
                        prefixes = Some(value.split(',').filter(|p| !p.is_empty()).map(String::from).collect())
                    }
                    _ => return Err(bad(format!("unexpected `{tok}`"))),
                }
            }
            let kind = kind.ok_or_else(|| bad("missing `level=k` or `joint`".into()))?;
            let steps = steps.ok_or_else(|| bad("missing `steps=n`".into()))?;
            let prefixes = prefixes.unwrap_or_else(|| match kind {
                StageKind::Level(k) => level_prefixes(levels, k),
                StageKind::Joint => Vec::new(),
            });
            stages.push(Stage { kind, steps, prefixes });
        }
        let s = Self { stages };
        s.validate(levels)?;
        Ok(s)
    }

    /// Levels must strictly decrease and exactly one joint stage must come last.
    pub fn validate(&self, levels: usize) -> Result<(), TrainError> {
        let joints = self.stages.iter().filter(|s| s.kind == StageKind::Joint).count();
        if joints != 1 || self.stages.last().map(|s| s.kind) != Some(StageKind::Joint) {
            return Err(TrainError::Schedule("expected exactly one joint stage, placed last".into()));
        }
        let mut prev: Option<usize> = None;
        for s in &self.stages {
            if let StageKind::Level(k) = s.kind {
                if k >= levels {
                    return Err(TrainError::Schedule(format!("level {k} does not exist in a {levels}-level model")));
                }
                if prev.is_some_and(|p| k >= p) {
                    return Err(TrainError::Schedule(format!(
                        "levels must be trained coarsest-first; level {k} follows level {}",
                        prev.unwrap_or(0)
                    )));
                }
                prev = Some(k);
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.stages
            .iter()
            .map(|s| {
                let mut line = format!("{} steps={}", s.kind, s.steps);
                if !s.prefixes.is_empty() {
                    line += &format!(" prefixes={}", s.prefixes.join(","));
                }
                line + "\n"
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub kind: StageKind,
    pub log: MetricsLog,
}

/// Runs every stage of `schedule`. Parameters outside a stage's prefixes are
/// frozen for that stage; afterwards all parameters are trainable again.
pub fn train_adrsr(
    state: &mut TrainState,
    pairs: &[ImagePair],
    val: &[ImagePair],
    schedule: &AdrsrSchedule,
    cfg: &TrainConfig,
    patch: &PatchConfig,
    opts: &mut TrainOptions<'_>,
) -> Result<Vec<StageReport>, TrainError> {
    if state.model.spec.kind != ModelKind::Adrsr {
        return Err(TrainError::Config(format!(
            "staged training needs an adrsr model, not {}",
            state.model.spec.kind
        )));
    }
    schedule.validate(state.model.spec.levels)?;
    let mut reports = Vec::new();
    let result = (|| {
        for stage in &schedule.stages {
            if stage.prefixes.is_empty() {
                state.model.params.set_all_trainable(true);
            } else {
                let hits = state.model.params.train_only(&stage.prefixes);
                if let Some(i) = hits.iter().position(|&h| h == 0) {
                    return Err(TrainError::Schedule(format!(
                        "prefix `{}` matches no parameters",
                        stage.prefixes[i]
                    )));
                }
            }
            opts.level = match stage.kind {
                StageKind::Level(k) => k,
                StageKind::Joint => 0,
            };
            let log = train(state, pairs, val, cfg, patch, stage.steps, opts)?;
            reports.push(StageReport { kind: stage.kind, log });
        }
        Ok(())
    })();
    state.model.params.set_all_trainable(true);
    opts.level = 0;
    result.map(|()| reports)
}

/// Mean Sobel magnitude of the error `pred - target` on pixels lying on the
/// lines of a `period`-spaced grid, the outermost pixel ring excluded. Blocky
/// reconstructions concentrate error edges there.
pub fn grid_artifact_energy(pred: &Tensor<f32>, target: &Tensor<f32>, period: usize) -> Result<f64, TrainError> {
    let err = pred.zip_map(target, |a, b| a - b)?;
    let edges = sobel(&err)?;
    let [n, c, h, w] = edges.dims4()?;
    let period = period.max(1);
    let mut sum = 0.0;
    let mut count = 0usize;
    for plane in edges.data().chunks_exact(h * w).take(n * c) {
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                if y % period == 0 || x % period == 0 {
                    sum += f64::from(plane[y * w + x]);
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
