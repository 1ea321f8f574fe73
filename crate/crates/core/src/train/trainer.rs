use std::fmt::Write as _;
use std::path::Path;

use crate::data::{for_each_batch, ImagePair, PatchConfig};
use crate::imaging::{psnr, resize_bicubic, ssim, ImageBuffer};
use crate::models::{save_checkpoint, Checkpoint, Model, ModelError};
use crate::tensor::{Adam, AdamConfig, Tape};

use super::ensemble::model_output;
use super::{training_loss, TrainConfig, TrainError};

/// A model together with its optimizer and the number of updates applied.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: Model<f32>, cfg: &TrainConfig) -> Self {
        Self {
            model,
            optimizer: Adam::new(AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            }),
            step: 0,
        }
    }

    /// Resumes from a checkpoint, restoring the step counter and Adam moments.
    pub fn from_checkpoint(ckpt: Checkpoint<f32>, cfg: &TrainConfig) -> Self {
        let mut s = Self::new(ckpt.model, cfg);
        s.optimizer
            .import_state(ckpt.optimizer.iter().map(|(n, t)| (n.as_str(), t)));
        s.step = ckpt.step;
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_checkpoint(path, &self.model, self.step, &self.optimizer.export_state(&self.model.params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "step,loss,val_psnr,val_ssim,lr";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.step, r.loss, opt(r.val_psnr), opt(r.val_ssim), r.lr);
        }
        out
    }

    /// CSV rows without the header, for appending to an existing log.
    pub fn rows_csv(&self) -> String {
        self.to_csv().split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default()
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
    }

    /// The most recent validation result.
    pub fn last_validation(&self) -> Option<(f64, f64)> {
        self.rows.iter().rev().find_map(|r| Some((r.val_psnr?, r.val_ssim?)))
    }
}

/// Knobs that do not change the result of a run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Pyramid level to fit; 0 trains the full output.
    pub level: usize,
    /// Background patch workers; 0 samples on the training thread.
    pub workers: usize,
    pub on_checkpoint: Option<&'a mut dyn FnMut(&TrainState) -> Result<(), TrainError>>,
    pub on_row: Option<&'a mut dyn FnMut(&MetricsRow)>,
}

/// Mean PSNR/SSIM of the model's reconstruction at `level` over `pairs`.
pub fn validate(model: &Model<f32>, pairs: &[ImagePair], level: usize) -> Result<(f64, f64), TrainError> {
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for pair in pairs {
        let out = ImageBuffer::from_tensor(&model_output(model, &pair.lr.to_tensor(), level)?)?;
        let target = if level == 0 {
            pair.hr.clone()
        } else {
            let (h, w) = (pair.hr.height() >> level, pair.hr.width() >> level);
            ImageBuffer::from_tensor(&resize_bicubic(&pair.hr.to_tensor(), h, w)?)?
        };
        psnr_sum += psnr(&out, &target)?;
        ssim_sum += ssim(&out, &target)?;
    }
    let n = pairs.len() as f64;
    Ok((psnr_sum / n, ssim_sum / n))
}

fn check_data(model: &Model<f32>, pairs: &[ImagePair], patch: &PatchConfig) -> Result<(), TrainError> {
    let s = model.scale();
    if patch.scale != s {
        return Err(TrainError::Config(format!(
            "patch scale {} does not match model scale {s}",
            patch.scale
        )));
    }
    if patch.per_image_mean_shift != model.spec.mean_shift {
        return Err(TrainError::Config(
            "data.per_image_mean_shift must match the model's mean_shift".into(),
        ));
    }
    for p in pairs {
        if (p.hr.width(), p.hr.height()) != (p.lr.width() * s, p.lr.height() * s) {
            return Err(TrainError::Config(format!(
                "pair `{}` is {}x{} / {}x{}, not a x{s} pair",
                p.name,
                p.hr.width(),
                p.hr.height(),
                p.lr.width(),
                p.lr.height()
            )));
        }
    }
    Ok(())
}

/// Runs `steps` updates on patches sampled from `pairs`, continuing from
/// `state.step`. Validation on `val` runs every `val_every` steps and after the
/// last one; rows carry the global step number.
pub fn train(
    state: &mut TrainState,
    pairs: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
    patch: &PatchConfig,
    steps: u64,
    opts: &mut TrainOptions<'_>,
) -> Result<MetricsLog, TrainError> {
    cfg.validate()?;
    check_data(&state.model, pairs, patch)?;
    let mut log = MetricsLog::default();
    if steps == 0 {
        return Ok(log);
    }
    let level = opts.level;
    let end = state.step + steps;
    for_each_batch(pairs, patch, cfg.batch, state.step, steps, opts.workers, 2, |batch| {
        let lr = cfg.lr_at(state.step);
        let tape = Tape::new();
        let x = tape.constant(batch.lr);
        let pred = state.model.forward_level(&tape, x, level)?;
        let target = if level == 0 {
            batch.hr
        } else {
            let [_, _, h, w] = batch.hr.dims4()?;
            resize_bicubic(&batch.hr, h >> level, w >> level)?
        };
        let target = tape.constant(target);
        let loss = training_loss(&tape, pred, target, cfg.loss, cfg.edge_weight)?;
        let loss_value = f64::from(tape.value(loss).data()[0]);
        if !loss_value.is_finite() {
            return Err(TrainError::NonFinite {
                step: state.step + 1,
                lr,
                origin: tape
                    .non_finite_origin()
                    .map(|op| format!(", first produced by {op}"))
                    .unwrap_or_default(),
            });
        }
        let grads = tape.backward(loss)?;
        drop(tape);
        state.model.params.zero_grad();
        state.model.params.accumulate(&grads);
        state.optimizer.set_lr(lr);
        state.optimizer.step(&mut state.model.params);
        state.step += 1;

        let mut row = MetricsRow {
            step: state.step,
            loss: loss_value,
            val_psnr: None,
            val_ssim: None,
            lr,
        };
        if !val.is_empty() && (state.step % cfg.val_every == 0 || state.step == end) {
            let (p, s) = validate(&state.model, val, level)?;
            row.val_psnr = Some(p);
            row.val_ssim = Some(s);
        }
        if let Some(f) = opts.on_row.as_mut() {
            f(&row);
        }
        log.rows.push(row);
        if state.step % cfg.checkpoint_every == 0 {
            if let Some(f) = opts.on_checkpoint.as_mut() {
                f(state)?;
            }
        }
        Ok(())
    })?;
    Ok(log)
}
