use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{DataError, PairDataset};
use crate::imaging::{psnr_with, ssim_with, MetricOptions};

use super::{TrainError, Upscaler};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR of the second model, when comparing two.
    pub psnr_other: Option<f64>,
}

impl EvalRow {
    /// `psnr - psnr_other`; exactly 0 when both are equal, infinities included.
    pub fn delta(&self) -> Option<f64> {
        self.psnr_other
            .map(|o| if o == self.psnr { 0.0 } else { self.psnr - o })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn line(&self, name: &str) -> String {
        format!(
            "# {name} mean={} std={} min={} max={}\n",
            self.mean, self.std, self.min, self.max
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub psnr: Summary,
    pub ssim: Summary,
    pub delta: Option<Summary>,
}

impl EvalReport {
    fn summary_lines(&self) -> String {
        let mut s = self.psnr.line("psnr") + &self.ssim.line("ssim");
        if let Some(d) = &self.delta {
            s += &d.line("delta");
        }
        s
    }

    /// Rows in dataset order, preceded by `#` summary lines.
    pub fn to_csv(&self) -> String {
        let mut out = self.summary_lines();
        let paired = self.delta.is_some();
        out += if paired { "image,psnr,ssim,psnr_other,delta\n" } else { "image,psnr,ssim\n" };
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.image, r.psnr, r.ssim);
            if let (Some(o), Some(d)) = (r.psnr_other, r.delta()) {
                let _ = write!(out, ",{o},{d}");
            }
            out.push('\n');
        }
        out
    }

    /// Paired rows sorted by ascending PSNR difference, with a 1-based rank.
    pub fn sorted_delta_csv(&self) -> Option<String> {
        self.delta?;
        let mut rows: Vec<&EvalRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.delta().unwrap_or(0.0).total_cmp(&b.delta().unwrap_or(0.0)));
        let mut out = self.summary_lines();
        out += "rank,image,psnr,ssim,psnr_other,delta\n";
        for (i, r) in rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                r.image,
                r.psnr,
                r.ssim,
                r.psnr_other.unwrap_or(f64::NAN),
                r.delta().unwrap_or(f64::NAN)
            );
        }
        Some(out)
    }
}

/// Scores `model` (and optionally `other`) on every pair, in parallel across images.
pub fn evaluate(
    model: &dyn Upscaler,
    other: Option<&dyn Upscaler>,
    data: &PairDataset,
    metric: MetricOptions,
) -> Result<EvalReport, TrainError> {
    if data.is_empty() {
        return Err(DataError::Config("nothing to evaluate".into()).into());
    }
    for m in std::iter::once(model).chain(other) {
        if m.scale() != data.scale {
            return Err(TrainError::Config(format!(
                "model scale {} does not match dataset scale {}",
                m.scale(),
                data.scale
            )));
        }
    }
    let rows = data
        .pairs
        .par_iter()
        .map(|pair| {
            let out = model.upscale(&pair.lr)?;
            let psnr_other = match other {
                Some(o) => Some(psnr_with(&o.upscale(&pair.lr)?, &pair.hr, metric)?),
                None => None,
            };
            Ok(EvalRow {
                image: pair.name.clone(),
                psnr: psnr_with(&out, &pair.hr, metric)?,
                ssim: ssim_with(&out, &pair.hr, metric)?,
                psnr_other,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
    let ssims: Vec<f64> = rows.iter().map(|r| r.ssim).collect();
    let delta = other.map(|_| Summary::of(&rows.iter().filter_map(EvalRow::delta).collect::<Vec<_>>()));
    Ok(EvalReport {
        psnr: Summary::of(&psnrs),
        ssim: Summary::of(&ssims),
        delta,
        rows,
    })
}

/// One image stem per line; blank lines and `#` comments are ignored.
pub fn read_val_list(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.trim_end_matches(".png").to_string())
        .collect())
}

/// Loads aligned directories, optionally restricted to `val_list`, and evaluates.
pub fn evaluate_dirs(
    model: &dyn Upscaler,
    other: Option<&dyn Upscaler>,
    hr_dir: &Path,
    lr_dir: &Path,
    val_list: Option<&[String]>,
    metric: MetricOptions,
) -> Result<EvalReport, TrainError> {
    let mut data = PairDataset::load_dirs(hr_dir, lr_dir, model.scale())?;
    if let Some(names) = val_list {
        data = data.select(names)?;
    }
    evaluate(model, other, &data, metric)
}
