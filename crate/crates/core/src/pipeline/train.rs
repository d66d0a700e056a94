use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::PipelineConfig;
use crate::cnn::{
    forward, load_checkpoint, save_checkpoint, train_with, xavier_init, CnnModel, ModelShape, OptimizerState, TrainOutcome,
    TrainingSample,
};
use crate::error::{Error, Result};
use crate::eval::PSNR_CAP_DB;
use crate::features::{ChannelLayout, FeatureSet};
use crate::synth::{read_archive, read_manifest};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRequest {
    pub archive: PathBuf,
    /// Written after every epoch.
    pub checkpoint: PathBuf,
    pub resume: Option<PathBuf>,
}

fn check_compatible(archive: &ChannelLayout, wanted: &ChannelLayout) -> Result<()> {
    let g = (wanted.groups, archive.groups);
    let subset = (!g.0.f1 || g.1.f1) && (!g.0.f2 || g.1.f2) && (!g.0.f3 || g.1.f3);
    if archive.temporal != wanted.temporal || archive.sorted != wanted.sorted || !subset {
        return Err(Error::ChannelMismatch {
            expected: wanted.tag(),
            found: archive.tag(),
        });
    }
    Ok(())
}

fn restrict(samples: Vec<TrainingSample>, groups: FeatureSet) -> Result<Vec<TrainingSample>> {
    samples
        .into_iter()
        .map(|s| {
            if s.stack.layout.groups == groups {
                return Ok(s);
            }
            Ok(TrainingSample {
                stack: s.stack.select(groups)?,
                target: s.target,
            })
        })
        .collect()
}

fn train_samples(
    samples: &[TrainingSample],
    config: &PipelineConfig,
    checkpoint: Option<&Path>,
    resume: Option<(CnnModel, OptimizerState)>,
) -> Result<TrainOutcome> {
    let layout = config.layout();
    let (model, state) = match resume {
        Some(r) => r,
        None => {
            let m = xavier_init(&ModelShape::with_widths(layout.channels(), &config.cnn_widths), layout, config.seed)?;
            let s = OptimizerState::new(&m, config.train.adam);
            (m, s)
        }
    };
    train_with(samples, model, state, &config.train, |epoch, m, s, loss| {
        log::info!("epoch {epoch} loss {loss:.6e}");
        match checkpoint {
            Some(p) => save_checkpoint(p, m, Some(s)),
            None => Ok(()),
        }
    })
}

/// Trains on an archive, checkpointing after every epoch.
///
/// The archive must carry the configured `n_t`/`n_st` channels; a subset of
/// its feature groups may be selected. Resuming continues the step and
/// epoch counters stored in the checkpoint and runs `config.train.epochs`
/// more epochs.
pub fn run_train(config: &PipelineConfig, request: &TrainRequest) -> Result<TrainOutcome> {
    config.validate()?;
    let layout = config.layout();
    let manifest = read_manifest(&request.archive)?;
    check_compatible(&manifest.layout, &layout)?;
    let resume = match &request.resume {
        Some(p) => {
            let ck = load_checkpoint(p, Some(&layout))?;
            let state = ck
                .optimizer
                .unwrap_or_else(|| OptimizerState::new(&ck.model, config.train.adam));
            Some((ck.model, state))
        }
        None => None,
    };
    let (_, samples) = read_archive(&request.archive)?;
    let samples = restrict(samples, config.features)?;
    train_samples(&samples, config, Some(&request.checkpoint), resume)
}

/// PSNR of `clamp(X_avg + X_detail)` against the targets, pooled over all
/// superpixel-mask pixels of `samples`.
pub fn evaluate_heldout(model: &CnnModel, samples: &[TrainingSample]) -> Result<f64> {
    let parts = samples
        .par_iter()
        .map(|s| -> Result<(f64, f64)> {
            let detail = forward(model, &s.stack)?;
            let mut sse = 0.0;
            ndarray::Zip::from(&s.stack.x_avg)
                .and(&detail)
                .and(&s.stack.m_sp)
                .and(&s.target)
                .for_each(|&a, &d, &m, &t| {
                    if m > 0.0 {
                        let e = (a + d).clamp(0.0, 1.0) - t;
                        sse += e * e;
                    }
                });
            Ok((sse, s.stack.m_sp.sum()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sse, n) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    if n == 0.0 {
        return Err(Error::EmptyDataset);
    }
    Ok(if sse == 0.0 { PSNR_CAP_DB } else { (10.0 * (n / sse).log10()).min(PSNR_CAP_DB) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub features: String,
    pub channels: usize,
    pub final_loss: f64,
    pub heldout_psnr: f64,
}

/// Retrains from scratch for each feature subset and scores each model on
/// held-out samples. Both archives must contain all three groups.
pub fn run_ablation(
    config: &PipelineConfig,
    train_archive: &Path,
    heldout_archive: &Path,
    subsets: &[FeatureSet],
) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let full = PipelineConfig {
        features: FeatureSet::ALL,
        ..config.clone()
    };
    let (m_train, train) = read_archive(train_archive)?;
    let (m_held, held) = read_archive(heldout_archive)?;
    check_compatible(&m_train.layout, &full.layout())?;
    check_compatible(&m_held.layout, &full.layout())?;
    subsets
        .iter()
        .map(|&groups| {
            let cfg = PipelineConfig {
                features: groups,
                ..config.clone()
            };
            cfg.validate()?;
            let tr = restrict(train.clone(), groups)?;
            let outcome = train_samples(&tr, &cfg, None, None)?;
            let ho = restrict(held.clone(), groups)?;
            let row = AblationRow {
                features: groups.label(),
                channels: cfg.layout().channels(),
                final_loss: outcome.history.last().copied().unwrap_or(f64::NAN),
                heldout_psnr: evaluate_heldout(&outcome.model, &ho)?,
            };
            log::info!("ablation {}: held-out PSNR {:.3} dB", row.features, row.heldout_psnr);
            Ok(row)
        })
        .collect()
}
