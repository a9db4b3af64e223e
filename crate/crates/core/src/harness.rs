//! Training loop, evaluation and run records.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{lr_schedule, sgd_step, GraphError, ParamStore};
use crate::data::Dataset;
use crate::models::{Model, ModelConfig, ModelError};
use crate::rng;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 250;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("cannot evaluate on an empty dataset")]
    EmptyDataset,
    #[error("model has no adaptive activation sites")]
    NoAdaptiveSites,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            epochs: 10,
            batch_size: 32,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRecord {
    pub epoch: usize,
    pub site: usize,
    pub beta1_sq: f64,
    pub beta2_sq: f64,
    pub lib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub step: usize,
}

/// Row 0 of `curves` is the evaluation before any update; row `e` holds the
/// running mean of minibatch loss and accuracy over epoch `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub train_set: String,
    pub test_set: String,
    pub param_count: usize,
    pub curves: Vec<EpochMetrics>,
    pub betas: Vec<BetaRecord>,
    /// Test accuracy after the last epoch, or 0 if the run diverged.
    pub final_test_acc: f64,
    pub diverged: bool,
    pub divergence: Option<Divergence>,
    /// Not serialized, so rerunning a seed rewrites identical files.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunRecord {
    /// Equality on everything except timing.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_seconds: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,test_acc\n");
        for r in &self.curves {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                fmt_sig(r.train_loss),
                fmt_sig(r.train_acc),
                fmt_sig(r.test_acc)
            ));
        }
        s
    }

    pub fn betas_csv(&self) -> String {
        let mut s = String::from("epoch,site,beta1_sq,beta2_sq,lib\n");
        for r in &self.betas {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                r.site,
                fmt_sig(r.beta1_sq),
                fmt_sig(r.beta2_sq),
                fmt_sig(r.lib)
            ));
        }
        s
    }

    /// Writes `run.json`, `curves.csv` and `betas.csv` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let json = serde_json::to_string_pretty(self).expect("record serializes");
        write_file(&dir.join("run.json"), &json)?;
        write_file(&dir.join("curves.csv"), self.curves_csv())?;
        write_file(&dir.join("betas.csv"), self.betas_csv())
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Nine significant digits, fixed notation where that stays readable.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let decimals = (8 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.8e}")
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    logits
        .rows()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Mean cross-entropy and argmax accuracy over the whole dataset.
pub fn evaluate(model: &Model, store: &ParamStore, ds: &Dataset) -> Result<(f64, f64), HarnessError> {
    if ds.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (images, labels) = ds.gather(chunk);
        let pass = model.forward_loss(store, &images, &labels)?;
        loss_sum += pass.graph.value(pass.loss).item() * chunk.len() as f64;
        correct += count_correct(pass.graph.value(pass.logits), &labels);
    }
    Ok((loss_sum / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// One SGD update on a batch. Returns the pre-update loss and the number of
/// correct predictions, or `None` if the loss or a gradient was non-finite
/// (in which case the parameters are untouched).
pub fn train_step(
    model: &Model,
    store: &mut ParamStore,
    images: &Tensor,
    labels: &[usize],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<Option<(f64, usize)>, HarnessError> {
    let mut pass = model.forward_loss(store, images, labels)?;
    let loss = pass.graph.value(pass.loss).item();
    if !loss.is_finite() {
        return Ok(None);
    }
    let correct = count_correct(pass.graph.value(pass.logits), labels);
    store.zero_grad();
    pass.graph.backward(pass.loss, store)?;
    if sgd_step(store, lr, momentum, weight_decay).is_err() {
        return Ok(None);
    }
    Ok(Some((loss, correct)))
}

fn record_betas(store: &ParamStore, epoch: usize, out: &mut Vec<BetaRecord>) {
    for (site, p) in store.adaptive.iter().enumerate() {
        let (b1, b2) = p.coefficients();
        out.push(BetaRecord {
            epoch,
            site,
            beta1_sq: b1,
            beta2_sq: b2,
            lib: p.lib(),
        });
    }
}

/// Trains a fresh model and returns its record and final parameters.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<(RunRecord, ParamStore), HarnessError> {
    let start = Instant::now();
    cfg.validate()?;
    let (model, mut store) = Model::build(&cfg.model, cfg.seed)?;
    if train_set.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }

    let mut curves = Vec::with_capacity(cfg.epochs + 1);
    let mut betas = Vec::new();
    let (loss0, acc0) = evaluate(&model, &store, train_set)?;
    let (_, test0) = evaluate(&model, &store, test_set)?;
    curves.push(EpochMetrics {
        epoch: 0,
        train_loss: loss0,
        train_acc: acc0,
        test_acc: test0,
    });
    record_betas(&store, 0, &mut betas);

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle = rng::seeded(cfg.seed, rng::STREAM_SHUFFLE);
    let mut divergence = None;
    let mut step = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (images, labels) = train_set.gather(batch);
            let lr = lr_schedule(step, total_steps, cfg.base_lr);
            match train_step(&model, &mut store, &images, &labels, lr, cfg.momentum, cfg.weight_decay)? {
                Some((loss, c)) => {
                    loss_sum += loss * batch.len() as f64;
                    correct += c;
                }
                None => {
                    divergence = Some(Divergence { epoch, step });
                    break 'epochs;
                }
            }
            step += 1;
        }
        let (_, test_acc) = evaluate(&model, &store, test_set)?;
        let n = train_set.len() as f64;
        curves.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc,
        });
        record_betas(&store, epoch, &mut betas);
    }

    let diverged = divergence.is_some();
    let final_test_acc = if diverged {
        0.0
    } else {
        curves.last().map_or(0.0, |r| r.test_acc)
    };
    let record = RunRecord {
        config: cfg.clone(),
        train_set: train_set.name.clone(),
        test_set: test_set.name.clone(),
        param_count: store.tensor_param_count(),
        curves,
        betas,
        final_test_acc,
        diverged,
        divergence,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((record, store))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibSummary {
    pub per_site: Vec<f64>,
    /// Mean of the per-site values.
    pub aggregate: f64,
}

pub fn lib_of(store: &ParamStore) -> Result<LibSummary, HarnessError> {
    if store.adaptive.is_empty() {
        return Err(HarnessError::NoAdaptiveSites);
    }
    let per_site: Vec<f64> = store.adaptive.iter().map(|p| p.lib()).collect();
    let aggregate = per_site.iter().sum::<f64>() / per_site.len() as f64;
    Ok(LibSummary { per_site, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{ActivationKind, ActivationSpec, AdaptiveParams};
    use crate::data::synthetic_blobs;
    use crate::models::Arch;

    fn mlp_cfg(act: ActivationSpec) -> TrainConfig {
        let model = ModelConfig::new(Arch::Mlp, act).with_input(12, 12, 4);
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::new(model)
        }
    }

    fn blobs() -> (Dataset, Dataset) {
        (synthetic_blobs(4, 20, 12, 1), synthetic_blobs(4, 10, 12, 2))
    }

    #[test]
    fn sig_digits() {
        assert_eq!(fmt_sig(0.5), "0.500000000");
        assert_eq!(fmt_sig(std::f64::consts::LN_10), "2.30258509");
        assert_eq!(fmt_sig(123.0), "123.000000");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.5e-7), "1.50000000e-7");
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn zero_epochs_has_initial_row_only() {
        let (tr, te) = blobs();
        let cfg = TrainConfig {
            epochs: 0,
            ..mlp_cfg(ActivationSpec::plain(ActivationKind::Relu))
        };
        let (rec, _) = train(&cfg, &tr, &te).unwrap();
        assert_eq!(rec.curves.len(), 1);
        assert_eq!(rec.curves[0].epoch, 0);
        assert!(rec.betas.is_empty());
    }

    #[test]
    fn deterministic_and_betas_recorded() {
        let (tr, te) = blobs();
        let cfg = mlp_cfg(ActivationSpec::plain(ActivationKind::Aulu));
        let (a, _) = train(&cfg, &tr, &te).unwrap();
        let (b, _) = train(&cfg, &tr, &te).unwrap();
        assert!(a.same_results(&b));
        assert_eq!(a.curves_csv(), b.curves_csv());
        assert_eq!(a.curves.len(), 3);
        assert_eq!(a.betas.len(), 3);
        assert!(a.betas.iter().all(|r| r.lib >= 0.0));
    }

    #[test]
    fn empty_eval_is_an_error() {
        let cfg = mlp_cfg(ActivationSpec::plain(ActivationKind::Relu));
        let (model, store) = Model::build(&cfg.model, 0).unwrap();
        let empty = synthetic_blobs(4, 5, 12, 0).subset(&[], "empty");
        assert!(matches!(evaluate(&model, &store, &empty), Err(HarnessError::EmptyDataset)));
    }

    #[test]
    fn zero_model_accuracy_is_first_class_share() {
        let cfg = mlp_cfg(ActivationSpec::plain(ActivationKind::Relu));
        let (model, mut store) = Model::build(&cfg.model, 0).unwrap();
        for id in 0..store.len() {
            store.value_mut(id).fill(0.0);
        }
        let ds = synthetic_blobs(4, 5, 12, 0);
        let (loss, acc) = evaluate(&model, &store, &ds).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn diverging_run_is_flagged() {
        let (tr, te) = blobs();
        let cfg = TrainConfig {
            base_lr: 1e200,
            momentum: 0.0,
            ..mlp_cfg(ActivationSpec::plain(ActivationKind::Relu))
        };
        let (rec, _) = train(&cfg, &tr, &te).unwrap();
        assert!(rec.diverged);
        assert_eq!(rec.final_test_acc, 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let (tr, te) = blobs();
        let mut cfg = mlp_cfg(ActivationSpec::plain(ActivationKind::Relu));
        cfg.momentum = 1.0;
        assert!(matches!(train(&cfg, &tr, &te), Err(HarnessError::Config(_))));
    }

    #[test]
    fn lib_aggregate() {
        let mut s = ParamStore::new();
        assert!(matches!(lib_of(&s), Err(HarnessError::NoAdaptiveSites)));
        s.add_adaptive(AdaptiveParams::new(1.0, 0.5));
        assert_eq!(lib_of(&s).unwrap().aggregate, 0.75);
        s.adaptive[0] = AdaptiveParams::new(0.2f64.sqrt(), 0.0);
        s.add_adaptive(AdaptiveParams::new(0.0, 0.4f64.sqrt()));
        let l = lib_of(&s).unwrap();
        assert!((l.aggregate - 0.3).abs() < 1e-15);
    }
}
