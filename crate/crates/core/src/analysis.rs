//! Batch experiments: alpha sweeps, output landscapes of random deep
//! networks, activation comparison tables and LIB reports.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::ActivationSpec;
use crate::data::Dataset;
use crate::harness::{self, fmt_sig, lib_of, HarnessError, RunRecord, TrainConfig};
use crate::models::Arch;
use crate::rng;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("matrix is {rows}x{cols}, smoothness needs at least 3x3")]
    TooSmall { rows: usize, cols: usize },
    #[error("`{0}` is not an adaptive activation")]
    NotAdaptive(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, AnalysisError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AnalysisError::Spec(format!("thread pool: {e}")))
}

/// Default grid: 0.1 to 2.0 with the usual special values inside.
pub const DEFAULT_ALPHAS: [f64; 7] = [0.1, 0.3, 0.55, 0.8, 1.0, 1.5, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Used for both axes.
    pub alpha_values: Vec<f64>,
    /// Its activation is replaced per cell.
    pub base: TrainConfig,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha1: f64,
    pub alpha2: f64,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by `(alpha1, alpha2)`.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha1,alpha2,final_test_acc,diverged\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{}\n",
                fmt_sig(c.alpha1),
                fmt_sig(c.alpha2),
                fmt_sig(c.record.final_test_acc),
                c.record.diverged
            ));
        }
        s
    }
}

/// One ULU training run per `(alpha1, alpha2)` cell. The output does not
/// depend on `parallelism`.
pub fn run_sweep(spec: &SweepSpec, train: &Dataset, test: &Dataset) -> Result<SweepResult, AnalysisError> {
    if spec.alpha_values.is_empty() {
        return Err(AnalysisError::Spec("no alpha values".into()));
    }
    let mut grid = Vec::new();
    for &a1 in &spec.alpha_values {
        for &a2 in &spec.alpha_values {
            let act = ActivationSpec::ulu(a1, a2).map_err(|e| AnalysisError::Spec(e.to_string()))?;
            grid.push((a1, a2, act));
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let pool = thread_pool(spec.parallelism)?;
    let cells = pool.install(|| {
        grid.par_iter()
            .map(|(a1, a2, act)| {
                let cfg = TrainConfig {
                    model: spec.base.model.with_activation(act.clone()),
                    ..spec.base.clone()
                };
                harness::train(&cfg, train, test).map(|(record, _)| SweepCell {
                    alpha1: *a1,
                    alpha2: *a2,
                    record,
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(SweepResult { cells })
}

/// Row-major 2-D field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Matrix { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.data.chunks(self.cols) {
            let cells: Vec<String> = row.iter().map(|&v| fmt_sig(v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Binary 8-bit PGM, min-max normalized. A constant field maps to 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let lo = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.data.iter().map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        }));
        out
    }
}

/// Mean squared 5-point Laplacian over interior cells.
pub fn smoothness_score(m: &Matrix) -> Result<f64, AnalysisError> {
    if m.rows < 3 || m.cols < 3 {
        return Err(AnalysisError::TooSmall {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let mut sum = 0.0;
    for i in 1..m.rows - 1 {
        for j in 1..m.cols - 1 {
            let lap = m.get(i - 1, j) + m.get(i + 1, j) + m.get(i, j - 1) + m.get(i, j + 1) - 4.0 * m.get(i, j);
            sum += lap * lap;
        }
    }
    Ok(sum / ((m.rows - 2) * (m.cols - 2)) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSpec {
    /// Linear layers; the activation follows every one but the last.
    pub layers: usize,
    pub width: usize,
    pub activation: ActivationSpec,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub resolution: usize,
    pub seed: u64,
}

impl LandscapeSpec {
    pub fn new(activation: ActivationSpec) -> Self {
        LandscapeSpec {
            layers: 6,
            width: 32,
            activation,
            grid_lo: -5.0,
            grid_hi: 5.0,
            resolution: 256,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if self.layers == 0 || self.width == 0 {
            return Err(AnalysisError::Spec("layers and width must be positive".into()));
        }
        if self.resolution < 2 {
            return Err(AnalysisError::Spec("resolution must be at least 2".into()));
        }
        if !(self.grid_lo < self.grid_hi) {
            return Err(AnalysisError::Spec("grid_lo must be below grid_hi".into()));
        }
        Ok(())
    }
}

/// Weights `[in, out]` row-major and biases of a scalar-output MLP on 2-D input.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeNet {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    dims: Vec<usize>,
}

/// Bias standard deviation; nonzero so the field is not a cone around the origin.
const LANDSCAPE_BIAS_STD: f64 = 0.5;

impl LandscapeNet {
    /// He-normal weights `N(0, 2 / fan_in)` and `N(0, 0.5^2)` biases, drawn
    /// from the seed alone so every activation sees the same network.
    pub fn random(layers: usize, width: usize, seed: u64) -> Self {
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(width, layers - 1));
        dims.push(1);
        let mut rng = rng::seeded(seed, rng::STREAM_LANDSCAPE);
        let bias = Normal::new(0.0, LANDSCAPE_BIAS_STD).expect("finite std");
        let layers = dims
            .windows(2)
            .map(|d| {
                let w = Normal::new(0.0, (2.0 / d[0] as f64).sqrt()).expect("finite std");
                let weights = (0..d[0] * d[1]).map(|_| w.sample(&mut rng)).collect();
                let biases = (0..d[1]).map(|_| bias.sample(&mut rng)).collect();
                (weights, biases)
            })
            .collect();
        LandscapeNet { layers, dims }
    }

    pub fn weight_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (w, b) in &self.layers {
            w.iter().chain(b).for_each(|v| v.to_bits().hash(&mut h));
        }
        h.finish()
    }

    pub fn eval(&self, act: &ActivationSpec, x: f64, y: f64) -> f64 {
        let mut cur = vec![x, y];
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let mut next = b.clone();
            for (i, &c) in cur.iter().enumerate().take(n_in) {
                for (o, acc) in next.iter_mut().enumerate() {
                    *acc += c * w[i * n_out + o];
                }
            }
            if l != last {
                next.iter_mut().for_each(|v| *v = act.eval(*v));
            }
            cur = next;
        }
        cur[0]
    }
}

/// Output of the network over the grid; rows follow y, columns follow x.
pub fn landscape_with(spec: &LandscapeSpec, net: &LandscapeNet) -> Result<Matrix, AnalysisError> {
    spec.validate()?;
    let n = spec.resolution;
    let coord = |k: usize| spec.grid_lo + (spec.grid_hi - spec.grid_lo) * k as f64 / (n - 1) as f64;
    Ok(Matrix::from_fn(n, n, |i, j| net.eval(&spec.activation, coord(j), coord(i))))
}

pub fn landscape(spec: &LandscapeSpec) -> Result<Matrix, AnalysisError> {
    spec.validate()?;
    landscape_with(spec, &LandscapeNet::random(spec.layers, spec.width, spec.seed))
}

/// Writes `landscape_<name>.csv` and `.pgm` into `dir`.
pub fn write_landscape(dir: &Path, name: &str, m: &Matrix) -> Result<(), AnalysisError> {
    harness::create_dir(dir)?;
    harness::write_file(&dir.join(format!("landscape_{name}.csv")), m.to_csv())?;
    harness::write_file(&dir.join(format!("landscape_{name}.pgm")), m.to_pgm())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub activation: String,
    pub mean_acc: f64,
    /// Population standard deviation.
    pub std_acc: f64,
    pub runs: usize,
    pub diverged_runs: usize,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("activation,mean_acc,std_acc,runs\n");
    for r in rows {
        s.push_str(&format!(
            "\"{}\",{},{},{}\n",
            r.activation,
            fmt_sig(r.mean_acc),
            fmt_sig(r.std_acc),
            r.runs
        ));
    }
    s
}

/// Trains each activation `repeats` times with seeds `cfg.seed + i`. Diverged
/// runs count as accuracy 0. Rows are sorted by mean accuracy, descending.
pub fn compare_table(
    activations: &[ActivationSpec],
    cfg: &TrainConfig,
    repeats: usize,
    jobs: usize,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<CompareRow>, AnalysisError> {
    if repeats == 0 {
        return Err(AnalysisError::Spec("repeats must be at least 1".into()));
    }
    let runs: Vec<(usize, u64)> = (0..activations.len())
        .flat_map(|a| (0..repeats as u64).map(move |r| (a, r)))
        .collect();
    let pool = thread_pool(jobs)?;
    let records = pool.install(|| {
        runs.par_iter()
            .map(|&(a, r)| {
                let run_cfg = TrainConfig {
                    model: cfg.model.with_activation(activations[a].clone()),
                    seed: cfg.seed.wrapping_add(r),
                    ..cfg.clone()
                };
                harness::train(&run_cfg, train, test).map(|(rec, _)| rec)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut rows: Vec<CompareRow> = records
        .chunks(repeats)
        .zip(activations)
        .map(|(recs, act)| {
            let accs: Vec<f64> = recs.iter().map(|r| r.final_test_acc).collect();
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            CompareRow {
                activation: act.to_string(),
                mean_acc: mean,
                std_acc: var.sqrt(),
                runs: accs.len(),
                diverged_runs: recs.iter().filter(|r| r.diverged).count(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.mean_acc.total_cmp(&a.mean_acc));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLib {
    pub site: usize,
    pub beta1_sq: f64,
    pub beta2_sq: f64,
    pub lib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLib {
    pub model: String,
    pub final_test_acc: f64,
    pub diverged: bool,
    pub sites: Vec<SiteLib>,
    pub aggregate_lib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub model: String,
    pub site: usize,
    pub beta1_sq: f64,
    pub beta2_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibReport {
    pub config: TrainConfig,
    pub models: Vec<ModelLib>,
    /// One `(beta1^2, beta2^2)` point per site per model.
    pub scatter: Vec<ScatterPoint>,
    pub observation: String,
}

/// Trains the adaptive activation in `cfg` on a CNN and on the attention model
/// with otherwise identical settings, and collects the learned betas.
pub fn lib_report(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<LibReport, AnalysisError> {
    if !cfg.model.activation.is_adaptive() {
        return Err(AnalysisError::NotAdaptive(cfg.model.activation.to_string()));
    }
    let mut models = Vec::new();
    let mut scatter = Vec::new();
    for arch in [Arch::SmallCnn, Arch::MiniAttention] {
        let run_cfg = TrainConfig {
            model: crate::models::ModelConfig {
                arch,
                ..cfg.model.clone()
            },
            ..cfg.clone()
        };
        let (rec, store) = harness::train(&run_cfg, train, test)?;
        let summary = lib_of(&store)?;
        let sites: Vec<SiteLib> = store
            .adaptive
            .iter()
            .enumerate()
            .map(|(site, p)| {
                let (b1, b2) = p.coefficients();
                SiteLib {
                    site,
                    beta1_sq: b1,
                    beta2_sq: b2,
                    lib: p.lib(),
                }
            })
            .collect();
        scatter.extend(sites.iter().map(|s| ScatterPoint {
            model: arch.cli_name().into(),
            site: s.site,
            beta1_sq: s.beta1_sq,
            beta2_sq: s.beta2_sq,
        }));
        models.push(ModelLib {
            model: arch.cli_name().into(),
            final_test_acc: rec.final_test_acc,
            diverged: rec.diverged,
            sites,
            aggregate_lib: summary.aggregate,
        });
    }
    let (c, a) = (models[0].aggregate_lib, models[1].aggregate_lib);
    let relation = match c.total_cmp(&a) {
        std::cmp::Ordering::Greater => "cnn > attn",
        std::cmp::Ordering::Less => "cnn < attn",
        std::cmp::Ordering::Equal => "cnn = attn",
    };
    Ok(LibReport {
        config: cfg.clone(),
        models,
        scatter,
        observation: format!("aggregate LIB cnn {} vs attn {}: {relation}", fmt_sig(c), fmt_sig(a)),
    })
}
