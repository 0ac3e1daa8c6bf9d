use std::cell::RefCell;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mean, r2, r2_if_defined, sample_std};
use super::{kfold_split, shrinkage_loss, Adam, AdamCfg, Fold, FoldSplit, Samples, ShrinkageCfg};
use crate::nn::Model;
use crate::volume::Sex;
use crate::{Error, Result};

pub const TISSUES: [&str; 2] = ["VAT", "ASAT"];
pub const SPLIT_SCHEME: &str = "3/1/1 train/validation/test blocks per fold";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamCfg,
    #[serde(default)]
    pub shrinkage: ShrinkageCfg,
    /// Run only the first `max_folds` folds (timing sweeps).
    #[serde(default)]
    pub max_folds: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 16,
            k: 5,
            seed: 0,
            adam: AdamCfg::default(),
            shrinkage: ShrinkageCfg::default(),
            max_folds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::InvalidInput("epochs must be ≥ 1 and batch_size ≥ 2".into()));
        }
        if self.max_folds == Some(0) {
            return Err(Error::InvalidInput("max_folds must be ≥ 1".into()));
        }
        self.adam.validate()?;
        self.shrinkage.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub subject_id: String,
    pub sex: Sex,
    pub target: [f64; 2],
    pub pred: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Test R² per tissue.
    pub r2: [f64; 2],
    /// `None` when the fold's test block has fewer than 2 subjects of that
    /// sex or their targets are constant.
    pub r2_female: [Option<f64>; 2],
    pub r2_male: [Option<f64>; 2],
    /// Mean wall-clock seconds of one training pass over the fold.
    pub epoch_seconds: f64,
    /// Wall-clock minutes of the fold's training loop (training passes and
    /// validation, excluding data preparation and testing).
    pub total_minutes: f64,
    /// Reads of test subjects before final evaluation; always 0.
    pub test_reads_before_eval: usize,
    pub epochs: Vec<EpochLog>,
    pub predictions: Vec<TestPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub tissue: String,
    pub r2_mean: f64,
    pub r2_std: Option<f64>,
    pub r2_female_mean: Option<f64>,
    pub r2_female_std: Option<f64>,
    pub r2_male_mean: Option<f64>,
    pub r2_male_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub decimation: Option<usize>,
    pub k: usize,
    pub split_scheme: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub summary: Vec<TargetSummary>,
}

/// Derive an independent seed for a labelled purpose (splitmix64 finaliser).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dataset handle that records whether test subjects are read before the
/// final evaluation begins.
struct Guarded<'a, S> {
    data: &'a S,
    is_test: Vec<bool>,
    evaluating: RefCell<bool>,
    early_test_reads: RefCell<usize>,
}

impl<'a, S: Samples> Guarded<'a, S> {
    fn new(data: &'a S, test: &[usize]) -> Self {
        let mut is_test = vec![false; data.len()];
        for &i in test {
            is_test[i] = true;
        }
        Guarded {
            data,
            is_test,
            evaluating: RefCell::new(false),
            early_test_reads: RefCell::new(0),
        }
    }

    fn touch(&self, idx: &[usize]) {
        if !*self.evaluating.borrow() {
            *self.early_test_reads.borrow_mut() += idx.iter().filter(|&&i| self.is_test[i]).count();
        }
    }

    fn input(&self, idx: &[usize], norm: &S::Norm) -> Result<S::Input> {
        self.touch(idx);
        self.data.input(idx, norm)
    }

    fn targets(&self, idx: &[usize]) -> Vec<[f64; 2]> {
        self.touch(idx);
        idx.iter().map(|&i| self.data.target(i)).collect()
    }

    fn fit_norm(&self, idx: &[usize]) -> Result<S::Norm> {
        self.touch(idx);
        self.data.fit_norm(idx)
    }

    fn begin_evaluation(&self) {
        *self.evaluating.borrow_mut() = true;
    }
}

struct TargetScaler {
    mean: [f64; 2],
    std: [f64; 2],
}

impl TargetScaler {
    fn fit(targets: &[[f64; 2]]) -> Self {
        let mut mean = [0.0; 2];
        let mut std = [1.0; 2];
        for j in 0..2 {
            let col: Vec<f64> = targets.iter().map(|t| t[j]).collect();
            mean[j] = super::metrics::mean(&col).unwrap_or(0.0);
            std[j] = sample_std(&col).filter(|s| *s > 0.0).unwrap_or(1.0);
        }
        TargetScaler { mean, std }
    }

    fn forward(&self, targets: &[[f64; 2]]) -> Array2<f64> {
        Array2::from_shape_fn((targets.len(), 2), |(i, j)| (targets[i][j] - self.mean[j]) / self.std[j])
    }

    fn inverse(&self, z: &Array2<f64>) -> Vec<[f64; 2]> {
        z.rows()
            .into_iter()
            .map(|r| [r[0] * self.std[0] + self.mean[0], r[1] * self.std[1] + self.mean[1]])
            .collect()
    }
}

/// Mini-batches of a shuffled index list; a trailing batch of one joins the
/// previous batch so batch norm always sees two rows.
fn minibatches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out.last().map(|b| b.len()) == Some(1) {
        let n = order.len();
        out.pop();
        let last = out.pop().unwrap();
        out.push(&order[n - last.len() - 1..]);
    }
    out
}

fn predict<S: Samples>(
    model: &mut S::Model,
    data: &Guarded<S>,
    idx: &[usize],
    norm: &S::Norm,
    chunk: usize,
) -> Result<Array2<f64>> {
    model.set_training(false);
    let mut out = Array2::zeros((idx.len(), 2));
    let mut row = 0;
    for part in idx.chunks(chunk) {
        let pred = model.forward(&data.input(part, norm)?)?;
        out.slice_mut(ndarray::s![row..row + part.len(), ..]).assign(&pred);
        row += part.len();
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model predictions".into()));
    }
    Ok(out)
}

pub fn train_fold<S: Samples>(data: &S, fold: &Fold, fold_index: usize, cfg: &TrainConfig) -> Result<FoldReport> {
    train_fold_model(data, fold, fold_index, cfg).map(|(report, _)| report)
}

/// [`train_fold`] that also returns the selected (best validation loss) model.
pub fn train_fold_model<S: Samples>(
    data: &S,
    fold: &Fold,
    fold_index: usize,
    cfg: &TrainConfig,
) -> Result<(FoldReport, S::Model)> {
    cfg.validate()?;
    if fold.train.len() < 2 {
        return Err(Error::InvalidInput("a fold needs at least 2 training subjects".into()));
    }
    let guard = Guarded::new(data, &fold.test);
    let norm = guard.fit_norm(&fold.train)?;
    let scaler = TargetScaler::fit(&guard.targets(&fold.train));
    let mut model = data.build_model(derive_seed(cfg.seed, 2 * fold_index as u64 + 1))?;
    let mut adam = Adam::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 * fold_index as u64 + 2));
    let val_z = scaler.forward(&guard.targets(&fold.val));

    let mut order = fold.train.clone();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let loop_start = Instant::now();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        model.set_training(true);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for idx in minibatches(&order, cfg.batch_size) {
            let input = guard.input(idx, &norm)?;
            let y = scaler.forward(&guard.targets(idx));
            model.zero_grad();
            let pred = model.forward(&input)?;
            let (loss, grad) = shrinkage_loss(&pred, &y, &cfg.shrinkage)?;
            model.backward(&grad)?;
            adam.step(model.params_mut());
            loss_sum += loss * idx.len() as f64;
            count += idx.len();
        }
        let seconds = started.elapsed().as_secs_f64();
        let val_pred = predict(&mut model, &guard, &fold.val, &norm, cfg.batch_size)?;
        let (val_loss, _) = shrinkage_loss(&val_pred, &val_z, &cfg.shrinkage)?;
        let train_loss = loss_sum / count as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        log::debug!("fold {fold_index} epoch {epoch}: train {train_loss:.5} val {val_loss:.5} ({seconds:.2}s)");
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, model.state()));
        }
        logs.push(EpochLog { train_loss, val_loss, seconds });
    }
    let total_minutes = loop_start.elapsed().as_secs_f64() / 60.0;
    let (best_val_loss, best_epoch, state) = best.expect("at least one epoch");
    model.load_state(&state)?;

    let early_test_reads = *guard.early_test_reads.borrow();
    guard.begin_evaluation();
    let eval = test_metrics(&guard, fold, &norm, &scaler, &mut model, cfg.batch_size)?;
    let report = FoldReport {
        fold: fold_index,
        n_train: fold.train.len(),
        n_val: fold.val.len(),
        n_test: fold.test.len(),
        best_epoch,
        best_val_loss,
        r2: eval.r2,
        r2_female: eval.r2_female,
        r2_male: eval.r2_male,
        epoch_seconds: mean(&logs.iter().map(|l| l.seconds).collect::<Vec<_>>()).unwrap_or(0.0),
        total_minutes,
        test_reads_before_eval: early_test_reads,
        epochs: logs,
        predictions: eval.predictions,
    };
    Ok((report, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold: usize,
    pub r2: [f64; 2],
    pub r2_female: [Option<f64>; 2],
    pub r2_male: [Option<f64>; 2],
    pub predictions: Vec<TestPrediction>,
}

/// Test metrics of a trained model on `fold`, with input and target
/// normalisation refitted on the fold's training block exactly as in training.
pub fn evaluate_fold<S: Samples>(data: &S, fold: &Fold, fold_index: usize, model: &mut S::Model, batch_size: usize) -> Result<FoldEval> {
    let guard = Guarded::new(data, &fold.test);
    let norm = guard.fit_norm(&fold.train)?;
    let scaler = TargetScaler::fit(&guard.targets(&fold.train));
    guard.begin_evaluation();
    let mut eval = test_metrics(&guard, fold, &norm, &scaler, model, batch_size.max(1))?;
    eval.fold = fold_index;
    Ok(eval)
}

fn test_metrics<S: Samples>(
    guard: &Guarded<S>,
    fold: &Fold,
    norm: &S::Norm,
    scaler: &TargetScaler,
    model: &mut S::Model,
    batch_size: usize,
) -> Result<FoldEval> {
    let data = guard.data;
    let z = predict(model, guard, &fold.test, norm, batch_size)?;
    let preds = scaler.inverse(&z);
    let targets = guard.targets(&fold.test);
    let column = |rows: &[[f64; 2]], j: usize, keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
        rows.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, r)| r[j]).collect()
    };
    let all = |_: usize| true;
    let mut r2_all = [0.0; 2];
    let mut r2_female = [None; 2];
    let mut r2_male = [None; 2];
    for j in 0..2 {
        r2_all[j] = r2(&column(&preds, j, &all), &column(&targets, j, &all))?;
        for (sex, slot) in [(Sex::F, &mut r2_female), (Sex::M, &mut r2_male)] {
            let keep = |i: usize| data.sex(fold.test[i]) == sex;
            slot[j] = r2_if_defined(&column(&preds, j, &keep), &column(&targets, j, &keep));
        }
    }
    Ok(FoldEval {
        fold: 0,
        r2: r2_all,
        r2_female,
        r2_male,
        predictions: fold
            .test
            .iter()
            .zip(preds.iter().zip(&targets))
            .map(|(&i, (p, t))| TestPrediction {
                subject_id: data.id(i).to_string(),
                sex: data.sex(i),
                target: *t,
                pred: *p,
            })
            .collect(),
    })
}

/// Cross-validated training and testing.
pub fn train_model<S: Samples>(data: &S, cfg: &TrainConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let split = kfold_split(data.len(), cfg.k, cfg.seed)?;
    train_with_split(data, &split, cfg)
}

/// Like [`train_model`] with a caller-supplied split.
pub fn train_with_split<S: Samples>(data: &S, split: &FoldSplit, cfg: &TrainConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let n_folds = cfg.max_folds.unwrap_or(split.k).min(split.k);
    let mut folds = Vec::with_capacity(n_folds);
    for (i, fold) in split.folds.iter().take(n_folds).enumerate() {
        let report = train_fold(data, fold, i, cfg)?;
        log::info!(
            "{} fold {i}: R² VAT {:.4} ASAT {:.4}, {:.3}s/epoch",
            data.kind(),
            report.r2[0],
            report.r2[1],
            report.epoch_seconds
        );
        folds.push(report);
    }
    Ok(MetricsReport::new(data.kind(), data.decimation(), split.k, cfg, folds))
}

fn summarise(folds: &[FoldReport]) -> Vec<TargetSummary> {
    (0..2)
        .map(|j| {
            let all: Vec<f64> = folds.iter().map(|f| f.r2[j]).collect();
            let fem: Vec<f64> = folds.iter().filter_map(|f| f.r2_female[j]).collect();
            let male: Vec<f64> = folds.iter().filter_map(|f| f.r2_male[j]).collect();
            TargetSummary {
                tissue: TISSUES[j].into(),
                r2_mean: mean(&all).unwrap_or(f64::NAN),
                r2_std: sample_std(&all),
                r2_female_mean: mean(&fem),
                r2_female_std: sample_std(&fem),
                r2_male_mean: mean(&male),
                r2_male_std: sample_std(&male),
            }
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub const CSV_HEADER: &str = "tissue,model,decimation,fold,r2,r2_female,r2_male,epoch_seconds,total_minutes";

impl MetricsReport {
    pub fn new(model: &str, decimation: Option<usize>, k: usize, cfg: &TrainConfig, folds: Vec<FoldReport>) -> Self {
        MetricsReport {
            model: model.into(),
            decimation,
            k,
            split_scheme: SPLIT_SCHEME.into(),
            seed: cfg.seed,
            config: *cfg,
            summary: summarise(&folds),
            folds,
        }
    }

    pub fn r2_mean(&self) -> [f64; 2] {
        [self.summary[0].r2_mean, self.summary[1].r2_mean]
    }

    /// One row per tissue and fold, then `mean` and `std` rows per tissue.
    /// Per-sex cells are empty where undefined.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        let dec = self.decimation.map(|d| d.to_string()).unwrap_or_default();
        let secs: Vec<f64> = self.folds.iter().map(|f| f.epoch_seconds).collect();
        let mins: Vec<f64> = self.folds.iter().map(|f| f.total_minutes).collect();
        for (j, sum) in self.summary.iter().enumerate() {
            for f in &self.folds {
                let _ = writeln!(
                    s,
                    "{},{},{dec},{},{},{},{},{},{}",
                    sum.tissue,
                    self.model,
                    f.fold,
                    f.r2[j],
                    opt(f.r2_female[j]),
                    opt(f.r2_male[j]),
                    f.epoch_seconds,
                    f.total_minutes
                );
            }
            let _ = writeln!(
                s,
                "{},{},{dec},mean,{},{},{},{},{}",
                sum.tissue,
                self.model,
                sum.r2_mean,
                opt(sum.r2_female_mean),
                opt(sum.r2_male_mean),
                opt(mean(&secs)),
                opt(mean(&mins))
            );
            let _ = writeln!(
                s,
                "{},{},{dec},std,{},{},{},{},{}",
                sum.tissue,
                self.model,
                opt(sum.r2_std),
                opt(sum.r2_female_std),
                opt(sum.r2_male_std),
                opt(sample_std(&secs)),
                opt(sample_std(&mins))
            );
        }
        s
    }
}
