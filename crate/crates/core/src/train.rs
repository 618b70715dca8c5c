//! Mini-batch Adam training with early stopping, and the situation-partitioned
//! k-fold runner.

use gaze_tensor::{AdamConfig, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{topn_accuracy, KFoldOutput, ATTEMPTS};
use crate::features::{plan_folds_for_ids, Dataset, FeatureError, FoldPlan, Subset};
use crate::models::{ModelError, SequenceModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} set")]
    EmptyDataset(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite training loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Examples drawn (without replacement) per epoch; `None` uses the whole
    /// training set every epoch.
    pub epoch_examples: Option<usize>,
    /// Cap on the fixed random subsample scored after each epoch.
    pub eval_examples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 20,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            shuffle: true,
            epoch_examples: None,
            eval_examples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,eval_acc\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.train_acc, e.eval_acc
            ));
        }
        s
    }
}

fn check_shapes(model: &SequenceModel<f32>, ds: &Dataset) -> Result<(), TrainError> {
    let (m, l, c) = model.config.dims();
    let meta = &ds.meta;
    if meta.m != m || meta.l != l || meta.labels.len() != c {
        return Err(TrainError::ShapeMismatch(format!(
            "model (m={m}, L={l}, C={c}) vs dataset (m={}, L={}, C={})",
            meta.m,
            meta.l,
            meta.labels.len()
        )));
    }
    Ok(())
}

fn gather(subset: &Subset<'_>, idx: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let width = subset.dataset.meta.m * subset.dataset.meta.l;
    let mut batch = Vec::with_capacity(idx.len() * width);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        batch.extend_from_slice(subset.window(i));
        labels.push(subset.label(i));
    }
    (batch, labels)
}

const PREDICT_CHUNK: usize = 256;

/// Label probabilities for every example of `subset`, in order.
pub fn predict_subset(model: &SequenceModel<f32>, subset: &Subset<'_>) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(subset.len());
    let all: Vec<usize> = (0..subset.len()).collect();
    for chunk in all.chunks(PREDICT_CHUNK) {
        let (batch, _) = gather(subset, chunk);
        out.extend(model.predict_windows(&batch)?);
    }
    Ok(out)
}

/// Top-1, top-2 and top-3 accuracy on `subset`.
pub fn evaluate(model: &SequenceModel<f32>, subset: &Subset<'_>) -> Result<[f64; 3], TrainError> {
    if subset.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let probs = predict_subset(model, subset)?;
    let labels: Vec<usize> = (0..subset.len()).map(|i| subset.label(i)).collect();
    let c = probs[0].len();
    let mut acc = [0.0; 3];
    for (k, &n) in ATTEMPTS.iter().enumerate() {
        acc[k] = topn_accuracy(&probs, &labels, n.min(c)).expect("n within 1..=C");
    }
    Ok(acc)
}

/// Deterministic random subsample of at most `cap` members.
pub fn subsample<'a>(subset: &Subset<'a>, cap: Option<usize>, seed: u64) -> Subset<'a> {
    match cap {
        Some(cap) if cap < subset.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = subset.indices.choose_multiple(&mut rng, cap).copied().collect::<Vec<_>>();
            idx.sort_unstable();
            Subset::new(subset.dataset, idx)
        }
        _ => subset.clone(),
    }
}

/// Trains `model` and returns the parameters of the epoch with the best
/// evaluation top-1 accuracy.
pub fn fit(
    model: SequenceModel<f32>,
    train: &Subset<'_>,
    eval: &Subset<'_>,
    config: &TrainConfig,
) -> Result<(SequenceModel<f32>, TrainHistory), TrainError> {
    fit_with(model, train, eval, config, &mut |_| {})
}

/// Like [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with(
    mut model: SequenceModel<f32>,
    train: &Subset<'_>,
    eval: &Subset<'_>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(SequenceModel<f32>, TrainHistory), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if eval.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    if config.batch_size == 0 {
        return Err(TrainError::ShapeMismatch("batch_size must be positive".into()));
    }
    check_shapes(&model, train.dataset)?;
    check_shapes(&model, eval.dataset)?;

    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let eval = subsample(eval, config.eval_examples, config.seed ^ 0x5eed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let per_epoch = config.epoch_examples.map_or(train.len(), |n| n.clamp(1, train.len()));

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, SequenceModel<f32>)> = None;
    let mut wait = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 0..config.max_epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, idx) in order[..per_epoch].chunks(config.batch_size).enumerate() {
            let (batch, labels) = gather(train, idx);
            let g = Graph::new();
            let probs = model.forward(&g, &batch)?;
            let loss_var = g.cross_entropy(probs, &labels).map_err(ModelError::from)?;
            let loss = f64::from(g.value(loss_var).data()[0]);
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, loss });
            }
            {
                let p = g.value(probs);
                for (r, &l) in labels.iter().enumerate() {
                    let row = p.row(r);
                    let top = crate::attention::argmax(&row.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
                    hits += usize::from(top == Some(l));
                }
            }
            loss_sum += loss * idx.len() as f64;
            let grads = g.backward(loss_var).map_err(ModelError::from)?;
            model.params.accumulate_grads(&g, &grads).map_err(ModelError::from)?;
            model.params.adam_step(&adam).map_err(ModelError::from)?;
        }
        let eval_acc = evaluate(&model, &eval)?[0];
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / per_epoch as f64,
            train_acc: hits as f64 / per_epoch as f64,
            eval_acc,
        };
        on_epoch(&record);
        epochs.push(record);
        if best.as_ref().map_or(true, |(_, acc, _)| eval_acc > *acc) {
            best = Some((epoch, eval_acc, model.clone()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let Some((best_epoch, _, best_model)) = best else {
        return Err(TrainError::EmptyDataset("epoch (max_epochs = 0)"));
    };
    Ok((
        best_model,
        TrainHistory {
            epochs,
            best_epoch,
            stop_reason,
        },
    ))
}

/// Per-fold outcome of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub history: TrainHistory,
    /// Top-1/2/3 accuracy of the best-epoch model.
    pub train_acc: [f64; 3],
    pub test_acc: [f64; 3],
    /// Training accuracy reported by the final epoch.
    pub final_epoch_train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldRun {
    pub plan: FoldPlan,
    pub config: TrainConfig,
    pub folds: Vec<FoldResult>,
}

impl KFoldRun {
    pub fn output(&self, arch: &str, dataset: &Dataset) -> KFoldOutput {
        KFoldOutput {
            arch: arch.to_string(),
            variant: dataset.meta.variant,
            m: dataset.meta.m,
            train: self.folds.iter().map(|f| f.train_acc).collect(),
            test: self.folds.iter().map(|f| f.test_acc).collect(),
        }
    }
}

/// Options for [`run_kfold`] beyond the per-fold training config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KFoldOptions {
    /// Fraction of each fold's training situations held out for early
    /// stopping; `None` early-stops on the test fold.
    pub holdout: Option<f64>,
    /// Cap on the training examples scored for the reported train accuracy.
    pub train_eval_examples: Option<usize>,
    /// Run only the first `n` folds.
    pub max_folds: Option<usize>,
}

/// Splits `indices` by situation into (kept, held out) with roughly
/// `fraction` of the situations held out.
pub fn holdout_split(dataset: &Dataset, indices: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = indices.iter().map(|&i| dataset.example(i).situation_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_hold = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len().saturating_sub(1).max(1));
    let mut held: Vec<usize> = ids[..n_hold].to_vec();
    held.sort_unstable();
    indices
        .iter()
        .partition(|&&i| held.binary_search(&dataset.example(i).situation_id).is_err())
}

/// Trains one model per fold; fold `i` is seeded with `config.seed + i`.
pub fn run_kfold(
    dataset: &Dataset,
    plan: &FoldPlan,
    build: &dyn Fn(usize) -> Result<SequenceModel<f32>, ModelError>,
    config: &TrainConfig,
    options: &KFoldOptions,
    on_fold: &mut dyn FnMut(&FoldResult),
) -> Result<KFoldRun, TrainError> {
    let folds = options.max_folds.map_or(plan.k, |n| n.min(plan.k));
    let mut results = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (train_idx, test_idx) = plan.split(dataset, fold);
        let fold_cfg = TrainConfig {
            seed: config.seed.wrapping_add(fold as u64),
            ..*config
        };
        let (fit_idx, stop_idx) = match options.holdout {
            Some(f) => holdout_split(dataset, &train_idx, f, fold_cfg.seed),
            None => (train_idx.clone(), test_idx.clone()),
        };
        let train = Subset::new(dataset, fit_idx);
        let stop = Subset::new(dataset, stop_idx);
        let test = Subset::new(dataset, test_idx);
        let (model, history) = fit(build(fold)?, &train, &stop, &fold_cfg)?;
        let train_eval = subsample(&Subset::new(dataset, train_idx), options.train_eval_examples, fold_cfg.seed);
        let result = FoldResult {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            final_epoch_train_acc: history.epochs.last().map_or(0.0, |e| e.train_acc),
            history,
            train_acc: evaluate(&model, &train_eval)?,
            test_acc: evaluate(&model, &test)?,
        };
        on_fold(&result);
        results.push(result);
    }
    Ok(KFoldRun {
        plan: plan.clone(),
        config: *config,
        folds: results,
    })
}

/// Fold plan over the dataset's situations.
pub fn plan_for(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, TrainError> {
    Ok(plan_folds_for_ids(&dataset.situation_ids(), k, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DatasetMeta, Normalization};
    use crate::models::{LstmConfig, ModelConfig};
    use crate::scene::Variant;

    /// Tiny 2D dataset with m=2 where the label is the row holding the
    /// largest first feature of the last frame.
    fn toy(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::empty(DatasetMeta::new(Variant::TwoD, 2, Normalization::default()));
        let l = ds.meta.l;
        for i in 0..n {
            let window: Vec<f32> = (0..2 * l).map(|_| rng.gen_range(0.0..1.0)).collect();
            let label = i % 5;
            ds.push_window(&window, label, i % 7);
        }
        ds
    }

    fn small_model(seed: u64) -> SequenceModel<f32> {
        let mut cfg = LstmConfig::new(2, 28, 5);
        cfg.units = 16;
        cfg.layers = 1;
        SequenceModel::build(ModelConfig::Lstm(cfg), seed).unwrap()
    }

    #[test]
    fn memorizes_twenty_examples() {
        let ds = toy(20, 1);
        let all = Subset::all(&ds);
        let cfg = TrainConfig {
            lr: 0.01,
            patience: 200,
            max_epochs: 300,
            ..TrainConfig::default()
        };
        let (model, history) = fit(small_model(0), &all, &all, &cfg).unwrap();
        assert_eq!(evaluate(&model, &all).unwrap()[0], 1.0, "{:?}", history.best());
    }

    #[test]
    fn zero_patience_stops_after_first_non_improving_epoch() {
        let ds = toy(40, 2);
        let all = Subset::all(&ds);
        let cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        let (_, h) = fit(small_model(1), &all, &all, &cfg).unwrap();
        assert_eq!(h.stop_reason, StopReason::Patience);
        let last = h.epochs.last().unwrap().eval_acc;
        let before = h.epochs[..h.epochs.len() - 1].iter().map(|e| e.eval_acc).fold(f64::MIN, f64::max);
        assert!(last <= before);
        for w in h.epochs[..h.epochs.len() - 1].windows(2) {
            assert!(w[1].eval_acc > w[0].eval_acc);
        }
    }

    #[test]
    fn best_epoch_model_is_returned_and_runs_are_reproducible() {
        let ds = toy(60, 3);
        let all = Subset::all(&ds);
        let cfg = TrainConfig {
            patience: 3,
            max_epochs: 12,
            seed: 9,
            ..TrainConfig::default()
        };
        let (model, h) = fit(small_model(2), &all, &all, &cfg).unwrap();
        let max = h.epochs.iter().map(|e| e.eval_acc).fold(f64::MIN, f64::max);
        assert_eq!(evaluate(&model, &all).unwrap()[0], max);
        assert_eq!(h.best().eval_acc, max);
        let (_, again) = fit(small_model(2), &all, &all, &cfg).unwrap();
        assert_eq!(h, again);
        assert!(h.to_csv().starts_with("epoch,train_loss,train_acc,eval_acc\n"));
    }

    #[test]
    fn shape_mismatch_and_empty_sets() {
        let ds = toy(10, 4);
        let all = Subset::all(&ds);
        let wrong = SequenceModel::build(ModelConfig::Lstm(LstmConfig::new(3, 28, 5)), 0).unwrap();
        assert!(matches!(
            fit(wrong, &all, &all, &TrainConfig::default()),
            Err(TrainError::ShapeMismatch(_))
        ));
        let none = Subset::new(&ds, vec![]);
        assert!(matches!(
            fit(small_model(0), &none, &all, &TrainConfig::default()),
            Err(TrainError::EmptyDataset(_))
        ));
    }

    #[test]
    fn kfold_cardinality_and_holdout_disjointness() {
        let ds = toy(70, 5);
        let plan = plan_for(&ds, 7, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let run = run_kfold(&ds, &plan, &|f| Ok(small_model(f as u64)), &cfg, &KFoldOptions::default(), &mut |_| {}).unwrap();
        assert_eq!(run.folds.len(), 7);
        assert_eq!(run.folds.iter().map(|f| f.n_test).sum::<usize>(), 70);
        let out = run.output("lstm", &ds);
        let report = crate::eval::build_report(&[out.clone()]);
        let mean = out.test.iter().map(|a| a[0]).sum::<f64>() / 7.0;
        assert!((report.get("lstm", 2, "test", 1).unwrap().mean - mean).abs() < 1e-12);

        let (train_idx, _) = plan.split(&ds, 0);
        let (kept, held) = holdout_split(&ds, &train_idx, 0.2, 3);
        assert_eq!(kept.len() + held.len(), train_idx.len());
        assert!(!held.is_empty());
        for &h in &held {
            let sid = ds.example(h).situation_id;
            assert!(kept.iter().all(|&k| ds.example(k).situation_id != sid));
        }
    }
}
