//! Effective-attention heuristics (product and sum forms) and their
//! genetic-algorithm fit.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{argmax, Attention, AttentionForm};
use crate::features::{decode_targets, Dataset, FrameFeatures};
use crate::scene::{CueSet, SceneFrame, TargetView, Variant};

/// Fitted heuristic: form, cue weights, box constant and kernel widths.
pub type HeuristicWeights = Attention;

pub const DECAY_BOUNDS: (f64, f64) = (0.0, 2.0);
pub const WIDTH_BOUNDS_DEG: (f64, f64) = (5.0, 180.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("no present target in frame")]
    NoPresentTarget,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

pub fn validate_weights(w: &HeuristicWeights) -> Result<(), BaselineError> {
    let bad = |s: String| Err(BaselineError::InvalidWeights(s));
    if let Some(v) = w.cue_weights.0.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return bad(format!("cue weight {v} is not positive"));
    }
    if !(w.box_weight > 0.0 && w.box_weight.is_finite()) {
        return bad(format!("box weight {} is not positive", w.box_weight));
    }
    if !(DECAY_BOUNDS.0..=DECAY_BOUNDS.1).contains(&w.distance_decay) {
        return bad(format!("alpha {} outside {DECAY_BOUNDS:?}", w.distance_decay));
    }
    if !(WIDTH_BOUNDS_DEG.0..=WIDTH_BOUNDS_DEG.1).contains(&w.angle_width_deg) {
        return bad(format!("sigma {} outside {WIDTH_BOUNDS_DEG:?}", w.angle_width_deg));
    }
    Ok(())
}

/// Targets of one label frame: person slots, plus the box when the variant
/// has one (`None` when the box is absent).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub people: Vec<TargetView>,
    pub box_present: Option<bool>,
}

impl FrameTargets {
    pub fn from_frame(frame: &SceneFrame) -> Self {
        let variant = frame.variant();
        Self {
            people: frame.targets(),
            box_present: variant.box_label().map(|b| frame.is_target_present(b)),
        }
    }

    /// Decodes a normalized feature row; the box always counts as present.
    pub fn from_features(features: &FrameFeatures, dataset: &Dataset) -> Self {
        Self {
            people: decode_targets(features, &dataset.meta.normalization),
            box_present: dataset.meta.variant.box_label().map(|_| true),
        }
    }

    fn any_present(&self) -> bool {
        self.people.iter().any(|t| t.present) || self.box_present == Some(true)
    }
}

/// EA value per label; absent targets get `-inf`.
pub fn ea_score(targets: &FrameTargets, w: &HeuristicWeights) -> Result<Vec<f64>, BaselineError> {
    if !targets.any_present() {
        return Err(BaselineError::NoPresentTarget);
    }
    let mut out: Vec<f64> = targets
        .people
        .iter()
        .map(|t| if t.present { w.score(t) } else { f64::NEG_INFINITY })
        .collect();
    if let Some(present) = targets.box_present {
        out.push(if present { w.box_weight } else { f64::NEG_INFINITY });
    }
    Ok(out)
}

fn log_ea(targets: &FrameTargets, w: &HeuristicWeights) -> Vec<f64> {
    let mut out = w.label_log_scores(&targets.people, false);
    if let Some(present) = targets.box_present {
        out.push(if present { w.box_weight.ln() } else { f64::NEG_INFINITY });
    }
    out
}

/// Argmax of EA (computed in log space so product scores cannot overflow);
/// ties go to the lowest label. When every present target scores zero the
/// lowest present target wins.
pub fn predict(targets: &FrameTargets, w: &HeuristicWeights) -> Result<usize, BaselineError> {
    if !targets.any_present() {
        return Err(BaselineError::NoPresentTarget);
    }
    let scores = log_ea(targets, w);
    let best = argmax(&scores).expect("non-empty label set");
    if scores[best] > f64::NEG_INFINITY {
        return Ok(best);
    }
    let first_person = targets.people.iter().position(|t| t.present);
    Ok(first_person.unwrap_or(targets.people.len()))
}

pub fn predict_frame(frame: &SceneFrame, w: &HeuristicWeights) -> Result<usize, BaselineError> {
    predict(&FrameTargets::from_frame(frame), w)
}

/// A distinct (label frame, label) pair and how often it occurs.
#[derive(Debug, Clone)]
pub struct FrameCase {
    pub targets: FrameTargets,
    pub label: usize,
    pub count: usize,
}

/// Collapses the examples at `indices` to distinct cases keyed by the
/// window's last frame and label.
pub fn frame_cases(dataset: &Dataset, indices: &[usize]) -> Vec<FrameCase> {
    let mut slot: HashMap<(Vec<u32>, usize), usize> = HashMap::new();
    let mut cases: Vec<FrameCase> = Vec::new();
    let variant: Variant = dataset.meta.variant;
    for &i in indices {
        let row = dataset.last_frame(i);
        let label = dataset.example(i).label;
        let key = (row.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), label);
        match slot.get(&key) {
            Some(&k) => cases[k].count += 1,
            None => {
                let features = FrameFeatures::from_flat(variant, true, row.iter().map(|&v| f64::from(v)).collect())
                    .expect("dataset row width matches variant");
                slot.insert(key, cases.len());
                cases.push(FrameCase {
                    targets: FrameTargets::from_features(&features, dataset),
                    label,
                    count: 1,
                });
            }
        }
    }
    cases
}

/// Weighted top-1 accuracy of `w` over `cases`.
pub fn case_accuracy(cases: &[FrameCase], w: &HeuristicWeights) -> f64 {
    let total: usize = cases.iter().map(|c| c.count).sum();
    if total == 0 {
        return 0.0;
    }
    let hits: usize = cases
        .iter()
        .filter(|c| predict(&c.targets, w) == Ok(c.label))
        .map(|c| c.count)
        .sum();
    hits as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Standard deviation of the log-space (and alpha) mutation step.
    pub mutation_sigma: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub tournament: usize,
    /// Best individuals copied unchanged into the next generation.
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 60,
            generations: 200,
            mutation_sigma: 0.3,
            mutation_rate: 0.2,
            crossover_rate: 0.9,
            tournament: 3,
            elitism: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub weights: HeuristicWeights,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
    /// Best fitness after each generation (index 0 is the initial population).
    pub best_fitness: Vec<f64>,
}

const GENES: usize = 11;

/// Genome: ln of the 8 cue weights, ln box weight, alpha, ln sigma.
fn decode(genome: &[f64; GENES], form: AttentionForm, mask: CueSet) -> HeuristicWeights {
    let mut w = Attention::new(form);
    for (k, g) in genome[..8].iter().enumerate() {
        w.cue_weights.0[k] = g.exp();
    }
    w.box_weight = genome[8].exp();
    w.distance_decay = genome[9];
    w.angle_width_deg = genome[10].exp();
    w.cue_mask = mask;
    w
}

fn clamp_genome(g: &mut [f64; GENES]) {
    g[9] = g[9].clamp(DECAY_BOUNDS.0, DECAY_BOUNDS.1);
    g[10] = g[10].clamp(WIDTH_BOUNDS_DEG.0.ln(), WIDTH_BOUNDS_DEG.1.ln());
}

fn random_genome(rng: &mut ChaCha8Rng) -> [f64; GENES] {
    let mut g = [0.0; GENES];
    for v in g[..9].iter_mut() {
        *v = rng.gen_range((0.1f64).ln()..(10.0f64).ln());
    }
    g[9] = rng.gen_range(DECAY_BOUNDS.0..DECAY_BOUNDS.1);
    g[10] = rng.gen_range(WIDTH_BOUNDS_DEG.0.ln()..WIDTH_BOUNDS_DEG.1.ln());
    g
}

/// Fits a heuristic to `train` cases by maximizing top-1 accuracy.
pub fn fit_ga_cases(
    train: &[FrameCase],
    heldout: Option<&[FrameCase]>,
    form: AttentionForm,
    mask: CueSet,
    cfg: &GaConfig,
) -> Result<GaResult, BaselineError> {
    if train.is_empty() || cfg.population == 0 {
        return Err(BaselineError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step = Normal::new(0.0, cfg.mutation_sigma.max(0.0)).expect("finite sigma");
    let fitness = |g: &[f64; GENES]| case_accuracy(train, &decode(g, form, mask));

    let mut pop: Vec<([f64; GENES], f64)> = (0..cfg.population)
        .map(|_| {
            let g = random_genome(&mut rng);
            (g, fitness(&g))
        })
        .collect();
    let rank = |pop: &mut Vec<([f64; GENES], f64)>| pop.sort_by(|a, b| b.1.total_cmp(&a.1));
    rank(&mut pop);
    let mut best_fitness = vec![pop[0].1];
    let elite = cfg.elitism.min(cfg.population);
    for _ in 0..cfg.generations {
        let mut next: Vec<([f64; GENES], f64)> = pop[..elite].to_vec();
        while next.len() < cfg.population {
            let pick = |rng: &mut ChaCha8Rng| {
                (0..cfg.tournament.max(1))
                    .map(|_| pop.choose(rng).expect("non-empty population"))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("at least one contestant")
                    .0
            };
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            let mut child = a;
            if rng.gen_bool(cfg.crossover_rate.clamp(0.0, 1.0)) {
                for (k, c) in child.iter_mut().enumerate() {
                    if rng.gen_bool(0.5) {
                        *c = b[k];
                    }
                }
            }
            for c in child.iter_mut() {
                if rng.gen_bool(cfg.mutation_rate.clamp(0.0, 1.0)) {
                    *c += step.sample(&mut rng);
                }
            }
            clamp_genome(&mut child);
            let f = fitness(&child);
            next.push((child, f));
        }
        pop = next;
        rank(&mut pop);
        best_fitness.push(pop[0].1);
    }
    let weights = decode(&pop[0].0, form, mask);
    Ok(GaResult {
        weights,
        train_accuracy: pop[0].1,
        heldout_accuracy: heldout.map(|h| case_accuracy(h, &weights)),
        best_fitness,
    })
}

/// [`fit_ga_cases`] over dataset examples.
pub fn fit_ga(
    dataset: &Dataset,
    train_idx: &[usize],
    heldout_idx: Option<&[usize]>,
    form: AttentionForm,
    mask: CueSet,
    cfg: &GaConfig,
) -> Result<GaResult, BaselineError> {
    let train = frame_cases(dataset, train_idx);
    let heldout = heldout_idx.map(|h| frame_cases(dataset, h));
    fit_ga_cases(&train, heldout.as_deref(), form, mask, cfg)
}
