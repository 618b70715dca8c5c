//! Synthetic gazers with planted attention parameters.
//!
//! A persona scores every target with an [`Attention`] model, picks one per
//! tick (argmax at temperature 0, otherwise a softmax over log scores), and
//! emits a gaze sample inside the chosen target's region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{argmax, Attention, AttentionForm, CueWeights};
use crate::features::{
    decode_targets, encode_frame, resolve_label, window_dataset, Dataset, FeatureError,
    FrameFeatures, GazePayload, GazeSample, LabelGeometry, LabeledFrame, Normalization,
};
use crate::scene::{Cue, SceneFrame, TargetView, Timeline, Variant};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("target is not present")]
    AbsentTarget,
    #[error("invalid persona: {0}")]
    InvalidPersona(String),
    #[error("no personas given")]
    NoPersonas,
    #[error(transparent)]
    Features(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazerPersona {
    #[serde(default)]
    pub name: String,
    #[serde(flatten)]
    pub attention: Attention,
    /// Softmax temperature over log salience; 0 picks the argmax.
    pub temperature: f64,
    /// Probability of keeping the previous target while it stays present.
    pub p_stay: f64,
    pub noise_rate: f64,
    pub latency_ticks: usize,
    pub seed: u64,
}

impl GazerPersona {
    /// Reference product-form gazer used for planted-parameter corpora.
    pub fn planted() -> Self {
        let mut w = CueWeights::uniform(1.0);
        for (cue, v) in [
            (Cue::Waving, 4.0),
            (Cue::Pointing, 3.0),
            (Cue::Talking, 2.5),
            (Cue::Entering, 2.2),
            (Cue::Leaving, 1.6),
            (Cue::CrossedArms, 1.3),
            (Cue::Conversation, 2.0),
            (Cue::Moving, 1.5),
        ] {
            w.set(cue, v);
        }
        Self {
            name: "planted".into(),
            attention: Attention {
                form: AttentionForm::Product,
                cue_weights: w,
                box_weight: 0.5,
                distance_decay: 0.35,
                angle_width_deg: 55.0,
                cue_mask: crate::attention::all_cues(),
            },
            temperature: 0.3,
            p_stay: 0.0,
            noise_rate: 0.0,
            latency_ticks: 3,
            seed: 0,
        }
    }

    /// Noise-free argmax gazer: every label is a function of the scene.
    pub fn deterministic(mut self) -> Self {
        self.temperature = 0.0;
        self.p_stay = 0.0;
        self.noise_rate = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |msg: String| Err(OracleError::InvalidPersona(msg));
        let a = &self.attention;
        if a.cue_weights.0.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return bad("cue weights must be positive".into());
        }
        if !(a.box_weight > 0.0) {
            return bad("box_weight must be positive".into());
        }
        if !(a.distance_decay >= 0.0) {
            return bad("distance_decay must be non-negative".into());
        }
        if !(a.angle_width_deg > 0.0) {
            return bad("angle_width_deg must be positive".into());
        }
        if !(0.0..1.0).contains(&self.p_stay) {
            return bad(format!("p_stay {} outside [0, 1)", self.p_stay));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be non-negative".into());
        }
        Ok(())
    }

    /// Log salience per label for a set of person targets; the 2D box is
    /// appended when `with_box`.
    pub fn label_log_scores(&self, targets: &[TargetView], with_box: bool) -> Vec<f64> {
        self.attention.label_log_scores(targets, with_box)
    }

    /// Target choice probabilities: a one-hot argmax at temperature 0,
    /// otherwise `softmax(log_score / temperature)`.
    pub fn choice_probs(&self, log_scores: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; log_scores.len()];
        if log_scores.iter().all(|v| *v == f64::NEG_INFINITY) {
            return p;
        }
        if self.temperature == 0.0 {
            if let Some(i) = argmax(log_scores) {
                p[i] = 1.0;
            }
            return p;
        }
        let max = log_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (pi, v) in p.iter_mut().zip(log_scores) {
            *pi = ((v - max) / self.temperature).exp();
        }
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        p
    }
}

/// Salience of one present target under a persona.
pub fn salience(target: &TargetView, persona: &GazerPersona) -> Result<f64, OracleError> {
    if !target.present {
        return Err(OracleError::AbsentTarget);
    }
    Ok(persona.attention.score(target))
}

/// Log scores of every label of a scene frame.
pub fn frame_log_scores(frame: &SceneFrame, persona: &GazerPersona) -> Vec<f64> {
    let variant = frame.variant();
    let mut scores = persona.label_log_scores(&frame.targets(), false);
    if let Some(b) = variant.box_label() {
        scores.push(if frame.is_target_present(b) {
            persona.attention.box_weight.ln()
        } else {
            f64::NEG_INFINITY
        });
    }
    scores
}

/// Per-tick gaze emissions and the targets the gazer intended.
#[derive(Debug, Clone, PartialEq)]
pub struct GazerTrace {
    pub samples: Vec<GazeSample>,
    pub labels: Vec<Option<usize>>,
}

fn sample_index(probs: &[f64], u: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

/// Gaze sample inside `label`'s region, jittered by less than half the
/// region width and less than half the gap to any other target centre.
fn emit_on_target(
    frame: &SceneFrame,
    label: usize,
    geom: &LabelGeometry,
    rng: &mut ChaCha8Rng,
) -> GazePayload {
    let variant = frame.variant();
    let center = frame.label_angle(label).unwrap_or(0.0);
    let nearest_other = (0..variant.label_count())
        .filter(|&l| l != label)
        .filter_map(|l| frame.label_angle(l))
        .map(|a| (a - center).abs())
        .fold(f64::INFINITY, f64::min);
    let bound = (geom.tolerance_deg(variant, label) / 2.0).min(0.45 * nearest_other);
    let angle = center + if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 };
    match variant {
        Variant::TwoD => GazePayload::Screen {
            x: geom.angle_to_x(angle),
            y: rng.gen_range(0.2..0.8) * geom.screen_height_px,
        },
        Variant::ThreeD => GazePayload::Yaw { deg: angle },
    }
}

fn emit_noise(variant: Variant, geom: &LabelGeometry, rng: &mut ChaCha8Rng) -> GazePayload {
    match variant {
        // below the screen edge
        Variant::TwoD => GazePayload::Screen {
            x: rng.gen_range(0.0..geom.screen_width_px),
            y: geom.screen_height_px * rng.gen_range(1.05..1.3),
        },
        // beyond the outermost station plus tolerance
        Variant::ThreeD => {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            GazePayload::Yaw {
                deg: side * rng.gen_range(75.0..120.0),
            }
        }
    }
}

/// Simulates one gazer over a timeline, one sample per tick.
pub fn simulate_gazer(
    timeline: &Timeline,
    persona: &GazerPersona,
    geom: &LabelGeometry,
) -> Result<GazerTrace, OracleError> {
    persona.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(persona.seed);
    let n = timeline.frames.len();
    let mut decisions: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (t, frame) in timeline.frames.iter().enumerate() {
        let prev = decisions.last().copied().flatten();
        let stay = rng.gen::<f64>() < persona.p_stay;
        let u = rng.gen::<f64>();
        let decision = match prev {
            Some(p) if stay && frame.is_target_present(p) => Some(p),
            _ => sample_index(&persona.choice_probs(&frame_log_scores(frame, persona)), u),
        };
        decisions.push(decision);
        let delayed = decisions[t.saturating_sub(persona.latency_ticks)];
        let target = delayed
            .filter(|&l| frame.is_target_present(l))
            .or(decision);
        let noisy = rng.gen::<f64>() < persona.noise_rate;
        let (payload, label) = match target {
            Some(l) if !noisy => (emit_on_target(frame, l, geom, &mut rng), Some(l)),
            _ => (emit_noise(timeline.variant, geom, &mut rng), None),
        };
        samples.push(GazeSample {
            t: frame.t_s,
            payload,
            valid: true,
        });
        labels.push(label);
    }
    Ok(GazerTrace { samples, labels })
}

/// Encodes a timeline and labels each frame by resolving the gaze sample of
/// the same tick.
pub fn label_trace(
    timeline: &Timeline,
    samples: &[GazeSample],
    geom: &LabelGeometry,
) -> Vec<LabeledFrame> {
    timeline
        .frames
        .iter()
        .zip(samples)
        .map(|(frame, s)| LabeledFrame {
            tick: frame.tick,
            situation_id: frame.situation_id,
            features: encode_frame(frame),
            label: resolve_label(s, frame, geom),
            valid: s.valid,
        })
        .collect()
}

/// Windowed corpus over all personas, with persona parameters recorded in
/// the dataset provenance.
pub fn synth_corpus(
    timeline: &Timeline,
    personas: &[GazerPersona],
    m: usize,
    geom: &LabelGeometry,
) -> Result<Dataset, OracleError> {
    if personas.is_empty() {
        return Err(OracleError::NoPersonas);
    }
    let norm = Normalization::default();
    let mut corpus: Option<Dataset> = None;
    for persona in personas {
        let trace = simulate_gazer(timeline, persona, geom)?;
        let ds = window_dataset(&label_trace(timeline, &trace.samples, geom), m, 1, &norm)?;
        match &mut corpus {
            None => corpus = Some(ds),
            Some(c) => c.append(ds)?,
        }
    }
    let mut corpus = corpus.expect("at least one persona");
    corpus.meta.source = "oracle".into();
    corpus.meta.seed = Some(personas[0].seed);
    corpus.meta.provenance = serde_json::json!({ "personas": personas });
    Ok(corpus)
}

/// `n` personas around `base`, each parameter scaled by a log-uniform
/// factor within `±jitter` and seeded from `seed`.
pub fn persona_family(base: &GazerPersona, n: usize, jitter: f64, seed: u64) -> Vec<GazerPersona> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = |rng: &mut ChaCha8Rng, v: f64| {
        if jitter > 0.0 {
            v * rng.gen_range(-jitter..=jitter).exp()
        } else {
            v
        }
    };
    (0..n)
        .map(|i| {
            let mut p = base.clone();
            p.name = format!("{}-{i:02}", base.name);
            for w in p.attention.cue_weights.0.iter_mut() {
                *w = scale(&mut rng, *w);
            }
            p.attention.box_weight = scale(&mut rng, p.attention.box_weight);
            p.attention.distance_decay = scale(&mut rng, p.attention.distance_decay);
            p.attention.angle_width_deg = scale(&mut rng, p.attention.angle_width_deg);
            p.seed = rng.gen();
            p
        })
        .collect()
}

/// Label probabilities the persona would assign given an encoded window:
/// the decision frame is `latency_ticks - 1` frames before the window's last
/// frame, matching the delay between decision and emitted gaze.
pub fn oracle_window_probs(
    persona: &GazerPersona,
    variant: Variant,
    norm: &Normalization,
    window: &[f32],
) -> Vec<f64> {
    let l = variant.feature_width();
    let m = window.len() / l;
    let back = persona.latency_ticks.saturating_sub(1).min(m - 1);
    let row = &window[(m - 1 - back) * l..(m - back) * l];
    let features = FrameFeatures::from_flat(
        variant,
        true,
        row.iter().map(|&v| f64::from(v)).collect(),
    )
    .expect("row width matches variant");
    let targets = decode_targets(&features, norm);
    let scores = persona.label_log_scores(&targets, variant.box_label().is_some());
    persona.choice_probs(&scores)
}
