//! Real-time head-pan controller: a sliding feature window, a predictor,
//! dwell/margin hysteresis and a pan-rate limit.

use std::collections::VecDeque;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::argmax;
use crate::baselines::{predict as baseline_predict, FrameTargets, HeuristicWeights};
use crate::features::{decode_targets, encode_normalized, FrameFeatures, Normalization};
use crate::models::{ModelError, SequenceModel};
use crate::oracle::{oracle_window_probs, GazerPersona};
use crate::scene::{SceneFrame, Variant};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("frame variant {found} does not match controller variant {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("dt must be positive, got {0}")]
    BadDt(f64),
    #[error("invalid policy: {0}")]
    BadPolicy(String),
    #[error("predictor window {predictor} differs from policy m = {policy}")]
    WindowMismatch { predictor: usize, policy: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerPolicy {
    pub m: usize,
    pub min_dwell_s: f64,
    /// Probability lead that allows a switch before the dwell time elapses.
    pub switch_margin: f64,
    pub max_pan_rate_dps: f64,
    pub warmup_pan_deg: f64,
}

impl Default for ControllerPolicy {
    fn default() -> Self {
        Self {
            m: 24,
            min_dwell_s: 0.5,
            switch_margin: 0.1,
            max_pan_rate_dps: 120.0,
            warmup_pan_deg: 0.0,
        }
    }
}

impl ControllerPolicy {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |s: &str| Err(ControllerError::BadPolicy(s.into()));
        if self.m == 0 {
            return bad("m must be positive");
        }
        if !(self.min_dwell_s >= 0.0) || !(self.switch_margin >= 0.0) {
            return bad("min_dwell_s and switch_margin must be non-negative");
        }
        if !(self.max_pan_rate_dps > 0.0) {
            return bad("max_pan_rate_dps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeCommand {
    pub tick: usize,
    pub t_s: f64,
    pub target: Option<usize>,
    pub pan_deg: f64,
    pub pan_rate_dps: f64,
    pub probs: Vec<f64>,
}

/// Anything that maps a normalized `m x L` window to label probabilities.
pub trait Predictor: Send + Sync {
    fn variant(&self) -> Variant;
    fn window_len(&self) -> usize;
    fn predict(&self, window: &[f32]) -> Result<Vec<f64>, ControllerError>;
}

pub struct ModelPredictor {
    pub model: SequenceModel<f32>,
    pub variant: Variant,
}

impl Predictor for ModelPredictor {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn window_len(&self) -> usize {
        self.model.config.dims().0
    }

    fn predict(&self, window: &[f32]) -> Result<Vec<f64>, ControllerError> {
        Ok(self.model.predict_windows(window)?.remove(0))
    }
}

/// Effective-attention heuristic on the window's last frame; all mass on
/// the predicted label.
pub struct BaselinePredictor {
    pub weights: HeuristicWeights,
    pub variant: Variant,
    pub m: usize,
    pub normalization: Normalization,
}

impl Predictor for BaselinePredictor {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn window_len(&self) -> usize {
        self.m
    }

    fn predict(&self, window: &[f32]) -> Result<Vec<f64>, ControllerError> {
        let l = self.variant.feature_width();
        let last = &window[window.len() - l..];
        let features = FrameFeatures::from_flat(self.variant, true, last.iter().map(|&v| f64::from(v)).collect())
            .expect("row width matches variant");
        let targets = FrameTargets {
            people: decode_targets(&features, &self.normalization),
            box_present: self.variant.box_label().map(|_| true),
        };
        let mut probs = vec![0.0; self.variant.label_count()];
        if let Ok(label) = baseline_predict(&targets, &self.weights) {
            probs[label] = 1.0;
        }
        Ok(probs)
    }
}

/// The synthetic gazer's own choice distribution.
pub struct OraclePredictor {
    pub persona: GazerPersona,
    pub variant: Variant,
    pub m: usize,
    pub normalization: Normalization,
}

impl Predictor for OraclePredictor {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn window_len(&self) -> usize {
        self.m
    }

    fn predict(&self, window: &[f32]) -> Result<Vec<f64>, ControllerError> {
        Ok(oracle_window_probs(&self.persona, self.variant, &self.normalization, window))
    }
}

pub struct Controller<'p> {
    policy: ControllerPolicy,
    predictor: &'p dyn Predictor,
    normalization: Normalization,
    window: VecDeque<Vec<f32>>,
    target: Option<usize>,
    last_switch_t: f64,
    pan_deg: f64,
    t_s: f64,
    tick: usize,
}

impl<'p> Controller<'p> {
    pub fn new(
        policy: ControllerPolicy,
        predictor: &'p dyn Predictor,
        normalization: Normalization,
    ) -> Result<Self, ControllerError> {
        policy.validate()?;
        if predictor.window_len() != policy.m {
            return Err(ControllerError::WindowMismatch {
                predictor: predictor.window_len(),
                policy: policy.m,
            });
        }
        Ok(Self {
            policy,
            predictor,
            normalization,
            window: VecDeque::with_capacity(policy.m),
            target: None,
            last_switch_t: f64::NEG_INFINITY,
            pan_deg: policy.warmup_pan_deg,
            t_s: 0.0,
            tick: 0,
        })
    }

    pub fn policy(&self) -> &ControllerPolicy {
        &self.policy
    }

    pub fn variant(&self) -> Variant {
        self.predictor.variant()
    }

    /// Replaces the policy; the window and dwell bookkeeping are kept.
    pub fn set_policy(&mut self, policy: ControllerPolicy) -> Result<(), ControllerError> {
        policy.validate()?;
        if policy.m != self.policy.m {
            return Err(ControllerError::WindowMismatch {
                predictor: self.policy.m,
                policy: policy.m,
            });
        }
        self.policy = policy;
        Ok(())
    }

    pub fn step(&mut self, frame: &SceneFrame, dt: f64) -> Result<GazeCommand, ControllerError> {
        let variant = self.predictor.variant();
        if frame.variant() != variant {
            return Err(ControllerError::VariantMismatch {
                expected: variant,
                found: frame.variant(),
            });
        }
        if !(dt > 0.0) {
            return Err(ControllerError::BadDt(dt));
        }
        if self.window.len() == self.policy.m {
            self.window.pop_front();
        }
        self.window.push_back(encode_normalized(frame, &self.normalization).to_f32());
        if self.tick > 0 {
            self.t_s += dt;
        }

        let (goal, probs) = if self.window.len() < self.policy.m {
            self.target = None;
            (Some(self.policy.warmup_pan_deg), vec![0.0; variant.label_count()])
        } else {
            let flat: Vec<f32> = self.window.iter().flatten().copied().collect();
            let probs = self.predictor.predict(&flat)?;
            let top = argmax(&probs).expect("at least one label");
            let switch = match self.target {
                None => true,
                Some(cur) if cur == top => false,
                Some(cur) => {
                    probs[top] - probs[cur] >= self.policy.switch_margin
                        || self.t_s - self.last_switch_t >= self.policy.min_dwell_s
                }
            };
            if switch {
                self.target = Some(top);
                self.last_switch_t = self.t_s;
            }
            (self.target.and_then(|t| frame.label_angle(t)), probs)
        };

        let max_step = self.policy.max_pan_rate_dps * dt;
        let delta = goal.map_or(0.0, |g| (g - self.pan_deg).clamp(-max_step, max_step));
        self.pan_deg += delta;
        let cmd = GazeCommand {
            tick: self.tick,
            t_s: self.t_s,
            target: self.target,
            pan_deg: self.pan_deg,
            pan_rate_dps: delta / dt,
            probs,
        };
        self.tick += 1;
        Ok(cmd)
    }
}

/// Per-step wall-clock compute time of a stream run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    pub latencies: Vec<Duration>,
}

impl StreamStats {
    pub fn max(&self) -> Duration {
        self.latencies.iter().copied().max().unwrap_or_default()
    }

    pub fn mean(&self) -> Duration {
        if self.latencies.is_empty() {
            return Duration::ZERO;
        }
        self.latencies.iter().sum::<Duration>() / self.latencies.len() as u32
    }

    /// Latency at quantile `q` in `[0, 1]`.
    pub fn quantile(&self, q: f64) -> Duration {
        let mut v = self.latencies.clone();
        v.sort_unstable();
        if v.is_empty() {
            return Duration::ZERO;
        }
        v[((v.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize]
    }
}

/// Steps the controller over `frames` at `1 / fps`; with `realtime` each
/// tick waits for its wall-clock slot.
pub fn run_stream(
    controller: &mut Controller<'_>,
    frames: &[SceneFrame],
    fps: f64,
    realtime: bool,
    sink: &mut dyn FnMut(&GazeCommand) -> Result<(), ControllerError>,
) -> Result<StreamStats, ControllerError> {
    let dt = 1.0 / fps;
    let start = Instant::now();
    let mut stats = StreamStats::default();
    for (i, frame) in frames.iter().enumerate() {
        if realtime {
            let due = start + Duration::from_secs_f64(i as f64 * dt);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let t0 = Instant::now();
        let cmd = controller.step(frame, dt)?;
        stats.latencies.push(t0.elapsed());
        sink(&cmd)?;
    }
    Ok(stats)
}

pub fn write_command<W: Write>(w: &mut W, cmd: &GazeCommand) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, cmd)?;
    w.write_all(b"\n")
}
