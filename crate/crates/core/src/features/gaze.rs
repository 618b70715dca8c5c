use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::scene::{SceneFrame, Variant};

/// Eye-tracker sampling rate of the flat-screen recordings.
pub const EYELINK_HZ: f64 = 1000.0;
/// Headset resampling grid.
pub const VR_TICK_S: f64 = 0.04;

const EYELINK_BLOCK: usize = 125;
const EYELINK_GROUPS: [usize; 3] = [42, 42, 41];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GazePayload {
    Screen { x: f64, y: f64 },
    Yaw { deg: f64 },
}

impl GazePayload {
    fn components(self) -> [f64; 2] {
        match self {
            GazePayload::Screen { x, y } => [x, y],
            GazePayload::Yaw { deg } => [deg, 0.0],
        }
    }

    fn with_components(self, c: [f64; 2]) -> Self {
        match self {
            GazePayload::Screen { .. } => GazePayload::Screen { x: c[0], y: c[1] },
            GazePayload::Yaw { .. } => GazePayload::Yaw { deg: c[0] },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub payload: GazePayload,
    pub valid: bool,
}

fn mean_sample(group: &[GazeSample]) -> GazeSample {
    let valid: Vec<&GazeSample> = group.iter().filter(|s| s.valid).collect();
    let is_valid = 2 * (group.len() - valid.len()) <= group.len();
    let source: Vec<&GazeSample> = if valid.is_empty() {
        group.iter().collect()
    } else {
        valid
    };
    let mut sum = [0.0; 2];
    for s in &source {
        let c = s.payload.components();
        sum[0] += c[0];
        sum[1] += c[1];
    }
    let n = source.len() as f64;
    GazeSample {
        t: group[0].t,
        payload: group[0].payload.with_components([sum[0] / n, sum[1] / n]),
        valid: is_valid,
    }
}

/// Downsamples a 1 kHz trace to 24 frames per second.
///
/// Each block of 125 samples becomes three frames averaging 42, 42 and 41
/// samples; a trailing partial block is dropped. A frame is invalid when more
/// than half of its group is invalid, otherwise it averages the valid samples.
pub fn resample_eyelink(samples: &[GazeSample]) -> Result<Vec<GazeSample>, FeatureError> {
    if samples.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let mut out = Vec::with_capacity(samples.len() / EYELINK_BLOCK * 3);
    for block in samples.chunks_exact(EYELINK_BLOCK) {
        let mut start = 0;
        for size in EYELINK_GROUPS {
            out.push(mean_sample(&block[start..start + size]));
            start += size;
        }
    }
    Ok(out)
}

/// Linearly interpolates a time-ordered trace onto the grid `k * tick`,
/// `k = 0..=floor(t_last / tick)`.
///
/// Grid points before the first sample, or bracketed by an invalid sample,
/// are emitted as invalid.
pub fn resample_vr(samples: &[GazeSample], tick: f64) -> Result<Vec<GazeSample>, FeatureError> {
    let first = samples.first().ok_or(FeatureError::EmptyInput)?;
    let last = samples[samples.len() - 1];
    let count = (last.t / tick + 1e-9).floor().max(-1.0) as i64 + 1;
    let mut out = Vec::with_capacity(count.max(0) as usize);
    let mut j = 0;
    for k in 0..count.max(0) {
        let t = k as f64 * tick;
        while j + 1 < samples.len() && samples[j + 1].t <= t + 1e-9 {
            j += 1;
        }
        let a = samples[j];
        let sample = if t < first.t - 1e-9 {
            GazeSample {
                t,
                payload: first.payload,
                valid: false,
            }
        } else if (a.t - t).abs() <= 1e-9 || j + 1 == samples.len() {
            GazeSample { t, ..a }
        } else {
            let b = samples[j + 1];
            let w = (t - a.t) / (b.t - a.t);
            let (ca, cb) = (a.payload.components(), b.payload.components());
            GazeSample {
                t,
                payload: a
                    .payload
                    .with_components([ca[0] + w * (cb[0] - ca[0]), ca[1] + w * (cb[1] - ca[1])]),
                valid: a.valid && b.valid,
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// Screen layout and gaze tolerances used to turn gaze into labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelGeometry {
    pub screen_width_px: f64,
    pub screen_height_px: f64,
    /// Horizontal field of view spanned by the screen width.
    pub screen_span_deg: f64,
    pub character_half_width_deg: f64,
    pub box_half_width_deg: f64,
    pub yaw_tolerance_deg: f64,
}

impl Default for LabelGeometry {
    fn default() -> Self {
        Self {
            screen_width_px: 1920.0,
            screen_height_px: 1080.0,
            screen_span_deg: 180.0,
            character_half_width_deg: 12.0,
            box_half_width_deg: 8.0,
            yaw_tolerance_deg: 15.0,
        }
    }
}

impl LabelGeometry {
    pub fn angle_to_x(&self, angle_deg: f64) -> f64 {
        self.screen_width_px / 2.0 + angle_deg * self.screen_width_px / self.screen_span_deg
    }

    pub fn x_to_angle(&self, x: f64) -> f64 {
        (x - self.screen_width_px / 2.0) * self.screen_span_deg / self.screen_width_px
    }

    /// Centre of a label's gaze region, if the target is present.
    pub fn target_payload(&self, frame: &SceneFrame, label: usize) -> Option<GazePayload> {
        let angle = frame.label_angle(label)?;
        Some(match frame.variant() {
            Variant::TwoD => GazePayload::Screen {
                x: self.angle_to_x(angle),
                y: self.screen_height_px / 2.0,
            },
            Variant::ThreeD => GazePayload::Yaw { deg: angle },
        })
    }

    /// Half-width of a label's region in degrees.
    pub fn tolerance_deg(&self, variant: Variant, label: usize) -> f64 {
        match variant {
            Variant::TwoD if Some(label) == variant.box_label() => self.box_half_width_deg,
            Variant::TwoD => self.character_half_width_deg,
            Variant::ThreeD => self.yaw_tolerance_deg,
        }
    }
}

/// Maps one gaze sample onto the label it falls on; `None` is noise.
///
/// Regions that overlap resolve to the nearest centre, ties to the lowest
/// label index.
pub fn resolve_label(sample: &GazeSample, frame: &SceneFrame, geom: &LabelGeometry) -> Option<usize> {
    if !sample.valid {
        return None;
    }
    let variant = frame.variant();
    let angle = match (variant, sample.payload) {
        (Variant::TwoD, GazePayload::Screen { x, y }) => {
            if !(0.0..=geom.screen_height_px).contains(&y) {
                return None;
            }
            geom.x_to_angle(x)
        }
        (Variant::ThreeD, GazePayload::Yaw { deg }) => deg,
        _ => return None,
    };
    let mut best: Option<(usize, f64)> = None;
    for label in 0..variant.label_count() {
        let Some(center) = frame.label_angle(label) else {
            continue;
        };
        let d = (angle - center).abs();
        if d <= geom.tolerance_deg(variant, label) + 1e-9 && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((label, d));
        }
    }
    best.map(|(l, _)| l)
}
