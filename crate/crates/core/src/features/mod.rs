//! Frame encoding, gaze resampling and labelling, sliding windows and
//! situation-partitioned folds.

mod dataset;
mod folds;
mod gaze;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{CueSet, People, SceneFrame, TargetView, Variant};
use crate::scene::{CharacterState2D, CharacterState3D, Characteristic, Cue, Movement};

pub use dataset::{
    window_dataset, Dataset, DatasetMeta, LabeledFrame, Subset, WindowedExample,
    DATASET_SCHEMA_VERSION,
};
pub use folds::{plan_folds, plan_folds_for_ids, FoldPlan};
pub use gaze::{
    resample_eyelink, resample_vr, resolve_label, GazePayload, GazeSample, LabelGeometry,
    EYELINK_HZ, VR_TICK_S,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("no gaze samples")]
    EmptyInput,
    #[error("need at least {needed} frames for windows of {m}, got {got}")]
    TooShort { m: usize, needed: usize, got: usize },
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("{found} distinct situations, need at least {k}")]
    TooFewSituations { k: usize, found: usize },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("frame variant {found} does not match dataset variant {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for FeatureError {
    fn from(e: std::io::Error) -> Self {
        FeatureError::Io(e.to_string())
    }
}

/// Column scales used to map raw features into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    pub distance_m: f64,
    /// Angles map through `(angle / angle_deg + 1) / 2`.
    pub angle_deg: f64,
    pub movement: f64,
    pub characteristic: f64,
    pub pointed_at: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            distance_m: 5.0,
            angle_deg: 90.0,
            movement: 4.0,
            characteristic: 8.0,
            pointed_at: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Flag,
    Distance,
    Angle,
    Movement,
    Characteristic,
    PointedAt,
}

const COLUMNS_2D: [Column; 7] = [
    Column::Flag,
    Column::Distance,
    Column::Flag,
    Column::Flag,
    Column::Flag,
    Column::Angle,
    Column::Movement,
];

const COLUMNS_3D: [Column; 6] = [
    Column::Flag,
    Column::Distance,
    Column::Characteristic,
    Column::Flag,
    Column::PointedAt,
    Column::Angle,
];

fn columns(variant: Variant) -> &'static [Column] {
    match variant {
        Variant::TwoD => &COLUMNS_2D,
        Variant::ThreeD => &COLUMNS_3D,
    }
}

impl Normalization {
    fn forward(&self, col: Column, v: f64) -> f64 {
        match col {
            Column::Flag => v,
            Column::Distance => v / self.distance_m,
            Column::Angle => (v / self.angle_deg + 1.0) / 2.0,
            Column::Movement => v / self.movement,
            Column::Characteristic => v / self.characteristic,
            Column::PointedAt => v / self.pointed_at,
        }
    }

    fn inverse(&self, col: Column, v: f64) -> f64 {
        match col {
            Column::Flag => v,
            Column::Distance => v * self.distance_m,
            Column::Angle => (2.0 * v - 1.0) * self.angle_deg,
            Column::Movement => v * self.movement,
            Column::Characteristic => v * self.characteristic,
            Column::PointedAt => v * self.pointed_at,
        }
    }
}

/// Per-frame feature matrix: one row per person slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub variant: Variant,
    pub normalized: bool,
    values: Vec<f64>,
}

impl FrameFeatures {
    pub fn rows(&self) -> usize {
        self.variant.max_people()
    }

    pub fn cols(&self) -> usize {
        self.variant.features_per_person()
    }

    /// Row-major flattening of length `L`.
    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn from_flat(variant: Variant, normalized: bool, values: Vec<f64>) -> Option<Self> {
        (values.len() == variant.feature_width()).then_some(Self {
            variant,
            normalized,
            values,
        })
    }

    pub fn from_matrix(variant: Variant, normalized: bool, rows: &[Vec<f64>]) -> Option<Self> {
        if rows.len() != variant.max_people()
            || rows.iter().any(|r| r.len() != variant.features_per_person())
        {
            return None;
        }
        Self::from_flat(variant, normalized, rows.concat())
    }

    pub fn normalize(&self, norm: &Normalization) -> FrameFeatures {
        self.rescale(norm, true)
    }

    pub fn denormalize(&self, norm: &Normalization) -> FrameFeatures {
        self.rescale(norm, false)
    }

    fn rescale(&self, norm: &Normalization, forward: bool) -> FrameFeatures {
        if self.normalized == forward {
            return self.clone();
        }
        let cols = columns(self.variant);
        let mut values = self.values.clone();
        for row in values.chunks_mut(cols.len()) {
            if row[0] == 0.0 {
                // absent rows stay all-zero in both encodings
                row.fill(0.0);
                continue;
            }
            for (v, &col) in row.iter_mut().zip(cols) {
                *v = if forward {
                    norm.forward(col, *v)
                } else {
                    norm.inverse(col, *v)
                };
            }
        }
        FrameFeatures {
            variant: self.variant,
            normalized: forward,
            values,
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn row_2d(c: &CharacterState2D) -> [f64; 7] {
    if !c.present {
        return [0.0; 7];
    }
    [
        1.0,
        c.distance_m,
        flag(c.waving),
        flag(c.pointing),
        flag(c.talking),
        c.angle_deg,
        f64::from(c.movement.code()),
    ]
}

fn row_3d(c: &CharacterState3D) -> [f64; 6] {
    if !c.present {
        return [0.0; 6];
    }
    [
        1.0,
        c.distance_m,
        f64::from(c.characteristic.code()),
        flag(c.talking),
        f64::from(c.pointed_at_count),
        c.angle_deg,
    ]
}

/// Raw feature matrix of a frame; absent people give all-zero rows.
pub fn encode_frame(frame: &SceneFrame) -> FrameFeatures {
    let values = match &frame.people {
        People::TwoD(cs) => cs.iter().flat_map(row_2d).collect(),
        People::ThreeD(cs) => cs.iter().flat_map(row_3d).collect(),
    };
    FrameFeatures {
        variant: frame.variant(),
        normalized: false,
        values,
    }
}

/// Encodes and normalizes in one step, as fed to the classifiers.
pub fn encode_normalized(frame: &SceneFrame, norm: &Normalization) -> FrameFeatures {
    encode_frame(frame).normalize(norm)
}

/// Snaps decoded values to a 1e-4 grid so f32 round-off cannot break
/// exact ties between mirror-image targets.
fn snap(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Recovers per-slot target views from an encoded feature row vector.
pub fn decode_targets(features: &FrameFeatures, norm: &Normalization) -> Vec<TargetView> {
    let raw = features.denormalize(norm);
    (0..raw.rows())
        .map(|r| {
            let row: Vec<f64> = raw.row(r).iter().map(|&v| snap(v)).collect();
            let present = row[0] >= 0.5;
            let mut cues = CueSet::EMPTY;
            let (distance_m, angle_deg) = match raw.variant {
                Variant::TwoD => {
                    cues.set(Cue::Waving, row[2] >= 0.5);
                    cues.set(Cue::Pointing, row[3] >= 0.5);
                    cues.set(Cue::Talking, row[4] >= 0.5);
                    let movement = Movement::from_code(row[6].round() as u8);
                    cues.set(Cue::Entering, movement.is_some_and(Movement::is_entering));
                    cues.set(Cue::Leaving, movement.is_some_and(Movement::is_leaving));
                    (row[1], row[5])
                }
                Variant::ThreeD => {
                    let state = CharacterState3D {
                        present,
                        distance_m: row[1],
                        characteristic: Characteristic::from_code(row[2].round() as u8)
                            .unwrap_or_default(),
                        talking: row[3] >= 0.5,
                        pointed_at_count: row[4].round() as u8,
                        angle_deg: row[5],
                    };
                    cues = state.cues();
                    (row[1], row[5])
                }
            };
            TargetView {
                present,
                distance_m,
                angle_deg,
                cues: if present { cues } else { CueSet::EMPTY },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{compile_timeline, enumerate_situations_2d, enumerate_situations_3d};
    use proptest::prelude::*;

    fn frame_2d(c: CharacterState2D) -> SceneFrame {
        let mut f = SceneFrame::empty(Variant::TwoD, 0, 0.0);
        if let People::TwoD(cs) = &mut f.people {
            cs[1] = c;
        }
        f
    }

    #[test]
    fn absent_rows_are_zero() {
        let f = SceneFrame::empty(Variant::TwoD, 0, 0.0);
        let enc = encode_frame(&f);
        assert_eq!(enc.flat(), &[0.0; 28]);
        assert_eq!(enc.normalize(&Normalization::default()).flat(), &[0.0; 28]);
    }

    #[test]
    fn two_d_row_order() {
        let f = frame_2d(CharacterState2D {
            present: true,
            distance_m: 1.5,
            waving: true,
            pointing: false,
            talking: true,
            angle_deg: -30.0,
            movement: Movement::Standing,
        });
        assert_eq!(encode_frame(&f).row(1), &[1.0, 1.5, 1.0, 0.0, 1.0, -30.0, 0.0]);
    }

    #[test]
    fn three_d_row_order() {
        let mut f = SceneFrame::empty(Variant::ThreeD, 0, 0.0);
        if let People::ThreeD(cs) = &mut f.people {
            cs[2] = CharacterState3D {
                present: true,
                distance_m: 3.0,
                characteristic: Characteristic::Pointing,
                talking: false,
                pointed_at_count: 1,
                angle_deg: 45.0,
            };
        }
        assert_eq!(encode_frame(&f).row(2), &[1.0, 3.0, 8.0, 0.0, 1.0, 45.0]);
    }

    #[test]
    fn normalized_timelines_stay_in_unit_interval() {
        let norm = Normalization::default();
        for tl in [
            compile_timeline(&enumerate_situations_2d(), 24.0).unwrap(),
            compile_timeline(&enumerate_situations_3d(), 25.0).unwrap(),
        ] {
            for f in tl.frames.iter().step_by(7) {
                let enc = encode_normalized(f, &norm);
                assert_eq!(enc.flat().len(), tl.variant.feature_width());
                assert!(enc.flat().iter().all(|v| (0.0..=1.0).contains(v)));
                let decoded = decode_targets(&enc, &norm);
                for (d, t) in decoded.iter().zip(f.targets()) {
                    assert_eq!(d.present, t.present);
                    if t.present {
                        assert_eq!(d.cues, t.cues);
                        assert!((d.angle_deg - t.angle_deg).abs() <= 5e-5 + 1e-12);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn flatten_round_trip(values in proptest::collection::vec(-100.0f64..100.0, 18)) {
            let f = FrameFeatures::from_flat(Variant::ThreeD, false, values).unwrap();
            let back = FrameFeatures::from_matrix(Variant::ThreeD, false, &f.matrix()).unwrap();
            prop_assert_eq!(back, f);
        }

        #[test]
        fn normalization_inverts_on_present_rows(
            dist in 0.1f64..5.0, angle in -90.0f64..90.0, mv in 0u8..5,
            wave: bool, point: bool, talk: bool,
        ) {
            let norm = Normalization::default();
            let f = frame_2d(CharacterState2D {
                present: true, distance_m: dist, waving: wave, pointing: point,
                talking: talk, angle_deg: angle, movement: Movement::from_code(mv).unwrap(),
            });
            let raw = encode_frame(&f);
            let n = raw.normalize(&norm);
            prop_assert!(n.flat().iter().all(|v| (0.0..=1.0).contains(v)));
            let back = n.denormalize(&norm);
            for (a, b) in back.flat().iter().zip(raw.flat()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn normalization_is_monotone(a in -90.0f64..90.0, b in -90.0f64..90.0) {
            let norm = Normalization::default();
            for col in [Column::Distance, Column::Angle, Column::Movement] {
                let (fa, fb) = (norm.forward(col, a), norm.forward(col, b));
                prop_assert!((a <= b) == (fa <= fb));
            }
        }
    }
}
