//! Social-scene domain model.
//!
//! Two scene variants exist. The flat-screen variant has up to four people at
//! fixed station angles plus a box straight ahead; the headset variant has up
//! to three people at -45/0/45 degrees. Situations are 5 s segments that are
//! enumerated deterministically and compiled into per-tick frames.

mod enumerate;
mod timeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use enumerate::{
    enumerate_situations_2d, enumerate_situations_3d, Activity2D, CharacterSpecs, Role3D, SituationSpec,
};
pub use timeline::{compile_timeline, frame_at, Timeline};

/// Seconds per social situation.
pub const SITUATION_S: f64 = 5.0;
pub const NEAR_M: f64 = 1.5;
pub const FAR_M: f64 = 3.0;
/// Distance at which entering people appear and leaving people vanish.
pub const OFFSTAGE_M: f64 = 5.0;

pub const STATIONS_2D: [f64; 4] = [-60.0, -30.0, 30.0, 60.0];
pub const STATIONS_3D: [f64; 3] = [-45.0, 0.0, 45.0];
pub const BOX_ANGLE_DEG: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("situations mix scene variants")]
    MixedVariant,
    #[error("no situations to compile")]
    Empty,
    #[error("time {t}s outside timeline of {duration}s")]
    OutOfRange { t: f64, duration: f64 },
    #[error("frame variant does not match {0:?}")]
    VariantMismatch(Variant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Variant {
    /// Flat-screen animation: 4 people + box, 24 fps.
    #[serde(rename = "2d")]
    TwoD,
    /// Headset animation: 3 people, 0.04 s tick.
    #[serde(rename = "3d")]
    ThreeD,
}

impl Variant {
    pub fn fps(self) -> f64 {
        match self {
            Variant::TwoD => 24.0,
            Variant::ThreeD => 25.0,
        }
    }

    pub fn max_people(self) -> usize {
        match self {
            Variant::TwoD => 4,
            Variant::ThreeD => 3,
        }
    }

    pub fn features_per_person(self) -> usize {
        match self {
            Variant::TwoD => 7,
            Variant::ThreeD => 6,
        }
    }

    /// Flattened feature width L.
    pub fn feature_width(self) -> usize {
        self.max_people() * self.features_per_person()
    }

    pub fn label_count(self) -> usize {
        match self {
            Variant::TwoD => 5,
            Variant::ThreeD => 3,
        }
    }

    pub fn label_names(self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.max_people()).map(|i| format!("P{i}")).collect();
        if self == Variant::TwoD {
            names.push("Box".into());
        }
        names
    }

    /// Label index of the box, if the variant has one.
    pub fn box_label(self) -> Option<usize> {
        match self {
            Variant::TwoD => Some(4),
            Variant::ThreeD => None,
        }
    }

    pub fn stations(self) -> &'static [f64] {
        match self {
            Variant::TwoD => &STATIONS_2D,
            Variant::ThreeD => &STATIONS_3D,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Some(Variant::TwoD),
            "3d" | "vr" => Some(Variant::ThreeD),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::TwoD => "2d",
            Variant::ThreeD => "3d",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    #[default]
    Standing = 0,
    EnteringSlow = 1,
    EnteringFast = 2,
    LeavingSlow = 3,
    LeavingFast = 4,
}

impl Movement {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Movement::Standing,
            1 => Movement::EnteringSlow,
            2 => Movement::EnteringFast,
            3 => Movement::LeavingSlow,
            4 => Movement::LeavingFast,
            _ => return None,
        })
    }

    pub fn is_entering(self) -> bool {
        matches!(self, Movement::EnteringSlow | Movement::EnteringFast)
    }

    pub fn is_leaving(self) -> bool {
        matches!(self, Movement::LeavingSlow | Movement::LeavingFast)
    }
}

/// What a headset-scene person is doing; codes 1..=8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Characteristic {
    #[default]
    Standing = 1,
    MovingSide = 2,
    MovingForward = 3,
    Waving = 4,
    CrossedArms = 5,
    Conversation = 6,
    EnterExit = 7,
    Pointing = 8,
}

impl Characteristic {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        use Characteristic::*;
        Some(match code {
            1 => Standing,
            2 => MovingSide,
            3 => MovingForward,
            4 => Waving,
            5 => CrossedArms,
            6 => Conversation,
            7 => EnterExit,
            8 => Pointing,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterState2D {
    pub present: bool,
    pub distance_m: f64,
    pub waving: bool,
    pub pointing: bool,
    pub talking: bool,
    pub angle_deg: f64,
    pub movement: Movement,
}

impl CharacterState2D {
    pub fn absent(station_deg: f64) -> Self {
        Self {
            present: false,
            distance_m: OFFSTAGE_M,
            waving: false,
            pointing: false,
            talking: false,
            angle_deg: station_deg,
            movement: Movement::Standing,
        }
    }

    pub fn cues(&self) -> CueSet {
        let mut c = CueSet::EMPTY;
        if !self.present {
            return c;
        }
        c.set(Cue::Waving, self.waving);
        c.set(Cue::Pointing, self.pointing);
        c.set(Cue::Talking, self.talking);
        c.set(Cue::Entering, self.movement.is_entering());
        c.set(Cue::Leaving, self.movement.is_leaving());
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterState3D {
    pub present: bool,
    pub distance_m: f64,
    pub characteristic: Characteristic,
    pub talking: bool,
    pub pointed_at_count: u8,
    pub angle_deg: f64,
}

impl CharacterState3D {
    pub fn absent(station_deg: f64) -> Self {
        Self {
            present: false,
            distance_m: OFFSTAGE_M,
            characteristic: Characteristic::Standing,
            talking: false,
            pointed_at_count: 0,
            angle_deg: station_deg,
        }
    }

    pub fn cues(&self) -> CueSet {
        let mut c = CueSet::EMPTY;
        if !self.present {
            return c;
        }
        c.set(Cue::Talking, self.talking);
        match self.characteristic {
            Characteristic::Standing => {}
            Characteristic::MovingSide | Characteristic::MovingForward => c.insert(Cue::Moving),
            Characteristic::Waving => c.insert(Cue::Waving),
            Characteristic::CrossedArms => c.insert(Cue::CrossedArms),
            Characteristic::Conversation => c.insert(Cue::Conversation),
            Characteristic::EnterExit => c.insert(Cue::Entering),
            Characteristic::Pointing => c.insert(Cue::Pointing),
        }
        c
    }
}

/// Social cues that attract attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Waving,
    Pointing,
    Talking,
    Entering,
    Leaving,
    CrossedArms,
    Conversation,
    Moving,
}

impl Cue {
    pub const ALL: [Cue; 8] = [
        Cue::Waving,
        Cue::Pointing,
        Cue::Talking,
        Cue::Entering,
        Cue::Leaving,
        Cue::CrossedArms,
        Cue::Conversation,
        Cue::Moving,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Bit set over [`Cue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CueSet(u8);

impl CueSet {
    pub const EMPTY: CueSet = CueSet(0);

    pub fn from_cues(cues: &[Cue]) -> Self {
        let mut s = Self::EMPTY;
        for &c in cues {
            s.insert(c);
        }
        s
    }

    pub fn insert(&mut self, cue: Cue) {
        self.0 |= 1 << cue.index();
    }

    pub fn set(&mut self, cue: Cue, on: bool) {
        if on {
            self.insert(cue);
        } else {
            self.0 &= !(1 << cue.index());
        }
    }

    pub fn contains(self, cue: Cue) -> bool {
        self.0 & (1 << cue.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn intersect(self, other: CueSet) -> CueSet {
        CueSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Cue> {
        Cue::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

/// The state of one potential gaze target, independent of scene variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetView {
    pub present: bool,
    pub distance_m: f64,
    pub angle_deg: f64,
    pub cues: CueSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub present: bool,
    pub angle_deg: f64,
}

impl Default for BoxState {
    fn default() -> Self {
        Self {
            present: true,
            angle_deg: BOX_ANGLE_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum People {
    TwoD([CharacterState2D; 4]),
    ThreeD([CharacterState3D; 3]),
}

/// Per-tick state of every character slot. Slot order is stable for a timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub tick: usize,
    pub t_s: f64,
    pub situation_id: usize,
    #[serde(rename = "characters")]
    pub people: People,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub box_state: Option<BoxState>,
}

impl SceneFrame {
    /// A frame with every slot empty.
    pub fn empty(variant: Variant, tick: usize, t_s: f64) -> Self {
        let people = match variant {
            Variant::TwoD => People::TwoD(STATIONS_2D.map(CharacterState2D::absent)),
            Variant::ThreeD => People::ThreeD(STATIONS_3D.map(CharacterState3D::absent)),
        };
        Self {
            tick,
            t_s,
            situation_id: 0,
            people,
            box_state: (variant == Variant::TwoD).then(BoxState::default),
        }
    }

    pub fn variant(&self) -> Variant {
        match self.people {
            People::TwoD(_) => Variant::TwoD,
            People::ThreeD(_) => Variant::ThreeD,
        }
    }

    pub fn present_count(&self) -> usize {
        self.targets().iter().filter(|t| t.present).count()
    }

    /// One view per person slot, in slot order.
    pub fn targets(&self) -> Vec<TargetView> {
        match &self.people {
            People::TwoD(cs) => cs
                .iter()
                .map(|c| TargetView {
                    present: c.present,
                    distance_m: c.distance_m,
                    angle_deg: c.angle_deg,
                    cues: c.cues(),
                })
                .collect(),
            People::ThreeD(cs) => cs
                .iter()
                .map(|c| TargetView {
                    present: c.present,
                    distance_m: c.distance_m,
                    angle_deg: c.angle_deg,
                    cues: c.cues(),
                })
                .collect(),
        }
    }

    /// Head angle that looks at `label`, if that target exists in this frame.
    pub fn label_angle(&self, label: usize) -> Option<f64> {
        if Some(label) == self.variant().box_label() {
            return self.box_state.filter(|b| b.present).map(|b| b.angle_deg);
        }
        self.targets()
            .get(label)
            .filter(|t| t.present)
            .map(|t| t.angle_deg)
    }

    pub fn is_target_present(&self, label: usize) -> bool {
        self.label_angle(label).is_some()
    }

    /// True when every present person stands still.
    pub fn is_stationary(&self) -> bool {
        match &self.people {
            People::TwoD(cs) => cs
                .iter()
                .all(|c| !c.present || c.movement == Movement::Standing),
            People::ThreeD(cs) => cs.iter().all(|c| {
                !c.present
                    || !matches!(
                        c.characteristic,
                        Characteristic::MovingSide
                            | Characteristic::MovingForward
                            | Characteristic::EnterExit
                    )
            }),
        }
    }
}
