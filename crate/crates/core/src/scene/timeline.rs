use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::enumerate::{CharacterSpecs, SituationSpec};
use super::{
    BoxState, CharacterState2D, CharacterState3D, Characteristic, Movement, People, SceneError,
    SceneFrame, Variant, FAR_M, NEAR_M, OFFSTAGE_M, STATIONS_2D, STATIONS_3D,
};

/// Extra angle, outward from the station, where entering people appear.
const ENTRY_ARC_DEG: f64 = 15.0;
const FAST_TRAVERSE_S: f64 = 2.5;
const SLOW_TRAVERSE_S: f64 = 5.0;
/// Headset people step in or out of the scene over this long.
const HEADSET_ENTRY_S: f64 = 1.0;
/// Near/far changes of standing people are blended over this long.
const DISTANCE_BLEND_S: f64 = 1.0;
const SIDE_STEP_DEG: f64 = 15.0;
const FORWARD_STEP_M: f64 = 0.8;

/// Compiled per-tick scene. Frames are uniformly spaced at `1 / fps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub variant: Variant,
    pub fps: f64,
    pub frames: Vec<SceneFrame>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn situation_of_frame(&self, index: usize) -> Option<usize> {
        self.frames.get(index).map(|f| f.situation_id)
    }

    /// Sorted distinct situation ids.
    pub fn situation_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.frames.iter().map(|f| f.situation_id).collect();
        ids.dedup();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// One JSON object per frame, one frame per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for frame in &self.frames {
            serde_json::to_writer(&mut out, frame)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Timeline> {
        let mut frames = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: SceneFrame = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            frames.push(frame);
        }
        let variant = frames.first().map(SceneFrame::variant).ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, "empty timeline")
        })?;
        Ok(Timeline {
            variant,
            fps: variant.fps(),
            frames,
        })
    }
}

/// Frame at tick `floor(t * fps)`.
pub fn frame_at(timeline: &Timeline, t: f64) -> Result<&SceneFrame, SceneError> {
    let duration = timeline.duration_s();
    if !(0.0..duration).contains(&t) {
        return Err(SceneError::OutOfRange { t, duration });
    }
    let tick = ((t * timeline.fps).floor() as usize).min(timeline.frames.len() - 1);
    Ok(&timeline.frames[tick])
}

/// Chains situations back to back. Transitions between consecutive
/// situations happen at the start of the later one: people who appear walk
/// in from off stage, people who disappear walk out, and distance changes
/// are blended.
pub fn compile_timeline(specs: &[SituationSpec], fps: f64) -> Result<Timeline, SceneError> {
    let first = specs.first().ok_or(SceneError::Empty)?;
    let variant = first.variant;
    if specs.iter().any(|s| s.variant != variant) {
        return Err(SceneError::MixedVariant);
    }
    let mut frames = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let prev = if k == 0 { None } else { Some(&specs[k - 1]) };
        let n = (spec.duration_s * fps).round() as usize;
        for i in 0..n {
            let tick = frames.len();
            let tau = i as f64 / fps;
            let people = match (&spec.characters, prev.map(|p| &p.characters)) {
                (CharacterSpecs::TwoD(cur), prev) => {
                    let prev = match prev {
                        Some(CharacterSpecs::TwoD(p)) => Some(p),
                        _ => None,
                    };
                    People::TwoD(std::array::from_fn(|c| {
                        state_2d(c, cur[c], prev.map_or(cur[c], |p| p[c]), tau)
                    }))
                }
                (CharacterSpecs::ThreeD(cur), prev) => {
                    let prev = match prev {
                        Some(CharacterSpecs::ThreeD(p)) => Some(p),
                        _ => None,
                    };
                    People::ThreeD(frame_3d(cur, prev.unwrap_or(cur), spec.duration_s, tau))
                }
            };
            frames.push(SceneFrame {
                tick,
                t_s: tick as f64 / fps,
                situation_id: spec.situation_id,
                people,
                box_state: (variant == Variant::TwoD).then(BoxState::default),
            });
        }
    }
    Ok(Timeline {
        variant,
        fps,
        frames,
    })
}

fn near_distance(near: bool) -> f64 {
    if near {
        NEAR_M
    } else {
        FAR_M
    }
}

fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    a + (b - a) * frac.clamp(0.0, 1.0)
}

fn outward(station: f64) -> f64 {
    station + station.signum() * ENTRY_ARC_DEG
}

fn state_2d(
    slot: usize,
    cur: Option<super::Activity2D>,
    prev: Option<super::Activity2D>,
    tau: f64,
) -> CharacterState2D {
    let station = STATIONS_2D[slot];
    let traverse = |fast: bool| if fast { FAST_TRAVERSE_S } else { SLOW_TRAVERSE_S };
    match (cur, prev) {
        (Some(a), Some(p)) => CharacterState2D {
            present: true,
            distance_m: lerp(
                near_distance(p.near),
                near_distance(a.near),
                tau / DISTANCE_BLEND_S,
            ),
            waving: a.waving,
            pointing: a.pointing,
            talking: a.talking,
            angle_deg: station,
            movement: Movement::Standing,
        },
        (Some(a), None) => {
            let span = traverse(a.fast);
            if tau >= span {
                return state_2d(slot, Some(a), Some(a), tau);
            }
            let frac = tau / span;
            CharacterState2D {
                present: true,
                distance_m: lerp(OFFSTAGE_M, near_distance(a.near), frac),
                waving: false,
                pointing: false,
                talking: false,
                angle_deg: lerp(outward(station), station, frac),
                movement: if a.fast {
                    Movement::EnteringFast
                } else {
                    Movement::EnteringSlow
                },
            }
        }
        (None, Some(p)) => {
            let span = traverse(p.fast);
            if tau >= span {
                return CharacterState2D::absent(station);
            }
            let frac = tau / span;
            CharacterState2D {
                present: true,
                distance_m: lerp(near_distance(p.near), OFFSTAGE_M, frac),
                waving: false,
                pointing: false,
                talking: false,
                angle_deg: lerp(station, outward(station), frac),
                movement: if p.fast {
                    Movement::LeavingFast
                } else {
                    Movement::LeavingSlow
                },
            }
        }
        (None, None) => CharacterState2D::absent(station),
    }
}

fn frame_3d(
    cur: &[Option<super::Role3D>; 3],
    prev: &[Option<super::Role3D>; 3],
    duration: f64,
    tau: f64,
) -> [CharacterState3D; 3] {
    let mut states: [CharacterState3D; 3] = std::array::from_fn(|s| {
        let station = STATIONS_3D[s];
        match (cur[s], prev[s]) {
            (Some(r), p) => {
                let base = near_distance(r.near);
                if p.is_none() && tau < HEADSET_ENTRY_S {
                    return CharacterState3D {
                        present: true,
                        distance_m: lerp(OFFSTAGE_M, base, tau / HEADSET_ENTRY_S),
                        characteristic: Characteristic::EnterExit,
                        talking: false,
                        pointed_at_count: 0,
                        angle_deg: station,
                    };
                }
                let start = p.map_or(base, |p| near_distance(p.near));
                let mut distance = lerp(start, base, tau / (DISTANCE_BLEND_S / 2.0));
                let mut angle = station;
                let swing = (PI * tau / duration).sin();
                match r.action {
                    Characteristic::MovingSide => {
                        let dir = if station < 0.0 { -1.0 } else { 1.0 };
                        angle += dir * SIDE_STEP_DEG * swing;
                    }
                    Characteristic::MovingForward => distance -= FORWARD_STEP_M * swing,
                    Characteristic::EnterExit => distance += (OFFSTAGE_M - distance) * swing,
                    _ => {}
                }
                CharacterState3D {
                    present: true,
                    distance_m: distance,
                    characteristic: r.action,
                    talking: r.talking,
                    pointed_at_count: 0,
                    angle_deg: angle,
                }
            }
            (None, Some(p)) if tau < HEADSET_ENTRY_S => CharacterState3D {
                present: true,
                distance_m: lerp(near_distance(p.near), OFFSTAGE_M, tau / HEADSET_ENTRY_S),
                characteristic: Characteristic::EnterExit,
                talking: false,
                pointed_at_count: 0,
                angle_deg: station,
            },
            _ => CharacterState3D::absent(station),
        }
    });
    for s in 0..3 {
        let pointing = matches!(states[s].characteristic, Characteristic::Pointing);
        if let (true, Some(target)) = (pointing, cur[s].and_then(|r| r.points_at)) {
            if states[target].present {
                states[target].pointed_at_count += 1;
            }
        }
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{enumerate_situations_2d, enumerate_situations_3d};

    #[test]
    fn two_d_timeline_length() {
        let tl = compile_timeline(&enumerate_situations_2d(), 24.0).unwrap();
        assert_eq!(tl.len(), 15_360);
        assert_eq!(tl.duration_s(), 640.0);
        // rendered clip has 15,342 frames; we stay within 0.2%
        assert!((tl.len() as f64 - 15_342.0).abs() / 15_342.0 < 0.002);
    }

    #[test]
    fn three_d_timeline_length() {
        let tl = compile_timeline(&enumerate_situations_3d(), 25.0).unwrap();
        assert_eq!(tl.len(), 15_000);
        assert_eq!(tl.situation_ids().len(), 120);
    }

    #[test]
    fn single_spec_maps_to_one_situation() {
        let specs = enumerate_situations_2d();
        let tl = compile_timeline(&specs[..1], 24.0).unwrap();
        assert_eq!(tl.len(), 120);
        assert!(tl.frames.iter().all(|f| f.situation_id == 0));
    }

    #[test]
    fn mixed_variants_rejected() {
        let mut specs = enumerate_situations_2d();
        specs.push(enumerate_situations_3d().remove(0));
        assert_eq!(compile_timeline(&specs, 24.0), Err(SceneError::MixedVariant));
    }

    #[test]
    fn frame_at_boundaries() {
        let tl = compile_timeline(&enumerate_situations_2d(), 24.0).unwrap();
        assert_eq!(frame_at(&tl, 0.0).unwrap().tick, 0);
        assert_eq!(frame_at(&tl, 640.0 - 1e-9).unwrap().tick, 15_359);
        assert!(frame_at(&tl, 640.0).is_err());
        assert!(frame_at(&tl, -0.1).is_err());
        // 7.5 s sits in the first entry/exit segment (5..10 s)
        let f = frame_at(&tl, 7.5).unwrap();
        assert_eq!(f.tick, 180);
        assert_eq!(f.situation_id, 1);
    }

    #[test]
    fn entries_and_exits_at_five_plus_ten_n() {
        let tl = compile_timeline(&enumerate_situations_2d(), 24.0).unwrap();
        for w in tl.frames.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.situation_id == a.situation_id {
                continue;
            }
            let moving = match &b.people {
                People::TwoD(cs) => cs.iter().any(|c| c.movement != Movement::Standing),
                _ => unreachable!(),
            };
            if moving && b.situation_id != 32 && b.situation_id != 96 {
                let t = b.t_s;
                assert_eq!((t - 5.0).rem_euclid(10.0), 0.0, "entry at {t}");
            }
        }
    }

    #[test]
    fn frame_invariants_hold() {
        let tl2 = compile_timeline(&enumerate_situations_2d(), 24.0).unwrap();
        for f in &tl2.frames {
            assert!(f.present_count() <= 4);
            let b = f.box_state.unwrap();
            assert!(b.present && b.angle_deg == 0.0);
            let People::TwoD(cs) = &f.people else { panic!() };
            for c in cs {
                if !c.present {
                    assert!(!c.waving && !c.pointing && !c.talking);
                    assert_eq!(c.movement, Movement::Standing);
                } else {
                    assert!(c.distance_m > 0.0);
                    if c.movement == Movement::Standing {
                        assert!(STATIONS_2D.contains(&c.angle_deg));
                    }
                }
            }
        }
        let tl3 = compile_timeline(&enumerate_situations_3d(), 25.0).unwrap();
        for f in &tl3.frames {
            let People::ThreeD(cs) = &f.people else { panic!() };
            let present = cs.iter().filter(|c| c.present).count() as u8;
            for c in cs {
                assert!(c.pointed_at_count <= present.saturating_sub(1));
                assert!(c.distance_m > 0.0);
                if !c.present {
                    assert_eq!(c.characteristic, Characteristic::Standing);
                    assert!(!c.talking && c.pointed_at_count == 0);
                }
            }
            if f.is_stationary() {
                for c in cs.iter().filter(|c| c.present) {
                    assert!(STATIONS_3D.contains(&c.angle_deg));
                }
            }
        }
    }

    #[test]
    fn moving_people_move_continuously() {
        let tl = compile_timeline(&enumerate_situations_2d(), 24.0).unwrap();
        for w in tl.frames.windows(2) {
            let (People::TwoD(a), People::TwoD(b)) = (&w[0].people, &w[1].people) else {
                panic!()
            };
            for (x, y) in a.iter().zip(b) {
                if x.present && y.present && y.movement != Movement::Standing {
                    assert!((x.distance_m - y.distance_m).abs() < 0.2);
                    assert!((x.angle_deg - y.angle_deg).abs() < 1.0);
                }
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let specs = enumerate_situations_3d();
        let tl = compile_timeline(&specs[..2], 25.0).unwrap();
        let mut buf = Vec::new();
        tl.write_jsonl(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 250);
        let back = Timeline::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, tl);
    }
}
