use serde::{Deserialize, Serialize};

use super::{Characteristic, Variant, SITUATION_S};

/// Activities of one present person in a flat-screen situation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Activity2D {
    pub near: bool,
    pub pointing: bool,
    pub waving: bool,
    pub talking: bool,
    /// Entry/exit speed when this person arrives or leaves.
    pub fast: bool,
}

/// Role of one present person in a headset situation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Role3D {
    pub near: bool,
    pub action: Characteristic,
    pub talking: bool,
    /// Slot of the person being pointed at.
    pub points_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CharacterSpecs {
    TwoD([Option<Activity2D>; 4]),
    ThreeD([Option<Role3D>; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationSpec {
    pub variant: Variant,
    pub situation_id: usize,
    pub duration_s: f64,
    pub characters: CharacterSpecs,
}

impl SituationSpec {
    pub fn present_slots(&self) -> Vec<usize> {
        match &self.characters {
            CharacterSpecs::TwoD(cs) => present(cs),
            CharacterSpecs::ThreeD(cs) => present(cs),
        }
    }
}

fn present<T>(slots: &[Option<T>]) -> Vec<usize> {
    slots
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|_| i))
        .collect()
}

fn role(slots: &mut [Option<Role3D>; 3], slot: usize) -> &mut Role3D {
    slots[slot].as_mut().expect("occupied slot")
}

fn gray(x: usize) -> usize {
    x ^ (x >> 1)
}

fn bit(x: usize, i: usize) -> bool {
    (x >> i) & 1 == 1
}

struct Band {
    size: usize,
    patterns: &'static [&'static [usize]],
}

const BANDS_2D: [Band; 3] = [
    Band {
        size: 32,
        patterns: &[&[0, 1], &[2, 3], &[0, 2], &[1, 3]],
    },
    Band {
        size: 64,
        patterns: &[&[0, 1, 2], &[1, 2, 3], &[0, 2, 3], &[0, 1, 3]],
    },
    Band {
        size: 32,
        patterns: &[&[0, 1, 2, 3]],
    },
];

/// The 128 flat-screen situations in canonical order.
///
/// Index bands fix the head count (32 with two people, 64 with three, 32 with
/// four). In the banded layouts the presence pattern only changes at odd
/// indices, so people enter and leave at `5 + 10n` seconds, and each person's
/// near/pointing/waving/talking bit takes each value in exactly half of the
/// situations where that person is present.
pub fn enumerate_situations_2d() -> Vec<SituationSpec> {
    let mut specs = Vec::with_capacity(128);
    for band in &BANDS_2D {
        for j in 0..band.size {
            let mut slots = [None; 4];
            if band.patterns.len() == 1 {
                // Everyone present: four of the five Gray-code bits per person.
                let g = gray(j);
                for (c, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(Activity2D {
                        near: bit(g, c % 5),
                        pointing: bit(g, (c + 1) % 5),
                        waving: bit(g, (c + 2) % 5),
                        talking: bit(g, (c + 3) % 5),
                        fast: ((j >> 1) + c) % 2 == 0,
                    });
                }
            } else {
                let block = j / 8;
                let r = j % 8;
                let pattern = band.patterns[((r + 1) / 2) % band.patterns.len()];
                let g = gray(block);
                let nbits = (band.size / 8).trailing_zeros() as usize;
                let derived = if nbits == 2 {
                    [bit(g, 0), bit(g, 1), bit(g, 0) ^ bit(g, 1)]
                } else {
                    [bit(g, 0), bit(g, 1), bit(g, 2)]
                };
                for &c in pattern {
                    slots[c] = Some(Activity2D {
                        near: derived[c % 3],
                        pointing: derived[(c + 1) % 3],
                        waving: derived[(c + 2) % 3],
                        talking: derived[c % 3] ^ (j % 2 == 1),
                        fast: ((j >> 1) + c) % 2 == 0,
                    });
                }
            }
            specs.push(SituationSpec {
                variant: Variant::TwoD,
                situation_id: specs.len(),
                duration_s: SITUATION_S,
                characters: CharacterSpecs::TwoD(slots),
            });
        }
    }
    specs
}

/// Occupied slots and near/far flags of a headset placement.
fn placements_3d() -> Vec<Vec<(usize, bool)>> {
    let mut out = Vec::with_capacity(20);
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        for bits in 0..4 {
            out.push(vec![(a, bit(bits, 0)), (b, bit(bits, 1))]);
        }
    }
    for bits in 0..8 {
        out.push((0..3).map(|s| (s, bit(bits, s))).collect());
    }
    out
}

/// The 120 headset situations: 20 placements (12 with two people, 8 with
/// three) times six social situations.
///
/// Per placement the six situations are: everyone standing, one person
/// waving, one with crossed arms, a two-person conversation, one pointing at
/// another, and one moving (sideways, forward or out and back in, rotating
/// with the placement). The acting person rotates with the placement index,
/// and speech alternates with placement parity so each action is silent in
/// half of its occurrences.
pub fn enumerate_situations_3d() -> Vec<SituationSpec> {
    let movers = [
        Characteristic::MovingSide,
        Characteristic::MovingForward,
        Characteristic::EnterExit,
    ];
    let mut specs = Vec::with_capacity(120);
    for (p, placement) in placements_3d().iter().enumerate() {
        let n = placement.len();
        let actor = placement[p % n].0;
        let partner = placement[(p + 1) % n].0;
        let speaking = p % 2 == 1;
        for s in 0..6 {
            let mut slots = [None; 3];
            for &(slot, near) in placement {
                slots[slot] = Some(Role3D {
                    near,
                    action: Characteristic::Standing,
                    talking: false,
                    points_at: None,
                });
            }
            match s {
                0 => role(&mut slots, actor).talking = speaking,
                1 | 2 | 4 => {
                    let r = role(&mut slots, actor);
                    r.action = match s {
                        1 => Characteristic::Waving,
                        2 => Characteristic::CrossedArms,
                        _ => Characteristic::Pointing,
                    };
                    r.talking = speaking;
                    if s == 4 {
                        r.points_at = Some(partner);
                    }
                }
                3 => {
                    let a = role(&mut slots, actor);
                    a.action = Characteristic::Conversation;
                    a.talking = true;
                    role(&mut slots, partner).action = Characteristic::Conversation;
                }
                _ => role(&mut slots, actor).action = movers[p % 3],
            }
            specs.push(SituationSpec {
                variant: Variant::ThreeD,
                situation_id: specs.len(),
                duration_s: SITUATION_S,
                characters: CharacterSpecs::ThreeD(slots),
            });
        }
    }
    specs
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashSet};

    #[test]
    fn two_d_counts_and_balance() {
        let specs = enumerate_situations_2d();
        assert_eq!(specs.len(), 128);
        let mut by_count = BTreeMap::new();
        for s in &specs {
            *by_count.entry(s.present_slots().len()).or_insert(0) += 1;
        }
        assert_eq!(by_count, BTreeMap::from([(2, 32), (3, 64), (4, 32)]));

        for c in 0..4 {
            let acts: Vec<Activity2D> = specs
                .iter()
                .filter_map(|s| match &s.characters {
                    CharacterSpecs::TwoD(cs) => cs[c],
                    _ => None,
                })
                .collect();
            let half = acts.len() / 2;
            assert_eq!(acts.iter().filter(|a| a.near).count(), half, "near c{c}");
            assert_eq!(acts.iter().filter(|a| a.pointing).count(), half);
            assert_eq!(acts.iter().filter(|a| a.waving).count(), half);
            assert_eq!(acts.iter().filter(|a| a.talking).count(), half);
        }
    }

    #[test]
    fn two_d_presence_changes_only_at_odd_indices_within_bands() {
        let specs = enumerate_situations_2d();
        for i in 1..specs.len() {
            if i == 32 || i == 96 {
                continue;
            }
            if specs[i].present_slots() != specs[i - 1].present_slots() {
                assert_eq!(i % 2, 1, "presence change at even index {i}");
            }
        }
    }

    #[test]
    fn three_d_counts() {
        let specs = enumerate_situations_3d();
        assert_eq!(specs.len(), 120);
        let placements = placements_3d();
        assert_eq!(placements.iter().filter(|p| p.len() == 2).count(), 12);
        assert_eq!(placements.iter().filter(|p| p.len() == 3).count(), 8);
        let total: f64 = specs.iter().map(|s| s.duration_s).sum();
        assert_eq!(total, 600.0);
    }

    #[test]
    fn three_d_actions_and_speech_balanced() {
        let specs = enumerate_situations_3d();
        let mut counts: BTreeMap<(u8, bool), usize> = BTreeMap::new();
        for s in &specs {
            let CharacterSpecs::ThreeD(cs) = &s.characters else {
                panic!()
            };
            // the acting role of each situation
            let acting = cs
                .iter()
                .flatten()
                .filter(|r| r.action != Characteristic::Standing || r.talking)
                .max_by_key(|r| r.talking);
            if let Some(r) = acting {
                *counts.entry((r.action.code(), r.talking)).or_default() += 1;
            } else {
                *counts.entry((Characteristic::Standing.code(), false)).or_default() += 1;
            }
        }
        for action in [
            Characteristic::Standing,
            Characteristic::Waving,
            Characteristic::CrossedArms,
            Characteristic::Pointing,
        ] {
            assert_eq!(counts[&(action.code(), false)], 10, "{action:?} silent");
            assert_eq!(counts[&(action.code(), true)], 10, "{action:?} speaking");
        }
        assert_eq!(counts[&(Characteristic::Conversation.code(), true)], 20);
    }

    #[test]
    fn enumerations_are_pure_and_distinct() {
        for specs in [enumerate_situations_2d(), enumerate_situations_3d()] {
            let distinct: HashSet<_> = specs.iter().map(|s| s.characters.clone()).collect();
            assert_eq!(distinct.len(), specs.len());
        }
        assert_eq!(enumerate_situations_2d(), enumerate_situations_2d());
        assert_eq!(enumerate_situations_3d(), enumerate_situations_3d());
    }
}
