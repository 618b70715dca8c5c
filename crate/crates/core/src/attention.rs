//! Effective-attention scoring shared by the synthetic gazers and the
//! heuristic baselines.
//!
//! A present target's score is a cue term times a distance kernel
//! `exp(-alpha * r)` times an angular kernel `exp(-theta^2 / (2 sigma^2))`.
//! The cue term is the product of the active cue weights (empty product 1) or
//! their sum (empty sum 0). The 2D box scores a constant `box_weight`.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scene::{Cue, CueSet, TargetView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionForm {
    Product,
    Sum,
}

/// One positive weight per [`Cue`], serialized as a `cue -> weight` map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CueWeights(pub [f64; 8]);

impl CueWeights {
    pub fn uniform(w: f64) -> Self {
        Self([w; 8])
    }

    pub fn get(&self, cue: Cue) -> f64 {
        self.0[cue.index()]
    }

    pub fn set(&mut self, cue: Cue, w: f64) {
        self.0[cue.index()] = w;
    }
}

fn cue_name(cue: Cue) -> String {
    serde_json::to_value(cue)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn parse_cue(name: &str) -> Option<Cue> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).ok()
}

impl Serialize for CueWeights {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<String, f64> = Cue::ALL.iter().map(|&c| (cue_name(c), self.get(c))).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CueWeights {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        let mut w = CueWeights::uniform(1.0);
        for (name, v) in map {
            let cue = parse_cue(&name)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown cue {name:?}")))?;
            w.set(cue, v);
        }
        Ok(w)
    }
}

pub(crate) mod cue_list {
    use super::*;

    pub fn serialize<S: Serializer>(set: &CueSet, s: S) -> Result<S::Ok, S::Error> {
        set.iter().map(cue_name).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CueSet, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let mut set = CueSet::EMPTY;
        for name in names {
            set.insert(
                parse_cue(&name)
                    .ok_or_else(|| serde::de::Error::custom(format!("unknown cue {name:?}")))?,
            );
        }
        Ok(set)
    }
}

pub fn all_cues() -> CueSet {
    CueSet::from_cues(&Cue::ALL)
}

/// Parameters of one effective-attention model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub form: AttentionForm,
    pub cue_weights: CueWeights,
    pub box_weight: f64,
    /// Distance decay `alpha` per metre.
    pub distance_decay: f64,
    /// Angular width `sigma` in degrees.
    pub angle_width_deg: f64,
    /// Cues that contribute to the cue term; others are ignored.
    #[serde(with = "cue_list", default = "all_cues")]
    pub cue_mask: CueSet,
}

impl Attention {
    pub fn new(form: AttentionForm) -> Self {
        Self {
            form,
            cue_weights: CueWeights::uniform(1.0),
            box_weight: 1.0,
            distance_decay: 0.0,
            angle_width_deg: f64::INFINITY,
            cue_mask: all_cues(),
        }
    }

    pub fn cue_term(&self, cues: CueSet) -> f64 {
        let active = cues.intersect(self.cue_mask).iter().map(|c| self.cue_weights.get(c));
        match self.form {
            AttentionForm::Product => active.product(),
            AttentionForm::Sum => active.sum(),
        }
    }

    fn log_kernels(&self, t: &TargetView) -> f64 {
        let sigma = self.angle_width_deg;
        -self.distance_decay * t.distance_m - t.angle_deg * t.angle_deg / (2.0 * sigma * sigma)
    }

    /// Score of a present target.
    pub fn score(&self, t: &TargetView) -> f64 {
        self.cue_term(t.cues) * self.log_kernels(t).exp()
    }

    /// Natural log of [`Attention::score`], evaluated without overflow for
    /// the product form; `-inf` for a zero score.
    pub fn log_score(&self, t: &TargetView) -> f64 {
        match self.form {
            AttentionForm::Product => {
                let cues: f64 = t
                    .cues
                    .intersect(self.cue_mask)
                    .iter()
                    .map(|c| self.cue_weights.get(c).ln())
                    .sum();
                cues + self.log_kernels(t)
            }
            AttentionForm::Sum => self.cue_term(t.cues).ln() + self.log_kernels(t),
        }
    }

    /// Log scores per label: one per person slot, then the box when
    /// `with_box`. Absent people get `-inf`.
    pub fn label_log_scores(&self, targets: &[TargetView], with_box: bool) -> Vec<f64> {
        let mut out: Vec<f64> = targets
            .iter()
            .map(|t| {
                if t.present {
                    self.log_score(t)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        if with_box {
            out.push(self.box_weight.ln());
        }
        out
    }
}

/// Index of the largest value; ties and all-`-inf` resolve to the lowest
/// eligible index. `None` only for an empty slice.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}
