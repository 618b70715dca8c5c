use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{FeatureError, FrameFeatures, Normalization};
use crate::scene::Variant;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// A frame with its encoded features and the gaze label it received.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub tick: usize,
    pub situation_id: usize,
    pub features: FrameFeatures,
    /// `None` marks noise: gaze that hit no target.
    pub label: Option<usize>,
    /// False when the frame's recording is unusable (e.g. tracker dropout).
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub variant: Variant,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub labels: Vec<String>,
    pub normalization: Normalization,
    pub seed: Option<u64>,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl DatasetMeta {
    pub fn new(variant: Variant, m: usize, normalization: Normalization) -> Self {
        Self {
            schema_version: DATASET_SCHEMA_VERSION,
            variant,
            m,
            l: variant.feature_width(),
            labels: variant.label_names(),
            normalization,
            seed: None,
            source: String::new(),
            provenance: serde_json::Value::Null,
        }
    }

    fn compatible(&self, other: &DatasetMeta) -> bool {
        self.variant == other.variant
            && self.m == other.m
            && self.l == other.l
            && self.labels == other.labels
            && self.normalization == other.normalization
    }
}

/// One training example: `m` consecutive normalized frames and the label of
/// the frame that follows them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowedExample {
    /// First row of the window in the dataset's frame table.
    pub start: usize,
    pub label: usize,
    pub situation_id: usize,
}

/// Windowed examples over a shared table of normalized frame rows.
///
/// Overlapping windows share rows, which keeps a full corpus at one row per
/// frame instead of `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    table: Vec<f32>,
    examples: Vec<WindowedExample>,
}

#[derive(Serialize)]
struct ExampleOut<'a> {
    window: Vec<&'a [f32]>,
    label: usize,
    situation_id: usize,
}

#[derive(Deserialize)]
struct ExampleIn {
    window: Vec<Vec<f32>>,
    label: usize,
    situation_id: usize,
}

impl Dataset {
    pub fn empty(meta: DatasetMeta) -> Self {
        Self {
            meta,
            table: Vec::new(),
            examples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[WindowedExample] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &WindowedExample {
        &self.examples[i]
    }

    /// Row-major `m * L` window of example `i`.
    pub fn window(&self, i: usize) -> &[f32] {
        let l = self.meta.l;
        let start = self.examples[i].start * l;
        &self.table[start..start + self.meta.m * l]
    }

    /// Last frame of example `i`'s window.
    pub fn last_frame(&self, i: usize) -> &[f32] {
        let l = self.meta.l;
        let w = self.window(i);
        &w[w.len() - l..]
    }

    pub fn table_rows(&self) -> usize {
        self.table.len() / self.meta.l.max(1)
    }

    /// Appends a window given row by row, sharing rows with the previous
    /// window when they overlap by one frame.
    pub fn push_window(&mut self, window: &[f32], label: usize, situation_id: usize) {
        let (m, l) = (self.meta.m, self.meta.l);
        debug_assert_eq!(window.len(), m * l);
        let rows = self.table_rows();
        let shares = self.examples.last().is_some_and(|prev| {
            prev.start + m == rows && self.table[(prev.start + 1) * l..] == window[..(m - 1) * l]
        });
        let start = if shares {
            self.table.extend_from_slice(&window[(m - 1) * l..]);
            rows + 1 - m
        } else {
            self.table.extend_from_slice(window);
            rows
        };
        self.examples.push(WindowedExample {
            start,
            label,
            situation_id,
        });
    }

    /// Moves all of `other`'s examples into `self`.
    pub fn append(&mut self, other: Dataset) -> Result<(), FeatureError> {
        if !self.meta.compatible(&other.meta) {
            return Err(FeatureError::VariantMismatch {
                expected: self.meta.variant,
                found: other.meta.variant,
            });
        }
        let offset = self.table_rows();
        self.table.extend_from_slice(&other.table);
        self.examples
            .extend(other.examples.into_iter().map(|e| WindowedExample {
                start: e.start + offset,
                ..e
            }));
        Ok(())
    }

    pub fn situation_ids(&self) -> Vec<usize> {
        let ids: BTreeSet<usize> = self.examples.iter().map(|e| e.situation_id).collect();
        ids.into_iter().collect()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.labels.len()];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        let l = self.meta.l;
        for (i, e) in self.examples.iter().enumerate() {
            let out = ExampleOut {
                window: self.window(i).chunks(l).collect(),
                label: e.label,
                situation_id: e.situation_id,
            };
            serde_json::to_writer(&mut w, &out)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// Parses and validates a dataset file; errors carry 1-based line numbers.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Dataset, FeatureError> {
        let invalid = |line: usize, reason: String| FeatureError::Invalid { line, reason };
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| invalid(1, "missing header".into()))?;
        let meta: DatasetMeta =
            serde_json::from_str(&header?).map_err(|e| invalid(1, format!("header: {e}")))?;
        validate_meta(&meta).map_err(|reason| invalid(1, reason))?;
        let mut ds = Dataset::empty(meta);
        let (m, l, c) = (ds.meta.m, ds.meta.l, ds.meta.labels.len());
        let mut flat = Vec::with_capacity(m * l);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: ExampleIn =
                serde_json::from_str(&line).map_err(|e| invalid(line_no, e.to_string()))?;
            if ex.window.len() != m {
                return Err(invalid(
                    line_no,
                    format!("window has {} frames, header m = {m}", ex.window.len()),
                ));
            }
            flat.clear();
            for row in &ex.window {
                if row.len() != l {
                    return Err(invalid(
                        line_no,
                        format!("window row has width {}, header L = {l}", row.len()),
                    ));
                }
                flat.extend_from_slice(row);
            }
            if let Some(v) = flat.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(invalid(line_no, format!("feature value {v} outside [0, 1]")));
            }
            if ex.label >= c {
                return Err(invalid(
                    line_no,
                    format!("label {} outside 0..{c}", ex.label),
                ));
            }
            ds.push_window(&flat, ex.label, ex.situation_id);
        }
        Ok(ds)
    }
}

fn validate_meta(meta: &DatasetMeta) -> Result<(), String> {
    if meta.schema_version != DATASET_SCHEMA_VERSION {
        return Err(format!(
            "schema_version {} unsupported (expected {DATASET_SCHEMA_VERSION})",
            meta.schema_version
        ));
    }
    if meta.m == 0 {
        return Err("m must be at least 1".into());
    }
    if meta.l != meta.variant.feature_width() {
        return Err(format!(
            "L = {} but variant {} has {} features",
            meta.l,
            meta.variant,
            meta.variant.feature_width()
        ));
    }
    if meta.labels != meta.variant.label_names() {
        return Err(format!("labels {:?} do not match variant {}", meta.labels, meta.variant));
    }
    Ok(())
}

/// Index view over a dataset, used for folds and held-out splits.
#[derive(Debug, Clone)]
pub struct Subset<'a> {
    pub dataset: &'a Dataset,
    pub indices: Vec<usize>,
}

impl<'a> Subset<'a> {
    pub fn all(dataset: &'a Dataset) -> Self {
        Self {
            dataset,
            indices: (0..dataset.len()).collect(),
        }
    }

    pub fn new(dataset: &'a Dataset, indices: Vec<usize>) -> Self {
        Self { dataset, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.dataset.example(self.indices[i]).label
    }

    pub fn window(&self, i: usize) -> &'a [f32] {
        self.dataset.window(self.indices[i])
    }
}

/// Slides a window of `m` frames over a labelled trace.
///
/// An example is emitted at every position `t = m - 1 + k * step` whose
/// frames `t - m + 1 ..= t` are valid with consecutive ticks and whose next
/// frame `t + 1` follows on the next tick with a non-noise label. Features
/// are normalized with `norm` if they are not already.
pub fn window_dataset(
    labeled: &[LabeledFrame],
    m: usize,
    step: usize,
    norm: &Normalization,
) -> Result<Dataset, FeatureError> {
    if m == 0 || step == 0 {
        return Err(FeatureError::ZeroWindow);
    }
    let first = labeled.first().ok_or(FeatureError::TooShort {
        m,
        needed: m,
        got: 0,
    })?;
    if labeled.len() < m {
        return Err(FeatureError::TooShort {
            m,
            needed: m,
            got: labeled.len(),
        });
    }
    let variant = first.features.variant;
    let mut ds = Dataset::empty(DatasetMeta::new(variant, m, *norm));
    let mut table = Vec::with_capacity(labeled.len() * variant.feature_width());
    let mut run = vec![0usize; labeled.len()];
    for (i, f) in labeled.iter().enumerate() {
        if f.features.variant != variant {
            return Err(FeatureError::VariantMismatch {
                expected: variant,
                found: f.features.variant,
            });
        }
        table.extend(f.features.normalize(norm).to_f32());
        let follows = i > 0 && labeled[i - 1].tick + 1 == f.tick;
        run[i] = match (f.valid, follows) {
            (false, _) => 0,
            (true, true) => run[i - 1] + 1,
            (true, false) => 1,
        };
    }
    ds.table = table;
    let mut t = m - 1;
    while t + 1 < labeled.len() {
        let next = &labeled[t + 1];
        if run[t] >= m && next.tick == labeled[t].tick + 1 {
            if let Some(label) = next.label {
                ds.examples.push(WindowedExample {
                    start: t + 1 - m,
                    label,
                    situation_id: next.situation_id,
                });
            }
        }
        t += step;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frames(n: usize) -> Vec<LabeledFrame> {
        (0..n)
            .map(|i| {
                let mut values = vec![0.0; 18];
                values[0] = 1.0;
                values[1] = (i % 50) as f64 / 10.0;
                LabeledFrame {
                    tick: i,
                    situation_id: i / 125,
                    features: FrameFeatures::from_flat(Variant::ThreeD, false, values).unwrap(),
                    label: Some(i % 3),
                    valid: true,
                }
            })
            .collect()
    }

    fn norm() -> Normalization {
        Normalization::default()
    }

    /// Brute-force count straight from the definition.
    fn count_positions(fs: &[LabeledFrame], m: usize) -> usize {
        (m - 1..fs.len().saturating_sub(1))
            .filter(|&t| {
                let window_ok = (t + 1 - m..=t).all(|i| fs[i].valid)
                    && (t + 1 - m..=t).all(|i| fs[i + 1].tick == fs[i].tick + 1);
                window_ok && fs[t + 1].label.is_some()
            })
            .count()
    }

    #[test]
    fn hundred_frames_window_24() {
        let ds = window_dataset(&frames(100), 24, 1, &norm()).unwrap();
        assert_eq!(ds.len(), 76);
        assert_eq!(ds.window(0).len(), 24 * 18);
        assert_eq!(ds.example(0).label, 24 % 3);
    }

    #[test]
    fn window_equal_to_length_gives_nothing() {
        assert_eq!(window_dataset(&frames(24), 24, 1, &norm()).unwrap().len(), 0);
        assert!(matches!(
            window_dataset(&frames(23), 24, 1, &norm()),
            Err(FeatureError::TooShort { .. })
        ));
        assert_eq!(
            window_dataset(&frames(3), 0, 1, &norm()),
            Err(FeatureError::ZeroWindow)
        );
    }

    #[test]
    fn noise_label_drops_exactly_one_example() {
        let mut fs = frames(100);
        fs[50].label = None;
        let ds = window_dataset(&fs, 24, 1, &norm()).unwrap();
        assert_eq!(ds.len(), 75);
        assert!(ds.examples().iter().all(|e| e.start + 24 != 50));
    }

    #[test]
    fn examples_tagged_with_label_frame_situation() {
        let ds = window_dataset(&frames(300), 10, 1, &norm()).unwrap();
        for e in ds.examples() {
            assert_eq!(e.situation_id, (e.start + 10) / 125);
        }
    }

    #[test]
    fn file_round_trip_and_sharing() {
        let ds = window_dataset(&frames(200), 8, 1, &norm()).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.table_rows(), 200 - 1);
        for i in 0..ds.len() {
            assert_eq!(back.window(i), ds.window(i));
            assert_eq!(back.example(i).label, ds.example(i).label);
        }
    }

    #[test]
    fn read_rejects_bad_width_with_line_number() {
        let ds = window_dataset(&frames(40), 4, 1, &norm()).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let bad = r#"{"window":[[0.1,0.2],[0.1,0.2],[0.1,0.2],[0.1,0.2]],"label":0,"situation_id":0}"#;
        lines[3] = bad.to_string();
        let err = Dataset::read_jsonl(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            FeatureError::Invalid { line, reason } => {
                assert_eq!(line, 4);
                assert!(reason.contains("width 2"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn read_rejects_bad_label_and_header() {
        let ds = window_dataset(&frames(40), 4, 1, &norm()).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bad_label = text.replacen("\"label\":", "\"label\":7,\"x\":", 1);
        assert!(matches!(
            Dataset::read_jsonl(bad_label.as_bytes()),
            Err(FeatureError::Invalid { line: 2, .. })
        ));
        let bad_header = text.replacen("\"L\":18", "\"L\":28", 1);
        assert!(matches!(
            Dataset::read_jsonl(bad_header.as_bytes()),
            Err(FeatureError::Invalid { line: 1, .. })
        ));
    }

    #[test]
    fn append_offsets_rows() {
        let a = window_dataset(&frames(50), 5, 1, &norm()).unwrap();
        let b = window_dataset(&frames(60), 5, 2, &norm()).unwrap();
        let mut c = a.clone();
        c.append(b.clone()).unwrap();
        assert_eq!(c.len(), a.len() + b.len());
        assert_eq!(c.window(a.len()), b.window(0));
    }

    proptest! {
        #[test]
        fn windows_match_definition(
            n in 2usize..120, m in 1usize..12,
            invalid in proptest::collection::vec(0usize..120, 0..6),
            noise in proptest::collection::vec(0usize..120, 0..6),
            gap in proptest::option::of(1usize..119),
        ) {
            let mut fs = frames(n);
            for i in invalid { if i < n { fs[i].valid = false; } }
            for i in noise { if i < n { fs[i].label = None; } }
            if let Some(g) = gap { for f in fs.iter_mut().skip(g) { f.tick += 3; } }
            match window_dataset(&fs, m, 1, &norm()) {
                Ok(ds) => {
                    prop_assert_eq!(ds.len(), count_positions(&fs, m));
                    for (i, e) in ds.examples().iter().enumerate() {
                        prop_assert!((e.start..e.start + m).all(|j| fs[j].valid));
                        prop_assert!(e.label < 3);
                        prop_assert!(ds.window(i).iter().all(|v| (0.0..=1.0).contains(v)));
                    }
                }
                Err(FeatureError::TooShort { .. }) => prop_assert!(n < m),
                Err(e) => prop_assert!(false, "unexpected {:?}", e),
            }
        }
    }
}
