//! Dialogue data model, line-delimited feature-file IO, dataset splits,
//! modality masking, and the synthetic dialogue generator.
//!
//! File format: UTF-8, one JSON object per line. Line 1 is the header
//! (`schema_version`, `num_labels`, `label_names`, `dims`); every following
//! line is one dialogue. Feature values are parsed at 32-bit precision.
//! Unknown keys are rejected.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SureError};
use crate::rng::PortableRng;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub text: usize,
    pub audio: usize,
    pub visual: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub num_labels: usize,
    pub label_names: Vec<String>,
    pub dims: Dims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker: String,
    pub label: usize,
    pub text: Vec<f32>,
    pub audio: Vec<f32>,
    pub visual: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub dialogues: Vec<Dialogue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Audio,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Visual];

    pub fn short(self) -> &'static str {
        match self {
            Modality::Text => "t",
            Modality::Audio => "a",
            Modality::Visual => "v",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        };
        f.write_str(s)
    }
}

/// Which modalities a model run keeps; dropped ones are zeroed in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub text: bool,
    pub audio: bool,
    pub visual: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        ModalityMask {
            text: true,
            audio: true,
            visual: true,
        }
    }
}

impl ModalityMask {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        !(self.text || self.audio || self.visual)
    }

    pub fn keeps(&self, m: Modality) -> bool {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Visual => self.visual,
        }
    }

    /// Parse "text+audio", "t+a", "text,audio", case-insensitive.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = ModalityMask {
            text: false,
            audio: false,
            visual: false,
        };
        for part in s.split(|c| c == '+' || c == ',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "text" | "t" => mask.text = true,
                "audio" | "a" => mask.audio = true,
                "visual" | "v" | "vision" => mask.visual = true,
                other => {
                    return Err(SureError::InvalidArgument(format!(
                        "unknown modality '{other}'"
                    )))
                }
            }
        }
        if mask.is_empty() {
            return Err(SureError::InvalidArgument(
                "modality keep set must be non-empty".into(),
            ));
        }
        Ok(mask)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.text {
            parts.push("text");
        }
        if self.audio {
            parts.push("audio");
        }
        if self.visual {
            parts.push("visual");
        }
        parts.join("+")
    }
}

impl DatasetHeader {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SureError::Data(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.num_labels == 0 || self.num_labels != self.label_names.len() {
            return Err(SureError::Data(format!(
                "num_labels {} does not match {} label names",
                self.num_labels,
                self.label_names.len()
            )));
        }
        if self.dims.text == 0 || self.dims.audio == 0 || self.dims.visual == 0 {
            return Err(SureError::Data("feature dims must be positive".into()));
        }
        Ok(())
    }
}

fn validate_utterance(u: &Utterance, header: &DatasetHeader) -> Result<()> {
    for (name, feat, want) in [
        ("text", &u.text, header.dims.text),
        ("audio", &u.audio, header.dims.audio),
        ("visual", &u.visual, header.dims.visual),
    ] {
        if feat.len() != want {
            return Err(SureError::Data(format!(
                "utterance '{}': {name} feature has {} values, header says {want}",
                u.utt_id,
                feat.len()
            )));
        }
        if feat.iter().any(|v| !v.is_finite()) {
            return Err(SureError::Data(format!(
                "utterance '{}': non-finite {name} feature value",
                u.utt_id
            )));
        }
    }
    if u.label >= header.num_labels {
        return Err(SureError::Data(format!(
            "utterance '{}': label {} out of range [0,{})",
            u.utt_id, u.label, header.num_labels
        )));
    }
    Ok(())
}

impl Dialogue {
    /// Gold labels in utterance order.
    pub fn labels(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.label).collect()
    }
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        for d in &self.dialogues {
            if d.utterances.is_empty() {
                return Err(SureError::Data(format!(
                    "dialogue '{}' has no utterances",
                    d.dialogue_id
                )));
            }
            for u in &d.utterances {
                validate_utterance(u, &self.header)?;
            }
        }
        Ok(())
    }

    pub fn num_utterances(&self) -> usize {
        self.dialogues.iter().map(|d| d.utterances.len()).sum()
    }

    /// Gold labels in dialogue order.
    pub fn labels(&self) -> Vec<usize> {
        self.dialogues
            .iter()
            .flat_map(|d| d.utterances.iter().map(|u| u.label))
            .collect()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, first) = lines.next().ok_or_else(|| SureError::DataAtLine {
        line: 1,
        msg: "file is empty, expected a header line".into(),
    })?;
    let header: DatasetHeader =
        serde_json::from_str(&first?).map_err(|e| SureError::DataAtLine {
            line: 1,
            msg: format!("malformed header: {e}"),
        })?;
    header.validate()?;

    let mut dialogues = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dialogue: Dialogue =
            serde_json::from_str(&line).map_err(|e| SureError::DataAtLine {
                line: idx + 1,
                msg: format!("malformed dialogue: {e}"),
            })?;
        if dialogue.utterances.is_empty() {
            return Err(SureError::DataAtLine {
                line: idx + 1,
                msg: format!("dialogue '{}' has no utterances", dialogue.dialogue_id),
            });
        }
        for u in &dialogue.utterances {
            validate_utterance(u, &header).map_err(|e| SureError::DataAtLine {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        dialogues.push(dialogue);
    }
    Ok(Dataset { header, dialogues })
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer(&mut w, &dataset.header).map_err(io_from_json)?;
    w.write_all(b"\n")?;
    for d in &dataset.dialogues {
        serde_json::to_writer(&mut w, d).map_err(io_from_json)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn io_from_json(e: serde_json::Error) -> SureError {
    SureError::Data(format!("serialization failed: {e}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_labels: usize,
    pub dims: Dims,
    pub num_dialogues: usize,
    pub utterances_min: usize,
    pub utterances_max: usize,
    /// Minimum pairwise centroid distance required (centroids are
    /// orthonormal, distance sqrt(2)).
    pub margin: f64,
    pub noise_text: f64,
    pub noise_audio: f64,
    pub noise_visual: f64,
    /// Probability that an utterance repeats the previous label.
    pub label_corr: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_labels: 4,
            dims: Dims {
                text: 16,
                audio: 12,
                visual: 8,
            },
            num_dialogues: 40,
            utterances_min: 4,
            utterances_max: 12,
            margin: 1.0,
            noise_text: 0.5,
            noise_audio: 0.5,
            noise_visual: 0.5,
            label_corr: 0.4,
            seed: 7,
        }
    }
}

/// Orthonormal class centroids: seeded Gaussian draws, Gram–Schmidt.
/// Requires num_labels <= dim.
fn make_centroids(num: usize, dim: usize, rng: &mut PortableRng) -> Result<Vec<Vec<f64>>> {
    if num > dim {
        return Err(SureError::InvalidArgument(format!(
            "cannot place {num} separated unit centroids in dimension {dim}"
        )));
    }
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(num);
    while centroids.len() < num {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal_f64()).collect();
        for c in &centroids {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= dot * ci;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // degenerate draw, resample
        }
        for vi in &mut v {
            *vi /= norm;
        }
        centroids.push(v);
    }
    Ok(centroids)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_labels == 0 {
        return Err(SureError::InvalidArgument("num_labels must be > 0".into()));
    }
    if spec.margin <= 0.0 {
        return Err(SureError::InvalidArgument("margin must be > 0".into()));
    }
    if spec.margin > std::f64::consts::SQRT_2 + 1e-12 {
        return Err(SureError::InvalidArgument(format!(
            "margin {} exceeds the sqrt(2) separation of unit-norm orthonormal centroids",
            spec.margin
        )));
    }
    for (name, s) in [
        ("noise_text", spec.noise_text),
        ("noise_audio", spec.noise_audio),
        ("noise_visual", spec.noise_visual),
    ] {
        if s < 0.0 {
            return Err(SureError::InvalidArgument(format!("{name} must be >= 0")));
        }
    }
    if spec.utterances_min == 0 || spec.utterances_min > spec.utterances_max {
        return Err(SureError::InvalidArgument(
            "utterance count range must satisfy 1 <= min <= max".into(),
        ));
    }

    let mut rng = PortableRng::new(spec.seed);
    let cent_t = make_centroids(spec.num_labels, spec.dims.text, &mut rng)?;
    let cent_a = make_centroids(spec.num_labels, spec.dims.audio, &mut rng)?;
    let cent_v = make_centroids(spec.num_labels, spec.dims.visual, &mut rng)?;

    let header = DatasetHeader {
        schema_version: SCHEMA_VERSION,
        num_labels: spec.num_labels,
        label_names: (0..spec.num_labels).map(|i| format!("class_{i}")).collect(),
        dims: spec.dims,
    };

    let sample = |cent: &[f64], scale: f64, rng: &mut PortableRng| -> Vec<f32> {
        cent.iter()
            .map(|&c| (c + scale * rng.normal_f64()) as f32)
            .collect()
    };

    let mut dialogues = Vec::with_capacity(spec.num_dialogues);
    for di in 0..spec.num_dialogues {
        let span = (spec.utterances_max - spec.utterances_min + 1) as u64;
        let n = spec.utterances_min + (rng.next_u64() % span) as usize;
        let mut utterances = Vec::with_capacity(n);
        let mut prev_label: Option<usize> = None;
        for ui in 0..n {
            let label = match prev_label {
                Some(p) if rng.uniform_f64() < spec.label_corr => p,
                _ => (rng.next_u64() % spec.num_labels as u64) as usize,
            };
            prev_label = Some(label);
            utterances.push(Utterance {
                utt_id: format!("d{di}_u{ui}"),
                speaker: format!("spk_{}", rng.next_u64() % 2),
                label,
                text: sample(&cent_t[label], spec.noise_text, &mut rng),
                audio: sample(&cent_a[label], spec.noise_audio, &mut rng),
                visual: sample(&cent_v[label], spec.noise_visual, &mut rng),
            });
        }
        dialogues.push(Dialogue {
            dialogue_id: format!("d{di}"),
            utterances,
        });
    }
    Ok(Dataset { header, dialogues })
}

/// Replace dropped modalities by zero vectors of the original dimension.
pub fn mask_modalities(dataset: &Dataset, keep: ModalityMask) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(SureError::InvalidArgument(
            "modality keep set must be non-empty".into(),
        ));
    }
    let mut out = dataset.clone();
    for d in &mut out.dialogues {
        for u in &mut d.utterances {
            if !keep.text {
                u.text.iter_mut().for_each(|v| *v = 0.0);
            }
            if !keep.audio {
                u.audio.iter_mut().for_each(|v| *v = 0.0);
            }
            if !keep.visual {
                u.visual.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    Ok(out)
}

/// Partition dialogues by the given fractions, shuffled under the seed.
pub fn split_dataset(
    dataset: &Dataset,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| f <= 0.0) {
        return Err(SureError::InvalidArgument(
            "split fractions must be positive".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SureError::InvalidArgument(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let n = dataset.dialogues.len();
    if n < fractions.len() {
        return Err(SureError::InvalidArgument(format!(
            "cannot split {n} dialogues into {} parts",
            fractions.len()
        )));
    }
    let mut rng = PortableRng::new(seed);
    let order = rng.permutation(n);

    // cumulative rounding keeps the partition exact
    let mut splits = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0usize;
    for (si, &f) in fractions.iter().enumerate() {
        cum += f;
        let end = if si + 1 == fractions.len() {
            n
        } else {
            (cum * n as f64).round() as usize
        };
        let dialogues = order[start..end]
            .iter()
            .map(|&i| dataset.dialogues[i].clone())
            .collect();
        splits.push(Dataset {
            header: dataset.header.clone(),
            dialogues,
        });
        start = end;
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_labels: 3,
            dims: Dims {
                text: 4,
                audio: 3,
                visual: 3,
            },
            num_dialogues: 10,
            utterances_min: 2,
            utterances_max: 5,
            noise_text: 0.3,
            noise_audio: 0.3,
            noise_visual: 0.3,
            ..SyntheticSpec::default()
        }
    }

    fn nearest_centroid_accuracy(ds: &Dataset, pick: impl Fn(&Utterance) -> &[f32]) -> f64 {
        // estimate centroids from labels, then classify
        let k = ds.header.num_labels;
        let dim = pick(&ds.dialogues[0].utterances[0]).len();
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for d in &ds.dialogues {
            for u in &d.utterances {
                counts[u.label] += 1;
                for (s, &v) in sums[u.label].iter_mut().zip(pick(u)) {
                    *s += v as f64;
                }
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            if c > 0 {
                s.iter_mut().for_each(|v| *v /= c as f64);
            }
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for d in &ds.dialogues {
            for u in &d.utterances {
                let f = pick(u);
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = sums[a]
                            .iter()
                            .zip(f)
                            .map(|(c, &v)| (c - v as f64).powi(2))
                            .sum();
                        let db: f64 = sums[b]
                            .iter()
                            .zip(f)
                            .map(|(c, &v)| (c - v as f64).powi(2))
                            .sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                if best == u.label {
                    correct += 1;
                }
                total += 1;
            }
        }
        correct as f64 / total as f64
    }

    #[test]
    fn noiseless_synthetic_is_perfectly_separable() {
        let spec = SyntheticSpec {
            noise_text: 0.0,
            noise_audio: 0.0,
            noise_visual: 0.0,
            ..tiny_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(nearest_centroid_accuracy(&ds, |u| &u.text), 1.0);
        assert_eq!(nearest_centroid_accuracy(&ds, |u| &u.audio), 1.0);
        assert_eq!(nearest_centroid_accuracy(&ds, |u| &u.visual), 1.0);
    }

    #[test]
    fn synthetic_deterministic_and_byte_identical() {
        let spec = tiny_spec();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        save_dataset(&a, &pa).unwrap();
        save_dataset(&b, &pb).unwrap();
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }

    #[test]
    fn spec_example_noisy_text_beats_chance() {
        let spec = SyntheticSpec {
            num_labels: 4,
            dims: Dims {
                text: 16,
                audio: 12,
                visual: 8,
            },
            num_dialogues: 40,
            noise_text: 0.5,
            noise_audio: 0.5,
            noise_visual: 0.5,
            seed: 7,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert!(nearest_centroid_accuracy(&ds, |u| &u.text) > 0.25);
    }

    #[test]
    fn synthetic_rejects_too_many_labels_for_dim() {
        let spec = SyntheticSpec {
            num_labels: 5,
            dims: Dims {
                text: 4,
                audio: 8,
                visual: 8,
            },
            ..tiny_spec()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn round_trip_load_save() {
        let ds = generate_synthetic(&tiny_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn load_reports_line_number_on_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let ds = generate_synthetic(&tiny_spec()).unwrap();
        save_dataset(&ds, &path).unwrap();
        let mut content = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[3] = "{not json".into();
        content = broken.join("\n");
        std::fs::write(&path, content).unwrap();
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn load_names_utterance_on_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dim.jsonl");
        let header = r#"{"schema_version":1,"num_labels":2,"label_names":["a","b"],"dims":{"text":4,"audio":3,"visual":2}}"#;
        let dlg = r#"{"dialogue_id":"d0","utterances":[{"utt_id":"d0_u0","speaker":"s","label":0,"text":[1,2,3,4,5],"audio":[0,0,0],"visual":[0,0]}]}"#;
        std::fs::write(&path, format!("{header}\n{dlg}\n")).unwrap();
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("d0_u0"), "{err}");
    }

    #[test]
    fn load_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("unk.jsonl");
        let header = r#"{"schema_version":1,"num_labels":2,"label_names":["a","b"],"dims":{"text":2,"audio":2,"visual":2},"extra":1}"#;
        std::fs::write(&path, format!("{header}\n")).unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn masking_identity_definition_and_composition() {
        let ds = generate_synthetic(&tiny_spec()).unwrap();
        let all = mask_modalities(&ds, ModalityMask::all()).unwrap();
        assert_eq!(ds, all);

        let text_only = ModalityMask {
            text: true,
            audio: false,
            visual: false,
        };
        let masked = mask_modalities(&ds, text_only).unwrap();
        for (d, dm) in ds.dialogues.iter().zip(&masked.dialogues) {
            for (u, um) in d.utterances.iter().zip(&dm.utterances) {
                assert_eq!(u.text, um.text);
                assert_eq!(u.label, um.label);
                assert!(um.audio.iter().all(|&v| v == 0.0));
                assert!(um.visual.iter().all(|&v| v == 0.0));
            }
        }

        let ta = ModalityMask {
            text: true,
            audio: true,
            visual: false,
        };
        let via_ta = mask_modalities(&mask_modalities(&ds, ta).unwrap(), text_only).unwrap();
        assert_eq!(masked, via_ta);
    }

    #[test]
    fn mask_rejects_empty_keep_set() {
        let ds = generate_synthetic(&tiny_spec()).unwrap();
        let empty = ModalityMask {
            text: false,
            audio: false,
            visual: false,
        };
        assert!(mask_modalities(&ds, empty).is_err());
    }

    #[test]
    fn split_is_an_exact_partition() {
        let ds = generate_synthetic(&tiny_spec()).unwrap();
        let splits = split_dataset(&ds, &[0.8, 0.2], 1).unwrap();
        assert_eq!(splits[0].dialogues.len(), 8);
        assert_eq!(splits[1].dialogues.len(), 2);
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        for s in &splits {
            for d in &s.dialogues {
                assert!(ids.insert(&d.dialogue_id), "dialogue in two splits");
            }
        }
        assert_eq!(ids.len(), 10);

        let again = split_dataset(&ds, &[0.8, 0.2], 1).unwrap();
        assert_eq!(splits, again);

        let one = split_dataset(&ds, &[1.0], 3).unwrap();
        assert_eq!(one[0].dialogues.len(), 10);
    }

    #[test]
    fn split_rejects_fewer_dialogues_than_parts() {
        let spec = SyntheticSpec {
            num_dialogues: 2,
            ..tiny_spec()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert!(split_dataset(&ds, &[0.4, 0.3, 0.3], 0).is_err());
    }
}
