//! Synthetic corpus generation, percentile bins and tercile classification.
//!
//! Pseudo arousal/valence/dominance scores are derived from corpus z-scores of the acoustic
//! features (the synthetic corpus has no human labels):
//! arousal = z(level) + z(pitch_std), valence = -z(jitter) - z(shimmer),
//! dominance = z(level) - z(pitch_mean).

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captions::{Attribute, AttributeSpec, CaptionError, Emotion, TemplateTable};
use crate::dsp::{extract_features, write_wav, AnalysisConfig, DspError, FeatureVector};
use crate::parallel;
use crate::seed;
use crate::synth::{synthesize, ParamRanges, SynthError, SynthParams};

pub const MIN_BIN_VALUES: usize = 10;
pub const MIN_CORPUS_SIZE: usize = 100;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const BINS_FILE: &str = "bins.json";
pub const STATS_FILE: &str = "stats.json";
pub const WAV_DIR: &str = "wav";

const SYNTH_TAG: u64 = 0xC0;
const CAPTION_TAG: u64 = 0xCA;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("insufficient data: {got} values, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("non-finite value for {0}")]
    NonFiniteValue(Attribute),
    #[error("utterance {utterance_id}: {source}")]
    Utterance { utterance_id: String, source: Box<CorpusError> },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error("missing corpus file {0}")]
    MissingFile(PathBuf),
    #[error("malformed corpus file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CorpusError {
    pub fn name(&self) -> &'static str {
        match self {
            CorpusError::InsufficientData { .. } => "InsufficientData",
            CorpusError::NonFiniteValue(_) => "NonFiniteValue",
            CorpusError::Utterance { source, .. } => source.name(),
            CorpusError::Synth(e) => e.name(),
            CorpusError::Dsp(e) => e.name(),
            CorpusError::Caption(e) => e.name(),
            CorpusError::MissingFile(_) => "MissingFile",
            CorpusError::Malformed { .. } => "MalformedCorpus",
            CorpusError::Io(_) => "IoFailure",
        }
    }
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tercile {
    Low,
    Mid,
    Top,
}

impl Tercile {
    pub const ALL: [Tercile; 3] = [Tercile::Low, Tercile::Mid, Tercile::Top];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Tercile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tercile::Low => "Low",
            Tercile::Mid => "Mid",
            Tercile::Top => "Top",
        })
    }
}

impl FromStr for Tercile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Tercile::Low),
            "mid" => Ok(Tercile::Mid),
            "top" | "high" => Ok(Tercile::Top),
            _ => Err(format!("unknown tercile {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub p30: f64,
    pub p70: f64,
}

/// Low iff value < p30; Mid iff p30 ≤ value < p70; Top otherwise.
pub fn classify(value: f64, bounds: Bounds) -> Tercile {
    if value < bounds.p30 {
        Tercile::Low
    } else if value < bounds.p70 {
        Tercile::Mid
    } else {
        Tercile::Top
    }
}

/// Nearest-rank percentile: the ⌈p·N/100⌉-th smallest value.
pub fn nearest_rank(sorted: &[f64], p: usize) -> f64 {
    let rank = (p * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

pub fn percentile_bounds(values: &[f64], attribute: Attribute) -> Result<Bounds, CorpusError> {
    if values.len() < MIN_BIN_VALUES {
        return Err(CorpusError::InsufficientData { got: values.len(), need: MIN_BIN_VALUES });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CorpusError::NonFiniteValue(attribute));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Bounds { p30: nearest_rank(&sorted, 30), p70: nearest_rank(&sorted, 70) })
}

/// p30/p70 per attribute, serialized as a map keyed by attribute name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinBoundaries {
    pub pitch_mean: Bounds,
    pub pitch_std: Bounds,
    pub level_db: Bounds,
    pub jitter_ratio: Bounds,
    pub shimmer_ratio: Bounds,
    pub arousal: Bounds,
    pub valence: Bounds,
    pub dominance: Bounds,
}

impl BinBoundaries {
    pub fn get(&self, attribute: Attribute) -> Bounds {
        match attribute {
            Attribute::PitchMean => self.pitch_mean,
            Attribute::PitchStd => self.pitch_std,
            Attribute::Level => self.level_db,
            Attribute::Jitter => self.jitter_ratio,
            Attribute::Shimmer => self.shimmer_ratio,
            Attribute::Arousal => self.arousal,
            Attribute::Valence => self.valence,
            Attribute::Dominance => self.dominance,
        }
    }

    pub fn classify(&self, attribute: Attribute, value: f64) -> Tercile {
        classify(value, self.get(attribute))
    }
}

/// Computes bins from per-attribute value sequences, indexed in [`Attribute::ALL`] order.
pub fn compute_bins(values: &[Vec<f64>; 8]) -> Result<BinBoundaries, CorpusError> {
    let b = |i: usize| percentile_bounds(&values[i], Attribute::ALL[i]);
    Ok(BinBoundaries {
        pitch_mean: b(0)?,
        pitch_std: b(1)?,
        level_db: b(2)?,
        jitter_ratio: b(3)?,
        shimmer_ratio: b(4)?,
        arousal: b(5)?,
        valence: b(6)?,
        dominance: b(7)?,
    })
}

/// Corpus mean and (population) standard deviation of the five acoustic features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl NormStats {
    pub fn from_features(features: &[FeatureVector]) -> Result<Self, CorpusError> {
        if features.len() < 2 {
            return Err(CorpusError::InsufficientData { got: features.len(), need: 2 });
        }
        let n = features.len() as f64;
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.to_array()) {
                *m += v / n;
            }
        }
        for f in features {
            for ((s, v), m) in std.iter_mut().zip(f.to_array()).zip(mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for (i, s) in std.iter_mut().enumerate() {
            if !s.is_finite() || !mean[i].is_finite() {
                return Err(CorpusError::NonFiniteValue(Attribute::ALL[i]));
            }
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(NormStats { mean, std })
    }

    pub fn z_scores(&self, features: &FeatureVector) -> [f64; 5] {
        let v = features.to_array();
        std::array::from_fn(|i| (v[i] - self.mean[i]) / self.std[i])
    }

    pub fn pseudo_avd(&self, features: &FeatureVector) -> [f64; 3] {
        let [pm, ps, lv, ji, sh] = self.z_scores(features);
        [lv + ps, -ji - sh, lv - pm]
    }
}

/// Fixed rule table, first match wins.
pub fn emotion_label(spec: &AttributeSpec) -> Emotion {
    let is = |a: Attribute, t: Tercile| spec.get(a) == Some(t);
    if is(Attribute::Level, Tercile::Low) && is(Attribute::PitchMean, Tercile::Low) {
        Emotion::Sad
    } else if is(Attribute::Level, Tercile::Top) && is(Attribute::Jitter, Tercile::Top) {
        Emotion::Angry
    } else if is(Attribute::PitchMean, Tercile::Top) && is(Attribute::PitchStd, Tercile::Top) {
        Emotion::Surprise
    } else if is(Attribute::Level, Tercile::Top) || is(Attribute::PitchMean, Tercile::Top) {
        Emotion::Happy
    } else {
        Emotion::Neutral
    }
}

/// Value of an attribute for a recording: five features followed by the three A/V/D scores.
pub fn attribute_value(features: &FeatureVector, avd: &[f64; 3], attribute: Attribute) -> f64 {
    let i = attribute.index();
    if i < 5 {
        features.to_array()[i]
    } else {
        avd[i - 5]
    }
}

/// Full observed spec of a recording: all eight terciles plus the rule-based emotion label.
pub fn observed_spec(features: &FeatureVector, avd: &[f64; 3], bins: &BinBoundaries) -> AttributeSpec {
    let mut spec = AttributeSpec::new();
    for attribute in Attribute::ALL {
        spec.entries.insert(attribute, bins.classify(attribute, attribute_value(features, avd, attribute)));
    }
    let label = emotion_label(&spec);
    spec.with_emotion(label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub utterance_id: String,
    pub params: SynthParams,
    pub features: FeatureVector,
    pub avd: [f64; 3],
    pub label: Emotion,
    pub caption: String,
    pub spec: AttributeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_utterances: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub ranges: ParamRanges,
    pub analysis: AnalysisConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_utterances: 2000,
            duration_s: 1.0,
            sample_rate: 22050,
            seed: 0,
            ranges: ParamRanges::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
    pub bins: BinBoundaries,
    pub stats: NormStats,
}

impl Corpus {
    pub fn attribute_values(&self) -> [Vec<f64>; 8] {
        std::array::from_fn(|i| {
            self.records
                .iter()
                .map(|r| attribute_value(&r.features, &r.avd, Attribute::ALL[i]))
                .collect()
        })
    }
}

pub fn utterance_id(index: usize) -> String {
    format!("utt_{index:05}")
}

/// Builds the corpus in memory. When `out_dir` is given, WAV files are written as each
/// utterance is synthesized and the manifest, bins and stats are written at the end.
pub fn build_synthetic_corpus(config: &CorpusConfig, out_dir: Option<&Path>) -> Result<Corpus, CorpusError> {
    if config.n_utterances < MIN_CORPUS_SIZE {
        return Err(CorpusError::InsufficientData { got: config.n_utterances, need: MIN_CORPUS_SIZE });
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join(WAV_DIR))?;
    }
    let indices: Vec<usize> = (0..config.n_utterances).collect();
    let analyzed = parallel::map_indexed(&indices, |_, &i| {
        let id = utterance_id(i);
        let run = || -> Result<(SynthParams, FeatureVector), CorpusError> {
            let mut rng = seed::rng(config.seed, &[SYNTH_TAG, i as u64]);
            let params = config.ranges.sample(&mut rng, config.duration_s);
            let wave = synthesize(&params, &mut rng, config.sample_rate)?;
            let features = extract_features(&wave, &config.analysis)?;
            if let Some(dir) = out_dir {
                write_wav(&wave, dir.join(WAV_DIR).join(format!("{id}.wav")))?;
            }
            Ok((params, features))
        };
        run().map_err(|e| CorpusError::Utterance { utterance_id: id, source: Box::new(e) })
    });
    let analyzed = analyzed.into_iter().collect::<Result<Vec<_>, _>>()?;

    let features: Vec<FeatureVector> = analyzed.iter().map(|(_, f)| *f).collect();
    let stats = NormStats::from_features(&features)?;
    let avd: Vec<[f64; 3]> = features.iter().map(|f| stats.pseudo_avd(f)).collect();
    let values: [Vec<f64>; 8] = std::array::from_fn(|i| {
        features.iter().zip(&avd).map(|(f, a)| attribute_value(f, a, Attribute::ALL[i])).collect()
    });
    let bins = compute_bins(&values)?;

    let table = TemplateTable::builtin();
    let mut records = Vec::with_capacity(analyzed.len());
    for (i, ((params, features), avd)) in analyzed.into_iter().zip(avd).enumerate() {
        let spec = observed_spec(&features, &avd, &bins);
        let mut rng = seed::rng(config.seed, &[CAPTION_TAG, i as u64]);
        let caption = table.generate(&spec, &mut rng)?;
        records.push(CorpusRecord {
            utterance_id: utterance_id(i),
            params,
            features,
            avd,
            label: spec.emotion.unwrap_or(Emotion::Neutral),
            caption,
            spec,
        });
    }
    let corpus = Corpus { records, bins, stats };
    if let Some(dir) = out_dir {
        save_corpus(&corpus, dir)?;
    }
    Ok(corpus)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CorpusError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CorpusError> {
    let text = fs::read_to_string(path).map_err(|_| CorpusError::MissingFile(path.to_path_buf()))?;
    serde_json::from_str(&text)
        .map_err(|e| CorpusError::Malformed { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes manifest, bins and stats (not the WAV files).
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
    for record in &corpus.records {
        let line = serde_json::to_string(record).map_err(|e| CorpusError::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    write_json(&dir.join(BINS_FILE), &corpus.bins)?;
    write_json(&dir.join(STATS_FILE), &corpus.stats)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let manifest = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&manifest).map_err(|_| CorpusError::MissingFile(manifest.clone()))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: manifest.clone(),
            message: format!("line {}: {e}", n + 1),
        })?;
        records.push(record);
    }
    Ok(Corpus { records, bins: read_json(&dir.join(BINS_FILE))?, stats: read_json(&dir.join(STATS_FILE))? })
}
