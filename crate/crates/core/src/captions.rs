//! Template captions: rendering an [`AttributeSpec`] into text and parsing text back.
//!
//! Clauses come from a template table shipped as `data/templates.json`. A caption is the
//! emotion clause (if any) followed by attribute clauses in [`Attribute`] order, joined by
//! `" and "`. When the first clause has no subject of its own it is prefixed with
//! `"the speaker"`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Tercile;

const TEMPLATE_JSON: &str = include_str!("../data/templates.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CaptionError {
    #[error("attribute spec is empty")]
    EmptySpec,
    #[error("caption is empty")]
    EmptyCaption,
    #[error("unrecognized clause: {0:?}")]
    UnrecognizedClause(String),
    #[error("attribute {0} given more than once")]
    DuplicateAttribute(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("invalid template table: {0}")]
    InvalidTemplates(String),
}

impl CaptionError {
    pub fn name(&self) -> &'static str {
        match self {
            CaptionError::EmptySpec => "EmptySpec",
            CaptionError::EmptyCaption => "EmptyCaption",
            CaptionError::UnrecognizedClause(_) => "UnrecognizedClause",
            CaptionError::DuplicateAttribute(_) => "DuplicateAttribute",
            CaptionError::UnknownAttribute(_) => "UnknownAttribute",
            CaptionError::InvalidTemplates(_) => "InvalidTemplates",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    PitchMean,
    PitchStd,
    Level,
    Jitter,
    Shimmer,
    Arousal,
    Valence,
    Dominance,
}

impl Attribute {
    pub const ALL: [Attribute; 8] = [
        Attribute::PitchMean,
        Attribute::PitchStd,
        Attribute::Level,
        Attribute::Jitter,
        Attribute::Shimmer,
        Attribute::Arousal,
        Attribute::Valence,
        Attribute::Dominance,
    ];

    /// The five attributes realized directly by the synthesizer.
    pub const CONTROLLABLE: [Attribute; 5] = [
        Attribute::PitchMean,
        Attribute::PitchStd,
        Attribute::Level,
        Attribute::Jitter,
        Attribute::Shimmer,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::PitchMean => "pitch_mean",
            Attribute::PitchStd => "pitch_std",
            Attribute::Level => "level",
            Attribute::Jitter => "jitter",
            Attribute::Shimmer => "shimmer",
            Attribute::Arousal => "arousal",
            Attribute::Valence => "valence",
            Attribute::Dominance => "dominance",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = CaptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CaptionError::UnknownAttribute(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Neutral,
    Happy,
    Angry,
    Sad,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; 5] =
        [Emotion::Neutral, Emotion::Happy, Emotion::Angry, Emotion::Sad, Emotion::Surprise];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Angry => "angry",
            Emotion::Sad => "sad",
            Emotion::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = CaptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CaptionError::UnknownAttribute(format!("emotion {s}")))
    }
}

/// Requested (or observed) tercile per attribute plus an optional emotion label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AttributeSpec {
    pub entries: BTreeMap<Attribute, Tercile>,
    pub emotion: Option<Emotion>,
}

impl AttributeSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, attribute: Attribute, tercile: Tercile) -> Self {
        self.entries.insert(attribute, tercile);
        self
    }

    pub fn with_emotion(mut self, emotion: Emotion) -> Self {
        self.emotion = Some(emotion);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.emotion.is_none()
    }

    pub fn get(&self, attribute: Attribute) -> Option<Tercile> {
        self.entries.get(&attribute).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len() + usize::from(self.emotion.is_some())
    }

    /// A uniformly sized random non-empty subset of this spec's entries (emotion included).
    pub fn random_subset<R: Rng + ?Sized>(&self, rng: &mut R) -> AttributeSpec {
        let n = self.len();
        if n == 0 {
            return self.clone();
        }
        let k = rng.random_range(1..=n);
        let picked = rand::seq::index::sample(rng, n, k);
        let mut out = AttributeSpec::new();
        for i in picked.iter() {
            match self.entries.iter().nth(i) {
                Some((&a, &t)) => {
                    out.entries.insert(a, t);
                }
                None => out.emotion = self.emotion,
            }
        }
        out
    }

    /// Builds a spec from string pairs such as `{"level": "Top", "emotion": "angry"}`.
    pub fn from_string_map(map: &BTreeMap<String, String>) -> Result<Self, CaptionError> {
        let mut spec = AttributeSpec::new();
        for (key, value) in map {
            if key == "emotion" {
                spec.emotion = Some(value.to_ascii_lowercase().parse()?);
            } else {
                let attribute: Attribute = key.parse()?;
                let tercile: Tercile = value
                    .parse()
                    .map_err(|_| CaptionError::UnknownAttribute(format!("{key}={value}")))?;
                spec.entries.insert(attribute, tercile);
            }
        }
        Ok(spec)
    }

    pub fn to_string_map(&self) -> BTreeMap<String, String> {
        let mut map: BTreeMap<String, String> =
            self.entries.iter().map(|(a, t)| (a.name().to_string(), t.to_string())).collect();
        if let Some(e) = self.emotion {
            map.insert("emotion".into(), e.name().into());
        }
        map
    }
}

impl fmt::Display for AttributeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::with_capacity(self.len());
        if let Some(e) = self.emotion {
            parts.push(format!("emotion: {e}"));
        }
        parts.extend(self.entries.iter().map(|(a, t)| format!("{a}: {t}")));
        write!(f, "{{{}}}", parts.join(", "))
    }
}

impl Serialize for AttributeSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_string_map().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AttributeSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, String>::deserialize(deserializer)?;
        AttributeSpec::from_string_map(&map).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Deserialize)]
struct SynonymRow {
    clause: String,
    tercile: Tercile,
}

#[derive(Debug, Deserialize)]
struct AttributeRow {
    attribute: Attribute,
    low: String,
    mid: String,
    top: String,
    synonyms: Vec<SynonymRow>,
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    subject: String,
    emotion_clause: String,
    emotions: Vec<Emotion>,
    attributes: Vec<AttributeRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClauseMeaning {
    Attribute(Attribute, Tercile),
    Emotion(Emotion),
}

/// Canonical clause per (attribute, tercile) plus accepted synonyms.
#[derive(Debug, Clone)]
pub struct TemplateTable {
    subject: String,
    emotion_clause: String,
    canonical: BTreeMap<(Attribute, Tercile), String>,
    synonyms: Vec<(String, Attribute, Tercile)>,
    lookup: HashMap<String, ClauseMeaning>,
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn lacks_subject(clause: &str) -> bool {
    clause.starts_with("has ") || clause.starts_with("is ")
}

impl TemplateTable {
    pub fn from_json(json: &str) -> Result<Self, CaptionError> {
        let file: TemplateFile =
            serde_json::from_str(json).map_err(|e| CaptionError::InvalidTemplates(e.to_string()))?;
        let mut canonical = BTreeMap::new();
        let mut synonyms = Vec::new();
        let mut lookup = HashMap::new();
        let mut insert = |clause: String, meaning: ClauseMeaning| {
            let key = normalize(&clause);
            match lookup.insert(key.clone(), meaning) {
                Some(prev) if prev != meaning => {
                    Err(CaptionError::InvalidTemplates(format!("clause {key:?} is ambiguous")))
                }
                Some(_) => Err(CaptionError::InvalidTemplates(format!("clause {key:?} repeated"))),
                None => Ok(()),
            }
        };
        for row in file.attributes {
            for (tercile, clause) in
                [(Tercile::Low, row.low), (Tercile::Mid, row.mid), (Tercile::Top, row.top)]
            {
                let clause = normalize(&clause);
                insert(clause.clone(), ClauseMeaning::Attribute(row.attribute, tercile))?;
                if canonical.insert((row.attribute, tercile), clause).is_some() {
                    return Err(CaptionError::InvalidTemplates(format!(
                        "attribute {} listed twice",
                        row.attribute
                    )));
                }
            }
            for syn in row.synonyms {
                let clause = normalize(&syn.clause);
                insert(clause.clone(), ClauseMeaning::Attribute(row.attribute, syn.tercile))?;
                synonyms.push((clause, row.attribute, syn.tercile));
            }
        }
        for attribute in Attribute::ALL {
            for tercile in Tercile::ALL {
                if !canonical.contains_key(&(attribute, tercile)) {
                    return Err(CaptionError::InvalidTemplates(format!(
                        "missing clause for {attribute} {tercile}"
                    )));
                }
            }
        }
        if !file.emotion_clause.contains("{emotion}") {
            return Err(CaptionError::InvalidTemplates("emotion clause lacks {emotion}".into()));
        }
        for emotion in file.emotions {
            let clause = file.emotion_clause.replace("{emotion}", emotion.name());
            insert(clause, ClauseMeaning::Emotion(emotion))?;
        }
        Ok(TemplateTable {
            subject: normalize(&file.subject),
            emotion_clause: normalize(&file.emotion_clause),
            canonical,
            synonyms,
            lookup,
        })
    }

    /// The table shipped with the crate.
    pub fn builtin() -> &'static TemplateTable {
        static TABLE: OnceLock<TemplateTable> = OnceLock::new();
        TABLE.get_or_init(|| TemplateTable::from_json(TEMPLATE_JSON).expect("bundled templates are valid"))
    }

    pub fn canonical(&self, attribute: Attribute, tercile: Tercile) -> &str {
        &self.canonical[&(attribute, tercile)]
    }

    pub fn synonyms(&self, attribute: Attribute) -> impl Iterator<Item = (&str, Tercile)> {
        self.synonyms
            .iter()
            .filter(move |(_, a, _)| *a == attribute)
            .map(|(c, _, t)| (c.as_str(), *t))
    }

    fn emotion_text(&self, emotion: Emotion) -> String {
        self.emotion_clause.replace("{emotion}", emotion.name())
    }

    fn join(&self, clauses: &[String]) -> String {
        let mut text = clauses.join(" and ");
        if clauses.first().is_some_and(|c| lacks_subject(c)) {
            text = format!("{} {text}", self.subject);
        }
        text
    }

    /// Renders a spec, choosing the loud synonym for a high level when `use_synonym` says so.
    fn render(
        &self,
        spec: &AttributeSpec,
        mut use_synonym: impl FnMut() -> bool,
    ) -> Result<String, CaptionError> {
        if spec.is_empty() {
            return Err(CaptionError::EmptySpec);
        }
        let mut clauses = Vec::with_capacity(spec.len());
        if let Some(emotion) = spec.emotion {
            clauses.push(self.emotion_text(emotion));
        }
        for (&attribute, &tercile) in &spec.entries {
            let mut clause = self.canonical(attribute, tercile).to_string();
            if attribute == Attribute::Level && tercile == Tercile::Top && use_synonym() {
                clause = "is loud".to_string();
            }
            clauses.push(clause);
        }
        Ok(self.join(&clauses))
    }

    /// Caption using canonical clauses only.
    pub fn canonical_caption(&self, spec: &AttributeSpec) -> Result<String, CaptionError> {
        self.render(spec, || false)
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        spec: &AttributeSpec,
        rng: &mut R,
    ) -> Result<String, CaptionError> {
        self.render(spec, || rng.random_bool(0.5))
    }

    pub fn parse(&self, text: &str) -> Result<AttributeSpec, CaptionError> {
        let text = normalize(text);
        let text = text.trim_end_matches('.').trim();
        if text.is_empty() {
            return Err(CaptionError::EmptyCaption);
        }
        let mut spec = AttributeSpec::new();
        for piece in text.split(',') {
            for raw in piece.split(" and ") {
                let clause = raw.trim();
                match self.match_clause(clause)? {
                    ClauseMeaning::Attribute(attribute, tercile) => {
                        if spec.entries.insert(attribute, tercile).is_some() {
                            return Err(CaptionError::DuplicateAttribute(attribute.name().into()));
                        }
                    }
                    ClauseMeaning::Emotion(emotion) => {
                        if spec.emotion.replace(emotion).is_some() {
                            return Err(CaptionError::DuplicateAttribute("emotion".into()));
                        }
                    }
                }
            }
        }
        Ok(spec)
    }

    fn match_clause(&self, clause: &str) -> Result<ClauseMeaning, CaptionError> {
        if let Some(meaning) = self.lookup.get(clause) {
            return Ok(*meaning);
        }
        let without_the = clause.strip_prefix("the ").unwrap_or(clause);
        if let Some(meaning) = self.lookup.get(without_the) {
            return Ok(*meaning);
        }
        // "speaker has a low pitch" / "the speaker is loud"
        if let Some(rest) = without_the.strip_prefix("speaker ") {
            if let Some(meaning) = self.lookup.get(rest) {
                return Ok(*meaning);
            }
        }
        // "is angry" after a shared subject
        if let Some(rest) = clause.strip_prefix("is ") {
            if let Ok(emotion) = rest.parse::<Emotion>() {
                return Ok(ClauseMeaning::Emotion(emotion));
            }
        }
        Err(CaptionError::UnrecognizedClause(clause.to_string()))
    }
}

pub fn generate_caption<R: Rng + ?Sized>(
    spec: &AttributeSpec,
    rng: &mut R,
) -> Result<String, CaptionError> {
    TemplateTable::builtin().generate(spec, rng)
}

pub fn parse_caption(text: &str) -> Result<AttributeSpec, CaptionError> {
    TemplateTable::builtin().parse(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// 15 single-attribute captions plus the 3 loudness synonyms.
    Single,
    /// The single set plus 26 two-attribute combinations.
    Paper44,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(EvalMode::Single),
            "paper44" => Ok(EvalMode::Paper44),
            other => Err(format!("unknown eval mode {other:?} (expected single or paper44)")),
        }
    }
}

pub const PAIR_CAPTIONS: usize = 26;

pub fn eval_caption_set(table: &TemplateTable, mode: EvalMode) -> Vec<String> {
    let mut captions = Vec::new();
    for attribute in Attribute::CONTROLLABLE {
        for tercile in Tercile::ALL {
            let spec = AttributeSpec::new().with(attribute, tercile);
            captions.push(table.canonical_caption(&spec).expect("non-empty spec"));
        }
    }
    for (clause, _) in table.synonyms(Attribute::Level) {
        captions.push(table.join(&[clause.to_string()]));
    }
    if mode == EvalMode::Paper44 {
        let mut pairs = Vec::new();
        for (i, &a) in Attribute::CONTROLLABLE.iter().enumerate() {
            for &b in &Attribute::CONTROLLABLE[i + 1..] {
                for ta in Tercile::ALL {
                    for tb in Tercile::ALL {
                        pairs.push(AttributeSpec::new().with(a, ta).with(b, tb));
                    }
                }
            }
        }
        captions.extend(
            pairs
                .iter()
                .take(PAIR_CAPTIONS)
                .map(|spec| table.canonical_caption(spec).expect("non-empty spec")),
        );
    }
    captions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn table() -> &'static TemplateTable {
        TemplateTable::builtin()
    }

    #[test]
    fn renders_appendix_clauses() {
        let mut rng = seed::rng(0, &[]);
        let spec = AttributeSpec::new().with(Attribute::PitchMean, Tercile::Low);
        assert_eq!(generate_caption(&spec, &mut rng).unwrap(), "the speaker has a low pitch");
        let spec = AttributeSpec::new().with(Attribute::Jitter, Tercile::Top).with_emotion(Emotion::Angry);
        assert_eq!(generate_caption(&spec, &mut rng).unwrap(), "speaker is angry and has a high jitter");
        assert_eq!(generate_caption(&AttributeSpec::new(), &mut rng), Err(CaptionError::EmptySpec));
    }

    #[test]
    fn high_level_uses_both_phrasings() {
        let spec = AttributeSpec::new().with(Attribute::Level, Tercile::Top);
        let mut rng = seed::rng(11, &[]);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..64 {
            seen.insert(generate_caption(&spec, &mut rng).unwrap());
        }
        let expected: std::collections::BTreeSet<String> = [
            "the speaker has a high equivalent sound level".to_string(),
            "the speaker is loud".to_string(),
        ]
        .into();
        assert_eq!(seen, expected);
    }

    #[test]
    fn parses_appendix_and_quantifiers() {
        assert_eq!(
            parse_caption("the speaker has a high pitch variation").unwrap(),
            AttributeSpec::new().with(Attribute::PitchStd, Tercile::Top)
        );
        assert_eq!(
            parse_caption("is loud").unwrap(),
            AttributeSpec::new().with(Attribute::Level, Tercile::Top)
        );
        assert_eq!(
            parse_caption("The speaker is silent.").unwrap(),
            AttributeSpec::new().with(Attribute::Level, Tercile::Low)
        );
        assert_eq!(
            parse_caption("loudness is just right").unwrap(),
            AttributeSpec::new().with(Attribute::Level, Tercile::Mid)
        );
        assert_eq!(
            parse_caption("speaker is sad, has low arousal and valence is at an average level").unwrap(),
            AttributeSpec::new()
                .with(Attribute::Arousal, Tercile::Low)
                .with(Attribute::Valence, Tercile::Mid)
                .with_emotion(Emotion::Sad)
        );
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_caption("the speaker purrs melodically"),
            Err(CaptionError::UnrecognizedClause(_))
        ));
        assert_eq!(parse_caption("   "), Err(CaptionError::EmptyCaption));
        assert_eq!(
            parse_caption("is loud and is silent"),
            Err(CaptionError::DuplicateAttribute("level".into()))
        );
        assert_eq!(
            parse_caption("speaker is sad and speaker is happy"),
            Err(CaptionError::DuplicateAttribute("emotion".into()))
        );
        assert!(matches!(parse_caption("has a low pitch and"), Err(CaptionError::UnrecognizedClause(_))));
    }

    #[test]
    fn single_set_has_eighteen_single_entry_captions() {
        let captions = eval_caption_set(table(), EvalMode::Single);
        assert_eq!(captions.len(), 18);
        for c in &captions {
            let spec = parse_caption(c).unwrap();
            assert_eq!(spec.entries.len(), 1, "{c}");
            assert!(spec.emotion.is_none());
        }
    }

    #[test]
    fn paper44_is_distinct_and_parses() {
        let captions = eval_caption_set(table(), EvalMode::Paper44);
        assert_eq!(captions.len(), 44);
        let distinct: std::collections::BTreeSet<_> = captions.iter().collect();
        assert_eq!(distinct.len(), 44);
        for c in &captions[18..] {
            assert_eq!(parse_caption(c).unwrap().entries.len(), 2, "{c}");
        }
        assert_eq!(captions, eval_caption_set(table(), EvalMode::Paper44));
    }

    #[test]
    fn table_rejects_ambiguous_synonyms() {
        let broken = TEMPLATE_JSON.replace("\"clause\": \"is silent\"", "\"clause\": \"has a low jitter\"");
        assert!(matches!(TemplateTable::from_json(&broken), Err(CaptionError::InvalidTemplates(_))));
    }

    #[test]
    fn spec_json_and_display() {
        let spec = AttributeSpec::new().with(Attribute::Level, Tercile::Top).with_emotion(Emotion::Happy);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"emotion":"happy","level":"Top"}"#);
        assert_eq!(serde_json::from_str::<AttributeSpec>(&json).unwrap(), spec);
        assert_eq!(spec.to_string(), "{emotion: happy, level: Top}");
        assert!(serde_json::from_str::<AttributeSpec>(r#"{"timbre":"Low"}"#).is_err());
    }

    fn spec_strategy() -> impl Strategy<Value = AttributeSpec> {
        (
            proptest::collection::vec(proptest::option::of(0usize..3), 8),
            proptest::option::of(0usize..5),
        )
            .prop_filter_map("empty spec", |(slots, emotion)| {
                let mut spec = AttributeSpec::new();
                for (attribute, slot) in Attribute::ALL.into_iter().zip(slots) {
                    if let Some(t) = slot {
                        spec.entries.insert(attribute, Tercile::ALL[t]);
                    }
                }
                spec.emotion = emotion.map(|e| Emotion::ALL[e]);
                (!spec.is_empty()).then_some(spec)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn generate_then_parse_round_trips(spec in spec_strategy(), rng_seed in any::<u64>()) {
            let mut rng = seed::rng(rng_seed, &[]);
            let text = generate_caption(&spec, &mut rng).unwrap();
            prop_assert_eq!(parse_caption(&text).unwrap(), spec);
        }

        #[test]
        fn parser_is_total(text in "\\PC{0,60}") {
            let _ = parse_caption(&text);
        }
    }
}
