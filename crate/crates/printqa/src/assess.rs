//! Assessment: per-configuration prompt chains and single-image quality
//! verdicts.
//!
//! Four ablation configurations exist. `generic` shows only the target
//! image; `knowledge_only` adds the distilled knowledge brief;
//! `reference_only` adds a known-good reference image but no knowledge;
//! `full` combines both and inserts a grounding turn that walks the model
//! through applying each measurement procedure to the reference before the
//! target appears. Every chain ends by demanding a machine-readable
//! `VERDICT: GOOD` / `VERDICT: BAD` line.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatRequest, ChatTurn, ImagePart, ModelBackend};
use crate::extract::KnowledgeBrief;

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("config {config} requires a knowledge brief")]
    MissingBrief { config: AblationConfig },
    #[error("config {config} must not receive a knowledge brief")]
    UnexpectedBrief { config: AblationConfig },
    #[error("config {config} requires a reference image")]
    MissingReference { config: AblationConfig },
    #[error("config {config} must not receive a reference image")]
    UnexpectedReference { config: AblationConfig },
    #[error("image {image_id} has role {actual}, expected {expected}")]
    WrongImageRole { image_id: String, expected: ImageRole, actual: ImageRole },
    #[error("image {image_id} has no bytes")]
    EmptyImage { image_id: String },
    #[error("media type {media_type:?} not supported (expected one of {allowed:?})")]
    UnsupportedMediaType { media_type: String, allowed: &'static [&'static str] },
    #[error("unknown ablation config {0:?}")]
    UnknownConfig(String),
    #[error("manifest invalid: {0}")]
    ManifestInvalid(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Media types accepted for image inputs.
pub const ALLOWED_MEDIA_TYPES: &[&str] = &["image/png", "image/jpeg"];

/// Whether an image is the expert-selected good reference or the print
/// under assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Reference,
    Target,
}

impl fmt::Display for ImageRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageRole::Reference => f.write_str("reference"),
            ImageRole::Target => f.write_str("target"),
        }
    }
}

mod bytes_base64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let encoded = String::deserialize(deserializer)?;
        base64::engine::general_purpose::STANDARD
            .decode(encoded.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

/// One image with identity, payload, and role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInput {
    pub image_id: String,
    #[serde(with = "bytes_base64")]
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub role: ImageRole,
}

impl ImageInput {
    pub fn new(
        image_id: &str,
        bytes: Vec<u8>,
        media_type: &str,
        role: ImageRole,
    ) -> Result<Self, AssessError> {
        if bytes.is_empty() {
            return Err(AssessError::EmptyImage { image_id: image_id.to_string() });
        }
        if !ALLOWED_MEDIA_TYPES.contains(&media_type) {
            return Err(AssessError::UnsupportedMediaType {
                media_type: media_type.to_string(),
                allowed: ALLOWED_MEDIA_TYPES,
            });
        }
        Ok(Self {
            image_id: image_id.to_string(),
            bytes,
            media_type: media_type.to_string(),
            role,
        })
    }

    /// Load from disk, inferring the media type from the file extension.
    pub fn from_file(image_id: &str, path: &Path, role: ImageRole) -> Result<Self, AssessError> {
        let media_type = match path.extension().and_then(|e| e.to_str()).map(|e| e.to_lowercase()) {
            Some(ext) if ext == "png" => "image/png",
            Some(ext) if ext == "jpg" || ext == "jpeg" => "image/jpeg",
            other => {
                return Err(AssessError::UnsupportedMediaType {
                    media_type: other.unwrap_or_default(),
                    allowed: ALLOWED_MEDIA_TYPES,
                })
            }
        };
        let bytes = std::fs::read(path)
            .map_err(|source| AssessError::Io { path: path.display().to_string(), source })?;
        Self::new(image_id, bytes, media_type, role)
    }

    pub fn to_part(&self) -> ImagePart {
        ImagePart::from_bytes(&self.media_type, &self.bytes)
    }
}

/// The four ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationConfig {
    Generic,
    KnowledgeOnly,
    ReferenceOnly,
    Full,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [
        AblationConfig::Generic,
        AblationConfig::KnowledgeOnly,
        AblationConfig::ReferenceOnly,
        AblationConfig::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationConfig::Generic => "generic",
            AblationConfig::KnowledgeOnly => "knowledge_only",
            AblationConfig::ReferenceOnly => "reference_only",
            AblationConfig::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, AssessError> {
        match name {
            "generic" => Ok(AblationConfig::Generic),
            "knowledge_only" => Ok(AblationConfig::KnowledgeOnly),
            "reference_only" => Ok(AblationConfig::ReferenceOnly),
            "full" => Ok(AblationConfig::Full),
            other => Err(AssessError::UnknownConfig(other.to_string())),
        }
    }

    pub fn needs_brief(self) -> bool {
        matches!(self, AblationConfig::KnowledgeOnly | AblationConfig::Full)
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, AblationConfig::ReferenceOnly | AblationConfig::Full)
    }

    /// Only the full configuration grounds the knowledge on the reference;
    /// reference_only structurally cannot have a grounding stage.
    pub fn has_grounding(self) -> bool {
        self == AblationConfig::Full
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Role of one chain turn. `AssistantExpected` marks the point where the
/// model's own grounding answer is inserted at execution time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnRole {
    System,
    User,
    AssistantExpected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTurn {
    pub role: TurnRole,
    pub text: String,
    pub images: Vec<ImageInput>,
}

/// An immutable, per-sample conversation plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptChain {
    pub turns: Vec<ChainTurn>,
    /// Always 0; the only constructor pins it.
    pub temperature: f64,
}

impl PromptChain {
    fn new(turns: Vec<ChainTurn>) -> Self {
        Self { turns, temperature: 0.0 }
    }

    pub fn has_grounding_turn(&self) -> bool {
        self.turns.iter().any(|t| t.role == TurnRole::AssistantExpected)
    }

    pub fn contains_reference_image(&self) -> bool {
        self.turns
            .iter()
            .flat_map(|t| &t.images)
            .any(|i| i.role == ImageRole::Reference)
    }

    pub fn target_image_count(&self) -> usize {
        self.turns
            .iter()
            .flat_map(|t| &t.images)
            .filter(|i| i.role == ImageRole::Target)
            .count()
    }
}

const VERDICT_INSTRUCTION: &str =
    "Finish with a final line containing exactly `VERDICT: GOOD` or `VERDICT: BAD`.";

/// Assemble the conversation for one (config, sample) pair. Dependencies
/// are enforced in both directions: a missing brief/reference fails, and so
/// does supplying one to a configuration that must not see it.
pub fn build_prompt_chain(
    config: AblationConfig,
    brief: Option<&KnowledgeBrief>,
    reference: Option<&ImageInput>,
    target: &ImageInput,
) -> Result<PromptChain, AssessError> {
    match (config.needs_brief(), brief.is_some()) {
        (true, false) => return Err(AssessError::MissingBrief { config }),
        (false, true) => return Err(AssessError::UnexpectedBrief { config }),
        _ => {}
    }
    match (config.needs_reference(), reference.is_some()) {
        (true, false) => return Err(AssessError::MissingReference { config }),
        (false, true) => return Err(AssessError::UnexpectedReference { config }),
        _ => {}
    }
    if target.role != ImageRole::Target {
        return Err(AssessError::WrongImageRole {
            image_id: target.image_id.clone(),
            expected: ImageRole::Target,
            actual: target.role,
        });
    }
    if let Some(reference) = reference {
        if reference.role != ImageRole::Reference {
            return Err(AssessError::WrongImageRole {
                image_id: reference.image_id.clone(),
                expected: ImageRole::Reference,
                actual: reference.role,
            });
        }
    }

    let chain = match config {
        AblationConfig::Generic => {
            let text = format!(
                "You are inspecting a print produced by a manufacturing process. \
                 Assess whether the print shown in the attached image is of good \
                 quality, and explain your reasoning. Target image ID: {}. {}",
                target.image_id, VERDICT_INSTRUCTION
            );
            PromptChain::new(vec![ChainTurn {
                role: TurnRole::User,
                text,
                images: vec![target.clone()],
            }])
        }
        AblationConfig::KnowledgeOnly => {
            let brief = brief.expect("checked above");
            let text = format!(
                "{}\nUsing the knowledge above, assess whether the print shown in \
                 the attached image is of good quality, and explain your reasoning \
                 feature by feature. Target image ID: {}. {}",
                brief.prompt_block(),
                target.image_id,
                VERDICT_INSTRUCTION
            );
            PromptChain::new(vec![ChainTurn {
                role: TurnRole::User,
                text,
                images: vec![target.clone()],
            }])
        }
        AblationConfig::ReferenceOnly => {
            let reference = reference.expect("checked above");
            let text = format!(
                "The first attached image shows a known good print. Reference image \
                 ID: {}. The second attached image shows the print to assess. Target \
                 image ID: {}. Compare the target against the reference and assess \
                 whether the target is of good quality, explaining the differences \
                 you observe. {}",
                reference.image_id, target.image_id, VERDICT_INSTRUCTION
            );
            PromptChain::new(vec![ChainTurn {
                role: TurnRole::User,
                text,
                images: vec![reference.clone(), target.clone()],
            }])
        }
        AblationConfig::Full => {
            let brief = brief.expect("checked above");
            let reference = reference.expect("checked above");
            let grounding_text = format!(
                "{}\nThe attached image shows a known good print. Reference image ID: \
                 {}. Apply each feature's measurement procedure to this reference \
                 image step by step: state what you measure, the value you observe, \
                 and how it relates to the good range.",
                brief.prompt_block(),
                reference.image_id
            );
            let assess_text = format!(
                "Now assess the print shown in the attached image using the grounded \
                 understanding you built on the reference. Measure each feature the \
                 same way and compare against the good ranges. Target image ID: {}. {}",
                target.image_id, VERDICT_INSTRUCTION
            );
            PromptChain::new(vec![
                ChainTurn {
                    role: TurnRole::User,
                    text: grounding_text,
                    images: vec![reference.clone()],
                },
                ChainTurn { role: TurnRole::AssistantExpected, text: String::new(), images: Vec::new() },
                ChainTurn { role: TurnRole::User, text: assess_text, images: vec![target.clone()] },
            ])
        }
    };
    Ok(chain)
}

/// The machine-readable outcome of one assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Good,
    Bad,
    Indeterminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Good => f.write_str("good"),
            Verdict::Bad => f.write_str("bad"),
            Verdict::Indeterminate => f.write_str("indeterminate"),
        }
    }
}

/// Scan from the last line upward for `VERDICT:` followed by GOOD or BAD
/// (case-insensitive); the first hit wins, so the last tag in the text
/// governs. No tag means indeterminate.
pub fn parse_verdict(text: &str) -> Verdict {
    const TAG: &str = "verdict:";
    for line in text.lines().rev() {
        let lower = line.to_lowercase();
        for (index, _) in lower.match_indices(TAG).collect::<Vec<_>>().into_iter().rev() {
            let after = &lower[index + TAG.len()..];
            let word: String = after
                .trim_start()
                .chars()
                .take_while(|c| c.is_ascii_alphabetic())
                .collect();
            match word.as_str() {
                "good" => return Verdict::Good,
                "bad" => return Verdict::Bad,
                _ => {}
            }
        }
    }
    Verdict::Indeterminate
}

/// A canonical feature name plus the alternative spellings that map to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub canonical: String,
    pub aliases: Vec<String>,
}

/// The canonical feature vocabulary used for lexical feature detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    pub entries: Vec<VocabularyEntry>,
}

impl Default for FeatureVocabulary {
    fn default() -> Self {
        let entry = |canonical: &str, aliases: &[&str]| VocabularyEntry {
            canonical: canonical.to_string(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        };
        Self {
            entries: vec![
                entry("bead height", &["height of the bead"]),
                entry("bead width", &["width of the bead"]),
                entry("fusion zone depth", &["fusion depth", "depth of the fusion zone"]),
                entry("fusion zone area", &["fusion area", "area of the fusion zone"]),
                entry("aspect ratio", &[]),
                entry("dilution", &[]),
            ],
        }
    }
}

impl FeatureVocabulary {
    pub fn canonical_names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.canonical.as_str()).collect()
    }
}

/// Case-insensitive lexical detection of vocabulary features in a text.
/// Aliases report their canonical name; each canonical appears at most
/// once, in vocabulary order.
pub fn detect_features(text: &str, vocabulary: &FeatureVocabulary) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut found = Vec::new();
    for entry in &vocabulary.entries {
        let mut terms = vec![entry.canonical.as_str()];
        terms.extend(entry.aliases.iter().map(|a| a.as_str()));
        if terms.iter().any(|t| lower.contains(&t.to_lowercase())) {
            found.push(entry.canonical.clone());
        }
    }
    found
}

/// One completed assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResponse {
    pub sample_id: String,
    pub config: AblationConfig,
    pub raw_text: String,
    pub verdict: Verdict,
    pub mentioned_features: Vec<String>,
    pub backend_id: String,
    pub latency_ms: u64,
}

/// Execute a chain turn by turn in one conversation. An
/// `AssistantExpected` turn triggers a backend call whose completion is
/// inserted as the assistant's message; the final completion is parsed for
/// the verdict and mentioned features.
pub async fn run_assessment(
    chain: &PromptChain,
    backend: &dyn ModelBackend,
    sample_id: &str,
    config: AblationConfig,
    vocabulary: &FeatureVocabulary,
) -> Result<AssessmentResponse, AssessError> {
    let started = std::time::Instant::now();
    let mut turns: Vec<ChatTurn> = Vec::new();
    let mut last_completion: Option<String> = None;
    for turn in &chain.turns {
        match turn.role {
            TurnRole::System => turns.push(ChatTurn::system(turn.text.clone())),
            TurnRole::User => {
                let images: Vec<ImagePart> = turn.images.iter().map(|i| i.to_part()).collect();
                turns.push(ChatTurn::user_with_images(turn.text.clone(), images));
            }
            TurnRole::AssistantExpected => {
                let request = ChatRequest::new(backend.chat_model(), turns.clone());
                let reply = backend.chat(&request).await?;
                turns.push(ChatTurn::assistant(reply.clone()));
                last_completion = Some(reply);
            }
        }
    }
    let raw_text = match chain.turns.last().map(|t| t.role) {
        Some(TurnRole::AssistantExpected) => last_completion.expect("completion recorded"),
        _ => {
            let request = ChatRequest::new(backend.chat_model(), turns);
            backend.chat(&request).await?
        }
    };
    let latency_ms = started.elapsed().as_millis() as u64;
    Ok(AssessmentResponse {
        sample_id: sample_id.to_string(),
        config,
        raw_text: raw_text.clone(),
        verdict: parse_verdict(&raw_text),
        mentioned_features: detect_features(&raw_text, vocabulary),
        backend_id: backend.backend_id().to_string(),
        latency_ms,
    })
}

/// Expert label for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Good,
    Bad,
}

impl GroundTruth {
    pub fn matches(self, verdict: Verdict) -> bool {
        matches!(
            (self, verdict),
            (GroundTruth::Good, Verdict::Good) | (GroundTruth::Bad, Verdict::Bad)
        )
    }
}

/// One labeled sample of the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub sample_id: String,
    pub image: PathBuf,
    pub ground_truth: GroundTruth,
}

/// The labeled dataset plus the expert-selected reference image. Image
/// paths are kept as written; resolve them against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<SampleSpec>,
    pub reference_image: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, AssessError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| AssessError::Io { path: path.display().to_string(), source })?;
        let manifest: DatasetManifest = serde_json::from_str(&raw)
            .map_err(|source| AssessError::Parse { path: path.display().to_string(), source })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), AssessError> {
        if self.samples.is_empty() {
            return Err(AssessError::ManifestInvalid("no samples".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for sample in &self.samples {
            if sample.sample_id.trim().is_empty() {
                return Err(AssessError::ManifestInvalid("empty sample_id".into()));
            }
            if !seen.insert(&sample.sample_id) {
                return Err(AssessError::ManifestInvalid(format!(
                    "duplicate sample_id {}",
                    sample.sample_id
                )));
            }
        }
        Ok(())
    }

    pub fn ground_truth_for(&self, sample_id: &str) -> Option<GroundTruth> {
        self.samples
            .iter()
            .find(|s| s.sample_id == sample_id)
            .map(|s| s.ground_truth)
    }
}

/// Resolve a manifest-relative path against the manifest's directory.
pub fn resolve_manifest_path(manifest_path: &Path, image: &Path) -> PathBuf {
    if image.is_absolute() {
        image.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(image)
    }
}

// Smallest valid PNG: 1x1 transparent pixel. Shared by tests across the
// crate that need a real decodable image payload.
#[cfg(test)]
pub(crate) const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48,
    0x44, 0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00,
    0x00, 0x1F, 0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x44, 0x41, 0x54, 0x78,
    0x9C, 0x62, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00,
    0x00, 0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];
