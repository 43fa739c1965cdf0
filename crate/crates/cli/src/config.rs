use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cardstack_core::ingest::Masker;
use cardstack_core::notes::{ConfidenceRule, SynthesisConfig};
use cardstack_core::organize::OrganizeConfig;
use cardstack_core::pipeline::PipelineConfig;
use cardstack_core::time::{parse_instant, Instant, Span};
use serde::Deserialize;

/// The TOML config file. Relative paths resolve against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub ontologies: Vec<PathBuf>,
    #[serde(default)]
    pub corpora: Vec<PathBuf>,
    pub now: Option<String>,
    pub mask_key_file: Option<PathBuf>,
    #[serde(default)]
    pub organize: OrganizeSection,
    #[serde(default)]
    pub notes: NotesSection,
    #[serde(default)]
    pub mask: MaskSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganizeSection {
    pub window: Option<String>,
    pub epsilon: Option<String>,
    pub watermark: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotesSection {
    pub horizon_windows: Option<u32>,
    pub intensity_bounds: Option<[f64; 3]>,
    pub high: Option<ConfidenceRule>,
    pub medium: Option<ConfidenceRule>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSection {
    /// In-text aliases per subject id, masked along with the id.
    #[serde(default)]
    pub aliases: BTreeMap<String, Vec<String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: FileConfig = toml::from_str(&text).with_context(|| format!("malformed config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.store.as_mut().map(resolve);
        config.mask_key_file.as_mut().map(resolve);
        config.ontologies.iter_mut().for_each(resolve);
        config.corpora.iter_mut().for_each(resolve);
        Ok(config)
    }
}

fn span(field: &str, value: &Option<String>, default: Span) -> Result<Span> {
    match value {
        Some(text) => Span::parse_positive(text).with_context(|| format!("invalid {field} `{text}`")),
        None => Ok(default),
    }
}

/// Settings after merging the config file with command-line flags.
#[derive(Debug)]
pub struct Settings {
    pub store: PathBuf,
    pub ontologies: Vec<PathBuf>,
    pub corpora: Vec<PathBuf>,
    pub now: Option<Instant>,
    pub pipeline: PipelineConfig,
}

pub struct Overrides<'a> {
    pub store: Option<&'a Path>,
    pub now: Option<&'a str>,
    pub mask_key_file: Option<&'a Path>,
    pub ontologies: &'a [PathBuf],
    pub corpora: &'a [PathBuf],
}

impl Settings {
    pub fn resolve(file: FileConfig, flags: Overrides<'_>) -> Result<Self> {
        let defaults = OrganizeConfig::default();
        let organize = OrganizeConfig {
            window: span("organize.window", &file.organize.window, defaults.window)?,
            epsilon: match &file.organize.epsilon {
                // Zero epsilon is allowed: it only merges exact repeats.
                Some(text) => text.parse().with_context(|| format!("invalid organize.epsilon `{text}`"))?,
                None => defaults.epsilon,
            },
            watermark: match &file.organize.watermark {
                Some(text) => text.parse().with_context(|| format!("invalid organize.watermark `{text}`"))?,
                None => defaults.watermark,
            },
        };
        let mut synthesis = SynthesisConfig {
            window: organize.window,
            ..SynthesisConfig::default()
        };
        if let Some(n) = file.notes.horizon_windows {
            if n == 0 {
                bail!("notes.horizon_windows must be at least 1");
            }
            synthesis.horizon_windows = n;
        }
        if let Some(bounds) = file.notes.intensity_bounds {
            if !(bounds[0] <= bounds[1] && bounds[1] <= bounds[2]) {
                bail!("notes.intensity_bounds must be non-decreasing");
            }
            synthesis.intensity_bounds = bounds;
        }
        synthesis.high = file.notes.high.unwrap_or(synthesis.high);
        synthesis.medium = file.notes.medium.unwrap_or(synthesis.medium);

        let now_text = flags.now.map(str::to_string).or(file.now);
        let now = now_text
            .map(|t| parse_instant(&t).with_context(|| format!("invalid --now `{t}`")))
            .transpose()?;

        let key_file = flags.mask_key_file.map(Path::to_path_buf).or(file.mask_key_file);
        let masker = match key_file {
            Some(path) => {
                let raw = std::fs::read(&path).with_context(|| format!("cannot read mask key {}", path.display()))?;
                let key = raw.strip_suffix(b"\n").unwrap_or(&raw);
                Some(Masker::new(key, file.mask.aliases)?)
            }
            None => None,
        };

        let pick = |flag: &[PathBuf], file: Vec<PathBuf>| if flag.is_empty() { file } else { flag.to_vec() };
        Ok(Settings {
            store: flags
                .store
                .map(Path::to_path_buf)
                .or(file.store)
                .unwrap_or_else(|| PathBuf::from("cardstack-store")),
            ontologies: pick(flags.ontologies, file.ontologies),
            corpora: pick(flags.corpora, file.corpora),
            now,
            pipeline: PipelineConfig {
                organize,
                synthesis,
                masker,
            },
        })
    }
}
