//! Run configuration: defaults, key=value config files and command-line
//! overrides, merged in that order. Unknown config keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use stabr_core::baselines::SSCF_DEFAULT_NEIGHBORS;
use stabr_core::data::DEFAULT_GAP_SECONDS;
use stabr_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Stabr,
    Sabr,
    Rnn,
    Pop,
    Sscf,
}

impl ModelChoice {
    pub fn is_neural(self) -> bool {
        matches!(self, ModelChoice::Stabr | ModelChoice::Sabr | ModelChoice::Rnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Stabr => "stabr",
            ModelChoice::Sabr => "sabr",
            ModelChoice::Rnn => "rnn",
            ModelChoice::Pop => "pop",
            ModelChoice::Sscf => "sscf",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "stabr" => Ok(ModelChoice::Stabr),
            "sabr" => Ok(ModelChoice::Sabr),
            "rnn" => Ok(ModelChoice::Rnn),
            "pop" => Ok(ModelChoice::Pop),
            "sscf" => Ok(ModelChoice::Sscf),
            other => Err(Error::argument(format!(
                "unknown model '{other}' (expected stabr, sabr, rnn, pop or sscf)"
            ))),
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All knobs of a run. The RNN baseline picks up its own defaults
/// (hidden 100, learning rate 0.1) unless explicitly overridden.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub logs: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub model: Option<ModelChoice>,
    pub gap_seconds: i64,
    pub history: usize,
    pub song_dim: usize,
    pub tag_dim: usize,
    pub song_hidden: usize,
    pub tag_hidden: usize,
    pub rnn_hidden: usize,
    pub bottleneck: usize,
    pub dropout: f64,
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub ks: Vec<usize>,
    pub sscf_neighbors: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            logs: None,
            tags: None,
            dataset_dir: None,
            checkpoint: None,
            report: None,
            model: None,
            gap_seconds: DEFAULT_GAP_SECONDS,
            history: 10,
            song_dim: 50,
            tag_dim: 25,
            song_hidden: 50,
            tag_hidden: 25,
            rnn_hidden: 100,
            bottleneck: 50,
            dropout: 0.1,
            learning_rate: None,
            batch_size: 32,
            epochs: 10,
            seed: 42,
            clip_norm: None,
            ks: vec![10, 20, 30, 40, 50],
            sscf_neighbors: SSCF_DEFAULT_NEIGHBORS,
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::argument(format!("config key '{key}': cannot parse '{value}': {e}")))
}

fn parse_ks(key: &str, value: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = value
        .split(',')
        .map(|p| parse_as::<usize>(key, p))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::argument(format!("config key '{key}': needs positive values")));
    }
    Ok(ks)
}

impl RunConfig {
    /// Apply one key=value setting. Used for config files and CLI
    /// overrides alike so both surfaces accept exactly the same keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "logs" => self.logs = Some(PathBuf::from(value.trim())),
            "tags" => self.tags = Some(PathBuf::from(value.trim())),
            "dataset_dir" => self.dataset_dir = Some(PathBuf::from(value.trim())),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value.trim())),
            "report" => self.report = Some(PathBuf::from(value.trim())),
            "model" => self.model = Some(value.parse()?),
            "gap_seconds" => self.gap_seconds = parse_as(key, value)?,
            "history" => self.history = parse_as(key, value)?,
            "song_dim" => self.song_dim = parse_as(key, value)?,
            "tag_dim" => self.tag_dim = parse_as(key, value)?,
            "song_hidden" => self.song_hidden = parse_as(key, value)?,
            "tag_hidden" => self.tag_hidden = parse_as(key, value)?,
            "rnn_hidden" => self.rnn_hidden = parse_as(key, value)?,
            "bottleneck" => self.bottleneck = parse_as(key, value)?,
            "dropout" => self.dropout = parse_as(key, value)?,
            "learning_rate" => self.learning_rate = Some(parse_as(key, value)?),
            "batch_size" => self.batch_size = parse_as(key, value)?,
            "epochs" => self.epochs = parse_as(key, value)?,
            "seed" => self.seed = parse_as(key, value)?,
            "clip_norm" => {
                self.clip_norm = if value.trim() == "none" {
                    None
                } else {
                    Some(parse_as(key, value)?)
                }
            }
            "ks" => self.ks = parse_ks(key, value)?,
            "sscf_neighbors" => self.sscf_neighbors = parse_as(key, value)?,
            other => {
                return Err(Error::argument(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parse a `key = value` config file. `#` starts a comment.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::argument(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set(key.trim(), value)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::argument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if let Some(lr) = self.learning_rate {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::argument(format!("learning_rate must be nonnegative, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1".to_string()));
        }
        if self.history == 0 {
            return Err(Error::argument("history must be at least 1".to_string()));
        }
        if self.gap_seconds <= 0 {
            return Err(Error::argument(format!(
                "gap_seconds must be positive, got {}",
                self.gap_seconds
            )));
        }
        Ok(())
    }

    /// Learning rate with the model-specific default applied.
    pub fn effective_learning_rate(&self, model: ModelChoice) -> f64 {
        self.learning_rate.unwrap_or(match model {
            ModelChoice::Rnn => 0.1,
            _ => 0.05,
        })
    }

    pub fn require_logs(&self) -> Result<&PathBuf> {
        self.logs.as_ref().ok_or_else(|| Error::argument("no logs path configured".to_string()))
    }

    pub fn require_tags(&self) -> Result<&PathBuf> {
        self.tags.as_ref().ok_or_else(|| Error::argument("no tags path configured".to_string()))
    }

    pub fn require_dataset_dir(&self) -> Result<&PathBuf> {
        self.dataset_dir
            .as_ref()
            .ok_or_else(|| Error::argument("no dataset_dir configured".to_string()))
    }

    pub fn require_checkpoint(&self) -> Result<&PathBuf> {
        self.checkpoint
            .as_ref()
            .ok_or_else(|| Error::argument("no checkpoint path configured".to_string()))
    }

    pub fn require_report(&self) -> Result<&PathBuf> {
        self.report
            .as_ref()
            .ok_or_else(|| Error::argument("no report path configured".to_string()))
    }
}
