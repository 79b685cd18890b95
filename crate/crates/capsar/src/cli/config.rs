//! Run configuration: a flat `key = value` file covering the model
//! hyper-parameters plus everything a training or evaluation run needs
//! (data paths, optimizer settings, output locations).
//!
//! The format is deliberately strict: unknown keys and duplicate keys are
//! errors, so a typo like `lerning_rate` fails the run instead of silently
//! training with the default.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Input corpus format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// SemEval-style XML (`<sentences><sentence>...`).
    Xml,
    /// Tab-separated lines (`text<TAB>term<TAB>from<TAB>to<TAB>polarity`).
    Tsv,
}

impl DataFormat {
    pub fn parse(value: &str) -> Option<DataFormat> {
        match value {
            "xml" => Some(DataFormat::Xml),
            "tsv" => Some(DataFormat::Tsv),
            _ => None,
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Xml => "xml",
            DataFormat::Tsv => "tsv",
        })
    }
}

/// Everything a run needs: the model shape plus data, optimizer, and
/// output settings. Paths are optional because not every command needs
/// every file; each command checks for what it requires.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: DataFormat,
    pub embeddings: Option<PathBuf>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub out: PathBuf,
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: None,
            dev: None,
            test: None,
            format: DataFormat::Xml,
            embeddings: None,
            seed: 0,
            epochs: 80,
            batch_size: 64,
            learning_rate: 1e-3,
            out: PathBuf::from("out"),
            threshold: 0.5,
            top_k: 5,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "config key \"{key}\" has unparsable value \"{value}\""
        ))
    })
}

impl RunConfig {
    /// Parses the `key = value` text. Blank lines and lines starting with
    /// `#` are skipped; everything else must be an assignment to a known
    /// key, each key at most once.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "config line {} is not a key = value assignment: {raw:?}",
                    index + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|s| s == key) {
                return Err(Error::Config(format!(
                    "config key \"{key}\" appears more than once"
                )));
            }
            seen.push(key.to_string());
            config.assign(key, value)?;
        }
        Ok(config)
    }

    /// Reads and parses a config file, naming the path on I/O failure.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::parse(&text)
    }

    fn assign(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d_x" => self.model.d_x = parse_value(key, value)?,
            "t_max" => self.model.t_max = parse_value(key, value)?,
            "gru_hidden" => self.model.gru_hidden = parse_value(key, value)?,
            "conv_kernel" => self.model.conv_kernel = parse_value(key, value)?,
            "conv_channels" => self.model.conv_channels = parse_value(key, value)?,
            "primary_count" => self.model.primary_count = parse_value(key, value)?,
            "primary_dim" => self.model.primary_dim = parse_value(key, value)?,
            "inter_count" => self.model.inter_count = parse_value(key, value)?,
            "inter_dim" => self.model.inter_dim = parse_value(key, value)?,
            "sentiment_count" => self.model.sentiment_count = parse_value(key, value)?,
            "sentiment_dim" => self.model.sentiment_dim = parse_value(key, value)?,
            "routing_iters" => self.model.routing_iters = parse_value(key, value)?,
            "alpha" => self.model.alpha = parse_value(key, value)?,
            "beta" => self.model.beta = parse_value(key, value)?,
            "gamma" => self.model.gamma = parse_value(key, value)?,
            "dropout" => self.model.dropout = parse_value(key, value)?,
            "m_plus" => self.model.m_plus = parse_value(key, value)?,
            "m_minus" => self.model.m_minus = parse_value(key, value)?,
            "lambda" => self.model.lambda = parse_value(key, value)?,
            "train" => self.train = Some(PathBuf::from(value)),
            "dev" => self.dev = Some(PathBuf::from(value)),
            "test" => self.test = Some(PathBuf::from(value)),
            "format" => {
                self.format = DataFormat::parse(value).ok_or_else(|| {
                    Error::Config(format!(
                        "config key \"format\" must be xml or tsv, got \"{value}\""
                    ))
                })?
            }
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "seed" => self.seed = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "threshold" => self.threshold = parse_value(key, value)?,
            "top_k" => self.top_k = parse_value(key, value)?,
            _ => {
                return Err(Error::Config(format!("unknown config key \"{key}\"")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let config = RunConfig::parse("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.epochs, 80);
        assert_eq!(config.batch_size, 64);
        assert_eq!(config.seed, 0);
        assert_eq!(config.learning_rate, 1e-3);
        assert_eq!(config.threshold, 0.5);
        assert_eq!(config.top_k, 5);
        assert_eq!(config.format, DataFormat::Xml);
        assert_eq!(config.model, ModelConfig::default());
    }

    #[test]
    fn assignments_comments_and_blanks() {
        let text = "\
# model shape
d_x = 12
t_max=8

gru_hidden = 6   \n\
train = data/train.tsv
format = tsv
learning_rate = 0.01
seed = 7
";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.model.d_x, 12);
        assert_eq!(config.model.t_max, 8);
        assert_eq!(config.model.gru_hidden, 6);
        assert_eq!(config.train.as_deref(), Some(Path::new("data/train.tsv")));
        assert_eq!(config.format, DataFormat::Tsv);
        assert_eq!(config.learning_rate, 0.01);
        assert_eq!(config.seed, 7);
        assert_eq!(config.epochs, 80);
    }

    #[test]
    fn every_model_key_is_assignable() {
        let text = "\
d_x = 1\nt_max = 2\ngru_hidden = 3\nconv_kernel = 5\nconv_channels = 6\n\
primary_count = 7\nprimary_dim = 8\ninter_count = 9\ninter_dim = 10\n\
sentiment_count = 11\nsentiment_dim = 12\nrouting_iters = 13\n\
alpha = 1.5\nbeta = 2.5\ngamma = 3.5\ndropout = 0.25\n\
m_plus = 0.9\nm_minus = 0.2\nlambda = 0.004\n";
        let config = RunConfig::parse(text).unwrap();
        let m = &config.model;
        assert_eq!(
            (m.d_x, m.t_max, m.gru_hidden, m.conv_kernel, m.conv_channels),
            (1, 2, 3, 5, 6)
        );
        assert_eq!(
            (m.primary_count, m.primary_dim, m.inter_count, m.inter_dim),
            (7, 8, 9, 10)
        );
        assert_eq!(
            (m.sentiment_count, m.sentiment_dim, m.routing_iters),
            (11, 12, 13)
        );
        assert_eq!((m.alpha, m.beta, m.gamma, m.dropout), (1.5, 2.5, 3.5, 0.25));
        assert_eq!((m.m_plus, m.m_minus, m.lambda), (0.9, 0.2, 0.004));
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::parse("lerning_rate = 0.1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown config key"), "{msg}");
        assert!(msg.contains("lerning_rate"), "{msg}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = RunConfig::parse("seed = 1\nseed = 2").unwrap_err();
        assert!(err.to_string().contains("more than once"), "{err}");
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn malformed_line_names_its_number() {
        let err = RunConfig::parse("seed = 1\nnot an assignment").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = RunConfig::parse("epochs = soon").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochs"), "{msg}");
        assert!(msg.contains("soon"), "{msg}");
    }

    #[test]
    fn bad_format_value_is_rejected() {
        let err = RunConfig::parse("format = json").unwrap_err();
        assert!(err.to_string().contains("xml or tsv"), "{err}");
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = RunConfig::from_file(Path::new("/no/such/config.conf")).unwrap_err();
        assert!(err.to_string().contains("/no/such/config.conf"), "{err}");
    }
}
