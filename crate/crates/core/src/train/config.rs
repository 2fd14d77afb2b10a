use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::InitScheme;

/// Training run settings. Files use one `key = value` per line; `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Must match the manifest when set.
    pub quality: Option<u32>,
    /// Must match the manifest when set.
    pub crop_size: Option<usize>,
    pub learning_rate: f64,
    /// Linear warmup length in epochs (0 disables).
    pub warmup_epochs: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitScheme,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Write a resumable checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    /// Evaluate on the validation split every this many epochs (0 = never).
    pub val_every: usize,
    pub threads: usize,
    /// Training pairs used to even out hidden channel magnitudes before the
    /// first step of a fresh run (0 disables).
    pub balance_pairs: usize,
    /// Checkpoint written by an earlier run of the same config.
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            manifest: PathBuf::from("manifest.txt"),
            out_dir: PathBuf::from("run"),
            quality: None,
            crop_size: None,
            learning_rate: 3e-8,
            warmup_epochs: 0.25,
            batch_size: 4,
            epochs: 5,
            seed: 0,
            init: InitScheme::IdctSeeded,
            clip_norm: None,
            checkpoint_every: 1,
            val_every: 1,
            threads: 1,
            balance_pairs: 8,
            resume: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {value:?}")))
}

fn optional(value: &str) -> bool {
    matches!(value, "" | "none" | "off")
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "manifest" => self.manifest = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "quality" => {
                self.quality = if optional(value) {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "crop_size" => {
                self.crop_size = if optional(value) {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "init" => self.init = value.parse()?,
            "clip_norm" => {
                self.clip_norm = if optional(value) {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "balance_pairs" => self.balance_pairs = parse(key, value)?,
            "resume" => self.resume = (!optional(value)).then(|| value.into()),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines. Relative paths are resolved against `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key = value", n + 1))
            })?;
            cfg.set(k, v)?;
        }
        cfg.manifest = base.join(&cfg.manifest);
        cfg.out_dir = base.join(&cfg.out_dir);
        if let Some(r) = &cfg.resume {
            cfg.resume = Some(base.join(r));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if !(self.warmup_epochs >= 0.0) {
            return bad("warmup_epochs must be non-negative".into());
        }
        if let Some(c) = self.crop_size {
            if c == 0 || c % 8 != 0 {
                return bad(format!(
                    "crop_size must be a positive multiple of 8, got {c}"
                ));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` rendering (paths as given).
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        format!(
            "manifest = {}\nout_dir = {}\nquality = {}\ncrop_size = {}\nlearning_rate = {:e}\n\
             warmup_epochs = {}\nbatch_size = {}\nepochs = {}\nseed = {}\ninit = {}\n\
             clip_norm = {}\ncheckpoint_every = {}\nval_every = {}\nthreads = {}\nbalance_pairs = {}\nresume = {}\n",
            self.manifest.display(),
            self.out_dir.display(),
            opt(self.quality.map(|q| q.to_string())),
            opt(self.crop_size.map(|c| c.to_string())),
            self.learning_rate,
            self.warmup_epochs,
            self.batch_size,
            self.epochs,
            self.seed,
            self.init,
            opt(self.clip_norm.map(|c| c.to_string())),
            self.checkpoint_every,
            self.val_every,
            self.threads,
            self.balance_pairs,
            opt(self.resume.as_ref().map(|p| p.display().to_string())),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let cfg = TrainConfig::parse_str(
            "# smoke\nmanifest = data/m.txt\nlr = 2e-6  # tuned\nclip_norm = off\nepochs=3\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.manifest, PathBuf::from("/base/data/m.txt"));
        assert_eq!(cfg.learning_rate, 2e-6);
        assert_eq!(cfg.clip_norm, None);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 4);
    }

    #[test]
    fn rejects_bad_values() {
        let base = Path::new("");
        assert!(TrainConfig::parse_str("bogus = 1", base).is_err());
        assert!(TrainConfig::parse_str("epochs 3", base).is_err());
        assert!(TrainConfig::parse_str("lr = fast", base).is_err());
        let mut c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c.learning_rate = 1e-6;
        c.crop_size = Some(60);
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut c = TrainConfig::default();
        c.quality = Some(30);
        c.clip_norm = Some(5.0);
        c.balance_pairs = 0;
        let back = TrainConfig::parse_str(&c.to_text(), Path::new("")).unwrap();
        assert_eq!(back, c);
    }
}
