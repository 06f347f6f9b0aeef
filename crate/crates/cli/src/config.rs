use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use eigenpool::gnn::{ModelConfig, ModelKind, PreprocessConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Eigengcn,
    FlatGcn,
}

impl ModelChoice {
    pub fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Eigengcn => ModelKind::EigenGcn,
            ModelChoice::FlatGcn => ModelKind::FlatGcn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Eigengcn => "eigengcn",
            ModelChoice::FlatGcn => "flat-gcn",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigengcn" => Ok(ModelChoice::Eigengcn),
            "flat-gcn" => Ok(ModelChoice::FlatGcn),
            other => bail!("unknown model {other:?} (expected eigengcn or flat-gcn)"),
        }
    }
}

/// Run options shared by every command. Each may also come from a
/// `key = value` config file, where keys are the flag names without dashes;
/// flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TUDataset name, or `synthetic` for the cycle-vs-star corpus
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding `NAME/NAME_A.txt` or `NAME_A.txt`
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pooling operators kept per level
    #[arg(long)]
    pub pool_h: Option<usize>,
    /// Pooling levels (one convolution block each)
    #[arg(long)]
    pub levels: Option<usize>,
    /// Convolution width of every block
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// Number of random 80/10/10 splits
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key = value` file with defaults for the options above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub seed: u64,
    pub pool_h: usize,
    pub levels: usize,
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub model: ModelChoice,
    pub repeats: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pre = PreprocessConfig::default();
        let train = TrainConfig::default();
        Self {
            dataset: "synthetic".into(),
            data_dir: PathBuf::from("data"),
            seed: 0,
            pool_h: pre.pool_h,
            levels: pre.levels,
            width: 64,
            epochs: train.epochs,
            lr: train.lr,
            batch_size: train.batch_size,
            model: ModelChoice::Eigengcn,
            repeats: 10,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_file(path: &Path) -> Result<BTreeMap<String, (usize, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), i + 1);
        };
        out.insert(k.trim().replace('_', "-"), (i + 1, v.trim().to_string()));
    }
    Ok(out)
}

fn take<T: FromStr>(file: &mut BTreeMap<String, (usize, String)>, key: &str, path: &Path) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match file.remove(key) {
        None => Ok(None),
        Some((line, v)) => v
            .parse()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("{}:{line}: bad value for {key}: {e}", path.display())),
    }
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            let mut f = parse_file(path)?;
            macro_rules! load {
                ($field:ident, $key:literal) => {
                    if let Some(v) = take(&mut f, $key, path)? {
                        c.$field = v;
                    }
                };
            }
            load!(dataset, "dataset");
            load!(data_dir, "data-dir");
            load!(seed, "seed");
            load!(pool_h, "pool-h");
            load!(levels, "levels");
            load!(width, "width");
            load!(epochs, "epochs");
            load!(lr, "lr");
            load!(batch_size, "batch-size");
            load!(model, "model");
            load!(repeats, "repeats");
            load!(out, "out");
            if let Some((key, (line, _))) = f.into_iter().next() {
                bail!("{}:{line}: unknown key {key}", path.display());
            }
        }
        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            };
        }
        flag!(dataset);
        flag!(data_dir);
        flag!(seed);
        flag!(pool_h);
        flag!(levels);
        flag!(width);
        flag!(epochs);
        flag!(lr);
        flag!(batch_size);
        flag!(model);
        flag!(repeats);
        flag!(out);
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pool-h", self.pool_h),
            ("levels", self.levels),
            ("width", self.width),
            ("epochs", self.epochs),
            ("batch-size", self.batch_size),
            ("repeats", self.repeats),
        ] {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            bail!("lr must be a finite non-negative number");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.model.kind(),
            widths: vec![self.width; self.levels],
            pool_h: self.pool_h,
            head_hidden: vec![self.width],
            ..Default::default()
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            levels: self.levels,
            pool_h: self.pool_h,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn train_config(&self, split: usize) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed.wrapping_add(split as u64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nepochs = 7\nlr=0.01\nmodel = flat-gcn\npool_h = 2\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            epochs: Some(9),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.epochs, 9);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.model, ModelChoice::FlatGcn);
        assert_eq!(c.pool_h, 2);
        assert_eq!(c.levels, 3);
    }

    #[test]
    fn bad_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        for body in ["epochs 7\n", "epochs = x\n", "colour = red\n", "levels = 0\n"] {
            fs::write(&path, body).unwrap();
            let args = RunArgs {
                config: Some(path.clone()),
                ..Default::default()
            };
            assert!(args.resolve().is_err(), "{body}");
        }
    }

    #[test]
    fn widths_follow_levels() {
        let c = RunConfig {
            levels: 2,
            width: 8,
            ..Default::default()
        };
        assert_eq!(c.model_config().widths, vec![8, 8]);
        assert_eq!(c.preprocess_config().levels, 2);
    }
}
