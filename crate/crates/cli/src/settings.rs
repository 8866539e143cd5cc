use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use cohort_ledger::{GeneratorConfig, ReferencePolicy, YearMonth};

pub const SEED_ENV: &str = "COHORT_LEDGER_SEED";
pub const DEFAULT_SEED: u64 = 42;

/// Flags shared by every subcommand. Each one may also come from the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Plain `key = value` file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cutoff: Option<YearMonth>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub tune: Option<usize>,
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    #[arg(long, global = true)]
    pub trees: Option<usize>,
    #[arg(long = "hdi-mass", global = true)]
    pub hdi_mass: Option<f64>,
    #[arg(long = "reference-policy", global = true)]
    pub reference_policy: Option<ReferencePolicy>,
}

/// Fully resolved settings: flags, then config file, then defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub cutoff: Option<YearMonth>,
    pub seed: u64,
    pub chains: usize,
    pub tune: usize,
    pub draws: usize,
    pub trees: usize,
    pub hdi_mass: f64,
    pub reference_policy: Option<ReferencePolicy>,
    /// Keys not consumed above, for command-specific use.
    pub extra: BTreeMap<String, String>,
}

pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", i + 1);
        };
        map.insert(key.trim().replace('_', "-"), value.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("config key {key}: {e}")),
    }
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                parse_config_file(&text)?
            }
            None => BTreeMap::new(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.parse::<u64>().with_context(|| format!("{SEED_ENV} must be an unsigned integer"))?),
            Err(_) => None,
        };
        let input = args.input.clone().or(take::<PathBuf>(&mut file, "input")?);
        let out = args.out.clone().or(take::<PathBuf>(&mut file, "out")?);
        let cfg = Self {
            input,
            out: out.context("an output directory is required (--out)")?,
            cutoff: args.cutoff.or(take(&mut file, "cutoff")?),
            seed: args.seed.or(take(&mut file, "seed")?).or(env_seed).unwrap_or(DEFAULT_SEED),
            chains: args.chains.or(take(&mut file, "chains")?).unwrap_or(4),
            tune: args.tune.or(take(&mut file, "tune")?).unwrap_or(1000),
            draws: args.draws.or(take(&mut file, "draws")?).unwrap_or(1000),
            trees: args.trees.or(take(&mut file, "trees")?).unwrap_or(50),
            hdi_mass: args.hdi_mass.or(take(&mut file, "hdi-mass")?).unwrap_or(0.94),
            reference_policy: args.reference_policy.or(take(&mut file, "reference-policy")?),
            extra: file,
        };
        if !(cfg.hdi_mass > 0.0 && cfg.hdi_mass < 1.0) {
            bail!("hdi-mass must lie in (0, 1), got {}", cfg.hdi_mass);
        }
        if cfg.chains == 0 || cfg.draws == 0 || cfg.trees == 0 {
            bail!("chains, draws and trees must be at least 1");
        }
        Ok(cfg)
    }

    pub fn require_input(&self) -> Result<&Path> {
        self.input.as_deref().context("an input CSV is required (--input)")
    }

    /// Generator settings from leftover config keys (underscores or dashes), plus the seed.
    pub fn generator(&self) -> Result<GeneratorConfig> {
        let mut fields = serde_json::Map::new();
        for (key, value) in &self.extra {
            if key == "grid" {
                continue;
            }
            let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.clone()));
            fields.insert(key.replace('-', "_"), parsed);
        }
        let mut generator: GeneratorConfig =
            serde_json::from_value(serde_json::Value::Object(fields)).context("invalid generator settings")?;
        generator.seed = self.seed;
        Ok(generator)
    }
}

pub fn check_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_format() {
        let map = parse_config_file("# comment\nseed = 7\n\nhdi_mass=0.9\n").unwrap();
        assert_eq!(map["seed"], "7");
        assert_eq!(map["hdi-mass"], "0.9");
        assert!(parse_config_file("seed 7").is_err());
    }

    #[test]
    fn generator_keys() {
        let cfg = RunConfig {
            input: None,
            out: "x".into(),
            cutoff: None,
            seed: 3,
            chains: 1,
            tune: 1,
            draws: 1,
            trees: 1,
            hdi_mass: 0.94,
            reference_policy: None,
            extra: parse_config_file("growth-rate = 0\nend_cohort = 2020-06").unwrap(),
        };
        let g = cfg.generator().unwrap();
        assert_eq!(g.growth_rate, 0.0);
        assert_eq!(g.end_cohort.to_string(), "2020-06");
        assert_eq!(g.seed, 3);
    }
}
