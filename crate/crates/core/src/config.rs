//! Plain-text `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default (the
//! reference protocol: d = 3, pa = {-1, -2}, alpha = 0.01, L = 100,
//! 9000 + 1000 sequences, TF(3, 3, 3, 2), staged epochs 2000/50000/5000).
//! Unknown keys, duplicates and out-of-range values are rejected.
//!
//! | key | meaning |
//! |-----|---------|
//! | `name` | run label |
//! | `out_dir` | output directory |
//! | `seed` | master seed |
//! | `vocab` | vocabulary size `d` |
//! | `parents` | parent lags, e.g. `1,2` or `-1,-2` |
//! | `alpha` | Dirichlet concentration |
//! | `init` | `stationary` or `uniform` initial window law |
//! | `seq_len` | prompt length `L` |
//! | `n_train`, `n_val` | batch sizes |
//! | `window`, `heads`, `degree` | model shape `M`, `H`, `D` |
//! | `init_diag`, `init_off`, `init_c`, `init_a` | initial parameter values |
//! | `epsilon` | loss smoothing, or `auto` for `L^{-1/2}` |
//! | `learning_rate` | gradient-descent step |
//! | `stage1_epochs`, `stage2_epochs`, `stage3_epochs` | staged schedule |
//! | `simultaneous` | `true` to update all groups together |
//! | `log_stride` | trajectory sampling stride |
//! | `masked` | `false` for the unmasked second attention |
//! | `gih_reference` | subset code for the GIH distance column, or `none` |
//! | `infoset_kernels` | Monte Carlo kernels for information-set selection |
//! | `gradcheck_samples`, `gradcheck_len`, `gradcheck_step` | gradient check |
//! | `gen_alphas`, `gen_lengths`, `gen_count` | generalization grid |

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::markov::{ChainSpec, InitDist};
use crate::model::{Masking, ModelParams, ModelShape};
use crate::subsets::Subset;
use crate::train::TrainingConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub vocab: usize,
    pub parents: Vec<usize>,
    pub alpha: f64,
    pub init_uniform: bool,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub window: usize,
    pub heads: usize,
    pub degree: usize,
    pub init_diag: f64,
    pub init_off: f64,
    pub init_c: f64,
    pub init_a: f64,
    pub epsilon: Option<f64>,
    pub learning_rate: f64,
    pub stage_epochs: [usize; 3],
    pub simultaneous: bool,
    pub log_stride: usize,
    pub masked: bool,
    pub gih_reference: Option<String>,
    pub infoset_kernels: usize,
    pub gradcheck_samples: usize,
    pub gradcheck_len: usize,
    pub gradcheck_step: f64,
    pub gen_alphas: Vec<f64>,
    pub gen_lengths: Vec<usize>,
    pub gen_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            vocab: 3,
            parents: vec![1, 2],
            alpha: 0.01,
            init_uniform: false,
            seq_len: 100,
            n_train: 9000,
            n_val: 1000,
            window: 3,
            heads: 3,
            degree: 2,
            init_diag: 3.0,
            init_off: 0.01,
            init_c: 0.01,
            init_a: 0.01,
            epsilon: None,
            learning_rate: 1.0,
            stage_epochs: [2000, 50_000, 5000],
            simultaneous: false,
            log_stride: 10,
            masked: true,
            gih_reference: None,
            infoset_kernels: 200,
            gradcheck_samples: 10,
            gradcheck_len: 50,
            gradcheck_step: 1e-6,
            gen_alphas: vec![0.05, 0.1, 0.2],
            gen_lengths: vec![10, 20, 50, 100, 200, 400, 700, 1000],
            gen_count: 1000,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                source_name: source_name.to_string(),
                line: no + 1,
                msg: format!("expected key = value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("duplicate key `{key}` (line {})", no + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "name" => self.name = v.to_string(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = num(key, v)?,
            "vocab" => self.vocab = num(key, v)?,
            "parents" => {
                let lags: Vec<i64> = list(key, v)?;
                self.parents = lags.iter().map(|l| l.unsigned_abs() as usize).collect();
            }
            "alpha" => self.alpha = num(key, v)?,
            "init" => {
                self.init_uniform = match v {
                    "stationary" => false,
                    "uniform" => true,
                    _ => {
                        return Err(Error::config(format!(
                            "`init`: expected stationary or uniform, got `{v}`"
                        )))
                    }
                }
            }
            "seq_len" => self.seq_len = num(key, v)?,
            "n_train" => self.n_train = num(key, v)?,
            "n_val" => self.n_val = num(key, v)?,
            "window" => self.window = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "degree" => self.degree = num(key, v)?,
            "init_diag" => self.init_diag = num(key, v)?,
            "init_off" => self.init_off = num(key, v)?,
            "init_c" => self.init_c = num(key, v)?,
            "init_a" => self.init_a = num(key, v)?,
            "epsilon" => {
                self.epsilon = if v == "auto" { None } else { Some(num(key, v)?) }
            }
            "learning_rate" => self.learning_rate = num(key, v)?,
            "stage1_epochs" => self.stage_epochs[0] = num(key, v)?,
            "stage2_epochs" => self.stage_epochs[1] = num(key, v)?,
            "stage3_epochs" => self.stage_epochs[2] = num(key, v)?,
            "simultaneous" => self.simultaneous = boolean(key, v)?,
            "log_stride" => self.log_stride = num(key, v)?,
            "masked" => self.masked = boolean(key, v)?,
            "gih_reference" => {
                self.gih_reference = if v == "none" { None } else { Some(v.to_string()) }
            }
            "infoset_kernels" => self.infoset_kernels = num(key, v)?,
            "gradcheck_samples" => self.gradcheck_samples = num(key, v)?,
            "gradcheck_len" => self.gradcheck_len = num(key, v)?,
            "gradcheck_step" => self.gradcheck_step = num(key, v)?,
            "gen_alphas" => self.gen_alphas = list(key, v)?,
            "gen_lengths" => self.gen_lengths = list(key, v)?,
            "gen_count" => self.gen_count = num(key, v)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.chain_spec()?;
        let shape = self.shape()?;
        if self.seq_len <= shape.window {
            return Err(Error::config(format!(
                "seq_len {} must exceed the window {}",
                self.seq_len, shape.window
            )));
        }
        if self.seq_len < self.parents.iter().copied().max().unwrap_or(0) {
            return Err(Error::config("seq_len shorter than the largest parent lag"));
        }
        self.training()?.validate()?;
        if let Some(code) = &self.gih_reference {
            self.reference_subset(code)?;
        }
        if !(self.gradcheck_step > 0.0 && self.gradcheck_step < 1.0) {
            return Err(Error::config("gradcheck_step must lie in (0, 1)"));
        }
        if self.gradcheck_len <= shape.window {
            return Err(Error::config("gradcheck_len must exceed the window"));
        }
        if self.gen_alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::config("gen_alphas must be positive"));
        }
        if self.gen_lengths.iter().any(|&l| l <= shape.window) {
            return Err(Error::config("gen_lengths must all exceed the window"));
        }
        Ok(())
    }

    pub fn chain_spec(&self) -> Result<Arc<ChainSpec>> {
        let init = if self.init_uniform {
            InitDist::Uniform
        } else {
            InitDist::Stationary
        };
        Ok(Arc::new(ChainSpec::with_init(
            self.vocab,
            self.parents.clone(),
            self.alpha,
            init,
        )?))
    }

    pub fn shape(&self) -> Result<ModelShape> {
        if self.degree > self.heads {
            return Err(Error::config("degree cannot exceed the number of heads"));
        }
        ModelShape::new(self.window, self.heads, self.vocab, self.degree)
    }

    pub fn initial_params(&self) -> Result<ModelParams<f64>> {
        Ok(ModelParams::diagonal_init(
            self.shape()?,
            self.init_diag,
            self.init_off,
            self.init_c,
            self.init_a,
        ))
    }

    pub fn masking(&self) -> Masking {
        if self.masked {
            Masking::Masked
        } else {
            Masking::Unmasked
        }
    }

    pub fn reference_subset(&self, code: &str) -> Result<Subset> {
        if code.len() != self.window {
            return Err(Error::config(format!(
                "subset code `{code}` must have {} characters",
                self.window
            )));
        }
        Subset::from_code(code)
    }

    pub fn training(&self) -> Result<TrainingConfig> {
        Ok(TrainingConfig {
            epsilon: self.epsilon,
            learning_rate: self.learning_rate,
            stage_epochs: self.stage_epochs,
            simultaneous: self.simultaneous,
            log_stride: self.log_stride,
            masking: self.masking(),
            gih_reference: match &self.gih_reference {
                Some(c) => Some(Subset::from_code(c)?),
                None => None,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_protocol() {
        let c = ExperimentConfig::parse("", "mem").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.stage_epochs, [2000, 50_000, 5000]);
    }

    #[test]
    fn parses_values_and_comments() {
        let text = "# comment\nalpha = 0.1\nparents = -1, -3 # trailing\nmasked=false\nepsilon=0.05\ngen_lengths=10,20\n";
        let c = ExperimentConfig::parse(text, "mem").unwrap();
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.parents, vec![1, 3]);
        assert!(!c.masked);
        assert_eq!(c.epsilon, Some(0.05));
        assert_eq!(c.gen_lengths, vec![10, 20]);
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        assert!(ExperimentConfig::parse("colour = red", "m").is_err());
        assert!(ExperimentConfig::parse("seed=1\nseed=2", "m").is_err());
        assert!(ExperimentConfig::parse("alpha=-1", "m").is_err());
        assert!(ExperimentConfig::parse("seq_len=2", "m").is_err());
        assert!(ExperimentConfig::parse("learning_rate=0", "m").is_err());
        assert!(ExperimentConfig::parse("gih_reference=11", "m").is_err());
        assert!(ExperimentConfig::parse("just a line", "m").is_err());
    }
}
