//! Experiment drivers behind the CLI subcommands. Each driver reads its
//! inputs, writes CSV or checkpoint artifacts under the output directory and
//! returns a summary for printing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::info::{select_information_set, InfoSetReport};
use crate::markov::{derive_seed, mix64, read_batch, sample_kernel, write_batch, ChainBatch};
use crate::model::{read_checkpoint, write_checkpoint, ModelParams};
use crate::subsets::{Subset, SubsetTable};
use crate::train::{fd_check, gih_agreement, loss_and_grad, train, FdReport, Groups, Trajectory};

pub const TRAIN_FILE: &str = "train.batch";
pub const VAL_FILE: &str = "val.batch";
pub const INFOSET_FILE: &str = "infoset.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const GIH_EVAL_FILE: &str = "gih_eval.csv";
pub const GENERALIZE_FILE: &str = "generalize.csv";

/// Relative-error threshold of the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

// Seed streams, so that commands sharing a master seed draw independently.
const INFOSET_STREAM: u64 = 0x494E_464F_5345_5453;
const GRADCHECK_STREAM: u64 = 0x4752_4144_4348_4B00;
const GENERALIZE_STREAM: u64 = 0x4745_4E45_5241_4C5A;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct GenDataSummary {
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
    pub init_fallbacks: usize,
    /// Mean over kernels of the largest transition probability per column.
    pub mean_max_prob: f64,
}

/// Samples the training and validation batches from disjoint seed indices.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary> {
    let spec = cfg.chain_spec()?;
    ensure_dir(&cfg.out_dir)?;
    let train = ChainBatch::generate(&spec, cfg.n_train, cfg.seq_len, cfg.seed, 0)?;
    let val = ChainBatch::generate(&spec, cfg.n_val, cfg.seq_len, cfg.seed, cfg.n_train as u64)?;
    let train_path = cfg.out_dir.join(TRAIN_FILE);
    let val_path = cfg.out_dir.join(VAL_FILE);
    write_batch(&train_path, &train)?;
    write_batch(&val_path, &val)?;
    let kernels: Vec<_> = train.kernels.iter().chain(&val.kernels).collect();
    let d = spec.vocab();
    let mean_max_prob = if kernels.is_empty() {
        f64::NAN
    } else {
        let total: f64 = kernels
            .iter()
            .map(|k| {
                let cols = k.table().len() / d;
                (0..cols)
                    .map(|c| k.column(c).iter().copied().fold(0.0, f64::max))
                    .sum::<f64>()
                    / cols as f64
            })
            .sum();
        total / kernels.len() as f64
    };
    Ok(GenDataSummary {
        train_path,
        val_path,
        n_train: train.len(),
        n_val: val.len(),
        init_fallbacks: train.init_fallbacks + val.init_fallbacks,
        mean_max_prob,
    })
}

/// Information-set selection over `infoset_kernels` prior draws.
pub fn infoset_report(cfg: &ExperimentConfig) -> Result<InfoSetReport<f64>> {
    let spec = cfg.chain_spec()?;
    let stream = mix64(cfg.seed ^ INFOSET_STREAM);
    let kernels: Vec<_> = (0..cfg.infoset_kernels as u64)
        .map(|i| sample_kernel::<f64>(&spec, derive_seed(stream, i)))
        .collect();
    let table = SubsetTable::new(cfg.window, cfg.degree);
    select_information_set(&table, &kernels, cfg.window)
}

pub fn infoset_csv(report: &InfoSetReport<f64>) -> String {
    let mut out = String::from("code,size,mi_mean,mi_stderr,selected\n");
    let m = report.table.universe();
    for (i, s) in report.table.subsets().iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.code(m),
            s.len(),
            report.mi_mean[i],
            report.mi_stderr[i],
            u8::from(i == report.s_star)
        );
    }
    out
}

/// Reads an infoset CSV back as `(code, mi_mean, selected)` rows.
pub fn parse_infoset_csv(text: &str) -> Result<Vec<(String, f64, bool)>> {
    let bad = |line: usize, msg: &str| Error::Parse {
        source_name: INFOSET_FILE.into(),
        line,
        msg: msg.into(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("code,size,mi_mean,mi_stderr,selected") {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 2, "expected 5 fields"));
            }
            let mi = f[2].parse().map_err(|_| bad(i + 2, "bad mi_mean"))?;
            Ok((f[0].to_string(), mi, f[4] == "1"))
        })
        .collect()
}

pub fn cmd_infoset(cfg: &ExperimentConfig) -> Result<InfoSetReport<f64>> {
    let report = infoset_report(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join(INFOSET_FILE), &infoset_csv(&report))?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub params: ModelParams<f64>,
    pub trajectory: Trajectory,
    pub checkpoint: PathBuf,
    pub trajectory_path: PathBuf,
}

/// Trains on the batches found in the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let train_batch = read_batch(&cfg.out_dir.join(TRAIN_FILE))?;
    let val_batch = read_batch(&cfg.out_dir.join(VAL_FILE))?;
    let p0 = cfg.initial_params()?;
    if train_batch.spec.vocab() != p0.shape.vocab {
        return Err(Error::config(format!(
            "batch vocabulary {} does not match the model's {}",
            train_batch.spec.vocab(),
            p0.shape.vocab
        )));
    }
    let (params, trajectory) = train(
        &p0,
        &train_batch.sequences,
        &val_batch.sequences,
        &cfg.training()?,
    )?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    let trajectory_path = cfg.out_dir.join(TRAJECTORY_FILE);
    write_checkpoint(&checkpoint, &params)?;
    trajectory.write_csv(&trajectory_path)?;
    Ok(TrainSummary {
        params,
        trajectory,
        checkpoint,
        trajectory_path,
    })
}

/// Random parameters and chain sequences for one gradient-check draw.
pub fn gradcheck_draw(cfg: &ExperimentConfig, index: u64) -> Result<(ModelParams<f64>, Vec<usize>)> {
    let spec = cfg.chain_spec()?;
    let seed = derive_seed(mix64(cfg.seed ^ GRADCHECK_STREAM), index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::<f64>::zeros(cfg.shape()?);
    p.a = rng.random_range(-3.0..3.0);
    for w in p.rpe.iter_mut().flatten() {
        *w = rng.random_range(-2.0..2.0);
    }
    for c in p.ffn.iter_mut() {
        *c = rng.random_range(-1.0..1.0);
    }
    let batch = ChainBatch::generate(&spec, 1, cfg.gradcheck_len, seed, 0)?;
    Ok((p, batch.sequences.into_iter().next().expect("one sequence")))
}

pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<FdReport>> {
    let eps = cfg.training()?.epsilon_for(cfg.gradcheck_len);
    let mut reports = Vec::new();
    let mut csv = String::from("sample,group,max_rel,max_abs\n");
    for i in 0..cfg.gradcheck_samples {
        let (p, seq) = gradcheck_draw(cfg, i as u64)?;
        let r = fd_check(
            &p,
            &[seq],
            eps,
            cfg.gradcheck_step,
            cfg.masking(),
            GRADCHECK_TOLERANCE,
        )?;
        for (name, g) in [("a", r.a), ("w", r.w), ("c", r.c)] {
            let _ = writeln!(csv, "{i},{name},{},{}", g.max_rel, g.max_abs);
        }
        reports.push(r);
    }
    ensure_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join(GRADCHECK_FILE), &csv)?;
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct GihEvalSummary {
    pub mean_l1: f64,
    pub no_match: usize,
    pub count: usize,
}

pub fn cmd_gih_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    batch: &Path,
    s_star: &Subset,
) -> Result<GihEvalSummary> {
    let params = read_checkpoint(checkpoint)?;
    let b = read_batch(batch)?;
    let agg = gih_agreement(&params, &b.sequences, s_star, cfg.masking())?;
    let mut csv = String::from("index,l1,match_count\n");
    for (i, (l1, n)) in agg.per_sequence.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l1},{n}");
    }
    ensure_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join(GIH_EVAL_FILE), &csv)?;
    Ok(GihEvalSummary {
        mean_l1: agg.mean_l1,
        no_match: agg.no_match,
        count: agg.per_sequence.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizeCell {
    pub alpha: f64,
    pub len_l: usize,
    pub mean_loss: f64,
    pub stderr: f64,
}

/// Mean loss of a frozen model on fresh chains for every `(alpha, L)`.
/// The loss smoothing is the training one (`epsilon`, or `seq_len^{-1/2}`)
/// for every cell, so cells differ only in the data.
pub fn generalize(cfg: &ExperimentConfig, params: &ModelParams<f64>) -> Result<Vec<GeneralizeCell>> {
    let base = cfg.chain_spec()?;
    let eps = cfg.training()?.epsilon_for(cfg.seq_len);
    let stream = mix64(cfg.seed ^ GENERALIZE_STREAM);
    let mut cells = Vec::new();
    for (ai, &alpha) in cfg.gen_alphas.iter().enumerate() {
        let spec = Arc::new(base.with_alpha(alpha)?);
        for (li, &len_l) in cfg.gen_lengths.iter().enumerate() {
            let cell_seed = derive_seed(stream, (ai * cfg.gen_lengths.len() + li) as u64);
            let batch = ChainBatch::generate(&spec, cfg.gen_count, len_l, cell_seed, 0)?;
            let losses: Vec<f64> = batch
                .sequences
                .iter()
                .map(|s| {
                    loss_and_grad(params, std::slice::from_ref(s), eps, cfg.masking(), Groups::NONE)
                        .map(|(l, _)| l)
                })
                .collect::<Result<_>>()?;
            let (mean, stderr) = mean_stderr(&losses);
            cells.push(GeneralizeCell {
                alpha,
                len_l,
                mean_loss: mean,
                stderr,
            });
        }
    }
    Ok(cells)
}

pub fn generalize_csv(cells: &[GeneralizeCell]) -> String {
    let mut out = String::from("alpha,L,mean_loss,stderr\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{},{}", c.alpha, c.len_l, c.mean_loss, c.stderr);
    }
    out
}

pub fn parse_generalize_csv(text: &str) -> Result<Vec<GeneralizeCell>> {
    let bad = |line: usize| Error::Parse {
        source_name: GENERALIZE_FILE.into(),
        line,
        msg: "malformed row".into(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("alpha,L,mean_loss,stderr") {
        return Err(bad(1));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2));
            if f.len() != 4 {
                return Err(bad(i + 2));
            }
            Ok(GeneralizeCell {
                alpha: parse(f[0])?,
                len_l: f[1].parse().map_err(|_| bad(i + 2))?,
                mean_loss: parse(f[2])?,
                stderr: parse(f[3])?,
            })
        })
        .collect()
}

pub fn cmd_generalize(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<GeneralizeCell>> {
    let params = read_checkpoint(checkpoint)?;
    let cells = generalize(cfg, &params)?;
    ensure_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join(GENERALIZE_FILE), &generalize_csv(&cells))?;
    Ok(cells)
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Average ranks (1-based, ties share their mean rank).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        // ranks of y = (1, 2.5, 2.5, 4)
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 5.0, 5.0, 9.0]);
        let expect = 4.5 / (5.0f64 * 4.5).sqrt();
        assert!((r - expect).abs() < 1e-15);
    }

    #[test]
    fn stderr_of_known_sample() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
