use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use super::check::gih_agreement;
use super::grad::{cache_dots, loss_and_grad, loss_and_grad_cached, CachedDots, Gradient, Groups};
use crate::error::{Error, Result};
use crate::model::{Masking, ModelParams};
use crate::subsets::Subset;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Loss smoothing; `None` means `L^{-1/2}`.
    pub epsilon: Option<f64>,
    pub learning_rate: f64,
    /// Epochs spent on `{c_S}`, `{w^(h)}` and `a` respectively.
    pub stage_epochs: [usize; 3],
    /// Update all groups every epoch for `sum(stage_epochs)` epochs.
    pub simultaneous: bool,
    pub log_stride: usize,
    pub masking: Masking,
    /// When set, each record carries the mean l1 distance to the GIH
    /// estimator on the validation set.
    pub gih_reference: Option<Subset>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epsilon: None,
            learning_rate: 1.0,
            stage_epochs: [2000, 50_000, 5000],
            simultaneous: false,
            log_stride: 10,
            masking: Masking::Masked,
            gih_reference: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config(format!("epsilon must be positive, got {e}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.log_stride == 0 {
            return Err(Error::config("log stride must be at least 1"));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, len_l: usize) -> f64 {
        self.epsilon.unwrap_or(1.0 / (len_l as f64).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Init,
    /// FFN coefficients only.
    Ffn,
    /// RPE weights only.
    Rpe,
    /// Second-attention scale only.
    Scale,
    Joint,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Init => "0",
            Stage::Ffn => "1",
            Stage::Rpe => "2",
            Stage::Scale => "3",
            Stage::Joint => "all",
        })
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "0" => Stage::Init,
            "1" => Stage::Ffn,
            "2" => Stage::Rpe,
            "3" => Stage::Scale,
            "all" => Stage::Joint,
            _ => return Err(format!("unknown stage `{s}`")),
        })
    }
}

/// Parameter summary after `epoch` updates. `stage` is the stage of the
/// update that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub a: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub c_norm: f64,
    /// `p_S` in subset-table order.
    pub p: Vec<f64>,
    /// `sigma[h][i - 1] = sigma^(h+1)_{-i}`.
    pub sigma: Vec<Vec<f64>>,
    pub gih_l1_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub codes: Vec<String>,
    pub heads: usize,
    pub window: usize,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryRecord {
        self.records.last().expect("trajectory always has a record")
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &TrajectoryRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn p_of(&self, record: &TrajectoryRecord, code: &str) -> Option<f64> {
        self.codes.iter().position(|c| c == code).map(|i| record.p[i])
    }

    pub fn header(&self) -> String {
        let mut cols = vec![
            "epoch".to_string(),
            "stage".into(),
            "a".into(),
            "train_loss".into(),
            "val_loss".into(),
            "C_D".into(),
        ];
        cols.extend(self.codes.iter().map(|c| format!("p_{c}")));
        for h in 1..=self.heads {
            for i in 1..=self.window {
                cols.push(format!("sigma_h{h}_i{i}"));
            }
        }
        cols.push("gih_l1_mean".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.stage, r.a, r.train_loss, r.val_loss, r.c_norm
            );
            for p in &r.p {
                let _ = write!(out, ",{p}");
            }
            for s in r.sigma.iter().flatten() {
                let _ = write!(out, ",{s}");
            }
            match r.gih_l1_mean {
                Some(g) => {
                    let _ = writeln!(out, ",{g}");
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn parse_csv(text: &str, source_name: &str) -> Result<Trajectory> {
        let perr = |line: usize, msg: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let codes: Vec<String> = cols
            .iter()
            .filter_map(|c| c.strip_prefix("p_").map(str::to_string))
            .collect();
        let sig: Vec<(usize, usize)> = cols
            .iter()
            .filter_map(|c| {
                let (h, i) = c.strip_prefix("sigma_h")?.split_once("_i")?;
                Some((h.parse().ok()?, i.parse().ok()?))
            })
            .collect();
        let heads = sig.iter().map(|s| s.0).max().unwrap_or(0);
        let window = sig.iter().map(|s| s.1).max().unwrap_or(0);
        let mut traj = Trajectory {
            codes,
            heads,
            window,
            records: Vec::new(),
        };
        if traj.header() != header {
            return Err(perr(1, "unexpected trajectory header".into()));
        }
        for (no, line) in lines.enumerate() {
            let no = no + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(perr(no, format!("expected {} fields, got {}", cols.len(), f.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|e| perr(no, format!("bad number `{s}`: {e}")))
            };
            let nc = traj.codes.len();
            let p = f[6..6 + nc].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            let flat = f[6 + nc..6 + nc + heads * window]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            let last = f[f.len() - 1];
            traj.records.push(TrajectoryRecord {
                epoch: f[0].parse().map_err(|e| perr(no, format!("bad epoch: {e}")))?,
                stage: f[1].parse().map_err(|e| perr(no, e))?,
                a: num(f[2])?,
                train_loss: num(f[3])?,
                val_loss: num(f[4])?,
                c_norm: num(f[5])?,
                p,
                sigma: flat.chunks(window.max(1)).map(<[f64]>::to_vec).collect(),
                gih_l1_mean: if last.is_empty() { None } else { Some(num(last)?) },
            });
        }
        Ok(traj)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }
}

/// First-layer products for both batches while the RPE weights are frozen.
struct Frozen {
    train: Vec<CachedDots<f64>>,
    val: Vec<CachedDots<f64>>,
}

struct Runner<'a> {
    train: &'a [Vec<usize>],
    val: &'a [Vec<usize>],
    cfg: &'a TrainingConfig,
    eps: f64,
}

impl Runner<'_> {
    fn eval(
        &self,
        p: &ModelParams<f64>,
        frozen: Option<&Frozen>,
        groups: Groups,
    ) -> Result<(f64, Gradient<f64>)> {
        match frozen {
            Some(f) => Ok(loss_and_grad_cached(p, self.train, &f.train, self.eps, groups)),
            None => loss_and_grad(p, self.train, self.eps, self.cfg.masking, groups),
        }
    }

    fn val_loss(&self, p: &ModelParams<f64>, frozen: Option<&Frozen>) -> Result<f64> {
        if self.val.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(match frozen {
            Some(f) => loss_and_grad_cached(p, self.val, &f.val, self.eps, Groups::NONE).0,
            None => loss_and_grad(p, self.val, self.eps, self.cfg.masking, Groups::NONE)?.0,
        })
    }

    fn record(
        &self,
        p: &ModelParams<f64>,
        frozen: Option<&Frozen>,
        stage: Stage,
        epoch: usize,
        train_loss: f64,
    ) -> Result<TrajectoryRecord> {
        let gih_l1_mean = match &self.cfg.gih_reference {
            Some(s) if !self.val.is_empty() => {
                Some(gih_agreement(p, self.val, s, self.cfg.masking)?.mean_l1)
            }
            _ => None,
        };
        Ok(TrajectoryRecord {
            epoch,
            stage,
            a: p.a,
            train_loss,
            val_loss: self.val_loss(p, frozen)?,
            c_norm: p.c_norm(),
            p: p.subset_weights(),
            sigma: (0..p.shape.heads).map(|h| p.rpe_softmax(h)).collect(),
            gih_l1_mean,
        })
    }
}

fn apply(p: &mut ModelParams<f64>, g: &Gradient<f64>, lr: f64, groups: Groups) {
    if groups.a {
        p.a -= lr * g.a;
    }
    if groups.w {
        for (row, gr) in p.rpe.iter_mut().zip(&g.w) {
            for (w, d) in row.iter_mut().zip(gr) {
                *w -= lr * d;
            }
        }
    }
    if groups.c {
        for (c, d) in p.ffn.iter_mut().zip(&g.c) {
            *c -= lr * d;
        }
    }
}

/// Full-batch gradient descent, staged (`c`, then `w`, then `a`) or
/// simultaneous. Sequences are `x_{1:L+1}`; the last token is the target.
pub fn train(
    params0: &ModelParams<f64>,
    train_seqs: &[Vec<usize>],
    val_seqs: &[Vec<usize>],
    cfg: &TrainingConfig,
) -> Result<(ModelParams<f64>, Trajectory)> {
    cfg.validate()?;
    let len_l = train_seqs
        .first()
        .map(|s| s.len() - 1)
        .ok_or_else(|| Error::config("training batch is empty"))?;
    if train_seqs.iter().chain(val_seqs).any(|s| s.len() != len_l + 1) {
        return Err(Error::config("all sequences must share the same length"));
    }
    let runner = Runner {
        train: train_seqs,
        val: val_seqs,
        cfg,
        eps: cfg.epsilon_for(len_l),
    };
    let [e1, e2, e3] = cfg.stage_epochs;
    let plan: Vec<(Stage, usize, Groups)> = if cfg.simultaneous {
        vec![(Stage::Joint, e1 + e2 + e3, Groups::ALL)]
    } else {
        vec![
            (Stage::Ffn, e1, Groups::C),
            (Stage::Rpe, e2, Groups::W),
            (Stage::Scale, e3, Groups::A),
        ]
    };
    let mut p = params0.clone();
    let mut traj = Trajectory {
        codes: p.subsets.codes(),
        heads: p.shape.heads,
        window: p.shape.window,
        records: Vec::new(),
    };
    let mut epoch = 0;
    // the current state still needs a record, labelled with this stage
    let mut pending = Some(Stage::Init);
    let mut last_frozen = None;
    for (stage, epochs, groups) in plan {
        if epochs == 0 {
            continue;
        }
        let frozen = if groups.w {
            None
        } else {
            Some(Frozen {
                train: cache_dots(&p, train_seqs, cfg.masking)?,
                val: cache_dots(&p, val_seqs, cfg.masking)?,
            })
        };
        let stop = epoch + epochs;
        while epoch < stop {
            let (loss, grad) = runner.eval(&p, frozen.as_ref(), groups)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            if let Some(st) = pending.take() {
                traj.records
                    .push(runner.record(&p, frozen.as_ref(), st, epoch, loss)?);
            }
            apply(&mut p, &grad, cfg.learning_rate, groups);
            epoch += 1;
            if epoch % cfg.log_stride == 0 || epoch == stop {
                pending = Some(stage);
            }
        }
        last_frozen = frozen;
    }
    if let Some(st) = pending {
        let frozen = last_frozen.as_ref();
        let (loss, _) = runner.eval(&p, frozen, Groups::NONE)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        traj.records.push(runner.record(&p, frozen, st, epoch, loss)?);
    }
    Ok((p, traj))
}
