use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::kernel::{ChainSpec, InitDist, TransitionKernel};
use super::sample::{derive_seed, generate_sequence, sample_kernel, sequence_seed};
use super::stationary::stationary_distribution;
use crate::error::{Error, Result};

/// A dataset of sequences `x_{1:(L+1)}` together with the kernels that
/// generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainBatch {
    pub spec: Arc<ChainSpec>,
    pub len_l: usize,
    pub kernels: Vec<TransitionKernel<f64>>,
    /// Index into `kernels` for each sequence.
    pub kernel_of: Vec<usize>,
    pub sequences: Vec<Vec<usize>>,
    pub seeds: Vec<u64>,
    /// Sequences whose stationary initial law could not be computed and fell
    /// back to the uniform one.
    pub init_fallbacks: usize,
}

fn init_for(kernel: &TransitionKernel<f64>) -> (Vec<f64>, bool) {
    let states = kernel.spec().states();
    match kernel.spec().init() {
        InitDist::Uniform => (vec![1.0 / states as f64; states], false),
        InitDist::Explicit(mu) => (mu.clone(), false),
        InitDist::Stationary => match stationary_distribution(kernel) {
            Ok(info) => (info.dist, false),
            Err(_) => (vec![1.0 / states as f64; states], true),
        },
    }
}

/// One generated item: kernel, sequence, seed and whether the start fell back.
type Sampled = (TransitionKernel<f64>, Vec<usize>, u64, bool);

impl ChainBatch {
    /// Samples `count` (kernel, sequence) pairs. Item `i` uses the seed
    /// `derive_seed(master_seed, first_index + i)` for its kernel and a
    /// derived stream of it for the sequence, so disjoint index ranges of one
    /// master seed give independent splits.
    pub fn generate(
        spec: &Arc<ChainSpec>,
        count: usize,
        len_l: usize,
        master_seed: u64,
        first_index: u64,
    ) -> Result<Self> {
        if len_l < spec.r_max() {
            return Err(Error::config(format!(
                "L = {len_l} is too short for r_n = {}",
                spec.r_max()
            )));
        }
        let items: Vec<Result<Sampled>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(master_seed, first_index + i as u64);
                let kernel: TransitionKernel<f64> = sample_kernel(spec, seed);
                let (init, fallback) = init_for(&kernel);
                let seq = generate_sequence(&kernel, &init, len_l, sequence_seed(seed))?;
                Ok((kernel, seq, seed, fallback))
            })
            .collect();
        let mut batch = ChainBatch::empty(Arc::clone(spec), len_l);
        for item in items {
            let (kernel, seq, seed, fallback) = item?;
            batch.kernel_of.push(batch.kernels.len());
            batch.kernels.push(kernel);
            batch.sequences.push(seq);
            batch.seeds.push(seed);
            batch.init_fallbacks += fallback as usize;
        }
        Ok(batch)
    }

    /// `count` sequences that all share one kernel.
    pub fn with_shared_kernel(
        kernel: TransitionKernel<f64>,
        count: usize,
        len_l: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let (init, fallback) = init_for(&kernel);
        let spec = Arc::clone(kernel.spec_arc());
        let mut batch = ChainBatch::empty(spec, len_l);
        for i in 0..count {
            let seed = derive_seed(master_seed, i as u64);
            batch
                .sequences
                .push(generate_sequence(&kernel, &init, len_l, sequence_seed(seed))?);
            batch.seeds.push(seed);
            batch.kernel_of.push(0);
        }
        batch.init_fallbacks = if fallback { count } else { 0 };
        batch.kernels.push(kernel);
        Ok(batch)
    }

    pub fn empty(spec: Arc<ChainSpec>, len_l: usize) -> Self {
        ChainBatch {
            spec,
            len_l,
            kernels: Vec::new(),
            kernel_of: Vec::new(),
            sequences: Vec::new(),
            seeds: Vec::new(),
            init_fallbacks: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn kernel(&self, seq_idx: usize) -> &TransitionKernel<f64> {
        &self.kernels[self.kernel_of[seq_idx]]
    }

    /// The first `count` sequences.
    pub fn truncated(&self, count: usize) -> ChainBatch {
        let mut out = ChainBatch::empty(Arc::clone(&self.spec), self.len_l);
        let mut remap = HashMap::new();
        for i in 0..count.min(self.len()) {
            let k = self.kernel_of[i];
            let new_k = *remap.entry(k).or_insert_with(|| {
                out.kernels.push(self.kernels[k].clone());
                out.kernels.len() - 1
            });
            out.kernel_of.push(new_k);
            out.sequences.push(self.sequences[i].clone());
            out.seeds.push(self.seeds[i]);
        }
        out
    }
}

/// 64-bit content hash of a kernel table, as 16 hex digits.
pub fn kernel_hash(kernel: &TransitionKernel<f64>) -> String {
    let mut hasher = Sha256::new();
    for p in kernel.table() {
        hasher.update(p.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".kernels");
    PathBuf::from(s)
}

/// Writes the batch file and its `.kernels` sidecar.
///
/// Batch file: header `d,n,pa,L,alpha,count` (parent offsets negative and
/// space separated, e.g. `3,2,-1 -2,100,0.01,9000`), then one line
/// `seed;kernel_hash;t0 t1 ... tL` per sequence. Sidecar: one line
/// `kernel_hash;p0 p1 ...` per distinct kernel, the table flattened
/// column-major with 17 significant digits.
pub fn write_batch(path: &Path, batch: &ChainBatch) -> Result<()> {
    let spec = &batch.spec;
    let pa = spec
        .parents()
        .iter()
        .map(|r| format!("-{r}"))
        .collect::<Vec<_>>()
        .join(" ");
    let mut body = format!(
        "{},{},{},{},{},{}\n",
        spec.vocab(),
        spec.order(),
        pa,
        batch.len_l,
        spec.alpha(),
        batch.len()
    );
    let hashes: Vec<String> = batch.kernels.iter().map(kernel_hash).collect();
    for i in 0..batch.len() {
        let toks = batch.sequences[i]
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(body, "{};{};{}", batch.seeds[i], hashes[batch.kernel_of[i]], toks);
    }
    let mut side = String::new();
    let mut seen = std::collections::HashSet::new();
    for (h, k) in hashes.iter().zip(&batch.kernels) {
        if seen.insert(h.clone()) {
            let vals = k
                .table()
                .iter()
                .map(|p| format!("{p:.16e}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(side, "{h};{vals}");
        }
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    let sp = sidecar_path(path);
    fs::write(&sp, side).map_err(|e| Error::io(&sp, e))?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn read_batch(path: &Path) -> Result<ChainBatch> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 6 {
        return Err(parse_err(path, 1, "header must be d,n,pa,L,alpha,count"));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| parse_err(path, 1, format!("bad {what}: {s:?}")))
    };
    let d = num(fields[0], "d")?;
    let n = num(fields[1], "n")?;
    let parents = fields[2]
        .split_whitespace()
        .map(|t| {
            t.trim_start_matches('-')
                .parse::<usize>()
                .map_err(|_| parse_err(path, 1, format!("bad parent offset {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if parents.len() != n {
        return Err(parse_err(path, 1, "n disagrees with the parent set"));
    }
    let len_l = num(fields[3], "L")?;
    let alpha: f64 = fields[4]
        .trim()
        .parse()
        .map_err(|_| parse_err(path, 1, "bad alpha"))?;
    let count = num(fields[5], "count")?;
    let spec = Arc::new(ChainSpec::new(d, parents, alpha)?);

    let sp = sidecar_path(path);
    let side = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let mut table_of: HashMap<String, TransitionKernel<f64>> = HashMap::new();
    for (i, line) in side.lines().enumerate() {
        let (h, vals) = line
            .split_once(';')
            .ok_or_else(|| parse_err(&sp, i + 1, "expected hash;values"))?;
        let table = vals
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| parse_err(&sp, i + 1, "bad probability")))
            .collect::<Result<Vec<_>>>()?;
        let kernel = TransitionKernel::from_table(Arc::clone(&spec), table)
            .map_err(|e| parse_err(&sp, i + 1, e.to_string()))?;
        table_of.insert(h.to_string(), kernel);
    }

    let mut batch = ChainBatch::empty(Arc::clone(&spec), len_l);
    let mut index_of: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let mut parts = line.splitn(3, ';');
        let (seed, hash, toks) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(parse_err(path, lineno, "expected seed;kernel_hash;tokens")),
        };
        let seed: u64 = seed
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad seed"))?;
        let seq = toks
            .split_whitespace()
            .map(|t| match t.parse::<usize>() {
                Ok(v) if v < d => Ok(v),
                _ => Err(parse_err(path, lineno, format!("bad token {t:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if seq.len() != len_l + 1 {
            return Err(parse_err(path, lineno, format!("expected {} tokens", len_l + 1)));
        }
        let k = match index_of.get(hash) {
            Some(&k) => k,
            None => {
                let kernel = table_of
                    .get(hash)
                    .ok_or_else(|| parse_err(path, lineno, format!("unknown kernel {hash}")))?;
                batch.kernels.push(kernel.clone());
                index_of.insert(hash.to_string(), batch.kernels.len() - 1);
                batch.kernels.len() - 1
            }
        };
        batch.kernel_of.push(k);
        batch.sequences.push(seq);
        batch.seeds.push(seed);
    }
    if batch.len() != count {
        return Err(parse_err(
            path,
            1,
            format!("header declares {count} sequences, found {}", batch.len()),
        ));
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> Arc<ChainSpec> {
        Arc::new(ChainSpec::new(3, vec![1, 2], 0.01).unwrap())
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = ChainBatch::generate(&spec(), 40, 100, 9, 0).unwrap();
        let b = ChainBatch::generate(&spec(), 40, 100, 9, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        assert!(a.sequences.iter().all(|s| s.len() == 101 && s.iter().all(|&t| t < 3)));
        assert_eq!(a.kernels.len(), 40);
        let tail = ChainBatch::generate(&spec(), 10, 100, 9, 30).unwrap();
        assert_eq!(tail.sequences[..], a.sequences[30..]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        let a = ChainBatch::generate(&spec(), 12, 20, 3, 0).unwrap();
        write_batch(&path, &a).unwrap();
        let b = read_batch(&path).unwrap();
        assert_eq!(a.sequences, b.sequences);
        assert_eq!(a.seeds, b.seeds);
        for i in 0..a.len() {
            assert_eq!(a.kernel(i), b.kernel(i));
        }
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("3,2,-1 -2,20,0.01,12\n"));
    }

    #[test]
    fn empty_batch_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        let a = ChainBatch::generate(&spec(), 0, 100, 3, 0).unwrap();
        write_batch(&path, &a).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "3,2,-1 -2,100,0.01,0\n");
        assert!(read_batch(&path).unwrap().is_empty());
    }

    #[test]
    fn shared_kernel_batch_writes_one_sidecar_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shared.txt");
        let k: TransitionKernel<f64> = sample_kernel(&spec(), 1);
        let a = ChainBatch::with_shared_kernel(k, 5, 30, 1).unwrap();
        write_batch(&path, &a).unwrap();
        assert_eq!(fs::read_to_string(sidecar_path(&path)).unwrap().lines().count(), 1);
        let b = read_batch(&path).unwrap();
        assert_eq!(b.kernels.len(), 1);
        assert_eq!(b.sequences, a.sequences);
    }

    #[test]
    fn reader_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        let a = ChainBatch::generate(&spec(), 2, 10, 3, 0).unwrap();
        write_batch(&path, &a).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace(",2\n", ",3\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_batch(&path), Err(Error::Parse { .. })));
    }
}
