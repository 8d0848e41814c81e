use std::fmt::Write as _;
use std::path::Path;

use super::params::{ModelParams, ModelShape};
use crate::error::{Error, Result};

/// Plain-text parameter dump: a `# M=.. H=.. d=.. D=..` line followed by
/// `a=`, `w[h][-i]=` and `c[code]=` lines with 17 significant digits.
pub fn format_checkpoint(params: &ModelParams<f64>) -> String {
    let sh = params.shape;
    let mut out = format!(
        "# M={} H={} d={} D={}\n",
        sh.window, sh.heads, sh.vocab, sh.degree
    );
    let _ = writeln!(out, "a={:.16e}", params.a);
    for (h, row) in params.rpe.iter().enumerate() {
        for (i, w) in row.iter().enumerate() {
            let _ = writeln!(out, "w[{}][-{}]={:.16e}", h + 1, i + 1, w);
        }
    }
    for (code, c) in params.subsets.codes().iter().zip(&params.ffn) {
        let _ = writeln!(out, "c[{code}]={c:.16e}");
    }
    out
}

pub fn parse_checkpoint(text: &str, source_name: &str) -> Result<ModelParams<f64>> {
    let perr = |line: usize, msg: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines
        .next()
        .ok_or_else(|| perr(1, "empty checkpoint".into()))?;
    let shape = parse_meta(head).ok_or_else(|| perr(1, format!("bad header `{head}`")))?;
    let shape = ModelShape::new(shape[0], shape[1], shape[2], shape[3])?;
    let mut p = ModelParams::<f64>::zeros(shape);
    let total = p.num_params();
    let mut seen = vec![false; total];
    for (no, line) in lines {
        let no = no + 1;
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| perr(no, format!("expected name=value, got `{line}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| perr(no, format!("bad number: {e}")))?;
        let name = name.trim();
        let slot = slot_of(&p, name).ok_or_else(|| perr(no, format!("unknown parameter `{name}`")))?;
        if seen[slot] {
            return Err(perr(no, format!("duplicate parameter `{name}`")));
        }
        seen[slot] = true;
        let mut flat = p.to_flat();
        flat[slot] = value;
        p.set_flat(&flat);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(perr(0, format!("missing parameter #{missing} of {total}")));
    }
    Ok(p)
}

fn parse_meta(line: &str) -> Option<[usize; 4]> {
    let body = line.trim().strip_prefix('#')?;
    let mut vals = [None; 4];
    for tok in body.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        let idx = ["M", "H", "d", "D"].iter().position(|&n| n == k)?;
        vals[idx] = Some(v.parse().ok()?);
    }
    Some([vals[0]?, vals[1]?, vals[2]?, vals[3]?])
}

fn slot_of(p: &ModelParams<f64>, name: &str) -> Option<usize> {
    let sh = p.shape;
    if name == "a" {
        return Some(0);
    }
    if let Some(rest) = name.strip_prefix("w[") {
        let (h, rest) = rest.split_once("][-")?;
        let i = rest.strip_suffix(']')?;
        let (h, i): (usize, usize) = (h.parse().ok()?, i.parse().ok()?);
        if (1..=sh.heads).contains(&h) && (1..=sh.window).contains(&i) {
            return Some(1 + (h - 1) * sh.window + (i - 1));
        }
        return None;
    }
    let code = name.strip_prefix("c[")?.strip_suffix(']')?;
    let idx = p.subsets.index_of_code(code)?;
    Some(1 + sh.heads * sh.window + idx)
}

pub fn write_checkpoint(path: &Path, params: &ModelParams<f64>) -> Result<()> {
    std::fs::write(path, format_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_roundtrip() {
        let shape = ModelShape::new(3, 3, 3, 2).unwrap();
        let mut p = ModelParams::<f64>::standard_init(shape);
        p.a = std::f64::consts::PI * 1e7;
        p.rpe[2][1] = -1.0 / 3.0;
        p.ffn[4] = 1e-300;
        let text = format_checkpoint(&p);
        assert!(text.contains("c[110]="));
        assert!(text.contains("w[3][-2]="));
        let back = parse_checkpoint(&text, "mem").unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_unknown_and_missing() {
        let shape = ModelShape::new(2, 2, 2, 1).unwrap();
        let p = ModelParams::<f64>::standard_init(shape);
        let text = format_checkpoint(&p);
        let bad = text.replace("c[01]", "c[11]");
        assert!(parse_checkpoint(&bad, "x").is_err());
        let short: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(parse_checkpoint(&short, "x").is_err());
    }
}
