use std::io::{BufRead, Write};

use super::{AutodiffError, ParamStore, Tensor};

const MAGIC: &str = "rawgnn-checkpoint v1";

/// Writes `store` and free-form metadata. Values are stored as the hex bit
/// patterns of each `f64`, so reading back is exact.
pub fn write_params<W: Write>(mut w: W, store: &ParamStore, meta: &[(String, String)]) -> Result<(), AutodiffError> {
    writeln!(w, "{MAGIC}")?;
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(AutodiffError::Checkpoint(format!("bad metadata key `{k}`")));
        }
        writeln!(w, "meta {k} {v}")?;
    }
    for (name, p) in store.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        writeln!(w, "param {name} {} {}", shape.len(), shape.join(" "))?;
        let hex: Vec<String> = p.value.data().iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        writeln!(w, "{}", hex.join(" "))?;
    }
    writeln!(w, "end")?;
    Ok(())
}

pub fn read_params<R: BufRead>(r: R) -> Result<(ParamStore, Vec<(String, String)>), AutodiffError> {
    let bad = |line: usize, msg: &str| AutodiffError::Checkpoint(format!("line {line}: {msg}"));
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, Ok(l))) if l.trim_end() == MAGIC => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => return Err(bad(1, "missing header")),
    }
    let mut store = ParamStore::new();
    let mut meta = Vec::new();
    while let Some((no, line)) = lines.next() {
        let line = line?;
        let line = line.trim_end();
        if line == "end" {
            return Ok((store, meta));
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
            continue;
        }
        let Some(rest) = line.strip_prefix("param ") else {
            return Err(bad(no, "expected `param`, `meta` or `end`"));
        };
        let mut parts = rest.split_whitespace();
        let name = parts.next().ok_or_else(|| bad(no, "missing name"))?;
        let rank: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(no, "bad rank"))?;
        let shape = parts
            .map(|s| s.parse::<usize>().map_err(|_| bad(no, "bad dimension")))
            .collect::<Result<Vec<_>, _>>()?;
        if shape.len() != rank {
            return Err(bad(no, "rank does not match dimensions"));
        }
        let (vno, values) = lines.next().ok_or_else(|| bad(no + 1, "missing values"))?;
        let values = values?;
        let data = values
            .split_whitespace()
            .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits).map_err(|_| bad(vno, "bad value")))
            .collect::<Result<Vec<_>, _>>()?;
        let t = Tensor::new(shape, data).map_err(|e| bad(vno, &e.to_string()))?;
        store.insert(name, t)?;
    }
    Err(AutodiffError::Checkpoint("missing `end`".into()))
}
