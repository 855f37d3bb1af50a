//! Plain-text file formats.
//!
//! Edge lists: a `# N=<n>` header, one `# theta\t<i>\t<value>` line per node,
//! then one `i\tj\tw` line per stored edge (`i < j`, 0-based). Real numbers
//! are written with 17 significant digits so that they round-trip exactly.
//!
//! Sample matrices: a `N M` header followed by `N` rows of `M` values.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ConvergenceTrace, RecursionTrace, SampleMatrix, SparseWeights};

/// Formats `x` with 17 significant digits, in positional notation when the
/// magnitude allows it.
pub fn format_sig17(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.16e}")
    }
}

pub fn write_edge_list<W: Write>(mut out: W, weights: &SparseWeights) -> Result<()> {
    writeln!(out, "# N={}", weights.n())?;
    for (i, &t) in weights.thetas().iter().enumerate() {
        writeln!(out, "# theta\t{i}\t{}", format_sig17(t))?;
    }
    for (i, j, w) in weights.sorted_edges() {
        writeln!(out, "{i}\t{j}\t{}", format_sig17(w))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an edge list. Nodes without a `# theta` line get `theta = 0`.
/// Other `#` lines are treated as comments.
pub fn read_edge_list<R: BufRead>(input: R, origin: &Path) -> Result<SparseWeights> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut n: Option<usize> = None;
    let mut thetas: Vec<(usize, f64)> = Vec::new();
    let mut edges = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim_start();
            if let Some(v) = rest.strip_prefix("N=") {
                let parsed = v
                    .trim()
                    .parse()
                    .map_err(|e| perr(lineno, format!("bad node count: {e}")))?;
                n = Some(parsed);
            } else if let Some(v) = rest.strip_prefix("theta") {
                let mut it = v.split_whitespace();
                let (Some(i), Some(t), None) = (it.next(), it.next(), it.next()) else {
                    return Err(perr(lineno, "theta line needs <i> <value>".into()));
                };
                let i = i
                    .parse()
                    .map_err(|e| perr(lineno, format!("bad node id: {e}")))?;
                let t: f64 = t
                    .parse()
                    .map_err(|e| perr(lineno, format!("bad theta: {e}")))?;
                thetas.push((i, t));
            }
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let (Some(i), Some(j), Some(w), None) = (it.next(), it.next(), it.next(), it.next())
        else {
            return Err(perr(lineno, "edge line needs <i> <j> <w>".into()));
        };
        let i: usize = i
            .parse()
            .map_err(|e| perr(lineno, format!("bad node id: {e}")))?;
        let j: usize = j
            .parse()
            .map_err(|e| perr(lineno, format!("bad node id: {e}")))?;
        let w: f64 = w
            .parse()
            .map_err(|e| perr(lineno, format!("bad weight: {e}")))?;
        if i == j {
            return Err(perr(lineno, format!("self-loop on node {i}")));
        }
        edges.push((i, j, w));
    }
    let n = n.ok_or_else(|| perr(0, "missing `# N=<n>` header".into()))?;
    let mut theta = vec![0.0; n];
    for (i, t) in thetas {
        if i >= n {
            return Err(Error::NodeOutOfRange { node: i, n });
        }
        theta[i] = t;
    }
    SparseWeights::from_parts(n, edges, theta)
}

pub fn write_samples<W: Write>(mut out: W, data: &SampleMatrix) -> Result<()> {
    writeln!(out, "{} {}", data.n(), data.m())?;
    let mut line = String::new();
    for i in 0..data.n() {
        line.clear();
        for (s, v) in data.row(i).iter().enumerate() {
            if s > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{v}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R, origin: &Path) -> Result<SampleMatrix> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = input.lines().enumerate();
    let (n, m) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(perr(0, "empty sample file".into()));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(n), Some(m), None) = (it.next(), it.next(), it.next()) else {
            return Err(perr(idx + 1, "header must be `N M`".into()));
        };
        let n: usize = n
            .parse()
            .map_err(|e| perr(idx + 1, format!("bad N: {e}")))?;
        let m: usize = m
            .parse()
            .map_err(|e| perr(idx + 1, format!("bad M: {e}")))?;
        break (n, m);
    };
    let mut values = Vec::with_capacity(n * m);
    let mut rows = 0;
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() && m > 0 {
            continue;
        }
        if rows == n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(perr(idx + 1, format!("more than {n} rows")));
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| perr(idx + 1, format!("bad value `{tok}`: {e}")))?;
            values.push(v);
        }
        if values.len() - before != m {
            return Err(perr(
                idx + 1,
                format!("expected {m} values, found {}", values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n && m > 0 {
        return Err(perr(0, format!("expected {n} rows, found {rows}")));
    }
    SampleMatrix::new(n, m, values)
}

/// `iter\tdelta\tseconds\tcandidates` rows, plus an `objective` column
/// when any iteration recorded one.
pub fn write_convergence_trace<W: Write>(mut out: W, trace: &ConvergenceTrace) -> Result<()> {
    let with_obj = trace.iterations.iter().any(|r| r.objective.is_some());
    write!(out, "iter\tdelta\tseconds\tcandidates")?;
    writeln!(out, "{}", if with_obj { "\tobjective" } else { "" })?;
    for r in &trace.iterations {
        write!(
            out,
            "{}\t{}\t{}\t{}",
            r.iter,
            format_sig17(r.delta),
            r.seconds,
            r.candidates
        )?;
        if with_obj {
            write!(out, "\t{}", r.objective.map_or_else(|| "nan".into(), format_sig17))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// `t\tN_t\tk_t\texhaustive` rows.
pub fn write_recursion_trace<W: Write>(mut out: W, trace: &RecursionTrace) -> Result<()> {
    writeln!(out, "t\tN_t\tk_t\texhaustive")?;
    for l in &trace.levels {
        writeln!(out, "{}\t{}\t{}\t{}", l.t, l.size, l.k, l.exhaustive as u8)?;
    }
    out.flush()?;
    Ok(())
}
