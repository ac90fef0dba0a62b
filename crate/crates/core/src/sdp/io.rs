//! Plain-text problem format.
//!
//! ```text
//! # comment
//! <nblocks> <nfree> <neq>
//! dims <n_1> ... <n_nblocks>
//! <eq> <block> <row> <col> <value>     eq 0 is the objective; indices 1-based
//! <eq> free <k> <value>
//! rhs <eq> <value>
//! ```
//!
//! Values are written with 17 significant digits so a dump parses back to
//! the identical problem.

use std::fmt::Write as _;

use super::{BlockEntry, Equality, SdpError, SdpProblem};

pub fn write_text(p: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", p.block_dims.len(), p.n_free, p.equalities.len());
    let dims: Vec<String> = p.block_dims.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "dims {}", dims.join(" "));
    let mut emit = |eq: usize, blocks: &[BlockEntry], free: &[(usize, f64)]| {
        for e in blocks {
            let _ = writeln!(out, "{} {} {} {} {:.16e}", eq, e.block + 1, e.row + 1, e.col + 1, e.value);
        }
        for &(k, v) in free {
            let _ = writeln!(out, "{} free {} {:.16e}", eq, k + 1, v);
        }
    };
    emit(0, &p.objective.blocks, &p.objective.free);
    for (i, eq) in p.equalities.iter().enumerate() {
        emit(i + 1, &eq.blocks, &eq.free);
    }
    for (i, eq) in p.equalities.iter().enumerate() {
        let _ = writeln!(out, "rhs {} {:.16e}", i + 1, eq.rhs);
    }
    out
}

pub fn read_text(s: &str) -> Result<SdpProblem, SdpError> {
    let err = |line: usize, msg: &str| SdpError::Parse { line, msg: msg.to_string() };
    let mut lines = s
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, header) = lines.next().ok_or_else(|| err(0, "empty input"))?;
    let h: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| err(ln, "bad header"))?;
    if h.len() != 3 {
        return Err(err(ln, "header needs nblocks nfree neq"));
    }
    let (nblocks, nfree, neq) = (h[0], h[1], h[2]);

    let (ln, dims_line) = lines.next().ok_or_else(|| err(ln, "missing dims line"))?;
    let mut toks = dims_line.split_whitespace();
    if toks.next() != Some("dims") {
        return Err(err(ln, "expected dims"));
    }
    let dims: Vec<usize> =
        toks.map(|t| t.parse::<usize>()).collect::<Result<_, _>>().map_err(|_| err(ln, "bad block size"))?;
    if dims.len() != nblocks {
        return Err(err(ln, "dims count differs from header"));
    }

    let mut p = SdpProblem::new(dims, nfree);
    p.equalities = vec![Equality::default(); neq];
    let index = |ln: usize, t: &str, bound: usize, what: &str| -> Result<usize, SdpError> {
        let v: usize = t.parse().map_err(|_| err(ln, &format!("bad {what}")))?;
        if v == 0 || v > bound {
            return Err(err(ln, &format!("{what} {v} out of range")));
        }
        Ok(v - 1)
    };
    let value = |ln: usize, t: &str| -> Result<f64, SdpError> {
        let v: f64 = t.parse().map_err(|_| err(ln, "bad value"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(ln, "non-finite value"))
        }
    };

    for (ln, line) in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["rhs", e, v] => {
                let e = index(ln, e, neq, "equality")?;
                p.equalities[e].rhs = value(ln, v)?;
            }
            [e, "free", k, v] => {
                let e: usize = e.parse().map_err(|_| err(ln, "bad equality"))?;
                if e > neq {
                    return Err(err(ln, "equality out of range"));
                }
                let k = index(ln, k, nfree, "free variable")?;
                let v = value(ln, v)?;
                if e == 0 {
                    p.objective.free.push((k, v));
                } else {
                    p.equalities[e - 1].free.push((k, v));
                }
            }
            [e, b, r, c, v] => {
                let e: usize = e.parse().map_err(|_| err(ln, "bad equality"))?;
                if e > neq {
                    return Err(err(ln, "equality out of range"));
                }
                let b = index(ln, b, nblocks, "block")?;
                let n = p.block_dims[b];
                let r = index(ln, r, n, "row")?;
                let c = index(ln, c, n, "column")?;
                let entry = BlockEntry::new(b, r, c, value(ln, v)?);
                if e == 0 {
                    p.objective.blocks.push(entry);
                } else {
                    p.equalities[e - 1].blocks.push(entry);
                }
            }
            _ => return Err(err(ln, "unrecognized line")),
        }
    }
    Ok(p)
}
