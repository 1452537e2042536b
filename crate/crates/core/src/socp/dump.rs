//! Plain-text standard-form dump.
//!
//! One record per line; blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! program <n_vars> <n_eq>
//! offset <value>
//! cone free|nonneg|soc <dim>      (in order, partitioning x)
//! c <col> <value>                 (nonzeros only)
//! q <col> <value>
//! a <row> <col> <value>
//! b <row> <value>
//! ```
//!
//! Floats are written in shortest round-trip form, so a dump read back gives
//! a bitwise identical program.

use super::{Cone, ConicProgram};
use crate::linalg::CscMatrix;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing `program` header")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_program(prog: &ConicProgram) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "program {} {}", prog.n_vars, prog.n_eq());
    let _ = writeln!(s, "offset {:?}", prog.offset);
    for c in &prog.cones {
        let (name, k) = match c {
            Cone::Free(k) => ("free", k),
            Cone::NonNeg(k) => ("nonneg", k),
            Cone::SecondOrder(k) => ("soc", k),
        };
        let _ = writeln!(s, "cone {name} {k}");
    }
    for (j, &v) in prog.c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let _ = writeln!(s, "c {j} {v:?}");
    }
    for (j, &v) in prog.q.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let _ = writeln!(s, "q {j} {v:?}");
    }
    for (r, c, v) in prog.a.triplets() {
        let _ = writeln!(s, "a {r} {c} {v:?}");
    }
    for (r, &v) in prog.b.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let _ = writeln!(s, "b {r} {v:?}");
    }
    s
}

pub fn read_program(text: &str) -> Result<ConicProgram, DumpError> {
    let mut header: Option<(usize, usize)> = None;
    let mut offset = 0.0;
    let mut cones = Vec::new();
    let mut c = Vec::new();
    let mut q = Vec::new();
    let mut triplets = Vec::new();
    let mut b = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| DumpError::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        let idx = |k: usize| -> Result<usize, DumpError> {
            f.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err("bad index"))
        };
        let num = |k: usize| -> Result<f64, DumpError> {
            f.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err("bad number"))
        };
        if f[0] == "program" {
            let (n, m) = (idx(1)?, idx(2)?);
            header = Some((n, m));
            c = vec![0.0; n];
            q = vec![0.0; n];
            b = vec![0.0; m];
            continue;
        }
        let (n, m) = header.ok_or(DumpError::MissingHeader)?;
        match f[0] {
            "offset" => offset = num(1)?,
            "cone" => {
                let k = idx(2)?;
                cones.push(match f.get(1).copied() {
                    Some("free") => Cone::Free(k),
                    Some("nonneg") => Cone::NonNeg(k),
                    Some("soc") => Cone::SecondOrder(k),
                    _ => return Err(err("unknown cone")),
                });
            }
            "c" | "q" => {
                let j = idx(1)?;
                if j >= n {
                    return Err(err("column out of range"));
                }
                let target = if f[0] == "c" { &mut c } else { &mut q };
                target[j] = num(2)?;
            }
            "a" => {
                let (r, j) = (idx(1)?, idx(2)?);
                if r >= m || j >= n {
                    return Err(err("entry out of range"));
                }
                triplets.push((r, j, num(3)?));
            }
            "b" => {
                let r = idx(1)?;
                if r >= m {
                    return Err(err("row out of range"));
                }
                b[r] = num(2)?;
            }
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    let (n, m) = header.ok_or(DumpError::MissingHeader)?;
    if q.iter().all(|&v| v == 0.0) {
        q.clear();
    }
    Ok(ConicProgram {
        n_vars: n,
        c,
        q,
        offset,
        a: CscMatrix::from_triplets(m, n, &triplets),
        b,
        cones,
    })
}

#[cfg(test)]
mod tests {
    use super::super::ProgramBuilder;
    use super::*;

    #[test]
    fn round_trip() {
        let mut pb = ProgramBuilder::new();
        let x = pb.free();
        let t = pb.soc(3);
        let s = pb.nonneg();
        pb.add_cost(x, 0.1);
        pb.add_quad(s, 2.5);
        pb.add_offset(-1.0 / 3.0);
        pb.eq(&[(x, 1.0), (t, -1e-17)], 0.3);
        pb.eq(&[(t + 1, 1.0), (s, 2.0)], 0.0);
        let p = pb.build();
        let back = read_program(&write_program(&p)).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn rejects_unknown_record() {
        let e = read_program("program 1 0\nfoo 1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"));
    }
}
