//! Plain-text tensor files.
//!
//! Factor matrix block:
//!
//! ```text
//! # mode 2 dims 4 k 3
//! 1.00000000000000000e0,-2.50000000000000000e-1,0.00000000000000000e0
//! ...                      (one row per row index)
//! ```
//!
//! A factored-tensor file is one block per mode followed by a `# weights k`
//! block with one weight per line. Dense tensor files start with
//! `# dense d1 d2 d3` followed by one entry per line, mode 1 fastest.
//! Values are written with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{DenseTensor, Dims, FactoredTensor};
use crate::error::{Error, Result};

fn fmt_value(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_factor_block(out: &mut String, mode: usize, m: &DMatrix<f64>) {
    let _ = writeln!(out, "# mode {} dims {} k {}", mode + 1, m.nrows(), m.ncols());
    for row in m.row_iter() {
        let vals: Vec<String> = row.iter().map(|&x| fmt_value(x)).collect();
        let _ = writeln!(out, "{}", vals.join(","));
    }
}

pub fn factored_to_string(t: &FactoredTensor) -> String {
    let mut out = String::new();
    for (r, f) in t.factors().iter().enumerate() {
        write_factor_block(&mut out, r, f);
    }
    let _ = writeln!(out, "# weights {}", t.rank());
    for &w in t.weights().iter() {
        let _ = writeln!(out, "{}", fmt_value(w));
    }
    out
}

pub fn dense_to_string(t: &DenseTensor) -> String {
    let dims: Vec<String> = t.dims().as_slice().iter().map(|d| d.to_string()).collect();
    let mut out = format!("# dense {}\n", dims.join(" "));
    for &x in t.as_slice() {
        out.push_str(&fmt_value(x));
        out.push('\n');
    }
    out
}

fn parse_header(line: &str, lineno: usize, keys: &[&str]) -> Result<Vec<usize>> {
    let mut toks = line.trim_start_matches('#').split_whitespace();
    let mut vals = Vec::with_capacity(keys.len());
    for key in keys {
        match toks.next() {
            Some(t) if t == *key => {}
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected `{key}`, found {other:?}"),
                })
            }
        }
        let v = toks.next().and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("missing integer after `{key}`"),
        })?;
        vals.push(v);
    }
    Ok(vals)
}

fn parse_values(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                message: format!("bad number `{t}`: {e}"),
            })
        })
        .collect()
}

/// Parses a sequence of `# mode` blocks and a trailing `# weights` block.
pub fn factored_from_str(text: &str) -> Result<FactoredTensor> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut factors = Vec::new();
    let mut weights = None;
    while let Some((lineno, line)) = lines.next() {
        if line.starts_with("# mode") {
            let h = parse_header(line, lineno, &["mode", "dims", "k"])?;
            let (rows, k) = (h[1], h[2]);
            if h[0] != factors.len() + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected mode {}, found {}", factors.len() + 1, h[0]),
                });
            }
            let mut data = Vec::with_capacity(rows * k);
            for _ in 0..rows {
                let (ln, l) = lines.next().ok_or(Error::Parse {
                    line: lineno,
                    message: "truncated factor block".into(),
                })?;
                let vals = parse_values(l, ln)?;
                if vals.len() != k {
                    return Err(Error::Parse {
                        line: ln,
                        message: format!("expected {k} values, got {}", vals.len()),
                    });
                }
                data.extend(vals);
            }
            factors.push(DMatrix::from_row_slice(rows, k, &data));
        } else if line.starts_with("# weights") {
            let h = parse_header(line, lineno, &["weights"])?;
            let mut w = Vec::with_capacity(h[0]);
            for _ in 0..h[0] {
                let (ln, l) = lines.next().ok_or(Error::Parse {
                    line: lineno,
                    message: "truncated weights block".into(),
                })?;
                w.extend(parse_values(l, ln)?);
            }
            weights = Some(DVector::from_vec(w));
        } else if !line.starts_with('#') {
            return Err(Error::Parse {
                line: lineno,
                message: "data outside a block".into(),
            });
        }
    }
    let k = factors.first().map(|f| f.ncols()).unwrap_or(0);
    let weights = weights.unwrap_or_else(|| DVector::from_element(k, 1.0));
    FactoredTensor::new(factors, weights)
}

pub fn dense_from_str(text: &str) -> Result<DenseTensor> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (lineno, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty dense tensor file".into(),
    })?;
    let mut toks = header.trim_start_matches('#').split_whitespace();
    if toks.next() != Some("dense") {
        return Err(Error::Parse {
            line: lineno,
            message: "expected `# dense d1 d2 ..` header".into(),
        });
    }
    let dims = toks
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
    let mut data = Vec::new();
    for (ln, l) in lines {
        if l.starts_with('#') {
            continue;
        }
        data.extend(parse_values(l, ln)?);
    }
    DenseTensor::from_vec(Dims::new(dims)?, data)
}

pub fn write_factored(path: &Path, t: &FactoredTensor) -> Result<()> {
    std::fs::write(path, factored_to_string(t)).map_err(|e| Error::io(path, e))
}

pub fn read_factored(path: &Path) -> Result<FactoredTensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    factored_from_str(&text)
}

pub fn write_dense(path: &Path, t: &DenseTensor) -> Result<()> {
    std::fs::write(path, dense_to_string(t)).map_err(|e| Error::io(path, e))
}

pub fn read_dense(path: &Path) -> Result<DenseTensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dense_from_str(&text)
}
