//! Line-oriented instance format.
//!
//! ```text
//! MILP v1
//! name <id>
//! vars <n>
//! cons <m>
//! min|max
//! obj <j> <coeff>          one line per nonzero objective entry
//! bnd <j> <lb> <ub>        one line per non-binary variable
//! bin <j>                  one line per binary variable
//! row <i> <=|>=|= <rhs>    followed by that row's entries
//! a <i> <j> <coeff>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored on read. Numbers are
//! written with Rust's shortest round-trip formatting, so writing an instance
//! that was read from a written file reproduces the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::scalar::Scalar;

use super::error::MilpError;
use super::instance::{MilpInstance, ObjSense, RawInstance, RawRow, RowSense};

pub const FORMAT_HEADER: &str = "MILP v1";

pub fn write_instance_string<T: Scalar>(inst: &MilpInstance<T>) -> String {
    let raw = inst.to_raw();
    let mut s = String::new();
    let _ = writeln!(s, "{FORMAT_HEADER}");
    let _ = writeln!(s, "name {}", sanitize_name(&raw.name));
    let _ = writeln!(s, "vars {}", raw.num_vars);
    let _ = writeln!(s, "cons {}", raw.rows.len());
    let _ = writeln!(
        s,
        "{}",
        match raw.sense {
            ObjSense::Minimize => "min",
            ObjSense::Maximize => "max",
        }
    );
    for (j, c) in raw.obj.iter().enumerate() {
        if *c != T::zero() {
            let _ = writeln!(s, "obj {j} {c}");
        }
    }
    let mut is_bin = vec![false; raw.num_vars];
    raw.binaries.iter().for_each(|&j| is_bin[j] = true);
    for j in 0..raw.num_vars {
        if !is_bin[j] {
            let _ = writeln!(s, "bnd {j} {} {}", raw.var_lb[j], raw.var_ub[j]);
        }
    }
    for &j in &raw.binaries {
        let _ = writeln!(s, "bin {j}");
    }
    for (i, row) in raw.rows.iter().enumerate() {
        let _ = writeln!(s, "row {i} {} {}", row.sense.symbol(), row.rhs);
        for (j, a) in &row.coeffs {
            let _ = writeln!(s, "a {i} {j} {a}");
        }
    }
    s
}

fn sanitize_name(name: &str) -> String {
    if name.is_empty() {
        return "unnamed".to_string();
    }
    name.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

pub fn read_instance_str<T: Scalar>(text: &str) -> Result<MilpInstance<T>, MilpError> {
    MilpInstance::canonicalize(&parse_raw(text)?)
}

/// Parses the text format without canonicalizing.
pub fn parse_raw<T: Scalar>(text: &str) -> Result<RawInstance<T>, MilpError> {
    let err = |line: usize, msg: &str| MilpError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    match lines.next() {
        Some((_, l)) if l == FORMAT_HEADER => {}
        Some((k, _)) => return Err(err(k, "expected header `MILP v1`")),
        None => return Err(err(0, "empty input")),
    }

    let mut name = String::from("unnamed");
    let mut num_vars: Option<usize> = None;
    let mut num_cons: Option<usize> = None;
    let mut sense = ObjSense::Minimize;
    let mut obj: Vec<T> = Vec::new();
    let mut lb: Vec<T> = Vec::new();
    let mut ub: Vec<T> = Vec::new();
    let mut binaries = Vec::new();
    let mut rows: Vec<Option<RawRow<T>>> = Vec::new();

    fn num<V: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<V, MilpError> {
        tok.and_then(|t| t.parse().ok()).ok_or(MilpError::Parse {
            line,
            msg: "malformed number".into(),
        })
    }

    for (k, line) in lines {
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or_default();
        let need_vars = |nv: Option<usize>| nv.ok_or_else(|| err(k, "`vars` must come first"));
        match key {
            "name" => name = toks.next().unwrap_or("unnamed").to_string(),
            "vars" => {
                let n: usize = num(toks.next(), k)?;
                num_vars = Some(n);
                obj = vec![T::zero(); n];
                lb = vec![T::zero(); n];
                ub = vec![T::infinity(); n];
            }
            "cons" => {
                let m: usize = num(toks.next(), k)?;
                num_cons = Some(m);
                rows = vec![None; m];
            }
            "min" => sense = ObjSense::Minimize,
            "max" => sense = ObjSense::Maximize,
            "obj" => {
                let n = need_vars(num_vars)?;
                let j: usize = num(toks.next(), k)?;
                if j >= n {
                    return Err(err(k, "variable index out of range"));
                }
                obj[j] = num(toks.next(), k)?;
            }
            "bnd" => {
                let n = need_vars(num_vars)?;
                let j: usize = num(toks.next(), k)?;
                if j >= n {
                    return Err(err(k, "variable index out of range"));
                }
                lb[j] = num(toks.next(), k)?;
                ub[j] = num(toks.next(), k)?;
            }
            "bin" => {
                let n = need_vars(num_vars)?;
                let j: usize = num(toks.next(), k)?;
                if j >= n {
                    return Err(err(k, "variable index out of range"));
                }
                lb[j] = T::zero();
                ub[j] = T::one();
                binaries.push(j);
            }
            "row" => {
                let m = num_cons.ok_or_else(|| err(k, "`cons` must precede rows"))?;
                let i: usize = num(toks.next(), k)?;
                if i >= m {
                    return Err(err(k, "row index out of range"));
                }
                let sense = toks
                    .next()
                    .and_then(RowSense::parse)
                    .ok_or_else(|| err(k, "bad row sense"))?;
                let rhs: T = num(toks.next(), k)?;
                let coeffs = rows[i].take().map(|r| r.coeffs).unwrap_or_default();
                rows[i] = Some(RawRow { coeffs, sense, rhs });
            }
            "a" => {
                let i: usize = num(toks.next(), k)?;
                let j: usize = num(toks.next(), k)?;
                let a: T = num(toks.next(), k)?;
                let row = rows
                    .get_mut(i)
                    .and_then(Option::as_mut)
                    .ok_or_else(|| err(k, "entry for undeclared row"))?;
                row.coeffs.push((j, a));
            }
            _ => return Err(err(k, "unknown directive")),
        }
    }

    let num_vars = num_vars.ok_or_else(|| err(0, "missing `vars`"))?;
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| err(0, &format!("row {i} declared in `cons` but missing"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RawInstance {
        name,
        sense,
        num_vars,
        obj,
        var_lb: lb,
        var_ub: ub,
        binaries,
        rows,
    })
}

pub fn write_instance<T: Scalar>(inst: &MilpInstance<T>, path: &Path) -> Result<(), MilpError> {
    std::fs::write(path, write_instance_string(inst))?;
    Ok(())
}

pub fn read_instance<T: Scalar>(path: &Path) -> Result<MilpInstance<T>, MilpError> {
    let text = std::fs::read_to_string(path)?;
    read_instance_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "MILP v1
name demo
vars 3
cons 2
max
obj 0 1.5
obj 2 -2
bnd 2 0 inf
bin 0
bin 1
row 0 >= 1
a 0 0 1
a 0 1 1
row 1 = 2.25
a 1 2 1
";

    #[test]
    fn read_canonicalizes_senses() {
        let inst: MilpInstance<f64> = read_instance_str(SAMPLE).unwrap();
        assert_eq!(inst.num_vars(), 3);
        assert_eq!(inst.num_cons(), 3);
        assert!(inst.is_maximize());
        assert_eq!(inst.obj(), &[-1.5, 0.0, 2.0]);
        assert_eq!(inst.var_ub()[2], f64::INFINITY);
        assert_eq!(inst.rhs(), &[-1.0, 2.25, -2.25]);
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let inst: MilpInstance<f64> = read_instance_str(SAMPLE).unwrap();
        let first = write_instance_string(&inst);
        let again: MilpInstance<f64> = read_instance_str(&first).unwrap();
        assert_eq!(again, inst);
        assert_eq!(write_instance_string(&again), first);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_instance_str::<f64>("MILP v2\n").is_err());
        assert!(read_instance_str::<f64>("MILP v1\nvars 1\ncons 1\nrow 0 <> 1\n").is_err());
        assert!(matches!(
            read_instance_str::<f64>("MILP v1\nvars 1\ncons 2\nrow 0 <= 1\na 0 0 1\n"),
            Err(MilpError::Parse { .. })
        ));
    }
}
