//! Plain-text model checkpoints.
//!
//! ```text
//! specnet-checkpoint 1
//! kind mlp 1024 64
//! tensor hidden.weight 1024 64
//! <one line per row, space separated>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so loading
//! a checkpoint restores every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::model::{Dense, Model, ModelKind};
use crate::error::{Error, Result};

const MAGIC: &str = "specnet-checkpoint 1";

pub fn to_string(model: &Model) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    match model.kind() {
        ModelKind::Linear => writeln!(s, "kind linear {}", model.input_dim()),
        ModelKind::Mlp { hidden } => writeln!(s, "kind mlp {} {hidden}", model.input_dim()),
    }
    .unwrap();
    for (name, dims, values) in model.named_tensors() {
        let dims_str: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
        writeln!(s, "tensor {name} {}", dims_str.join(" ")).unwrap();
        let row_len = *dims.last().unwrap_or(&1);
        for row in values.chunks(row_len.max(1)) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(" ")).unwrap();
        }
    }
    s
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    from_str(&std::fs::read_to_string(path).map_err(Error::file(path))?)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        loop {
            match self.lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => return Ok((i + 1, l.trim())),
                None => return Err(Error::Parse("unexpected end of checkpoint".into())),
            }
        }
    }

    fn tensor(&mut self, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
        let (ln, header) = self.next()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") || parts.next() != Some(name) {
            return Err(Error::Parse(format!("line {ln}: expected tensor `{name}`")));
        }
        let got: Vec<usize> = parts.map(|p| parse(p, ln)).collect::<Result<_>>()?;
        if got != dims {
            return Err(Error::Parse(format!(
                "line {ln}: tensor `{name}` has dims {got:?}, expected {dims:?}"
            )));
        }
        let row_len = *dims.last().unwrap_or(&1);
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let mut values = Vec::with_capacity(rows * row_len);
        for _ in 0..rows {
            let (ln, line) = self.next()?;
            let row: Vec<f64> = line.split_whitespace().map(|p| parse(p, ln)).collect::<Result<_>>()?;
            if row.len() != row_len {
                return Err(Error::Parse(format!(
                    "line {ln}: expected {row_len} values, got {}",
                    row.len()
                )));
            }
            values.extend(row);
        }
        Ok(values)
    }
}

fn parse<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse `{s}`")))
}

fn dense(r: &mut Reader<'_>, prefix: &str, inputs: usize, outputs: usize) -> Result<Dense> {
    let w = r.tensor(&format!("{prefix}.weight"), &[inputs, outputs])?;
    let b = r.tensor(&format!("{prefix}.bias"), &[outputs])?;
    Ok(Dense {
        weight: Array2::from_shape_vec((inputs, outputs), w).expect("dims checked"),
        bias: Array1::from(b),
    })
}

pub fn from_str(text: &str) -> Result<Model> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
    };
    let (_, magic) = r.next()?;
    if magic != MAGIC {
        return Err(Error::Parse(format!("not a checkpoint (header `{magic}`)")));
    }
    let (ln, kind) = r.next()?;
    let parts: Vec<&str> = kind.split_whitespace().collect();
    let model = match parts.as_slice() {
        ["kind", "linear", d] => {
            let d = parse(d, ln)?;
            let out = dense(&mut r, "output", d, 2)?;
            Model::from_layers(None, out)?
        }
        ["kind", "mlp", d, h] => {
            let (d, h) = (parse(d, ln)?, parse(h, ln)?);
            let hidden = dense(&mut r, "hidden", d, h)?;
            let out = dense(&mut r, "output", h, 2)?;
            Model::from_layers(Some(hidden), out)?
        }
        _ => return Err(Error::Parse(format!("line {ln}: bad kind line `{kind}`"))),
    };
    if let Ok((ln, extra)) = r.next() {
        return Err(Error::Parse(format!("line {ln}: unexpected trailing content `{extra}`")));
    }
    Ok(model)
}
