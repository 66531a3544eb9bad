use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform initialized `rows×cols` matrix.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        gain: f64,
        rng: &mut R,
    ) -> ParamId {
        let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Records every tensor as a tracked leaf; the returned handles are in
    /// insertion order.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Writes a checkpoint CSV with header `name,row,col,value`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "name,row,col,value")?;
            for (name, t) in self.names.iter().zip(&self.tensors) {
                for r in 0..t.rows() {
                    for c in 0..t.cols() {
                        writeln!(w, "{name},{r},{c},{}", t.get(r, c))?;
                    }
                }
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    /// Overwrites tensor values from a checkpoint. Every stored name must be
    /// present and every entry covered exactly once.
    pub fn load_csv(&mut self, path: &Path) -> Result<()> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut seen = HashSet::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            if rec.len() != 4 {
                return Err(Error::parse(path, line, "expected 4 fields"));
            }
            let idx = self
                .names
                .iter()
                .position(|n| n == &rec[0])
                .ok_or_else(|| Error::parse(path, line, format!("unknown parameter {}", &rec[0])))?;
            let num = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(path, line, e.to_string()));
            let (r, c) = (num(&rec[1])?, num(&rec[2])?);
            let v: f64 = rec[3]
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::parse(path, line, e.to_string()))?;
            let t = &mut self.tensors[idx];
            if r >= t.rows() || c >= t.cols() {
                return Err(Error::parse(path, line, "entry outside tensor shape"));
            }
            if !seen.insert((idx, r, c)) {
                return Err(Error::parse(path, line, "duplicate entry"));
            }
            t.set(r, c, v);
        }
        let expected: usize = self.tensors.iter().map(|t| t.data().len()).sum();
        if seen.len() != expected {
            return Err(Error::parse(
                path,
                0,
                format!("checkpoint covers {} of {expected} entries", seen.len()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}
