//! Weight files.
//!
//! A text manifest followed by raw little-endian `f64`s:
//!
//! ```text
//! nvmdtd-weights 1
//! kind rnn
//! n 71
//! hidden 71
//! seed 42
//! blocks 20
//! param gru1.w_z 71 1
//! ...
//! data 368640
//! <368640 bytes: every block row-major, in manifest order>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelKind, MlpModel, Network, RnnModel};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &str = "nvmdtd-weights";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedWeights {
    pub model: Model,
    pub seed: u64,
}

pub fn write_weights<W: Write>(mut w: W, model: &Model, seed: u64) -> Result<()> {
    let params = model.params();
    writeln!(w, "{WEIGHTS_MAGIC} {WEIGHTS_VERSION}")?;
    writeln!(w, "kind {}", model.kind())?;
    writeln!(w, "n {}", model.block_len())?;
    writeln!(w, "hidden {}", model.hidden())?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "blocks {}", params.len())?;
    for p in &params {
        writeln!(w, "param {} {} {}", p.name, p.shape.0, p.shape.1)?;
    }
    let total: usize = params.iter().map(|p| p.data.len()).sum();
    writeln!(w, "data {}", total * 8)?;
    for p in &params {
        for v in p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_weights(model: &Model, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_weights(BufWriter::new(f), model, seed)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::WeightFormat(msg.into())
}

fn next_line<R: BufRead>(r: &mut R, expect: &str) -> Result<Vec<String>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(bad(format!("truncated manifest: expected `{expect}`")));
    }
    let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
    if fields.first().map(String::as_str) != Some(expect) {
        return Err(bad(format!("expected `{expect}` line, got `{}`", line.trim_end())));
    }
    Ok(fields)
}

fn field<T: std::str::FromStr>(fields: &[String], i: usize) -> Result<T> {
    fields
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("malformed `{}` line", fields.join(" "))))
}

/// Parses a weight file. Nothing is returned unless the whole file is valid.
pub fn read_weights<R: Read>(r: R) -> Result<LoadedWeights> {
    let mut r = BufReader::new(r);
    let magic = next_line(&mut r, WEIGHTS_MAGIC)?;
    let version: u32 = field(&magic, 1)?;
    if version != WEIGHTS_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind: ModelKind = next_line(&mut r, "kind")?
        .get(1)
        .ok_or_else(|| bad("missing model kind"))?
        .parse()
        .map_err(|_| bad("unknown model kind"))?;
    let n: usize = field(&next_line(&mut r, "n")?, 1)?;
    let hidden: usize = field(&next_line(&mut r, "hidden")?, 1)?;
    let seed: u64 = field(&next_line(&mut r, "seed")?, 1)?;
    let nblocks: usize = field(&next_line(&mut r, "blocks")?, 1)?;
    if n == 0 || hidden == 0 {
        return Err(bad("n and hidden must be positive"));
    }

    let mut model = match kind {
        ModelKind::Mlp => {
            if hidden != 4 * n {
                return Err(bad(format!("mlp hidden width must be 4n = {}, got {hidden}", 4 * n)));
            }
            Model::Mlp(MlpModel::zeros(n))
        }
        ModelKind::Rnn => Model::Rnn(RnnModel::zeros(n, hidden)),
    };
    let expected: Vec<(String, (usize, usize))> = model.params().iter().map(|p| (p.name.clone(), p.shape)).collect();
    if nblocks != expected.len() {
        return Err(bad(format!("expected {} parameter blocks, got {nblocks}", expected.len())));
    }
    for (name, shape) in &expected {
        let f = next_line(&mut r, "param")?;
        let got_name = f.get(1).cloned().unwrap_or_default();
        let got_shape: (usize, usize) = (field(&f, 2)?, field(&f, 3)?);
        if &got_name != name || got_shape != *shape {
            return Err(bad(format!(
                "block mismatch: expected {name} {}x{}, got {got_name} {}x{}",
                shape.0, shape.1, got_shape.0, got_shape.1
            )));
        }
    }
    let nbytes: usize = field(&next_line(&mut r, "data")?, 1)?;
    let total: usize = expected.iter().map(|(_, s)| s.0 * s.1).sum();
    if nbytes != total * 8 {
        return Err(bad(format!("data section should hold {} bytes, header says {nbytes}", total * 8)));
    }
    let mut raw = vec![0u8; nbytes];
    r.read_exact(&mut raw)
        .map_err(|_| bad(format!("truncated data section: expected {nbytes} bytes")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(bad("trailing bytes after data section"));
    }
    let mut values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for block in model.params_mut() {
        for v in block.iter_mut() {
            *v = values.next().expect("sized above");
        }
    }
    Ok(LoadedWeights { model, seed })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<LoadedWeights> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingAsset(format!("weight file {}", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    read_weights(f)
}
