//! Plain-text dataset persistence.
//!
//! ```text
//! nvmdtd-v1 <N> <blocks> <params-hash>
//! 0110...            (N bit characters)
//! 1.00231870e0 ...   (N reads in kΩ, 9 significant digits, space separated)
//! ...
//! ```

use std::io::{BufRead, Write};

use crate::channel::{Block, ChannelParams};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "nvmdtd-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub params_hash: String,
    pub blocks: Vec<Block>,
}

pub fn write_dataset<W: Write>(mut w: W, params: &ChannelParams, blocks: &[Block]) -> Result<()> {
    let n = blocks.first().map_or(0, Block::len);
    writeln!(w, "{DATASET_MAGIC} {n} {} {}", blocks.len(), params.hash_hex())?;
    let mut line = String::new();
    for b in blocks {
        if b.len() != n || b.y.len() != n {
            return Err(Error::Shape {
                context: "dataset block",
                expected: n,
                got: b.len(),
            });
        }
        line.clear();
        line.extend(b.x.iter().map(|&bit| if bit == 0 { '0' } else { '1' }));
        writeln!(w, "{line}")?;
        line.clear();
        for (i, y) in b.y.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{y:.8e}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines().enumerate();
    let bad = |line: usize, msg: String| Error::DatasetFormat(format!("line {}: {msg}", line + 1));

    let (_, header) = lines.next().ok_or_else(|| Error::DatasetFormat("empty file".into()))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != DATASET_MAGIC {
        return Err(bad(0, format!("expected `{DATASET_MAGIC} <N> <blocks> <hash>`, got `{header}`")));
    }
    let n: usize = fields[1].parse().map_err(|_| bad(0, format!("bad N `{}`", fields[1])))?;
    let count: usize = fields[2].parse().map_err(|_| bad(0, format!("bad block count `{}`", fields[2])))?;
    let params_hash = fields[3].to_string();

    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, bits) = lines.next().ok_or_else(|| Error::DatasetFormat("truncated file".into()))?;
        let bits = bits?;
        let x = bits
            .trim_end()
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(bad(i, format!("bad bit character `{other}`"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if x.len() != n {
            return Err(bad(i, format!("expected {n} bits, got {}", x.len())));
        }
        let (j, reads) = lines.next().ok_or_else(|| Error::DatasetFormat("truncated file".into()))?;
        let reads = reads?;
        let y = reads
            .split_whitespace()
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(j, format!("bad resistance `{t}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if y.len() != n {
            return Err(bad(j, format!("expected {n} reads, got {}", y.len())));
        }
        blocks.push(Block { x, y });
    }
    Ok(Dataset { n, params_hash, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NoiseModel;
    use crate::rng::Purpose;

    #[test]
    fn round_trip_within_nine_digits() {
        let p = ChannelParams::stt_mram(0.05, -0.2, 0.04, NoiseModel::Gaussian).unwrap();
        let blocks = p.sampler().unwrap().generate(71, 5, 3, Purpose::Test, 0);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &p, &blocks).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("nvmdtd-v1 71 5 {}\n", p.hash_hex())));
        let ds = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(ds.n, 71);
        assert_eq!(ds.params_hash, p.hash_hex());
        for (a, b) in ds.blocks.iter().zip(&blocks) {
            assert_eq!(a.x, b.x);
            for (u, v) in a.y.iter().zip(&b.y) {
                assert!((u - v).abs() <= 1e-8 * v.abs());
            }
        }
        // Re-serializing the parsed data is byte-identical.
        let mut again = Vec::new();
        write_dataset(&mut again, &p, &ds.blocks).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn truncated_and_malformed() {
        let p = ChannelParams::stt_mram(0.05, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        let blocks = p.sampler().unwrap().generate(4, 2, 3, Purpose::Test, 0);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &p, &blocks).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_dataset(cut.as_bytes()), Err(Error::DatasetFormat(_))));
        let bad = text.replacen("nvmdtd-v1", "nvmdtd-v0", 1);
        assert!(read_dataset(bad.as_bytes()).is_err());
        let bad_bit = text.replacen('\n', "\n2", 1);
        let err = read_dataset(bad_bit.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
