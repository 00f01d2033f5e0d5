//! Checkpoint files.
//!
//! ```text
//! atgat-checkpoint <version>
//! variant <name>
//! dims <key>=<value> ...
//! seed <u64>
//! params <count>
//! <name> <rows> <cols>\n<rows*cols little-endian f64>\n   (repeated)
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, ModelVariant};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "atgat-checkpoint";

fn dims_line(input_dim: usize, c: &ModelConfig) -> String {
    format!(
        "dims input_dim={} hidden={} layers={} heads={} head_dim={} leaky_slope={} attention_dropout={} fusion_hidden={} d_t={} d_pos={} temporal_dropout={} recompute_temporal={}",
        input_dim,
        c.hidden,
        c.layers,
        c.attention.heads,
        c.attention.head_dim,
        c.attention.leaky_slope,
        c.attention.dropout,
        c.attention.fusion_hidden,
        c.temporal.d_t,
        c.temporal.d_pos,
        c.temporal.dropout,
        c.recompute_temporal,
    )
}

fn parse_dims(line: &str) -> Result<(usize, ModelConfig)> {
    let body = line
        .strip_prefix("dims ")
        .ok_or_else(|| Error::Checkpoint(format!("expected dims line, got `{line}`")))?;
    let mut c = ModelConfig::default();
    let mut input_dim = None;
    for pair in body.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad dims entry `{pair}`")))?;
        let bad = || Error::Checkpoint(format!("bad value for `{k}`: `{v}`"));
        let int = || v.parse::<usize>().map_err(|_| bad());
        let float = || v.parse::<f64>().map_err(|_| bad());
        match k {
            "input_dim" => input_dim = Some(int()?),
            "hidden" => c.hidden = int()?,
            "layers" => c.layers = int()?,
            "heads" => c.attention.heads = int()?,
            "head_dim" => c.attention.head_dim = int()?,
            "leaky_slope" => c.attention.leaky_slope = float()?,
            "attention_dropout" => c.attention.dropout = float()?,
            "fusion_hidden" => c.attention.fusion_hidden = int()?,
            "d_t" => c.temporal.d_t = int()?,
            "d_pos" => c.temporal.d_pos = int()?,
            "temporal_dropout" => c.temporal.dropout = float()?,
            "recompute_temporal" => c.recompute_temporal = v.parse().map_err(|_| bad())?,
            _ => return Err(Error::Checkpoint(format!("unknown dims key `{k}`"))),
        }
    }
    let input_dim = input_dim.ok_or_else(|| Error::Checkpoint("missing input_dim".into()))?;
    Ok((input_dim, c))
}

/// Serializes `model` to bytes.
pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    let header = format!(
        "{MAGIC} {CHECKPOINT_VERSION}\nvariant {}\n{}\nseed {}\nparams {}\n",
        model.variant,
        dims_line(model.input_dim, &model.config),
        model.seed,
        model.params.len()
    );
    out.extend_from_slice(header.as_bytes());
    for (name, m) in model.params.iter() {
        out.extend_from_slice(format!("{name} {} {}\n", m.rows(), m.cols()).as_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(b'\n');
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated parameter block".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line, got `{line}`")))
}

/// Rebuilds a model from bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    let version: u32 = field(cur.line()?, MAGIC)?
        .parse()
        .map_err(|_| Error::Checkpoint("bad version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let variant: ModelVariant = field(cur.line()?, "variant")?.parse()?;
    let (input_dim, config) = parse_dims(cur.line()?)?;
    let seed: u64 = field(cur.line()?, "seed")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad seed".into()))?;
    let count: usize = field(cur.line()?, "params")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad parameter count".into()))?;

    let mut model = Model::new(variant, config, input_dim, seed)?;
    if model.params.len() != count {
        return Err(Error::Checkpoint(format!(
            "{variant} has {} parameter blocks, file has {count}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let header = cur.line()?;
        let parts: Vec<&str> = header.split(' ').collect();
        let [name, rows, cols] = parts[..] else {
            return Err(Error::Checkpoint(format!("bad block header `{header}`")));
        };
        let rows: usize = rows.parse().map_err(|_| Error::Checkpoint(format!("bad rows in `{header}`")))?;
        let cols: usize = cols.parse().map_err(|_| Error::Checkpoint(format!("bad cols in `{header}`")))?;
        let raw = cur.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if cur.take(1)? != b"\n" {
            return Err(Error::Checkpoint(format!("missing terminator after `{name}`")));
        }
        model
            .params
            .set(name, Matrix::new(rows, cols, data)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last block".into()));
    }
    Ok(model)
}

pub fn write_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, LossMode};

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in [Architecture::Atgat, Architecture::BGat, Architecture::Gcn, Architecture::LogReg] {
            let mut config = ModelConfig::default();
            config.hidden = 8;
            config.attention.heads = 2;
            config.attention.head_dim = 4;
            config.attention.leaky_slope = 0.1 + 0.2;
            let model = Model::new(ModelVariant::new(arch, LossMode::Weighted), config, 5, 17).unwrap();
            let bytes = encode(&model);
            let back = decode(&bytes).unwrap();
            assert_eq!(back.params, model.params);
            assert_eq!(back.config, model.config);
            assert_eq!(back.variant, model.variant);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let model = Model::new(
            ModelVariant::new(Architecture::LogReg, LossMode::Plain),
            ModelConfig::default(),
            3,
            0,
        )
        .unwrap();
        let bytes = encode(&model);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let text = String::from_utf8_lossy(&bytes).replace("atgat-checkpoint 1", "atgat-checkpoint 9");
        assert!(decode(text.as_bytes()).is_err());
    }
}
