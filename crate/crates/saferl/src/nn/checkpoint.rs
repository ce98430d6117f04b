//! Network checkpoint format: a short text header (widths, head), a blank
//! line, then all parameters as little-endian f64 in layer order (weights
//! row-major, then bias, per layer). Round-trips are bit-exact.

use super::{Head, Mlp};
use crate::error::{Error, Result};
use crate::report::write_atomic;
use ndarray::{Array1, Array2};
use std::io::Read;
use std::path::Path;

const MAGIC: &str = "saferl-mlp v1";

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    let widths = net
        .widths()
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut buf = format!("{MAGIC}\nwidths = {widths}\nhead = {}\n\n", net.head().id()).into_bytes();
    for l in 0..net.n_layers() {
        for v in net.weights[l].iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in net.biases[l].iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Data(format!("{}: missing header terminator", path.display())))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Data("checkpoint header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Data(format!("{}: not a saferl-mlp checkpoint", path.display())));
    }
    let mut widths: Option<Vec<usize>> = None;
    let mut head: Option<Head> = None;
    for line in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad header line '{line}'")))?;
        match key.trim() {
            "widths" => {
                widths = Some(
                    value
                        .trim()
                        .split(',')
                        .map(|v| v.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Data(format!("bad widths: {e}")))?,
                );
            }
            "head" => head = Some(Head::from_id(value.trim())?),
            other => return Err(Error::Data(format!("unknown header key '{other}'"))),
        }
    }
    let widths = widths.ok_or_else(|| Error::Data("header missing widths".into()))?;
    let head = head.ok_or_else(|| Error::Data("header missing head".into()))?;
    if widths.len() < 2 {
        return Err(Error::Data("widths must list input and output".into()));
    }

    let mut offset = header_end + 2;
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let end = offset + 8 * n;
        if end > bytes.len() {
            return Err(Error::Data("checkpoint truncated".into()));
        }
        let vals = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        Ok(vals)
    };

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let w = Array2::from_shape_vec((fan_out, fan_in), take(fan_out * fan_in)?)
            .map_err(|e| Error::Data(e.to_string()))?;
        let b = Array1::from_vec(take(fan_out)?);
        weights.push(w);
        biases.push(b);
    }
    if offset != bytes.len() {
        return Err(Error::Data("checkpoint has trailing bytes".into()));
    }
    Mlp::from_parts(widths, weights, biases, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(3, &[5, 4], 2, Head::Gaussian, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mlp");
        save_mlp(&net, &path).unwrap();
        let loaded = load_mlp(&path).unwrap();
        assert_eq!(loaded.widths(), net.widths());
        assert_eq!(loaded.head(), net.head());
        for l in 0..net.n_layers() {
            assert!(loaded.weights[l]
                .iter()
                .zip(net.weights[l].iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            assert!(loaded.biases[l]
                .iter()
                .zip(net.biases[l].iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        // Saving the load reproduces the file byte for byte.
        let path2 = dir.path().join("net2.mlp");
        save_mlp(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(2, &[3], 1, Head::Linear, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mlp");
        save_mlp(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_mlp(&path).is_err());
    }
}
