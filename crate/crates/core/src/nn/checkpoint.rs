//! Parameter checkpoint files.
//!
//! Layout: `b"NNCK"`, version byte `1`, then one record per parameter until
//! end of file: name length (u16 LE), UTF-8 name, ndim (u8), dims (u32 LE
//! each), values (f64 LE each).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{NnError, Parameterized, Tensor};

const MAGIC: &[u8; 4] = b"NNCK";
const VERSION: u8 = 1;

pub fn write_checkpoint<M: Parameterized + ?Sized, W: Write>(model: &M, mut w: W) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for (name, t) in model.named_params() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| NnError::Checkpoint(format!("parameter name too long: {name}")))?;
        let ndim = u8::try_from(t.shape().len())
            .map_err(|_| NnError::Checkpoint(format!("too many dimensions in {name}")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[ndim])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| NnError::Checkpoint(format!("extent too large in {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), NnError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => NnError::Checkpoint(format!("truncated while reading {what}")),
        _ => NnError::Io(e),
    })
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut header = [0u8; 5];
    read_exact_or(&mut r, &mut header, "header")?;
    if &header[..4] != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    if header[4] != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {}", header[4])));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 2];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => read_exact_or(&mut r, &mut len[1..], "name length")?,
        }
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))?;
        let mut ndim = [0u8; 1];
        read_exact_or(&mut r, &mut ndim, "ndim")?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            let mut d = [0u8; 4];
            read_exact_or(&mut r, &mut d, "dims")?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        read_exact_or(&mut r, &mut raw, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Copy checkpoint records into a model whose parameter names and shapes
/// match exactly.
pub fn load_into<M: Parameterized + ?Sized>(model: &mut M, records: Vec<(String, Tensor)>) -> Result<(), NnError> {
    let mut params = model.named_params_mut();
    if params.len() != records.len() {
        return Err(NnError::Checkpoint(format!(
            "model has {} parameters, checkpoint has {}",
            params.len(),
            records.len()
        )));
    }
    for ((name, p), (rec_name, rec)) in params.iter_mut().zip(records) {
        if *name != rec_name || p.shape() != rec.shape() {
            return Err(NnError::Checkpoint(format!(
                "parameter {name} {:?} does not match checkpoint entry {rec_name} {:?}",
                p.shape(),
                rec.shape()
            )));
        }
        p.data_mut().copy_from_slice(rec.data());
        p.clear_grad();
    }
    Ok(())
}

pub fn save<M: Parameterized + ?Sized>(model: &M, path: &Path) -> Result<(), NnError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load<M: Parameterized + ?Sized>(model: &mut M, path: &Path) -> Result<(), NnError> {
    let records = read_checkpoint(BufReader::new(File::open(path)?))?;
    load_into(model, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, Sequential};
    use rand::SeedableRng;

    fn net(seed: u64) -> Sequential {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Sequential::new(
            vec![3],
            vec![Layer::Dense(Dense::new("fc1", 3, 4, &mut rng)), Layer::Relu, Layer::Dense(Dense::new("fc2", 4, 2, &mut rng))],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = net(1);
        let mut bytes = Vec::new();
        write_checkpoint(&a, &mut bytes).unwrap();
        let mut b = net(2);
        assert_ne!(a, b);
        load_into(&mut b, read_checkpoint(&bytes[..]).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn header_layout() {
        let mut bytes = Vec::new();
        write_checkpoint(&net(1), &mut bytes).unwrap();
        assert_eq!(&bytes[..5], b"NNCK\x01");
        // first record: name "fc1.weight"
        assert_eq!(u16::from_le_bytes([bytes[5], bytes[6]]), 10);
        assert_eq!(&bytes[7..17], b"fc1.weight");
        assert_eq!(bytes[17], 2);
        assert_eq!(u32::from_le_bytes(bytes[18..22].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[22..26].try_into().unwrap()), 4);
        let total = 5 + (2 + 10 + 1 + 8 + 12 * 8) + (2 + 8 + 1 + 4 + 4 * 8) + (2 + 10 + 1 + 8 + 8 * 8) + (2 + 8 + 1 + 4 + 2 * 8);
        assert_eq!(bytes.len(), total);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = Vec::new();
        write_checkpoint(&net(1), &mut bytes).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(read_checkpoint(&bytes[..]).is_err());
    }
}
