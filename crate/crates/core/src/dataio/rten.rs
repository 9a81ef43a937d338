//! RTEN tensor container.
//!
//! ```text
//! magic   b"RTEN1"
//! dtype   u8        0 = f32, 1 = f64
//! ndim    u32 LE
//! dims    u32 LE × ndim
//! data    little-endian scalars, row-major
//! ```
//!
//! Several records may be concatenated in one file (checkpoints do this).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"RTEN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            t => Err(Error::Format(format!("unknown dtype tag {t}"))),
        }
    }
}

/// Header size in bytes for a tensor of rank `ndim`.
pub fn header_len(ndim: usize) -> usize {
    MAGIC.len() + 1 + 4 + 4 * ndim
}

pub fn write_record(w: &mut impl Write, t: &Tensor, dtype: DType) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[dtype as u8])?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    match dtype {
        DType::F64 => {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated {what}: {e}")))
}

/// Reads one record. Returns `Ok(None)` at a clean end of stream.
pub fn read_record(r: &mut impl Read) -> Result<Option<(Tensor, DType)>> {
    let mut magic = [0u8; 5];
    let mut got = 0;
    while got < magic.len() {
        let n = r
            .read(&mut magic[got..])
            .map_err(|e| Error::Format(format!("reading magic: {e}")))?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got == 0 {
        return Ok(None);
    }
    if got < magic.len() || &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &magic[..got])));
    }
    let mut tag = [0u8; 1];
    read_exact_or(r, &mut tag, "dtype")?;
    let dtype = DType::from_tag(tag[0])?;
    let mut word = [0u8; 4];
    read_exact_or(r, &mut word, "ndim")?;
    let ndim = u32::from_le_bytes(word) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        read_exact_or(r, &mut word, "dims")?;
        dims.push(u32::from_le_bytes(word) as usize);
    }
    let n: usize = dims.iter().product();
    let mut raw = vec![0u8; n * dtype.size()];
    read_exact_or(r, &mut raw, "data")?;
    let data = match dtype {
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    let t = Tensor::new(&dims, data).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Some((t, dtype)))
}

pub fn encode(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut buf = Vec::with_capacity(header_len(t.shape().len()) + dtype.size() * t.len());
    write_record(&mut buf, t, dtype).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode(mut bytes: &[u8]) -> Result<(Tensor, DType)> {
    let rec = read_record(&mut bytes)?.ok_or_else(|| Error::Format("empty input".into()))?;
    if !bytes.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len())));
    }
    Ok(rec)
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    write_tensors(path, std::slice::from_ref(t), dtype)
}

pub fn write_tensors(path: &Path, ts: &[Tensor], dtype: DType) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for t in ts {
        write_record(&mut w, t, dtype).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut ts = read_tensors(path)?;
    if ts.len() != 1 {
        return Err(Error::Format(format!(
            "{}: expected one tensor, found {}",
            path.display(),
            ts.len()
        )));
    }
    Ok(ts.remove(0))
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut out = Vec::new();
    while let Some((t, _)) = read_record(&mut r).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })? {
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode(&t, DType::F64);
        assert_eq!(&bytes[..5], b"RTEN1");
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &3u32.to_le_bytes());
        assert_eq!(&bytes[18..26], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), header_len(2) + 8 * 6);

        let b32 = encode(&t, DType::F32);
        assert_eq!(b32[5], 0);
        assert_eq!(b32.len(), header_len(2) + 4 * 6);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::ones(&[4]);
        let mut bytes = encode(&t, DType::F64);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn rejects_unknown_dtype() {
        let mut bytes = encode(&Tensor::ones(&[1]), DType::F64);
        bytes[5] = 7;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 2))
                .collect();
            let t = Tensor::new(&dims, data).unwrap();
            let (back, dt) = decode(&encode(&t, DType::F64)).unwrap();
            prop_assert_eq!(dt, DType::F64);
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn f32_round_trip_is_bit_exact(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let t = Tensor::new(&[vals.len()], vals.iter().map(|&v| v as f64).collect()).unwrap();
            let (back, _) = decode(&encode(&t, DType::F32)).unwrap();
            for (a, b) in back.data().iter().zip(&vals) {
                prop_assert_eq!((*a as f32).to_bits(), b.to_bits());
            }
        }
    }
}
