//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "RASACKPT"
//! version u32
//! count   u32
//! count x { name_len u32, name utf-8, rank u32, dims u64 x rank, values f64 x prod(dims) }
//! ```

use std::io::{Read, Write};

use super::{NumericsError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RASACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<(), NumericsError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `(name, tensor)` records in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NumericsError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NumericsError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NumericsError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 1..20), scalar in any::<f64>()) {
            let mut store = ParamStore::new();
            store.add("weights.0", Tensor::vector(values.clone())).unwrap();
            store.add("s", Tensor::scalar(scalar)).unwrap();
            let mut bytes = Vec::new();
            write_checkpoint(&store, &mut bytes).unwrap();
            let records = read_checkpoint(&bytes[..]).unwrap();
            prop_assert_eq!(records.len(), 2);
            let back: Vec<u64> = records[0].1.data().iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(back, orig);
            prop_assert_eq!(records[1].1.shape(), &[] as &[usize]);
            prop_assert_eq!(records[1].1.data()[0].to_bits(), scalar.to_bits());

            let mut again = Vec::new();
            let mut restored = store.clone();
            restored.load_values(records).unwrap();
            write_checkpoint(&restored, &mut again).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2, 2])).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&store, &mut bytes).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(NumericsError::Checkpoint(_))));
    }
}
