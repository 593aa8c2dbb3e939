//! `LGC1` weight container: magic, then one record per parameter holding the
//! name, rank, extents and little-endian `f32` values.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const LGC_MAGIC: &[u8; 4] = b"LGC1";

/// Serialize every parameter and buffer in store order.
pub fn write_weights<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    w.write_all(LGC_MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for &v in p.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Load a container into `store`, matching records by name. Every parameter
/// of the store must be present with the same shape.
pub fn read_weights<R: Read>(mut r: R, store: &mut ParamStore) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LGC_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut seen = vec![false; store.len()];
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Format(format!("unexpected parameter {name}")))?;
        store.set(id, Tensor::new(shape, data)?)?;
        seen[id.0] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let missing = store.iter().nth(i).map(|(_, p)| p.name.clone()).unwrap_or_default();
        return Err(Error::Format(format!("missing parameter {missing}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamRole;

    #[test]
    fn round_trip_of_f32_values_is_exact() {
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 1e-3, 7.0, -0.1]).unwrap(), ParamRole::Weight);
        store.add("a.running_var", Tensor::ones(vec![4]), ParamRole::Buffer);
        store.round_to_f32();
        let mut bytes = Vec::new();
        write_weights(&mut bytes, &store).unwrap();
        assert_eq!(&bytes[..4], b"LGC1");
        let mut other = store.clone();
        other.value_mut(other.find("a.weight").unwrap()).data_mut().fill(0.0);
        read_weights(&bytes[..], &mut other).unwrap();
        for ((_, p), (_, q)) in store.iter().zip(other.iter()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut store = ParamStore::new();
        assert!(matches!(read_weights(&b"NOPE\0\0\0\0"[..], &mut store), Err(Error::Format(_))));
    }
}
