//! Little-endian binary parameter checkpoints.
//!
//! ```text
//! "BSQ1"  version:u32  count:u32
//! repeated count times:
//!   name_len:u32  name:[u8; name_len]  rank:u32  dims:[u32; rank]  values:[f64; prod(dims)]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BSQ1";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, value) in store.entries_for_io() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.rank() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("parameter name is not UTF-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        let tensor = Tensor::new(dims, values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        store
            .insert(name, tensor)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(store)
}

pub fn save_params(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    write_params(store, BufWriter::new(File::create(path)?))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamStore> {
    read_params(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![1.5])).unwrap();
        let mut buf = Vec::new();
        write_params(&s, &mut buf).unwrap();
        let mut expected = b"BSQ1".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"w");
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1.5f64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic() {
        let r = read_params(&b"XXXX\x01\0\0\0\0\0\0\0"[..]);
        assert!(matches!(r, Err(Error::Checkpoint(_))));
    }

    proptest! {
        #[test]
        fn save_load_save_is_byte_identical(
            values in proptest::collection::vec(-1e6f64..1e6, 1..40),
            cols in 1usize..4,
        ) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let mut s = ParamStore::new();
            s.insert("m", Tensor::matrix(rows, cols, values[..rows * cols].to_vec()).unwrap()).unwrap();
            s.insert("s", Tensor::scalar(values[0])).unwrap();
            let mut a = Vec::new();
            write_params(&s, &mut a).unwrap();
            let loaded = read_params(&a[..]).unwrap();
            let mut b = Vec::new();
            write_params(&loaded, &mut b).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(loaded, s);
        }
    }
}
