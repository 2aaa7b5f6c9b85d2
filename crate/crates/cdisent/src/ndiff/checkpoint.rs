//! `CDPT` parameter checkpoint format.
//!
//! Layout: magic `CDPT`, format version `u32`, then one record per
//! parameter: name length `u32`, name bytes, rank `u32`, extents `u32[]`,
//! payload little-endian `f32`. All integers little-endian. Round-trips are
//! bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use super::{NdiffError, Result};

const MAGIC: &[u8; 4] = b"CDPT";
const VERSION: u32 = 1;

pub fn save_params(params: &ParamSet<f32>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &e in p.value.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    // Write through a sibling temp file so readers never see a torn file.
    let tmp = path.with_extension("cdpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(NdiffError::Format(format!(
                "truncated checkpoint while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

pub fn load_params(path: &Path) -> Result<ParamSet<f32>> {
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut cur = Cursor { data: &raw, pos: 0 };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(NdiffError::Format(format!("bad magic {magic:?}, expected \"CDPT\"")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(NdiffError::Format(format!(
            "unsupported checkpoint version {version} (supported: {VERSION})"
        )));
    }

    let mut params = ParamSet::new();
    while !cur.done() {
        let name_len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "name")?.to_vec())
            .map_err(|e| NdiffError::Format(format!("parameter name not utf-8: {e}")))?;
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = cur.take(4 * n, "payload")?;
        let mut data = Vec::with_capacity(n);
        for c in payload.chunks_exact(4) {
            data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.insert("enc.w0", Tensor::matrix(2, 3, vec![1.5, -0.25, 3.0, 0.125, -7.5, 0.0]).unwrap())
            .unwrap();
        ps.insert("enc.b0", Tensor::vector(vec![0.5, -0.5, 2.0]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cdpt");
        let ps = sample();
        save_params(&ps, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded.len(), ps.len());
        for (a, b) in ps.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            let bits_a: Vec<u32> = a.value.data().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u32> = b.value.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cdpt");
        fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_params(&path), Err(NdiffError::Format(_))));
    }

    #[test]
    fn version_bump_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cdpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CDPT");
        bytes.extend_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = load_params(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cdpt");
        save_params(&sample(), &path).unwrap();
        let mut raw = fs::read(&path).unwrap();
        raw.truncate(raw.len() - 3);
        fs::write(&path, &raw).unwrap();
        assert!(matches!(load_params(&path), Err(NdiffError::Format(_))));
    }
}
