//! Dataset directory format.
//!
//! `meta.json` echoes the generator spec, sample count, observation shape,
//! seed and (optional) severity. `data.cdst` is binary: magic `CDST`,
//! version `u32`, `N u32`, observation rank `u32`, extents `u32[]`, factor
//! count `u32`, then per sample: observation `f32[]`, factor labels
//! `u16[K]`, confounder label `u16`. All little-endian; round-trips are
//! bit-exact. Files are written to a temp sibling and renamed into place.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, GenSpec, LabeledDataset, Result};

const MAGIC: &[u8; 4] = b"CDST";
const VERSION: u32 = 1;

/// Sidecar metadata stored next to the binary payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: GenSpec,
    pub n: usize,
    pub obs_shape: Vec<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub severity: Option<f64>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write `meta.json` + `data.cdst` into the directory `dir` (created if
/// missing).
pub fn write_dataset(
    ds: &LabeledDataset,
    spec: &GenSpec,
    seed: u64,
    severity: Option<f64>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        spec: spec.clone(),
        n: ds.len(),
        obs_shape: ds.obs_shape.clone(),
        seed,
        severity,
    };
    let meta_json =
        serde_json::to_string_pretty(&meta).map_err(|e| DataError::Format(e.to_string()))?;
    write_atomic(&dir.join("meta.json"), meta_json.as_bytes())?;

    let obs_len = ds.obs_len();
    let mut buf = Vec::with_capacity(16 + ds.obs.len() * 4 + ds.factors.len() * 2 + ds.conf.len() * 2);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.obs_shape.len() as u32).to_le_bytes());
    for &e in &ds.obs_shape {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(ds.n_factors as u32).to_le_bytes());
    for i in 0..ds.len() {
        for &x in &ds.obs[i * obs_len..(i + 1) * obs_len] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for &f in ds.factor_row(i) {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        buf.extend_from_slice(&ds.conf[i].to_le_bytes());
    }
    write_atomic(&dir.join("data.cdst"), &buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(DataError::Format(format!(
                "truncated dataset while reading {what} at byte {}",
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

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Read a dataset directory back; returns the dataset and its metadata.
pub fn read_dataset(dir: &Path) -> Result<(LabeledDataset, DatasetMeta)> {
    let meta_raw = fs::read_to_string(dir.join("meta.json"))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_raw).map_err(|e| DataError::Format(e.to_string()))?;

    let mut raw = Vec::new();
    fs::File::open(dir.join("data.cdst"))?.read_to_end(&mut raw)?;
    let mut cur = Cursor { data: &raw, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(DataError::Format(format!("bad magic {magic:?}, expected \"CDST\"")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(DataError::Format(format!(
            "unsupported dataset version {version} (supported: {VERSION})"
        )));
    }
    let n = cur.u32("sample count")? as usize;
    let rank = cur.u32("obs rank")? as usize;
    let mut obs_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        obs_shape.push(cur.u32("obs extent")? as usize);
    }
    let n_factors = cur.u32("factor count")? as usize;
    let obs_len: usize = obs_shape.iter().product();

    let mut obs = Vec::with_capacity(n * obs_len);
    let mut factors = Vec::with_capacity(n * n_factors);
    let mut conf = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..obs_len {
            obs.push(cur.f32("observation")?);
        }
        for _ in 0..n_factors {
            factors.push(cur.u16("factor label")?);
        }
        conf.push(cur.u16("confounder label")?);
    }
    if cur.pos != raw.len() {
        return Err(DataError::Format(format!(
            "{} trailing bytes after {n} samples",
            raw.len() - cur.pos
        )));
    }
    if meta.n != n || meta.obs_shape != obs_shape {
        return Err(DataError::Format(
            "meta.json disagrees with data.cdst header".into(),
        ));
    }
    Ok((LabeledDataset { obs_shape, obs, factors, conf, n_factors, extras: Vec::new() }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{desk_tabular_spec, sample_dataset};

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = desk_tabular_spec();
        let ds = sample_dataset(&spec, 64, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, &spec, 5, Some(0.5), dir.path()).unwrap();
        let (back, meta) = read_dataset(dir.path()).unwrap();
        assert_eq!(meta.seed, 5);
        assert_eq!(meta.severity, Some(0.5));
        assert_eq!(back.factors, ds.factors);
        assert_eq!(back.conf, ds.conf);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.obs), bits(&ds.obs));
    }

    #[test]
    fn truncated_file_is_rejected_without_partial_data() {
        let spec = desk_tabular_spec();
        let ds = sample_dataset(&spec, 16, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, &spec, 1, None, dir.path()).unwrap();
        let path = dir.path().join("data.cdst");
        let mut raw = fs::read(&path).unwrap();
        raw.truncate(raw.len() - 5);
        fs::write(&path, &raw).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DataError::Format(_))));
    }

    #[test]
    fn version_bump_is_rejected() {
        let spec = desk_tabular_spec();
        let ds = sample_dataset(&spec, 4, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, &spec, 1, None, dir.path()).unwrap();
        let path = dir.path().join("data.cdst");
        let mut raw = fs::read(&path).unwrap();
        raw[4..8].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&path, &raw).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let spec = desk_tabular_spec();
        let ds = sample_dataset(&spec, 4, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, &spec, 1, None, dir.path()).unwrap();
        let path = dir.path().join("data.cdst");
        let mut raw = fs::read(&path).unwrap();
        raw[0] = b'X';
        fs::write(&path, &raw).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DataError::Format(_))));
    }
}
