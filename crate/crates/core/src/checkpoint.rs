//! On-disk checkpoints: a little-endian binary file of `f64` arrays plus a
//! JSON sidecar with the shapes needed to read it back.
//!
//! Binary layout: `b"LCRV"`, `u32` format version, `u64` array count, then
//! per array a `u64` length followed by that many `f64`. Base-weight arrays
//! come first, then one array per control point.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::curve::{ControlPointSet, CurveConfig};
use crate::error::{Error, Result};
use crate::method::Method;
use crate::network::{BaseWeights, LoraNetwork, NetworkSpec};

pub const MAGIC: &[u8; 4] = b"LCRV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    network: NetworkSpec,
    curve: CurveConfig,
    frozen: Vec<bool>,
    #[serde(default)]
    method: Option<Method>,
    base_arrays: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub base: BaseWeights,
    pub points: ControlPointSet,
    pub method: Option<Method>,
}

/// Sidecar path for a checkpoint: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_arrays<W: Write>(mut w: W, arrays: &[Vec<f64>]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u64).to_le_bytes())?;
    for a in arrays {
        w.write_all(&(a.len() as u64).to_le_bytes())?;
        for x in a {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let len = read_u64(&mut r)? as usize;
        let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::Format("array too long".into()))?];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Format("truncated checkpoint array".into()))?;
        arrays.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        );
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint arrays".into()));
    }
    Ok(arrays)
}

impl Checkpoint {
    pub fn new(net: &LoraNetwork, points: ControlPointSet, method: Option<Method>) -> Self {
        Self {
            spec: net.spec().clone(),
            base: net.base().clone(),
            points,
            method,
        }
    }

    pub fn network(&self) -> Result<LoraNetwork> {
        LoraNetwork::new(self.spec.clone(), self.base.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut arrays = self.base.to_arrays();
        let base_arrays = arrays.len();
        arrays.extend(self.points.points().iter().map(|p| p.to_vec()));
        write_arrays(BufWriter::new(fs::File::create(path)?), &arrays)?;
        let sidecar = Sidecar {
            format_version: FORMAT_VERSION,
            network: self.spec.clone(),
            curve: *self.points.config(),
            frozen: self.points.frozen().to_vec(),
            method: self.method,
            base_arrays,
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side_path = sidecar_path(path);
        for p in [path, side_path.as_path()] {
            if !p.exists() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
        }
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&side_path)?)?;
        if sidecar.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported sidecar version {}",
                sidecar.format_version
            )));
        }
        sidecar.network.validate()?;
        let arrays = read_arrays(BufReader::new(fs::File::open(path)?))?;
        if arrays.len() != sidecar.base_arrays + sidecar.curve.num_control_points() {
            return Err(Error::Format(format!(
                "checkpoint holds {} arrays, sidecar describes {}",
                arrays.len(),
                sidecar.base_arrays + sidecar.curve.num_control_points()
            )));
        }
        let (base, points) = arrays.split_at(sidecar.base_arrays);
        let base = BaseWeights::from_arrays(&sidecar.network, base)?;
        let dim = sidecar.network.adapter_dim();
        let points: Vec<Array1<f64>> = points
            .iter()
            .map(|p| {
                if p.len() != dim {
                    return Err(Error::Format(format!("control point of length {}, expected {dim}", p.len())));
                }
                Ok(Array1::from(p.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: sidecar.network,
            base,
            points: ControlPointSet::from_parts(sidecar.curve, points, sidecar.frozen)?,
            method: sidecar.method,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::CurveMode;
    use crate::rng::{stream_rng, Stream};

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::attention(6, 4, 4, &[5], 2);
        let base = BaseWeights::random(&spec, 3).unwrap();
        let net = LoraNetwork::new(spec, base).unwrap();
        let config = CurveConfig::new(2, 1).unwrap();
        let points = (0..3)
            .map(|i| net.layout().init_adapter(&mut stream_rng(1, Stream::Init, i), 1.0))
            .collect();
        let set = ControlPointSet::new(config, points, CurveMode::Anchored).unwrap();
        Checkpoint::new(&net, set, Some("ALC(2,1)".parse().unwrap()))
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.lcrv");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.points.frozen(), &[true, false, true]);
        let first = fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        assert_eq!(&first[..4], b"LCRV");
    }

    #[test]
    fn bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.lcrv");
        assert!(matches!(Checkpoint::load(&path), Err(Error::MissingFile(_))));
        sample().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn array_encoding() {
        let mut buf = Vec::new();
        write_arrays(&mut buf, &[vec![1.5], vec![]]).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 8 + 8);
        assert_eq!(read_arrays(buf.as_slice()).unwrap(), vec![vec![1.5], vec![]]);
    }
}
