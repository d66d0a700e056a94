//! Training-sample archive: `samples/NNNNNNN.bin` records plus
//! `manifest.json`.
//!
//! A record is the magic `SPAC`, a `u32` version, then four arrays (feature
//! channels, `X_avg`, `M_SP`, clean target). Each array is a `u32` rank, the
//! `u32` dimensions and the little-endian `f64` data.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::cnn::TrainingSample;
use crate::error::{Error, Result};
use crate::features::{ChannelLayout, FeatureStack};
use crate::frame_io::Plane;

const MAGIC: &[u8; 4] = b"SPAC";
const RECORD_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub n_x: usize,
    pub layout: ChannelLayout,
    pub channel_order: String,
    pub channel_names: Vec<String>,
    /// Generator parameters and seeds, free-form.
    pub generator: serde_json::Value,
}

fn record_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("samples").join(format!("{i:07}.bin"))
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Malformed {
        what: "archive record",
        detail: detail.into(),
    }
}

fn write_array<W: Write>(out: &mut W, shape: &[usize], data: impl Iterator<Item = f64>) -> Result<()> {
    out.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| malformed(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_array<R: Read>(r: &mut R) -> Result<ArrayD<f64>> {
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 3 {
        return Err(malformed(format!("rank {rank}")));
    }
    let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|e| malformed(e.to_string()))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| malformed(e.to_string()))
}

fn plane(a: ArrayD<f64>, n: usize) -> Result<Plane> {
    a.into_dimensionality()
        .ok()
        .filter(|p: &Plane| p.dim() == (n, n))
        .ok_or_else(|| malformed("plane shape"))
}

/// Streams samples to disk; [`ArchiveWriter::finish`] writes the manifest.
pub struct ArchiveWriter {
    dir: PathBuf,
    layout: ChannelLayout,
    n_x: usize,
    count: usize,
}

impl ArchiveWriter {
    pub fn create(dir: &Path, layout: ChannelLayout, n_x: usize) -> Result<Self> {
        fs::create_dir_all(dir.join("samples"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            layout,
            n_x,
            count: 0,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &TrainingSample) -> Result<()> {
        let s = &sample.stack;
        if s.layout != self.layout || s.size() != self.n_x || sample.target.dim() != (self.n_x, self.n_x) {
            return Err(Error::ChannelMismatch {
                expected: self.layout.tag(),
                found: s.layout.tag(),
            });
        }
        let mut out = BufWriter::new(fs::File::create(record_path(&self.dir, self.count))?);
        out.write_all(MAGIC)?;
        out.write_all(&RECORD_VERSION.to_le_bytes())?;
        write_array(&mut out, s.channels.shape(), s.channels.iter().copied())?;
        for p in [&s.x_avg, &s.m_sp, &sample.target] {
            write_array(&mut out, &[self.n_x, self.n_x], p.iter().copied())?;
        }
        out.flush()?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(self, generator: serde_json::Value) -> Result<ArchiveManifest> {
        let manifest = ArchiveManifest {
            format: "spac-archive".into(),
            version: RECORD_VERSION,
            count: self.count,
            n_x: self.n_x,
            layout: self.layout,
            channel_order: self.layout.tag(),
            channel_names: self.layout.names(),
            generator,
        };
        fs::write(self.dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<ArchiveManifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let m: ArchiveManifest = serde_json::from_slice(&fs::read(path)?)?;
    if m.channel_order != m.layout.tag() {
        return Err(Error::Malformed {
            what: "archive manifest",
            detail: format!("channel order {} disagrees with layout {}", m.channel_order, m.layout.tag()),
        });
    }
    Ok(m)
}

fn read_record(path: &Path, m: &ArchiveManifest) -> Result<TrainingSample> {
    let mut r = std::io::BufReader::new(fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| malformed(e.to_string()))?;
    if &magic != MAGIC || read_u32(&mut r)? != RECORD_VERSION {
        return Err(malformed(format!("{} is not a sample record", path.display())));
    }
    let channels: Array3<f64> = read_array(&mut r)?
        .into_dimensionality()
        .map_err(|e| malformed(e.to_string()))?;
    if channels.dim() != (m.layout.channels(), m.n_x, m.n_x) {
        return Err(Error::ChannelMismatch {
            expected: m.layout.tag(),
            found: format!("{:?}", channels.dim()),
        });
    }
    let x_avg = plane(read_array(&mut r)?, m.n_x)?;
    let m_sp = plane(read_array(&mut r)?, m.n_x)?;
    let target = plane(read_array(&mut r)?, m.n_x)?;
    Ok(TrainingSample {
        stack: FeatureStack {
            channels,
            x_avg,
            m_sp,
            layout: m.layout,
        },
        target,
    })
}

/// Loads every sample listed in the manifest.
pub fn read_archive(dir: &Path) -> Result<(ArchiveManifest, Vec<TrainingSample>)> {
    let m = read_manifest(dir)?;
    let samples = (0..m.count)
        .map(|i| read_record(&record_path(dir, i), &m))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}
