//! Little-endian binary feature files: local descriptors (`LDSC`),
//! keypoints (`KPTS`) and global descriptors (`GDSC`).

use std::fs;
use std::path::Path;

use nalgebra::Vector2;

use super::IngestError;

const LDSC: &[u8; 4] = b"LDSC";
const KPTS: &[u8; 4] = b"KPTS";
const GDSC: &[u8; 4] = b"GDSC";

/// Row-major local descriptors, one row per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    pub rows: usize,
    pub data: Vec<f32>,
}

impl DescriptorSet {
    pub fn new(dim: usize, data: Vec<f32>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data is not a whole number of rows");
        Self {
            dim,
            rows: data.len() / dim,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Unit-norm image-level descriptor used for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub values: Vec<f32>,
}

impl GlobalDescriptor {
    /// Normalizes `values` to unit L2 norm. `None` for a zero or non-finite vector.
    pub fn normalized(values: Vec<f32>) -> Option<Self> {
        let n = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(Self {
            values: values.into_iter().map(|v| (v as f64 / n) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path, magic: &'static [u8; 4]) -> Result<Self, IngestError> {
        let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(IngestError::BadMagic {
                path: path.into(),
                expected: std::str::from_utf8(magic).unwrap_or("?"),
            });
        }
        Ok(Self { path, bytes, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&[u8], IngestError> {
        if self.bytes.len() < self.pos + n {
            return Err(IngestError::TruncatedFile {
                path: self.path.into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IngestError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| IngestError::TruncatedFile {
            path: self.path.into(),
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<(), IngestError> {
        if self.pos != self.bytes.len() {
            return Err(IngestError::Invalid {
                path: self.path.into(),
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn load_descriptors(path: &Path) -> Result<DescriptorSet, IngestError> {
    let mut r = Reader::open(path, LDSC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(IngestError::Invalid {
            path: path.into(),
            message: "descriptor dim is zero".into(),
        });
    }
    let data = r.f32s(count * dim)?;
    r.finish()?;
    Ok(DescriptorSet {
        dim,
        rows: count,
        data,
    })
}

pub fn load_keypoints(path: &Path) -> Result<Vec<Vector2<f64>>, IngestError> {
    let mut r = Reader::open(path, KPTS)?;
    let count = r.u32()? as usize;
    let data = r.f32s(count * 2)?;
    r.finish()?;
    Ok(data
        .chunks_exact(2)
        .map(|c| Vector2::new(c[0] as f64, c[1] as f64))
        .collect())
}

/// Loads a global descriptor and renormalizes it to unit length.
pub fn load_global_descriptor(path: &Path) -> Result<GlobalDescriptor, IngestError> {
    let mut r = Reader::open(path, GDSC)?;
    let dim = r.u32()? as usize;
    let values = r.f32s(dim)?;
    r.finish()?;
    if dim == 0 {
        return Err(IngestError::Invalid {
            path: path.into(),
            message: "global descriptor dim is zero".into(),
        });
    }
    GlobalDescriptor::normalized(values).ok_or_else(|| IngestError::Invalid {
        path: path.into(),
        message: "global descriptor has zero or non-finite norm".into(),
    })
}

fn put_f32s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_descriptors(path: &Path, set: &DescriptorSet) -> std::io::Result<()> {
    let mut out = LDSC.to_vec();
    out.extend_from_slice(&(set.rows as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    put_f32s(&mut out, set.data.iter().copied());
    fs::write(path, out)
}

/// Keypoints are stored as f32; callers that need bit-exact reloads should
/// keep their coordinates f32-representable.
pub fn write_keypoints(path: &Path, kps: &[Vector2<f64>]) -> std::io::Result<()> {
    let mut out = KPTS.to_vec();
    out.extend_from_slice(&(kps.len() as u32).to_le_bytes());
    put_f32s(&mut out, kps.iter().flat_map(|k| [k.x as f32, k.y as f32]));
    fs::write(path, out)
}

pub fn write_global_descriptor(path: &Path, gd: &GlobalDescriptor) -> std::io::Result<()> {
    let mut out = GDSC.to_vec();
    out.extend_from_slice(&(gd.values.len() as u32).to_le_bytes());
    put_f32s(&mut out, gd.values.iter().copied());
    fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: &[u8], fields: &[u32]) -> Vec<u8> {
        let mut v = magic.to_vec();
        for f in fields {
            v.extend_from_slice(&f.to_le_bytes());
        }
        v
    }

    #[test]
    fn descriptor_file_3x4() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ldsc");
        let mut bytes = header(b"LDSC", &[3, 4]);
        put_f32s(&mut bytes, (0..12).map(|i| i as f32));
        fs::write(&p, bytes).unwrap();
        let d = load_descriptors(&p).unwrap();
        assert_eq!((d.rows, d.dim), (3, 4));
        assert_eq!(d.row(2), &[8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn truncated_descriptor_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ldsc");
        let mut bytes = header(b"LDSC", &[3, 4]);
        put_f32s(&mut bytes, (0..11).map(|i| i as f32));
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_descriptors(&p),
            Err(IngestError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ldsc");
        fs::write(&p, header(b"XDSC", &[0, 4])).unwrap();
        assert!(matches!(load_descriptors(&p), Err(IngestError::BadMagic { .. })));
        assert!(matches!(load_keypoints(&p), Err(IngestError::BadMagic { .. })));
    }

    #[test]
    fn global_descriptor_is_renormalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gdsc");
        let mut bytes = header(b"GDSC", &[6]);
        put_f32s(&mut bytes, [3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        fs::write(&p, bytes).unwrap();
        let g = load_global_descriptor(&p).unwrap();
        assert_eq!(g.values, vec![0.6, 0.8, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn keypoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.kpts");
        let kps = vec![Vector2::new(1.5, 2.25), Vector2::new(639.0, 0.0)];
        write_keypoints(&p, &kps).unwrap();
        assert_eq!(load_keypoints(&p).unwrap(), kps);
    }
}
