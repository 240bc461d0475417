use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector2;

use super::{ClassTable, IngestError};

/// Per-pixel class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u8>,
}

impl LabelRaster {
    pub fn filled(width: u32, height: u32, label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u8) {
        let w = self.width as usize;
        self.labels[y as usize * w + x as usize] = label;
    }

    /// Label at the nearest integer pixel, or `None` outside the raster.
    pub fn lookup(&self, px: &Vector2<f64>) -> Option<u8> {
        let x = px.x.round();
        let y = px.y.round();
        if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
            Some(self.get(x as u32, y as u32))
        } else {
            None
        }
    }

    /// Paints a filled disk of the given radius around `center`.
    pub fn fill_disk(&mut self, center: &Vector2<f64>, radius: i64, label: u8) {
        let cx = center.x.round() as i64;
        let cy = center.y.round() as i64;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
                    self.set(x as u32, y as u32, label);
                }
            }
        }
    }

    pub fn histogram(&self) -> BTreeMap<u8, usize> {
        let mut h = BTreeMap::new();
        for &l in &self.labels {
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }
}

/// Reads a binary (P5) 8-bit PGM. Header comments are accepted.
pub fn read_pgm(path: &Path) -> Result<LabelRaster, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let bad = |m: &str| IngestError::Invalid {
        path: path.into(),
        message: m.into(),
    };
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IngestError::TruncatedFile { path: path.into() });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return Err(IngestError::BadMagic {
            path: path.into(),
            expected: "P5",
        });
    }
    let width: u32 = tokens[1].parse().map_err(|_| bad("bad PGM width"))?;
    let height: u32 = tokens[2].parse().map_err(|_| bad("bad PGM height"))?;
    if tokens[3] != "255" {
        return Err(bad("PGM maxval must be 255"));
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let n = width as usize * height as usize;
    if bytes.len() < pos + n {
        return Err(IngestError::TruncatedFile { path: path.into() });
    }
    Ok(LabelRaster {
        width,
        height,
        labels: bytes[pos..pos + n].to_vec(),
    })
}

pub fn write_pgm(path: &Path, raster: &LabelRaster) -> std::io::Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.labels);
    fs::write(path, out)
}

/// Loads a label raster and checks its size and label ids.
pub fn load_label_raster(
    path: &Path,
    expected_dims: (u32, u32),
    classes: &ClassTable,
) -> Result<LabelRaster, IngestError> {
    let raster = read_pgm(path)?;
    if (raster.width, raster.height) != expected_dims {
        return Err(IngestError::DimensionMismatch {
            path: path.into(),
            expected: expected_dims,
            found: (raster.width, raster.height),
        });
    }
    if let Some(&label) = raster.labels.iter().find(|&&l| !classes.is_known(l)) {
        return Err(IngestError::UnknownLabel {
            path: path.into(),
            label,
        });
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_building_raster() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.labels.pgm");
        write_pgm(&p, &LabelRaster::filled(4, 4, 2)).unwrap();
        let r = load_label_raster(&p, (4, 4), &ClassTable::cityscapes()).unwrap();
        assert_eq!(r.histogram(), BTreeMap::from([(2u8, 16usize)]));
    }

    #[test]
    fn wrong_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.labels.pgm");
        write_pgm(&p, &LabelRaster::filled(640, 480, 0)).unwrap();
        assert!(matches!(
            load_label_raster(&p, (1024, 1024), &ClassTable::cityscapes()),
            Err(IngestError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.labels.pgm");
        let names = (0..20).map(|i| format!("c{i}")).collect();
        let table = ClassTable::new(names, Default::default()).unwrap();
        let mut r = LabelRaster::filled(4, 4, 255);
        r.set(1, 1, 200);
        write_pgm(&p, &r).unwrap();
        assert!(matches!(
            load_label_raster(&p, (4, 4), &table),
            Err(IngestError::UnknownLabel { label: 200, .. })
        ));
    }

    #[test]
    fn header_comments_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n# made by hand\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        assert_eq!(read_pgm(&p).unwrap().labels, vec![1, 2, 3, 4]);
        fs::write(&p, b"P5\n2 2\n255\n\x01\x02").unwrap();
        assert!(matches!(read_pgm(&p), Err(IngestError::TruncatedFile { .. })));
        fs::write(&p, b"P2\n2 2\n255\n1 2 3 4").unwrap();
        assert!(matches!(read_pgm(&p), Err(IngestError::BadMagic { .. })));
    }

    #[test]
    fn nearest_pixel_lookup() {
        let mut r = LabelRaster::filled(3, 3, 0);
        r.set(2, 1, 7);
        assert_eq!(r.lookup(&Vector2::new(1.6, 0.6)), Some(7));
        assert_eq!(r.lookup(&Vector2::new(2.6, 1.0)), None);
        assert_eq!(r.lookup(&Vector2::new(-0.4, 0.0)), Some(0));
    }
}
