use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    load_class_table, load_conditions, load_descriptors, load_global_descriptor, load_keypoints,
    load_label_raster, load_sfm_model, write_class_table, write_conditions, write_descriptors,
    write_global_descriptor, write_keypoints, write_pgm, ClassTable, Condition, DescriptorSet,
    GlobalDescriptor, ImageId, IngestError, LabelRaster, SfmModel,
};
use crate::geometry::CameraIntrinsics;

/// File locations inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub root: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn classes(&self) -> PathBuf {
        self.root.join("classes.txt")
    }

    pub fn conditions(&self) -> PathBuf {
        self.root.join("conditions.txt")
    }

    pub fn query_list(&self) -> PathBuf {
        self.root.join("queries.txt")
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.txt")
    }

    pub fn corruption_log(&self) -> PathBuf {
        self.root.join("corruption.txt")
    }

    pub fn map_cache(&self) -> PathBuf {
        self.root.join("semantic_map.bin")
    }

    /// `<root>/db/<name>.<ext>`
    pub fn db_file(&self, name: &str, ext: &str) -> PathBuf {
        self.root.join("db").join(format!("{name}.{ext}"))
    }

    /// `<root>/queries/<name>.<ext>`
    pub fn query_file(&self, name: &str, ext: &str) -> PathBuf {
        self.root.join("queries").join(format!("{name}.{ext}"))
    }
}

pub const LABELS_EXT: &str = "labels.pgm";
pub const DESCRIPTORS_EXT: &str = "ldsc";
pub const KEYPOINTS_EXT: &str = "kpts";
pub const GLOBAL_EXT: &str = "gdsc";

#[derive(Debug, Clone, PartialEq)]
pub struct DbImageData {
    pub labels: LabelRaster,
    pub descriptors: DescriptorSet,
    pub global: GlobalDescriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub condition: Condition,
    pub keypoints: Vec<Vector2<f64>>,
    pub descriptors: DescriptorSet,
    pub global: GlobalDescriptor,
    pub labels: LabelRaster,
}

/// Everything needed to build a map and localize a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model: SfmModel,
    pub classes: ClassTable,
    pub db: BTreeMap<ImageId, DbImageData>,
    pub queries: Vec<QueryImage>,
}

/// Reads `queries.txt`: `<name> PINHOLE <w> <h> <fx> <fy> <cx> <cy>`.
pub fn load_query_list(path: &Path) -> Result<Vec<(String, CameraIntrinsics)>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 || f[1] != "PINHOLE" {
            return Err(IngestError::parse(
                path,
                i + 1,
                "expected `<name> PINHOLE <w> <h> <fx> <fy> <cx> <cy>`",
            ));
        }
        let num = |s: &str| -> Result<f64, IngestError> {
            s.parse()
                .map_err(|_| IngestError::parse(path, i + 1, format!("bad number `{s}`")))
        };
        let dim = |s: &str| -> Result<u32, IngestError> {
            s.parse()
                .map_err(|_| IngestError::parse(path, i + 1, format!("bad size `{s}`")))
        };
        let k = CameraIntrinsics::new(
            num(f[4])?,
            num(f[5])?,
            num(f[6])?,
            num(f[7])?,
            dim(f[2])?,
            dim(f[3])?,
        )
        .map_err(|e| IngestError::parse(path, i + 1, e.to_string()))?;
        out.push((f[0].to_string(), k));
    }
    Ok(out)
}

pub fn write_query_list(path: &Path, entries: &[(String, CameraIntrinsics)]) -> std::io::Result<()> {
    let mut s = String::from("# name PINHOLE width height fx fy cx cy\n");
    for (name, k) in entries {
        s.push_str(&format!(
            "{name} PINHOLE {} {} {} {} {} {}\n",
            k.width, k.height, k.fx, k.fy, k.cx, k.cy
        ));
    }
    fs::write(path, s)
}

fn check_rows(path: &Path, set: &DescriptorSet, keypoints: usize) -> Result<(), IngestError> {
    if set.rows != keypoints {
        return Err(IngestError::Invalid {
            path: path.into(),
            message: format!("{} descriptors for {keypoints} keypoints", set.rows),
        });
    }
    Ok(())
}

impl Dataset {
    /// Loads and validates a complete dataset. Any problem is an error; use
    /// [`validate_dataset`] for a full findings report.
    pub fn load(root: &Path) -> Result<Self, IngestError> {
        let paths = DatasetPaths::new(root);
        let classes = load_class_table(&paths.classes())?;
        let mut model = load_sfm_model(&paths.model_dir())?;
        let conditions = load_conditions(&paths.conditions())?;
        for im in model.images.values_mut() {
            im.condition = conditions.get(&im.name).copied();
        }
        let query_list = load_query_list(&paths.query_list())?;

        let db = model
            .images
            .par_iter()
            .map(|(id, im)| {
                let k = model.camera_of(im);
                let labels = load_label_raster(
                    &paths.db_file(&im.name, LABELS_EXT),
                    (k.width, k.height),
                    &classes,
                )?;
                let dpath = paths.db_file(&im.name, DESCRIPTORS_EXT);
                let descriptors = load_descriptors(&dpath)?;
                check_rows(&dpath, &descriptors, im.keypoints.len())?;
                let global = load_global_descriptor(&paths.db_file(&im.name, GLOBAL_EXT))?;
                Ok((
                    *id,
                    DbImageData {
                        labels,
                        descriptors,
                        global,
                    },
                ))
            })
            .collect::<Result<BTreeMap<_, _>, IngestError>>()?;

        let queries = query_list
            .par_iter()
            .map(|(name, k)| {
                let kpath = paths.query_file(name, KEYPOINTS_EXT);
                let keypoints = load_keypoints(&kpath)?;
                if let Some(i) = keypoints.iter().position(|p| !k.contains(p)) {
                    return Err(IngestError::Invalid {
                        path: kpath,
                        message: format!("keypoint {i} lies outside the image"),
                    });
                }
                let dpath = paths.query_file(name, DESCRIPTORS_EXT);
                let descriptors = load_descriptors(&dpath)?;
                check_rows(&dpath, &descriptors, keypoints.len())?;
                let condition = *conditions.get(name).ok_or_else(|| IngestError::Invalid {
                    path: paths.conditions(),
                    message: format!("no condition tag for query `{name}`"),
                })?;
                Ok(QueryImage {
                    name: name.clone(),
                    intrinsics: *k,
                    condition,
                    keypoints,
                    descriptors,
                    global: load_global_descriptor(&paths.query_file(name, GLOBAL_EXT))?,
                    labels: load_label_raster(
                        &paths.query_file(name, LABELS_EXT),
                        (k.width, k.height),
                        &classes,
                    )?,
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;

        let local_dims = db
            .values()
            .map(|d| d.descriptors.dim)
            .chain(queries.iter().map(|q| q.descriptors.dim));
        let global_dims = db
            .values()
            .map(|d| d.global.dim())
            .chain(queries.iter().map(|q| q.global.dim()));
        for (dims, what) in [
            (local_dims.collect::<Vec<_>>(), "local"),
            (global_dims.collect::<Vec<_>>(), "global"),
        ] {
            if dims.windows(2).any(|w| w[0] != w[1]) {
                return Err(IngestError::Invalid {
                    path: root.into(),
                    message: format!("{what} descriptor dimensions differ across images"),
                });
            }
        }

        Ok(Self {
            model,
            classes,
            db,
            queries,
        })
    }

    /// Writes the dataset in the on-disk layout.
    pub fn write(&self, root: &Path) -> std::io::Result<()> {
        let paths = DatasetPaths::new(root);
        fs::create_dir_all(root.join("db"))?;
        fs::create_dir_all(root.join("queries"))?;
        super::write_sfm_model(&paths.model_dir(), &self.model)?;
        write_class_table(&paths.classes(), &self.classes)?;
        let conds = self
            .model
            .images
            .values()
            .filter_map(|im| im.condition.map(|c| (im.name.as_str(), c)))
            .chain(self.queries.iter().map(|q| (q.name.as_str(), q.condition)));
        write_conditions(&paths.conditions(), conds)?;
        let list: Vec<_> = self
            .queries
            .iter()
            .map(|q| (q.name.clone(), q.intrinsics))
            .collect();
        write_query_list(&paths.query_list(), &list)?;
        for (id, data) in &self.db {
            let name = &self.model.images[id].name;
            write_pgm(&paths.db_file(name, LABELS_EXT), &data.labels)?;
            write_descriptors(&paths.db_file(name, DESCRIPTORS_EXT), &data.descriptors)?;
            write_global_descriptor(&paths.db_file(name, GLOBAL_EXT), &data.global)?;
        }
        for q in &self.queries {
            write_pgm(&paths.query_file(&q.name, LABELS_EXT), &q.labels)?;
            write_keypoints(&paths.query_file(&q.name, KEYPOINTS_EXT), &q.keypoints)?;
            write_descriptors(&paths.query_file(&q.name, DESCRIPTORS_EXT), &q.descriptors)?;
            write_global_descriptor(&paths.query_file(&q.name, GLOBAL_EXT), &q.global)?;
        }
        Ok(())
    }

    pub fn query(&self, name: &str) -> Option<&QueryImage> {
        self.queries.iter().find(|q| q.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MissingFile,
    Unreadable,
    MissingCondition,
    DescriptorDimMismatch,
    GlobalDimMismatch,
    KeypointCountMismatch,
    ModelError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub image: String,
    pub kind: FindingKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, image: &str, kind: FindingKind, detail: impl Into<String>) {
        self.findings.push(Finding {
            image: image.to_string(),
            kind,
            detail: detail.into(),
        });
    }

    fn push_error(&mut self, image: &str, err: IngestError) {
        let kind = match &err {
            IngestError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                FindingKind::MissingFile
            }
            _ => FindingKind::Unreadable,
        };
        self.push(image, kind, err.to_string());
    }
}

/// Most common value, smallest on ties.
fn mode(values: impl Iterator<Item = usize>) -> Option<usize> {
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
}

/// Checks a dataset directory and reports every problem found instead of
/// stopping at the first one.
pub fn validate_dataset(root: &Path) -> ValidationReport {
    let paths = DatasetPaths::new(root);
    let mut report = ValidationReport::default();

    let classes = match load_class_table(&paths.classes()) {
        Ok(c) => Some(c),
        Err(e) => {
            report.push_error("classes.txt", e);
            None
        }
    };
    let conditions = match load_conditions(&paths.conditions()) {
        Ok(c) => c,
        Err(e) => {
            report.push_error("conditions.txt", e);
            BTreeMap::new()
        }
    };
    let model = match load_sfm_model(&paths.model_dir()) {
        Ok(m) => Some(m),
        Err(e) => {
            report.push("model", FindingKind::ModelError, e.to_string());
            None
        }
    };
    let queries = match load_query_list(&paths.query_list()) {
        Ok(q) => q,
        Err(e) => {
            report.push_error("queries.txt", e);
            Vec::new()
        }
    };

    // (image name, local dim, global dim)
    let mut dims: Vec<(String, Option<usize>, Option<usize>)> = Vec::new();
    let mut check_image = |report: &mut ValidationReport,
                           name: &str,
                           file: &dyn Fn(&str) -> PathBuf,
                           k: &CameraIntrinsics,
                           keypoints: Option<usize>| {
        if !conditions.contains_key(name) {
            report.push(name, FindingKind::MissingCondition, "no day/night tag");
        }
        if let Some(classes) = &classes {
            if let Err(e) = load_label_raster(&file(LABELS_EXT), (k.width, k.height), classes) {
                report.push_error(name, e);
            }
        }
        let kp_count = match keypoints {
            Some(n) => Some(n),
            None => match load_keypoints(&file(KEYPOINTS_EXT)) {
                Ok(k) => Some(k.len()),
                Err(e) => {
                    report.push_error(name, e);
                    None
                }
            },
        };
        let local = match load_descriptors(&file(DESCRIPTORS_EXT)) {
            Ok(d) => {
                if let Some(n) = kp_count.filter(|n| *n != d.rows) {
                    report.push(
                        name,
                        FindingKind::KeypointCountMismatch,
                        format!("{} descriptors for {n} keypoints", d.rows),
                    );
                }
                Some(d.dim)
            }
            Err(e) => {
                report.push_error(name, e);
                None
            }
        };
        let global = match load_global_descriptor(&file(GLOBAL_EXT)) {
            Ok(g) => Some(g.dim()),
            Err(e) => {
                report.push_error(name, e);
                None
            }
        };
        dims.push((name.to_string(), local, global));
    };

    if let Some(model) = &model {
        for im in model.images.values() {
            let k = model.camera_of(im);
            check_image(
                &mut report,
                &im.name,
                &|ext| paths.db_file(&im.name, ext),
                k,
                Some(im.keypoints.len()),
            );
        }
    }
    for (name, k) in &queries {
        check_image(&mut report, name, &|ext| paths.query_file(name, ext), k, None);
    }

    let local_ref = mode(dims.iter().filter_map(|d| d.1));
    let global_ref = mode(dims.iter().filter_map(|d| d.2));
    for (name, local, global) in &dims {
        if let (Some(d), Some(r)) = (local, local_ref) {
            if *d != r {
                report.push(
                    name,
                    FindingKind::DescriptorDimMismatch,
                    format!("local descriptor dim {d}, expected {r}"),
                );
            }
        }
        if let (Some(d), Some(r)) = (global, global_ref) {
            if *d != r {
                report.push(
                    name,
                    FindingKind::GlobalDimMismatch,
                    format!("global descriptor dim {d}, expected {r}"),
                );
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_prefers_smaller_on_ties() {
        assert_eq!(mode([4, 8, 8, 4].into_iter()), Some(4));
        assert_eq!(mode([4, 8, 8].into_iter()), Some(8));
        assert_eq!(mode(std::iter::empty()), None);
    }

    #[test]
    fn empty_directory_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = validate_dataset(dir.path());
        assert!(!r.ok());
        assert!(r.findings.iter().any(|f| f.kind == FindingKind::ModelError));
        assert!(r.findings.iter().any(|f| f.kind == FindingKind::MissingFile));
    }
}
