//! Loading and validation of on-disk inputs.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! <root>/model/{cameras,images,points3D}.txt   sparse model (text, PINHOLE only)
//! <root>/classes.txt                            <id> <name> <dynamic:0|1>
//! <root>/conditions.txt                         <image-name> <day|night>
//! <root>/queries.txt                            <name> PINHOLE <w> <h> <fx> <fy> <cx> <cy>
//! <root>/db/<name>.{labels.pgm,ldsc,gdsc}       database rasters and descriptors
//! <root>/queries/<name>.{labels.pgm,kpts,ldsc,gdsc}
//! ```

mod classes;
mod colmap;
mod dataset;
mod features;
mod raster;

use std::path::PathBuf;

use thiserror::Error;

pub use classes::{
    load_class_table, load_conditions, write_class_table, write_conditions, ClassTable, Condition,
    VOID_LABEL,
};
pub use colmap::{
    load_sfm_model, write_sfm_model, CameraId, DbImageRecord, ImageId, PointId, RawPoint3D,
    SfmModel, TrackEntry,
};
pub use dataset::{
    load_query_list, validate_dataset, write_query_list, Dataset, DatasetPaths, DbImageData,
    Finding, FindingKind, QueryImage, ValidationReport,
};
pub use features::{
    load_descriptors, load_global_descriptor, load_keypoints, write_descriptors,
    write_global_descriptor, write_keypoints, DescriptorSet, GlobalDescriptor,
};
pub(crate) use colmap::parse_rotation;
pub use raster::{load_label_raster, read_pgm, write_pgm, LabelRaster};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("inconsistent model: {0}")]
    Consistency(String),
    #[error("{path}: raster is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("{path}: unknown label id {label}")]
    UnknownLabel { path: PathBuf, label: u8 },
    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },
    #[error("{path}: file is truncated")]
    TruncatedFile { path: PathBuf },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
