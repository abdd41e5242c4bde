//! Dataset directory layout and lossless JSON round-trips.
//!
//! ```text
//! <dir>/meta.json                       version, seed, counts
//! <dir>/objects/<id>.json               spec + cloud + normals + frame
//! <dir>/grasps/<object_id>.json         list of grasp labels
//! <dir>/demos/<object_id>__<task>.json  demonstration record
//! ```
//!
//! All numbers are written as decimal doubles through serde_json, whose
//! shortest-representation encoder round-trips `f64` bitwise.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::vec3::Vec3;

use super::{DemoRecord, GraspLabel, ObjectCloud, ObjectSpec};

pub const DATASET_VERSION: u32 = 1;

/// Dataset-level metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub seed: u64,
    pub object_count: usize,
    pub grasp_count: usize,
    pub demo_count: usize,
}

/// One object entry: the parametric spec plus its sampled cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub spec: ObjectSpec,
    pub cloud: ObjectCloud,
}

/// A full on-disk dataset held in memory. Objects and grasps are keyed by
/// object id in sorted order so serialization is deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub objects: Vec<ObjectEntry>,
    pub grasps: BTreeMap<String, Vec<GraspLabel>>,
    pub demos: Vec<DemoRecord>,
}

impl Dataset {
    pub fn object(&self, id: &str) -> Option<&ObjectEntry> {
        self.objects.iter().find(|o| o.spec.id == id)
    }

    pub fn total_grasps(&self) -> usize {
        self.grasps.values().map(Vec::len).sum()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    serde_json::to_writer(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

fn demo_file_name(demo: &DemoRecord) -> String {
    format!("{}__{}.json", demo.object_id, demo.task_name)
}

/// Write a dataset to `dir`. Existing files are overwritten.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for entry in &dataset.objects {
        write_json(
            &dir.join("objects").join(format!("{}.json", entry.spec.id)),
            entry,
        )?;
    }
    for (id, labels) in &dataset.grasps {
        write_json(&dir.join("grasps").join(format!("{id}.json")), labels)?;
    }
    for demo in &dataset.demos {
        write_json(&dir.join("demos").join(demo_file_name(demo)), demo)?;
    }
    write_json(&dir.join("meta.json"), &dataset.meta)?;
    Ok(())
}

fn sorted_json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if dir.exists() {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Read a dataset back, validating the version and cloud invariants.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    if meta.version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: meta.version,
            expected: DATASET_VERSION,
        });
    }

    let mut objects = Vec::new();
    for path in sorted_json_files(&dir.join("objects"))? {
        let entry: ObjectEntry = read_json(&path)?;
        entry.spec.validate()?;
        entry.cloud.validate()?;
        objects.push(entry);
    }

    let mut grasps = BTreeMap::new();
    for path in sorted_json_files(&dir.join("grasps"))? {
        let labels: Vec<GraspLabel> = read_json(&path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        grasps.insert(id, labels);
    }

    let mut demos = Vec::new();
    for path in sorted_json_files(&dir.join("demos"))? {
        demos.push(read_json::<DemoRecord>(&path)?);
    }

    Ok(Dataset {
        meta,
        objects,
        grasps,
        demos,
    })
}

/// Export points (raw meters) as ASCII PLY for offline viewing.
pub fn write_ply(path: &Path, points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
    if let Some(ns) = normals {
        if ns.len() != points.len() {
            return Err(Error::InvalidArgument(
                "ply normals must align with points".into(),
            ));
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "ply")?;
    writeln!(f, "format ascii 1.0")?;
    writeln!(f, "element vertex {}", points.len())?;
    writeln!(f, "property double x")?;
    writeln!(f, "property double y")?;
    writeln!(f, "property double z")?;
    if normals.is_some() {
        writeln!(f, "property double nx")?;
        writeln!(f, "property double ny")?;
        writeln!(f, "property double nz")?;
    }
    writeln!(f, "end_header")?;
    for (i, p) in points.iter().enumerate() {
        match normals {
            Some(ns) => writeln!(
                f,
                "{} {} {} {} {} {}",
                p[0], p[1], p[2], ns[i][0], ns[i][1], ns[i][2]
            )?,
            None => writeln!(f, "{} {} {}", p[0], p[1], p[2])?,
        }
    }
    Ok(())
}
