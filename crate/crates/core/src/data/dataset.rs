use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Skeleton;
use crate::error::{Error, Result};
use crate::geometry::{load_cameras, save_cameras, Camera};
use crate::numerics::Matrix;

pub const DATASET_SCHEMA: &str = "liftpose-dataset";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// One captured frame as seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub subject: String,
    pub action: String,
    pub camera_id: String,
    pub frame: usize,
    /// `n x 3`, world millimetres.
    pub joints3d_world: Matrix,
    /// `n_in x 2` pixels, when a 2d source (ground truth or detector) filled it.
    pub joints2d: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub skeleton: Skeleton,
    pub samples: Vec<PoseSample>,
    pub cameras: Vec<Camera>,
}

impl Dataset {
    pub fn camera(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.samples.iter().map(|s| s.subject.clone()).collect()
    }

    pub fn actions(&self) -> BTreeSet<String> {
        self.samples.iter().map(|s| s.action.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks skeleton validity, sample shapes, finiteness and camera references.
    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        let n = self.skeleton.n_joints();
        let n_in = self.skeleton.n_input_joints();
        let ids: HashSet<&str> = self.cameras.iter().map(|c| c.id.as_str()).collect();
        let mut unknown = BTreeSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.joints3d_world.shape() != (n, 3) {
                return Err(Error::Schema(format!(
                    "sample {i}: 3d joints are {:?}, skeleton needs ({n}, 3)",
                    s.joints3d_world.shape()
                )));
            }
            if !s.joints3d_world.is_finite() {
                return Err(Error::Schema(format!("sample {i}: non-finite 3d joints")));
            }
            if let Some(j2) = &s.joints2d {
                if j2.shape() != (n_in, 2) {
                    return Err(Error::Schema(format!(
                        "sample {i}: 2d joints are {:?}, skeleton needs ({n_in}, 2)",
                        j2.shape()
                    )));
                }
            }
            if !ids.contains(s.camera_id.as_str()) {
                unknown.insert(s.camera_id.clone());
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Schema(format!(
                "unknown camera ids: {}",
                unknown.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }

    fn with_samples(&self, samples: Vec<PoseSample>) -> Dataset {
        Dataset {
            skeleton: self.skeleton.clone(),
            samples,
            cameras: self.cameras.clone(),
        }
    }

    /// Samples whose subject is in `subjects`, order preserved.
    pub fn filter_subjects(&self, subjects: &[String]) -> Dataset {
        let keep: HashSet<&str> = subjects.iter().map(|s| s.as_str()).collect();
        self.with_samples(
            self.samples
                .iter()
                .filter(|s| keep.contains(s.subject.as_str()))
                .cloned()
                .collect(),
        )
    }

    /// Samples whose action is in `actions`, order preserved.
    pub fn filter_actions(&self, actions: &[String]) -> Dataset {
        let keep: HashSet<&str> = actions.iter().map(|s| s.as_str()).collect();
        self.with_samples(
            self.samples
                .iter()
                .filter(|s| keep.contains(s.action.as_str()))
                .cloned()
                .collect(),
        )
    }
}

/// Partitions by subject tag into `(train, test)`.
pub fn split(ds: &Dataset, train_tags: &[String], test_tags: &[String]) -> Result<(Dataset, Dataset)> {
    let train: HashSet<&String> = train_tags.iter().collect();
    let overlap: Vec<&String> = test_tags.iter().filter(|t| train.contains(t)).collect();
    if !overlap.is_empty() {
        return Err(Error::Argument(format!("subjects in both train and test: {overlap:?}")));
    }
    Ok((ds.filter_subjects(train_tags), ds.filter_subjects(test_tags)))
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    n_samples: usize,
    skeleton: Skeleton,
}

#[derive(Serialize, Deserialize)]
struct Record {
    subject: String,
    action: String,
    camera: String,
    frame: usize,
    joints3d: Vec<f64>,
    joints2d: Option<Vec<f64>>,
}

/// Writes the dataset as JSON lines (header, then one sample per line) and
/// the cameras as a separate TOML file.
pub fn save(ds: &Dataset, data_path: &Path, camera_path: &Path) -> Result<()> {
    let file = std::fs::File::create(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(data_path, e);
    let header = Header {
        schema: DATASET_SCHEMA.into(),
        version: DATASET_SCHEMA_VERSION,
        n_samples: ds.samples.len(),
        skeleton: ds.skeleton.clone(),
    };
    writeln!(w, "{}", to_line(&header)).map_err(io)?;
    for s in &ds.samples {
        let rec = Record {
            subject: s.subject.clone(),
            action: s.action.clone(),
            camera: s.camera_id.clone(),
            frame: s.frame,
            joints3d: s.joints3d_world.data().to_vec(),
            joints2d: s.joints2d.as_ref().map(|m| m.data().to_vec()),
        };
        writeln!(w, "{}", to_line(&rec)).map_err(io)?;
    }
    w.flush().map_err(io)?;
    save_cameras(camera_path, &ds.cameras)
}

/// Reads a dataset written by [`save`]. Fails without returning anything
/// on a malformed or truncated file.
pub fn load(data_path: &Path, camera_path: &Path) -> Result<Dataset> {
    let cameras = load_cameras(camera_path)?;
    let file = std::fs::File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut lines = BufReader::new(file).lines();

    let first = lines
        .next()
        .ok_or_else(|| Error::parse(data_path, 1, "empty file"))?
        .map_err(|e| Error::io(data_path, e))?;
    let probe: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::parse(data_path, 1, e.to_string()))?;
    if probe.get("schema").and_then(|v| v.as_str()) != Some(DATASET_SCHEMA) {
        return Err(Error::Schema(format!(
            "{} is not a {DATASET_SCHEMA} file",
            data_path.display()
        )));
    }
    let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version > DATASET_SCHEMA_VERSION as u64 {
        return Err(Error::Schema(format!(
            "dataset version {version} is newer than supported version {DATASET_SCHEMA_VERSION}"
        )));
    }
    let header: Header = serde_json::from_value(probe).map_err(|e| Error::parse(data_path, 1, e.to_string()))?;
    header.skeleton.validate()?;
    let n = header.skeleton.n_joints();
    let n_in = header.skeleton.n_input_joints();

    let mut samples = Vec::with_capacity(header.n_samples);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(data_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(data_path, line_no, e.to_string()))?;
        let joints3d_world = Matrix::new(rec.joints3d.len() / 3, 3, rec.joints3d.clone())
            .ok()
            .filter(|m| m.rows() == n && rec.joints3d.len() == 3 * n)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "record {line_no}: {} 3d values, skeleton needs {}",
                    rec.joints3d.len(),
                    3 * n
                ))
            })?;
        let joints2d = match rec.joints2d {
            None => None,
            Some(v) if v.len() == 2 * n_in => Some(Matrix::new(n_in, 2, v)?),
            Some(v) => {
                return Err(Error::Schema(format!(
                    "record {line_no}: {} 2d values, skeleton needs {}",
                    v.len(),
                    2 * n_in
                )))
            }
        };
        samples.push(PoseSample {
            subject: rec.subject,
            action: rec.action,
            camera_id: rec.camera,
            frame: rec.frame,
            joints3d_world,
            joints2d,
        });
    }
    if samples.len() != header.n_samples {
        return Err(Error::parse(
            data_path,
            samples.len() + 2,
            format!(
                "file holds {} records but its header declares {} (truncated?)",
                samples.len(),
                header.n_samples
            ),
        ));
    }
    let ds = Dataset {
        skeleton: header.skeleton,
        samples,
        cameras,
    };
    ds.validate()?;
    Ok(ds)
}

fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain records serialize")
}
