//! Trained model and its on-disk format.
//!
//! Layout: magic `SGLM1\n`, a little-endian `u64` header length, a JSON
//! header (task, feature scheme, manifest, shape), then every non-zero
//! weight column as `u32` feature index followed by `C` little-endian `f64`
//! values, and finally the `C` bias values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{featurize_with, FeatureScheme};
use super::loss::{logits, softmax};
use super::{argmax, TrainError, TrainManifest};
use crate::task::TaskSpec;

const MAGIC: &[u8; 6] = b"SGLM1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Task the model was trained for; embedded so evaluation needs no
    /// separate task file.
    pub task: TaskSpec,
    pub scheme: FeatureScheme,
    /// Feature-major: weights of feature `j` are `weights[j*C..(j+1)*C]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub manifest: TrainManifest,
}

#[derive(Serialize, Deserialize)]
struct Header {
    task: String,
    scheme: FeatureScheme,
    manifest: TrainManifest,
    classes: usize,
    columns: usize,
}

impl LinearModel {
    pub(crate) fn from_parts(
        task: TaskSpec,
        scheme: FeatureScheme,
        weights: Vec<f64>,
        bias: Vec<f64>,
        manifest: TrainManifest,
    ) -> Self {
        Self { task, scheme, weights, bias, manifest }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    /// Checks that `task` has the same identity, kind, labels and feature
    /// scheme as the task this model was trained on.
    pub fn check_compatible(&self, task: &TaskSpec) -> Result<(), TrainError> {
        if task.task_id != self.task.task_id {
            return Err(TrainError::TaskMismatch(format!(
                "model was trained for {}, got {}",
                self.task.task_id, task.task_id
            )));
        }
        if task.kind != self.task.kind {
            return Err(TrainError::TaskMismatch(format!("task kind differs for {}", task.task_id)));
        }
        let ids = |t: &TaskSpec| t.labels.iter().map(|l| l.label_id).collect::<Vec<_>>();
        if ids(task) != ids(&self.task) {
            return Err(TrainError::TaskMismatch(format!("label set differs for {}", task.task_id)));
        }
        let scheme = FeatureScheme::for_task(task);
        if scheme != self.scheme {
            return Err(TrainError::SchemeMismatch(format!(
                "model uses {:?}, task implies {:?}",
                self.scheme, scheme
            )));
        }
        Ok(())
    }

    pub fn probabilities(&self, text1: &str, text2: Option<&str>) -> Result<Vec<f64>, TrainError> {
        let mut row = featurize_with(text1, text2, &self.scheme)?;
        if self.scheme.normalization == "l2" {
            row = row.l2_normalized();
        }
        Ok(softmax(&logits(&self.weights, &self.bias, &row)))
    }

    pub fn predict_label(&self, text1: &str, text2: Option<&str>) -> Result<u32, TrainError> {
        let p = self.probabilities(text1, text2)?;
        Ok(self.task.labels[argmax(&p)].label_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let c = self.num_classes();
        let cols: Vec<usize> = (0..self.scheme.dim())
            .filter(|&j| self.weights[j * c..(j + 1) * c].iter().any(|&w| w != 0.0))
            .collect();
        let header = Header {
            task: self.task.to_json(),
            scheme: self.scheme.clone(),
            manifest: self.manifest.clone(),
            classes: c,
            columns: cols.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(MAGIC.len() + 8 + header.len() + cols.len() * (4 + 8 * c) + 8 * c);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for j in cols {
            buf.extend_from_slice(&(j as u32).to_le_bytes());
            for w in &self.weights[j * c..(j + 1) * c] {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
        for b in &self.bias {
            buf.extend_from_slice(&b.to_le_bytes());
        }
        let io = |source| TrainError::Io { path: path.to_path_buf(), source };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&buf).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LinearModel, TrainError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        let bad = |m: &str| TrainError::Format { path: path.to_path_buf(), message: m.to_string() };
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(MAGIC.len()).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = r.u64().ok_or_else(|| bad("truncated header length"))? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| bad(&format!("header: {e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let task = TaskSpec::from_json(&header.task, base)?;
        let c = header.classes;
        if c != task.num_labels() || header.scheme != FeatureScheme::for_task(&task) {
            return Err(bad("header does not match embedded task"));
        }
        let dim = header.scheme.dim();
        let mut weights = vec![0.0; dim * c];
        for _ in 0..header.columns {
            let j = r.u32().ok_or_else(|| bad("truncated column"))? as usize;
            if j >= dim {
                return Err(bad("column index out of range"));
            }
            for k in 0..c {
                weights[j * c + k] = r.f64().ok_or_else(|| bad("truncated column"))?;
            }
        }
        let mut bias = Vec::with_capacity(c);
        for _ in 0..c {
            bias.push(r.f64().ok_or_else(|| bad("truncated bias"))?);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(LinearModel { task, scheme: header.scheme, weights, bias, manifest: header.manifest })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
