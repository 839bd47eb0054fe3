//! On-disk formats.
//!
//! Feature files (`.acgf`, little-endian):
//! - magic `ACGF` (4 bytes)
//! - format version, u32 (currently 1)
//! - T, u32
//! - D, u32
//! - T*D IEEE-754 f32 values, row-major
//!
//! Annotations, proposals, and sparse-adjacency dumps are line-delimited
//! JSON; model parameters are a single JSON document. Loss histories and
//! evaluation results are plain CSV.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::enhance::{FusionMode, GcnParams};
use crate::error::{Error, Result};
use crate::eval::{DetectedProposal, EvalReport, GroundTruthInstance};
use crate::features::FeatureMatrix;
use crate::graph::{AcgHyperparams, Adjacency, Sparse};
use crate::head::HeadParams;
use crate::synth::{ActionInstance, VideoRecord};
use crate::train::EpochLoss;

pub const FEATURE_MAGIC: &[u8; 4] = b"ACGF";
pub const FEATURE_VERSION: u32 = 1;

fn format_err(offset: u64, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

/// Writes a feature matrix at f32 precision.
pub fn write_feature_file(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let t = features.num_segments();
    let d = features.dim();
    if t > u32::MAX as usize || d > u32::MAX as usize {
        return Err(Error::invalid("matrix too large for the feature format"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(t as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for v in features.values().iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature file, validating magic, version, and exact length.
pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(format_err(
            bytes.len() as u64,
            format!("file truncated at {} bytes, header needs 16", bytes.len()),
        ));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(format_err(0, "bad magic, expected ACGF"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(format_err(
            4,
            format!("unsupported version {version}, expected {FEATURE_VERSION}"),
        ));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 4 * t * d;
    if bytes.len() != expected {
        return Err(format_err(
            16,
            format!("expected {expected} bytes for a {t}x{d} matrix, found {}", bytes.len()),
        ));
    }
    let mut values = Array2::<f64>::zeros((t, d));
    for (idx, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        values[[idx / d, idx % d]] =
            f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    FeatureMatrix::new(values)
}

/// One line of an annotation file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<ActionInstance>,
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: AnnotationRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("annotation line {}: {e}", lineno + 1))
        })?;
        records.push(r);
    }
    Ok(records)
}

impl AnnotationRecord {
    pub fn from_video(v: &VideoRecord) -> Self {
        Self {
            video_id: v.id.clone(),
            labels: v.labels.iter().copied().collect(),
            instances: v.instances.clone(),
        }
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthInstance> {
        self.instances
            .iter()
            .map(|i| GroundTruthInstance {
                video_id: self.video_id.clone(),
                class_id: i.class_id,
                start_seg: i.start_seg,
                end_seg: i.end_seg,
            })
            .collect()
    }
}

/// Loads a corpus written by `synth`: annotations plus one feature file per
/// video under `features/<video_id>.acgf`.
pub fn read_corpus(dir: &Path) -> Result<Vec<VideoRecord>> {
    let records = read_annotations(&dir.join("annotations.jsonl"))?;
    let mut videos = Vec::with_capacity(records.len());
    for r in records {
        let features = read_feature_file(&dir.join("features").join(format!("{}.acgf", r.video_id)))?;
        let labels: BTreeSet<usize> = r.labels.iter().copied().collect();
        videos.push(VideoRecord {
            id: r.video_id,
            features,
            labels,
            instances: r.instances,
        });
    }
    Ok(videos)
}

/// Writes a corpus in the layout `read_corpus` expects.
pub fn write_corpus(dir: &Path, videos: &[VideoRecord]) -> Result<()> {
    std::fs::create_dir_all(dir.join("features"))?;
    let annotations: Vec<AnnotationRecord> =
        videos.iter().map(AnnotationRecord::from_video).collect();
    write_annotations(&dir.join("annotations.jsonl"), &annotations)?;
    for v in videos {
        write_feature_file(&dir.join("features").join(format!("{}.acgf", v.id)), &v.features)?;
    }
    Ok(())
}

pub fn write_proposals(path: &Path, proposals: &[DetectedProposal]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in proposals {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_proposals(path: &Path) -> Result<Vec<DetectedProposal>> {
    let reader = BufReader::new(File::open(path)?);
    let mut proposals = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: DetectedProposal = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("proposal line {}: {e}", lineno + 1)))?;
        proposals.push(p);
    }
    Ok(proposals)
}

/// Sparse adjacency dump: one JSON object per nonzero entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjacencyEntry {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

pub fn write_sparse_adjacency(path: &Path, adj: &Adjacency<Sparse>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..adj.num_nodes() {
        for (j, weight) in adj.row_edges(i) {
            serde_json::to_writer(&mut w, &AdjacencyEntry { i, j, w: weight })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Serialized model: everything `enhance` and `eval` need to rebuild the
/// pipeline that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub hyperparams: AcgHyperparams,
    pub fusion: FusionMode,
    pub num_classes: usize,
    pub gcn_weights: Vec<Vec<Vec<f64>>>,
    pub classifier: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub pool_k: usize,
    pub act_threshold: f64,
}

impl ModelFile {
    pub fn new(
        hp: &AcgHyperparams,
        mode: &FusionMode,
        num_classes: usize,
        gcn: &GcnParams,
        head: &HeadParams,
        act_threshold: f64,
    ) -> Self {
        Self {
            hyperparams: *hp,
            fusion: *mode,
            num_classes,
            gcn_weights: gcn
                .layers()
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            classifier: head
                .classifier
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            bias: head.bias.to_vec(),
            pool_k: head.pool_k,
            act_threshold,
        }
    }

    pub fn gcn_params(&self) -> Result<GcnParams> {
        let weights = self
            .gcn_weights
            .iter()
            .map(|rows| rows_to_array(rows))
            .collect::<Result<Vec<_>>>()?;
        GcnParams::new(weights)
    }

    pub fn head_params(&self) -> Result<HeadParams> {
        Ok(HeadParams {
            classifier: rows_to_array(&self.classifier)?,
            bias: self.bias.clone().into(),
            pool_k: self.pool_k,
        })
    }
}

fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::invalid("empty matrix in model file"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("ragged matrix in model file"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| Error::invalid(format!("bad matrix shape: {e}")))
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, model)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Loss history CSV: `epoch,head_loss,epm_loss,total`.
pub fn write_loss_csv(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,head_loss,epm_loss,total")?;
    for e in history {
        writeln!(w, "{},{},{},{}", e.epoch, e.head_loss, e.epm_loss, e.total)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluation CSV: `iou_threshold,class_id,ap`, with `*` rows for the mean
/// over classes and a final `*,*` row for the mean over thresholds.
pub fn write_map_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iou_threshold,class_id,ap")?;
    for t in &report.thresholds {
        for (class, ap) in &t.per_class {
            writeln!(w, "{},{},{}", t.iou, class, ap)?;
        }
        writeln!(w, "{},*,{}", t.iou, t.mean_ap)?;
    }
    writeln!(w, "*,*,{}", report.average_map)?;
    w.flush()?;
    Ok(())
}
