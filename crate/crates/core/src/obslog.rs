//! On-disk observation logs for offline map building.
//!
//! Layout of a log directory:
//! - `index.jsonl`: one [`FrameRecord`] per line, frame ids strictly
//!   increasing;
//! - `depth_<frame>.f32`: depth, f32 little-endian, row-major;
//! - `labels_<frame>.u16`: label ids, u16 little-endian, row-major;
//! - `vocabulary.json`: the [`LabelVocabulary`] the label ids refer to;
//! - `provider.json` (optional): provider and mapper settings of the
//!   recording run.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::ProviderConfig;
use crate::error::{Error, Result};
use crate::geometry::{DepthImage, Intrinsics, Pose};
use crate::image::LabelImage;
use crate::mapper::{Mapper, Observation};
use crate::vocab::LabelVocabulary;

pub const INDEX_FILE: &str = "index.jsonl";
pub const VOCAB_FILE: &str = "vocabulary.json";
pub const PROVIDER_FILE: &str = "provider.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u32,
    /// Camera-to-world transform, row-major 4x4.
    pub pose: Vec<f64>,
    pub intrinsics: Intrinsics,
    pub depth: String,
    pub labels: String,
}

/// A fully loaded frame.
#[derive(Clone, Debug)]
pub struct LoggedFrame {
    pub frame: u32,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub depth: DepthImage,
    pub labels: LabelImage,
}

/// Contents of `provider.json`: how the recording run embedded its frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSettings {
    pub provider: ProviderConfig,
    pub scales: Vec<i32>,
}

pub struct LogWriter {
    dir: PathBuf,
    index: BufWriter<File>,
    last: Option<u32>,
}

impl LogWriter {
    /// Creates the directory (if needed) and writes the vocabulary. Any
    /// existing index is replaced.
    pub fn create(dir: &Path, vocab: &LabelVocabulary) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vp = dir.join(VOCAB_FILE);
        let text = serde_json::to_string_pretty(vocab).map_err(|e| Error::json(VOCAB_FILE, e))?;
        std::fs::write(&vp, text).map_err(|e| Error::io(&vp, e))?;
        let ip = dir.join(INDEX_FILE);
        let index = BufWriter::new(File::create(&ip).map_err(|e| Error::io(&ip, e))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
            last: None,
        })
    }

    pub fn write_settings(&self, settings: &LogSettings) -> Result<()> {
        let p = self.dir.join(PROVIDER_FILE);
        let text = serde_json::to_string_pretty(settings).map_err(|e| Error::json(PROVIDER_FILE, e))?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn append(
        &mut self,
        frame: u32,
        pose: &Pose,
        intrinsics: &Intrinsics,
        depth: &DepthImage,
        labels: &LabelImage,
    ) -> Result<()> {
        if self.last.is_some_and(|l| frame <= l) {
            return Err(Error::Input(format!(
                "frame ids must increase: {frame} after {}",
                self.last.unwrap_or_default()
            )));
        }
        let depth_name = format!("depth_{frame:06}.f32");
        let labels_name = format!("labels_{frame:06}.u16");
        let mut bytes = Vec::with_capacity(depth.values().len() * 4);
        for v in depth.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let dp = self.dir.join(&depth_name);
        std::fs::write(&dp, &bytes).map_err(|e| Error::io(&dp, e))?;
        bytes.clear();
        for v in labels.ids() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let lp = self.dir.join(&labels_name);
        std::fs::write(&lp, &bytes).map_err(|e| Error::io(&lp, e))?;
        let rec = FrameRecord {
            frame,
            pose: pose.to_row_major().to_vec(),
            intrinsics: *intrinsics,
            depth: depth_name,
            labels: labels_name,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::json(INDEX_FILE, e))?;
        let ip = self.dir.join(INDEX_FILE);
        writeln!(self.index, "{line}").map_err(|e| Error::io(&ip, e))?;
        self.last = Some(frame);
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn finish(mut self) -> Result<()> {
        let ip = self.dir.join(INDEX_FILE);
        self.index.flush().map_err(|e| Error::io(&ip, e))
    }
}

/// An opened log: vocabulary plus the parsed index.
pub struct LogReader {
    dir: PathBuf,
    pub vocabulary: LabelVocabulary,
    pub records: Vec<FrameRecord>,
    pub settings: Option<LogSettings>,
}

impl LogReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let vp = dir.join(VOCAB_FILE);
        let text = std::fs::read_to_string(&vp).map_err(|e| Error::io(&vp, e))?;
        let vocabulary: LabelVocabulary =
            serde_json::from_str(&text).map_err(|e| Error::json(vp.display().to_string(), e))?;
        let vocabulary = LabelVocabulary::new(vocabulary.labels().to_vec())?;
        let ip = dir.join(INDEX_FILE);
        let file = File::open(&ip).map_err(|e| Error::io(&ip, e))?;
        let mut records: Vec<FrameRecord> = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&ip, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameRecord = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{} line {}", ip.display(), n + 1), e))?;
            if let Some(prev) = records.last() {
                if rec.frame <= prev.frame {
                    return Err(Error::Input(format!(
                        "frame {}: ids must be strictly increasing (previous {})",
                        rec.frame, prev.frame
                    )));
                }
            }
            records.push(rec);
        }
        let pp = dir.join(PROVIDER_FILE);
        let settings = if pp.exists() {
            let text = std::fs::read_to_string(&pp).map_err(|e| Error::io(&pp, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::json(pp.display().to_string(), e))?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            vocabulary,
            records,
            settings,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Loads one frame; every failure names the frame id.
    pub fn load(&self, rec: &FrameRecord) -> Result<LoggedFrame> {
        let bad = |what: String| Error::Input(format!("frame {}: {what}", rec.frame));
        let m: [f64; 16] = rec
            .pose
            .as_slice()
            .try_into()
            .map_err(|_| bad(format!("pose has {} values, expected 16", rec.pose.len())))?;
        let pose = Pose::from_row_major(&m).map_err(|e| bad(e.to_string()))?;
        rec.intrinsics.validate().map_err(|e| bad(e.to_string()))?;
        let n = rec.intrinsics.pixel_count();
        let dp = self.dir.join(&rec.depth);
        let bytes = std::fs::read(&dp).map_err(|e| bad(format!("{}: {e}", dp.display())))?;
        if bytes.len() != n * 4 {
            return Err(bad(format!(
                "depth file has {} bytes, expected {}",
                bytes.len(),
                n * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let depth = DepthImage::new(rec.intrinsics.width, rec.intrinsics.height, values)
            .map_err(|e| bad(e.to_string()))?;
        let lp = self.dir.join(&rec.labels);
        let bytes = std::fs::read(&lp).map_err(|e| bad(format!("{}: {e}", lp.display())))?;
        if bytes.len() != n * 2 {
            return Err(bad(format!(
                "label file has {} bytes, expected {}",
                bytes.len(),
                n * 2
            )));
        }
        let ids: Vec<u16> = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
            .collect();
        if let Some(bad_id) = ids.iter().find(|&&id| id as usize >= self.vocabulary.len()) {
            return Err(bad(format!("label id {bad_id} outside the vocabulary")));
        }
        let labels = LabelImage::new(rec.intrinsics.width, rec.intrinsics.height, ids)
            .map_err(|e| bad(e.to_string()))?;
        Ok(LoggedFrame {
            frame: rec.frame,
            pose,
            intrinsics: rec.intrinsics,
            depth,
            labels,
        })
    }
}

/// Feeds every logged frame through `mapper` in index order. Returns the
/// number of frames processed; a failure names the offending frame.
pub fn replay(log: &LogReader, mapper: &mut Mapper) -> Result<usize> {
    for rec in &log.records {
        let f = log.load(rec)?;
        let obs = Observation::with_labels(f.frame, &f.pose, &f.intrinsics, &f.depth, &f.labels);
        mapper
            .process(&obs, None)
            .map_err(|e| Error::Input(format!("frame {}: {e}", f.frame)))?;
    }
    Ok(log.records.len())
}
