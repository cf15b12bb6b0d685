use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::modality::Modality;
use crate::sigprep::ChannelSeries;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    pub name: String,
    pub sampling_rate_hz: f64,
    pub num_samples: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub study_id: String,
    pub channels: Vec<ChannelFile>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyBundle {
    pub study_id: String,
    pub channels: Vec<ChannelSeries<f32>>,
    pub labels: Vec<u8>,
}

impl StudyBundle {
    pub fn channel(&self, m: Modality) -> Option<&ChannelSeries<f32>> {
        self.channels.iter().find(|c| c.modality == m)
    }
}

fn channel_file_name(m: Modality) -> String {
    format!("{}.f32", m.tag())
}

fn read_existing(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::MissingFile(path.to_path_buf()),
        _ => DataError::Io(e),
    })
}

pub fn load_bundle(dir: &Path) -> Result<StudyBundle, DataError> {
    let manifest_bytes = read_existing(&dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes).map_err(|e| DataError::Manifest(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut channels = Vec::with_capacity(manifest.channels.len());
    for c in &manifest.channels {
        let m: Modality = c.name.parse().map_err(|_| DataError::UnknownModality(c.name.clone()))?;
        if !seen.insert(m) {
            return Err(DataError::DuplicateChannel(c.name.clone()));
        }
        if !(c.sampling_rate_hz.is_finite() && c.sampling_rate_hz > 0.0) {
            return Err(DataError::Manifest(format!("channel {} has rate {}", c.name, c.sampling_rate_hz)));
        }
        let bytes = read_existing(&dir.join(&c.file))?;
        if bytes.len() != c.num_samples * 4 {
            return Err(DataError::LengthMismatch { channel: c.name.clone(), expected: c.num_samples, actual: bytes.len() / 4 });
        }
        let samples: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let series = ChannelSeries::new(samples, c.sampling_rate_hz, m).map_err(|_| DataError::NonFinite(c.name.clone()))?;
        channels.push(series);
    }
    let labels = parse_labels(&String::from_utf8_lossy(&read_existing(&dir.join("labels.csv"))?))?;
    let duration = channels.iter().map(|c| c.duration_s()).fold(f64::INFINITY, f64::min);
    let max_epochs = if channels.is_empty() { 0 } else { (duration / 30.0 + 1e-9).floor() as usize };
    if labels.len() > max_epochs {
        return Err(DataError::Labels(format!("{} labels but only {max_epochs} whole epochs of signal", labels.len())));
    }
    Ok(StudyBundle { study_id: manifest.study_id, channels, labels })
}

fn parse_labels(text: &str) -> Result<Vec<u8>, DataError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("epoch_index,label") {
        return Err(DataError::Labels("header must be epoch_index,label".into()));
    }
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, lab) = line.split_once(',').ok_or_else(|| DataError::Labels(format!("row {row}: {line:?}")))?;
        let idx: usize = idx.trim().parse().map_err(|_| DataError::Labels(format!("row {row}: index {idx:?}")))?;
        if idx != labels.len() {
            return Err(DataError::Labels(format!("row {row}: expected epoch {} got {idx}", labels.len())));
        }
        match lab.trim() {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => return Err(DataError::Labels(format!("row {row}: label {other:?}"))),
        }
    }
    Ok(labels)
}

pub fn save_bundle(bundle: &StudyBundle, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for c in &bundle.channels {
        let file = channel_file_name(c.modality);
        let bytes: Vec<u8> = c.samples.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        files.push(ChannelFile {
            name: c.modality.tag().to_string(),
            sampling_rate_hz: c.sampling_rate_hz,
            num_samples: c.samples.len(),
            file,
        });
    }
    let manifest = Manifest { study_id: bundle.study_id.clone(), channels: files };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| DataError::Manifest(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    let mut csv = String::from("epoch_index,label\n");
    for (i, l) in bundle.labels.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    fs::write(dir.join("labels.csv"), csv)?;
    Ok(())
}

/// Study subdirectories (those holding a manifest), sorted by name.
pub fn list_studies(root: &Path) -> Result<Vec<PathBuf>, DataError> {
    if !root.is_dir() {
        return Err(DataError::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> =
        fs::read_dir(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("manifest.json").is_file()).collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<StudyBundle>, DataError> {
    list_studies(root)?.iter().map(|d| load_bundle(d)).collect()
}
