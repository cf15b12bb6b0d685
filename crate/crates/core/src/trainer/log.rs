use std::fmt::Write as _;
use std::path::Path;

use crate::modality::{Modality, NUM_MODALITIES};
use crate::tensorgrad::checkpoint::write_atomic;

/// One CSV row; empty cells are losses that do not apply to the split or step.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub recon: [Option<f64>; NUM_MODALITIES],
    pub cls: [Option<f64>; NUM_MODALITIES],
    pub fusion: Option<f64>,
}

impl LogRow {
    pub fn new(epoch: usize, split: &str) -> Self {
        Self { epoch, split: split.to_string(), recon: [None; NUM_MODALITIES], cls: [None; NUM_MODALITIES], fusion: None }
    }
}

pub fn header() -> String {
    let mut h = String::from("epoch,split");
    for m in Modality::ALL {
        let _ = write!(h, ",loss_recon_{}", m.tag());
    }
    for m in Modality::ALL {
        let _ = write!(h, ",loss_cls_{}", m.tag());
    }
    h.push_str(",loss_fusion");
    h
}

fn cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

pub fn to_csv(rows: &[LogRow]) -> String {
    let mut out = header();
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.epoch, r.split);
        r.recon.iter().chain(&r.cls).for_each(|&v| cell(&mut out, v));
        cell(&mut out, r.fusion);
        out.push('\n');
    }
    out
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> std::io::Result<()> {
    write_atomic(path, to_csv(rows).as_bytes())
}
