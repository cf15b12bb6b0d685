//! Segmented, model-ready studies: one flat buffer per modality slot.

use crate::modality::{Modality, NUM_MODALITIES};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStudy<S> {
    pub study_id: String,
    pub epoch_len: usize,
    /// `[slot][epoch * epoch_len + t]`.
    pub channels: Vec<Vec<S>>,
    pub labels: Vec<u8>,
}

impl<S: Scalar> EpochStudy<S> {
    pub fn zeros(study_id: &str, epoch_len: usize, labels: Vec<u8>) -> Self {
        let n = labels.len() * epoch_len;
        Self { study_id: study_id.to_string(), epoch_len, channels: vec![vec![S::zero(); n]; NUM_MODALITIES], labels }
    }

    pub fn num_epochs(&self) -> usize {
        self.labels.len()
    }

    pub fn epoch(&self, m: Modality, j: usize) -> &[S] {
        &self.channels[m.index()][j * self.epoch_len..(j + 1) * self.epoch_len]
    }

    pub fn epoch_mut(&mut self, m: Modality, j: usize) -> &mut [S] {
        let t = self.epoch_len;
        &mut self.channels[m.index()][j * t..(j + 1) * t]
    }

    /// An identically zero epoch-channel is treated as missing.
    pub fn is_present(&self, m: Modality, j: usize) -> bool {
        self.epoch(m, j).iter().any(|v| *v != S::zero())
    }

    pub fn zero_modality(&mut self, m: Modality) {
        self.channels[m.index()].iter_mut().for_each(|v| *v = S::zero());
    }

    pub fn cast<T: Scalar>(&self) -> EpochStudy<T> {
        EpochStudy {
            study_id: self.study_id.clone(),
            epoch_len: self.epoch_len,
            channels: self.channels.iter().map(|c| c.iter().map(|v| T::lit(v.as_f64())).collect()).collect(),
            labels: self.labels.clone(),
        }
    }
}
