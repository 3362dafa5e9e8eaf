//! Confusion-matrix IoU.

use crate::error::{Result, TrainError};
use crate::losses::IGNORE_LABEL;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// Row = true class, column = predicted class.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Adds one prediction/label pair; ignore-marked label pixels are skipped.
    pub fn add(&mut self, predicted: &[u8], label: &[u8]) -> Result<()> {
        if predicted.len() != label.len() {
            return Err(TrainError::Data(format!(
                "prediction has {} pixels, label {}",
                predicted.len(),
                label.len()
            )));
        }
        for (&p, &t) in predicted.iter().zip(label) {
            if t == IGNORE_LABEL {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= self.classes || t >= self.classes {
                return Err(TrainError::Data(format!(
                    "class id {} outside 0..{}",
                    p.max(t),
                    self.classes
                )));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class IoU; `None` for classes absent from both prediction and
    /// label.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let c = self.classes;
        (0..c)
            .map(|k| {
                let tp = self.counts[k * c + k];
                let fn_: u64 = (0..c).map(|j| self.counts[k * c + j]).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|i| self.counts[i * c + k]).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over classes present in the union.
    pub fn miou(&self) -> Result<f64> {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(TrainError::Data("no labelled pixels to evaluate".into()));
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let mut m = ConfusionMatrix::new(3);
        let l = [0, 1, 2, 2, 1];
        m.add(&l, &l).unwrap();
        assert_eq!(m.miou().unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_on_half_covered_image() {
        let label: Vec<u8> = (0..16).map(|i| (i % 4 >= 2) as u8).collect();
        let mut m = ConfusionMatrix::new(2);
        m.add(&[0; 16], &label).unwrap();
        assert_eq!(m.iou(), vec![Some(0.5), Some(0.0)]);
        assert_eq!(m.miou().unwrap(), 0.25);
    }

    #[test]
    fn absent_classes_are_skipped() {
        let mut m = ConfusionMatrix::new(4);
        m.add(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.iou()[3], None);
        assert_eq!(m.miou().unwrap(), 1.0);
        assert!(ConfusionMatrix::new(2).miou().is_err());
        assert!(m.add(&[5], &[0]).is_err());
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let mut m = ConfusionMatrix::new(2);
        m.add(&[1, 0], &[IGNORE_LABEL, 0]).unwrap();
        assert_eq!(m.total(), 1);
        assert_eq!(m.miou().unwrap(), 1.0);
    }
}
