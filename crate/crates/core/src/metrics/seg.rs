use crate::data::{Image, Palette};
use crate::error::{Error, Result};

/// Pixel counts indexed by `(ground truth, prediction)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Scores averaged over the classes present in the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScores {
    pub pixel_accuracy: f64,
    pub class_accuracy: f64,
    pub class_iou: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, truth: u8, predicted: u8) {
        self.counts[truth as usize * self.classes + predicted as usize] += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    fn truth_total(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.count(c, p)).sum()
    }

    fn predicted_total(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, c)).sum()
    }

    /// IoU of class `c`, or `None` if it is absent from the ground truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let truth = self.truth_total(c);
        if truth == 0 {
            return None;
        }
        let tp = self.count(c, c);
        Some(tp as f64 / (truth + self.predicted_total(c) - tp) as f64)
    }

    pub fn scores(&self) -> SegScores {
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..self.classes).map(|c| self.count(c, c)).sum();
        let present: Vec<usize> = (0..self.classes).filter(|&c| self.truth_total(c) > 0).collect();
        let n = present.len().max(1) as f64;
        let class_accuracy = present
            .iter()
            .map(|&c| self.count(c, c) as f64 / self.truth_total(c) as f64)
            .sum::<f64>()
            / n;
        let class_iou = present.iter().filter_map(|&c| self.iou(c)).sum::<f64>() / n;
        SegScores {
            pixel_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            class_accuracy,
            class_iou,
        }
    }
}

/// Classifies each photo pixel by its nearest palette color and tallies it
/// against the class mask.
pub fn accumulate_confusion(cm: &mut ConfusionMatrix, photo: &Image, mask: &Image, palette: &Palette) -> Result<()> {
    if photo.channels() != 3 || mask.channels() != 1 {
        return Err(Error::Invalid("expected an RGB photo and a 1-channel mask".into()));
    }
    if (photo.width(), photo.height()) != (mask.width(), mask.height()) {
        return Err(Error::Invalid(format!(
            "photo is {}x{} but mask is {}x{}",
            photo.width(),
            photo.height(),
            mask.width(),
            mask.height()
        )));
    }
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let truth = mask.get(x, y, 0);
            if truth as usize >= palette.len() {
                return Err(Error::Invalid(format!("mask class {truth} outside the palette")));
            }
            cm.add(truth, palette.nearest(photo.rgb(x, y)));
        }
    }
    Ok(())
}

pub fn seg_scores(photo: &Image, mask: &Image, palette: &Palette) -> Result<SegScores> {
    if palette.is_empty() {
        return Err(Error::Invalid("palette is empty".into()));
    }
    let mut cm = ConfusionMatrix::new(palette.len());
    accumulate_confusion(&mut cm, photo, mask, palette)?;
    Ok(cm.scores())
}
