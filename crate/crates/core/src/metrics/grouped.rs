use std::collections::BTreeMap;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::ActivationMatrix;

/// Majority vote of class ids over each `(H/h) × (W/w)` cell; ties go to
/// the lowest class id.
pub fn downsample_mask(mask: &Image, h: usize, w: usize) -> Result<Image> {
    if mask.channels() != 1 || h == 0 || w == 0 || mask.height() % h != 0 || mask.width() % w != 0 {
        return Err(Error::Invalid(format!(
            "cannot downsample a {}x{} mask to {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    let (fy, fx) = (mask.height() / h, mask.width() / w);
    let mut out = Image::filled(w, h, 1, 0);
    for y in 0..h {
        for x in 0..w {
            let mut votes = [0u32; 256];
            for dy in 0..fy {
                for dx in 0..fx {
                    votes[mask.get(x * fx + dx, y * fy + dy, 0) as usize] += 1;
                }
            }
            // max_by_key keeps the last maximum, so scan ids in reverse
            let winner = (0..256).rev().max_by_key(|&c| votes[c]).unwrap();
            out.set(x, y, 0, winner as u8);
        }
    }
    Ok(out)
}

/// Block means of pixel similarity under a class grouping.
///
/// Similarity between pixels `i` and `j` is their cosine similarity,
/// recovered from the row-normalized matrix as
/// `sign(A[i,j]) · sqrt(A[i,j]·A[j,i] / (A[i,i]·A[j,j]))`. Within-class blocks
/// exclude the diagonal. `within` averages the per-class block means and
/// `cross` averages the means over distinct class pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSimilarityReport {
    pub pair_means: BTreeMap<(u8, u8), f64>,
    pub within: f64,
    pub cross: f64,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct GroupedSemrel {
    /// `order[k]` is the original index of the pixel placed at position `k`.
    pub order: Vec<usize>,
    /// Row-major `P × P` activation matrix with rows and columns permuted.
    pub matrix: Vec<f64>,
    /// Class of each permuted position.
    pub classes: Vec<u8>,
    pub report: BlockSimilarityReport,
    /// The permuted matrix with `[−1, 1]` mapped to `[0, 255]`.
    pub heatmap: Image,
}

fn cosine(a: &[f64], p: usize, i: usize, j: usize) -> f64 {
    let (aij, aji) = (a[i * p + j], a[j * p + i]);
    let denom = a[i * p + i] * a[j * p + j];
    if denom <= 0.0 {
        return 0.0;
    }
    let mag = (aij * aji / denom).max(0.0).sqrt().min(1.0);
    if aij < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Groups pixels of `a` by class. `mask` must already match the pixel
/// grid of `a`; see [`downsample_mask`].
pub fn grouped_semrel(a: &ActivationMatrix, mask: &Image) -> Result<GroupedSemrel> {
    let (h, w) = a.grid();
    if mask.channels() != 1 || (mask.height(), mask.width()) != (h, w) {
        return Err(Error::ResolutionMismatch {
            layer: "class mask".into(),
            teacher: (h, w),
            student: (mask.height(), mask.width()),
        });
    }
    let p = h * w;
    let data = a.matrix().data();
    let labels = mask.pixels();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by_key(|&i| (labels[i], i));

    let mut matrix = vec![0.0; p * p];
    let mut heat = Vec::with_capacity(p * p);
    for (r, &i) in order.iter().enumerate() {
        for (c, &j) in order.iter().enumerate() {
            let v = data[i * p + j];
            matrix[r * p + c] = v;
            heat.push(((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8);
        }
    }

    let mut sums: BTreeMap<(u8, u8), (f64, usize)> = BTreeMap::new();
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let key = (labels[i].min(labels[j]), labels[i].max(labels[j]));
            let e = sums.entry(key).or_insert((0.0, 0));
            e.0 += cosine(data, p, i, j);
            e.1 += 1;
        }
    }
    let pair_means: BTreeMap<(u8, u8), f64> = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let mean_of = |same: bool| {
        let v: Vec<f64> = pair_means
            .iter()
            .filter(|((x, y), _)| (x == y) == same)
            .map(|(_, m)| *m)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let (within, cross) = (mean_of(true), mean_of(false));
    Ok(GroupedSemrel {
        classes: order.iter().map(|&i| labels[i]).collect(),
        order,
        matrix,
        report: BlockSimilarityReport {
            pair_means,
            within,
            cross,
            margin: within - cross,
        },
        heatmap: Image::new(p, p, 1, heat)?,
    })
}
