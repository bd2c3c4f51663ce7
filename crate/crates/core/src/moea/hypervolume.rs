//! Exact hypervolume by recursive slicing along the last objective.
//!
//! For `d <= 3` this is `O(n^d log n)` which is plenty for population-sized
//! point sets.

use serde::{Deserialize, Serialize};

use super::{dominates_slices, ObjectiveVector, NUM_OBJECTIVES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypervolume {
    pub value: f64,
    /// Points ignored because they do not strictly dominate the reference.
    pub skipped: usize,
}

/// Hypervolume of arbitrary-dimension points against `reference`.
pub fn hypervolume_points(points: &[Vec<f64>], reference: &[f64]) -> Hypervolume {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    let mut skipped = 0;
    for p in points {
        assert_eq!(p.len(), reference.len(), "point dimension mismatch");
        if p.iter().zip(reference).all(|(x, r)| x < r) {
            kept.push(p.clone());
        } else {
            skipped += 1;
        }
    }
    Hypervolume {
        value: slice_volume(kept, reference),
        skipped,
    }
}

pub fn hypervolume(points: &[ObjectiveVector], reference: &ObjectiveVector) -> Hypervolume {
    let pts: Vec<Vec<f64>> = points.iter().map(|p| p.to_array().to_vec()).collect();
    hypervolume_points(&pts, &reference.to_array())
}

fn nondominated(mut pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let keep: Vec<bool> = pts
        .iter()
        .map(|p| !pts.iter().any(|q| dominates_slices(q, p)))
        .collect();
    pts.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect()
}

fn slice_volume(pts: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    if pts.is_empty() {
        return 0.0;
    }
    let d = reference.len();
    if d == 1 {
        let best = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return reference[0] - best;
    }
    let mut pts = nondominated(pts);
    if d == 2 {
        pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let mut vol = 0.0;
        let mut y_bound = reference[1];
        for p in &pts {
            if p[1] < y_bound {
                vol += (reference[0] - p[0]) * (y_bound - p[1]);
                y_bound = p[1];
            }
        }
        return vol;
    }
    // sweep the last coordinate; each slab contributes a (d-1)-volume
    let last = d - 1;
    pts.sort_by(|a, b| a[last].partial_cmp(&b[last]).unwrap());
    let sub_ref = &reference[..last];
    let mut vol = 0.0;
    for i in 0..pts.len() {
        let upper = if i + 1 < pts.len() { pts[i + 1][last] } else { reference[last] };
        let height = upper - pts[i][last];
        if height <= 0.0 {
            continue;
        }
        let slab: Vec<Vec<f64>> = pts[..=i].iter().map(|p| p[..last].to_vec()).collect();
        vol += height * slice_volume(slab, sub_ref);
    }
    vol
}

/// Fixed reference point and normalising volume for a run.
///
/// The reference is the componentwise maximum of the first generation's
/// objectives scaled by `margin`; the normaliser is the volume of the box
/// between that generation's ideal point and the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypervolumeReference {
    pub reference: ObjectiveVector,
    pub ideal: ObjectiveVector,
    pub margin: f64,
}

impl HypervolumeReference {
    pub fn from_generation(rows: &[ObjectiveVector], margin: f64) -> Self {
        let mut hi = [f64::NEG_INFINITY; NUM_OBJECTIVES];
        let mut lo = [f64::INFINITY; NUM_OBJECTIVES];
        for r in rows {
            for (k, v) in r.to_array().iter().enumerate() {
                hi[k] = hi[k].max(*v);
                lo[k] = lo[k].min(*v);
            }
        }
        Self {
            reference: ObjectiveVector::from_array(hi.map(|v| v * margin)),
            ideal: ObjectiveVector::from_array(lo),
            margin,
        }
    }

    pub fn normalizer(&self) -> f64 {
        self.reference
            .to_array()
            .iter()
            .zip(self.ideal.to_array())
            .map(|(r, i)| r - i)
            .product()
    }

    pub fn normalized(&self, points: &[ObjectiveVector]) -> Hypervolume {
        let hv = hypervolume(points, &self.reference);
        Hypervolume {
            value: hv.value / self.normalizer(),
            skipped: hv.skipped,
        }
    }
}
