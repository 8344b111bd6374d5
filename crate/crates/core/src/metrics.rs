//! Pixel-wise and defect-wise evaluation.
//!
//! Everything is computed from integer counts, so per-image results can be
//! summed in any order before the ratios are taken.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AnnotationMask, BinaryMask, Grid, InstanceMask, SampleImage};
use crate::synth::classes;

/// Coverage thresholds, in percent, of the detection sweep.
pub const SWEEP_THRESHOLDS: [f64; 12] = [
    0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 15.0, 20.0, 25.0, 50.0, 75.0, 100.0,
];

fn check_dims<A, B>(a: &Grid<A>, b: &Grid<B>) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl PixelCounts {
    pub fn count(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        check_dims(pred, gt)?;
        let mut c = Self::default();
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Precision is 0 without predictions and recall 0 without ground
    /// truth, except that an empty prediction of an empty target is perfect.
    pub fn prf(&self) -> Prf {
        let predicted = self.tp + self.fp;
        let actual = self.tp + self.fn_;
        if predicted == 0 && actual == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(self.tp, predicted);
        let recall = ratio(self.tp, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

pub fn pixel_prf(pred: &BinaryMask, gt: &BinaryMask) -> Result<Prf> {
    Ok(PixelCounts::count(pred, gt)?.prf())
}

/// Covered and total pixel counts per class id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCoverage(pub BTreeMap<u8, (u64, u64)>);

impl ClassCoverage {
    pub fn count(pred: &BinaryMask, classes: &AnnotationMask) -> Result<Self> {
        check_dims(pred, classes)?;
        let mut m: BTreeMap<u8, (u64, u64)> = BTreeMap::new();
        for (&p, &c) in pred.as_slice().iter().zip(classes.as_slice()) {
            let e = m.entry(c).or_default();
            e.0 += p as u64;
            e.1 += 1;
        }
        Ok(Self(m))
    }

    pub fn add(&mut self, other: &Self) {
        for (&c, &(cov, tot)) in &other.0 {
            let e = self.0.entry(c).or_default();
            e.0 += cov;
            e.1 += tot;
        }
    }

    pub fn recall(&self) -> BTreeMap<u8, f64> {
        self.0
            .iter()
            .map(|(&c, &(cov, tot))| (c, cov as f64 / tot as f64))
            .collect()
    }
}

/// Fraction of each present class's pixels covered by `pred`. Classes with
/// no pixels are absent from the result.
pub fn per_class_recall(pred: &BinaryMask, classes: &AnnotationMask) -> Result<BTreeMap<u8, f64>> {
    Ok(ClassCoverage::count(pred, classes)?.recall())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: u16,
    pub class: u8,
    /// Row-major pixel indices.
    pub pixels: Vec<usize>,
}

/// Labelled instances of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    pub width: usize,
    pub height: usize,
    pub instances: Vec<Instance>,
}

impl InstanceSet {
    /// Groups pixels by instance id (0 is unlabelled); each instance takes
    /// the most frequent class under it, lowest class id on ties.
    pub fn from_masks(classes: &AnnotationMask, ids: &InstanceMask) -> Result<Self> {
        check_dims(classes, ids)?;
        let mut groups: BTreeMap<u16, (Vec<usize>, [u64; 256])> = BTreeMap::new();
        for (i, (&id, &c)) in ids.as_slice().iter().zip(classes.as_slice()).enumerate() {
            if id == 0 {
                continue;
            }
            let g = groups.entry(id).or_insert_with(|| (Vec::new(), [0; 256]));
            g.0.push(i);
            g.1[c as usize] += 1;
        }
        let instances = groups
            .into_iter()
            .map(|(id, (pixels, hist))| {
                let class = (0..256)
                    .max_by_key(|&c| (hist[c], std::cmp::Reverse(c)))
                    .expect("non-empty range") as u8;
                Instance { id, class, pixels }
            })
            .collect();
        Ok(Self {
            width: classes.width(),
            height: classes.height(),
            instances,
        })
    }
}

/// `(class, covered pixels, instance pixels)` for every instance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCoverage(pub Vec<(u8, u64, u64)>);

impl InstanceCoverage {
    pub fn count(pred: &BinaryMask, instances: &InstanceSet) -> Result<Self> {
        if pred.dims() != (instances.width, instances.height) {
            return Err(Error::Dimension {
                expected: instances.width * instances.height,
                found: pred.len(),
            });
        }
        let p = pred.as_slice();
        Ok(Self(
            instances
                .instances
                .iter()
                .map(|inst| {
                    let covered = inst.pixels.iter().filter(|&&i| p[i]).count() as u64;
                    (inst.class, covered, inst.pixels.len() as u64)
                })
                .collect(),
        ))
    }

    pub fn add(&mut self, other: &Self) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn recall(&self, threshold: f64) -> Result<DefectwiseRecall> {
        check_threshold(threshold)?;
        let mut counts: BTreeMap<u8, (u64, u64)> = BTreeMap::new();
        for &(class, covered, total) in &self.0 {
            let e = counts.entry(class).or_default();
            e.0 += is_detected(covered, total, threshold) as u64;
            e.1 += 1;
        }
        let per_class: BTreeMap<u8, f64> = counts
            .iter()
            .map(|(&c, &(d, n))| (c, d as f64 / n as f64))
            .collect();
        let defect: Vec<f64> = classes::DEFECTS
            .iter()
            .filter_map(|c| per_class.get(c).copied())
            .collect();
        let mean_defect =
            (!defect.is_empty()).then(|| defect.iter().sum::<f64>() / defect.len() as f64);
        Ok(DefectwiseRecall {
            per_class,
            mean_defect,
        })
    }

    pub fn sweep(&self) -> CoverageSweep {
        let rows = SWEEP_THRESHOLDS
            .iter()
            .map(|&t| self.recall(t).expect("sweep thresholds are valid"))
            .collect();
        CoverageSweep {
            thresholds: SWEEP_THRESHOLDS.to_vec(),
            rows,
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=100.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "coverage threshold {t} outside [0, 100]"
        )))
    }
}

/// Detection rule: more than `threshold` percent of the instance covered;
/// at 100 the instance must be covered completely.
pub fn is_detected(covered: u64, total: u64, threshold: f64) -> bool {
    if threshold >= 100.0 {
        covered == total
    } else {
        covered as f64 * 100.0 > threshold * total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectwiseRecall {
    /// Detected fraction per class with at least one instance.
    pub per_class: BTreeMap<u8, f64>,
    /// Mean over the defect classes present; impurities are excluded.
    pub mean_defect: Option<f64>,
}

pub fn defectwise_recall(
    pred: &BinaryMask,
    instances: &InstanceSet,
    threshold: f64,
) -> Result<DefectwiseRecall> {
    check_threshold(threshold)?;
    InstanceCoverage::count(pred, instances)?.recall(threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSweep {
    pub thresholds: Vec<f64>,
    pub rows: Vec<DefectwiseRecall>,
}

pub fn coverage_sweep(pred: &BinaryMask, instances: &InstanceSet) -> Result<CoverageSweep> {
    Ok(InstanceCoverage::count(pred, instances)?.sweep())
}

/// Running totals over any number of evaluated images.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalAccumulator {
    pub images: usize,
    pub pixels: PixelCounts,
    pub classes: ClassCoverage,
    pub instances: InstanceCoverage,
}

impl EvalAccumulator {
    /// Adds one image. Pixel ground truth is the union of defect classes.
    pub fn add_image(
        &mut self,
        pred: &BinaryMask,
        classes: &AnnotationMask,
        ids: &InstanceMask,
    ) -> Result<()> {
        let gt = defect_mask(classes);
        let pixels = PixelCounts::count(pred, &gt)?;
        let cov = ClassCoverage::count(pred, classes)?;
        let inst = InstanceCoverage::count(pred, &InstanceSet::from_masks(classes, ids)?)?;
        self.images += 1;
        self.pixels.add(&pixels);
        self.classes.add(&cov);
        self.instances.add(&inst);
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.images += other.images;
        self.pixels.add(&other.pixels);
        self.classes.add(&other.classes);
        self.instances.add(&other.instances);
    }

    pub fn report(&self) -> MetricsReport {
        let prf = self.pixels.prf();
        let named = |m: &BTreeMap<u8, f64>| -> BTreeMap<String, f64> {
            m.iter()
                .map(|(&c, &v)| (classes::name(c).to_string(), v))
                .collect()
        };
        let sweep = self.instances.sweep();
        let dw = &sweep.rows[0];
        MetricsReport {
            images: self.images,
            p_px: prf.precision,
            r_px: prf.recall,
            f1_px: prf.f1,
            class_r_px: named(&self.classes.recall()),
            class_r_dw: named(&dw.per_class),
            mr_dw: dw.mean_defect,
            sweep: SWEEP_THRESHOLDS
                .iter()
                .zip(&sweep.rows)
                .map(|(&t, row)| SweepRow {
                    threshold: t,
                    class_r_dw: named(&row.per_class),
                    mr_dw: row.mean_defect,
                })
                .collect(),
        }
    }
}

/// Pixels belonging to any defect class.
pub fn defect_mask(classes: &AnnotationMask) -> BinaryMask {
    classes.map(|&c| classes::is_defect(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub class_r_dw: BTreeMap<String, f64>,
    pub mr_dw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub p_px: f64,
    pub r_px: f64,
    pub f1_px: f64,
    pub class_r_px: BTreeMap<String, f64>,
    pub class_r_dw: BTreeMap<String, f64>,
    pub mr_dw: Option<f64>,
    pub sweep: Vec<SweepRow>,
}

impl MetricsReport {
    /// Long-format CSV: `section,class,threshold,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,class,threshold,value\n");
        for (name, v) in [
            ("p_px", self.p_px),
            ("r_px", self.r_px),
            ("f1_px", self.f1_px),
        ] {
            let _ = writeln!(s, "{name},all,,{v}");
        }
        for (c, v) in &self.class_r_px {
            let _ = writeln!(s, "r_px,{c},,{v}");
        }
        for row in &self.sweep {
            for (c, v) in &row.class_r_dw {
                let _ = writeln!(s, "r_dw,{c},{},{v}", row.threshold);
            }
            if let Some(m) = row.mr_dw {
                let _ = writeln!(s, "mr_dw,defects,{},{m}", row.threshold);
            }
        }
        s
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        crate::write_json(json_path, self)?;
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))
    }
}

/// Color overlay: true positives green, false positives red, false
/// negatives blue, everything else the dimmed image.
pub fn overlay(
    image: Option<&SampleImage>,
    pred: &BinaryMask,
    gt: &BinaryMask,
) -> Result<Grid<[u8; 3]>> {
    check_dims(pred, gt)?;
    if let Some(img) = image {
        check_dims(img, gt)?;
    }
    Ok(Grid::from_fn(gt.width(), gt.height(), |x, y| {
        match (*pred.get(x, y), *gt.get(x, y)) {
            (true, true) => [0, 255, 0],
            (true, false) => [255, 0, 0],
            (false, true) => [0, 0, 255],
            (false, false) => {
                let v = image.map_or(0, |i| crate::pngio::quantize(*i.get(x, y) * 0.6));
                [v, v, v]
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use classes::{BUMP, DENT, SCRATCH, WATER_STAIN};

    fn mask(w: usize, h: usize, on: &[usize]) -> BinaryMask {
        let mut m = Grid::filled(w, h, false);
        for &i in on {
            m.as_mut_slice()[i] = true;
        }
        m
    }

    #[test]
    fn prf_examples() {
        let gt = mask(2, 2, &[0, 1]);
        let p = pixel_prf(&mask(2, 2, &[1, 2]), &gt).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        let p = pixel_prf(&gt, &gt).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = pixel_prf(&mask(2, 2, &[]), &gt).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = pixel_prf(&mask(2, 2, &[]), &mask(2, 2, &[])).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = pixel_prf(&mask(2, 2, &[3]), &mask(2, 2, &[])).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(pixel_prf(&mask(2, 2, &[]), &mask(1, 2, &[])).is_err());
    }

    #[test]
    fn class_recall_examples() {
        let classes = Grid::from_fn(5, 4, |x, y| {
            if y < 2 {
                SCRATCH
            } else if x == 0 {
                0
            } else {
                WATER_STAIN
            }
        });
        // 10 scratch pixels, 3 covered
        let r = per_class_recall(&mask(5, 4, &[0, 1, 7, 12, 13]), &classes).unwrap();
        assert_eq!(r[&SCRATCH], 0.3);
        assert_eq!(r[&WATER_STAIN], 2.0 / 8.0);
        assert_eq!(r[&0], 0.0);
        assert!(!r.contains_key(&BUMP));
        let empty = per_class_recall(&mask(5, 4, &[]), &classes).unwrap();
        assert!(empty.values().all(|&v| v == 0.0));
        assert_eq!(empty.len(), 3);
    }

    fn three_scratches() -> (AnnotationMask, InstanceMask) {
        let classes = Grid::from_fn(10, 1, |x, _| if x % 3 == 2 { 0 } else { SCRATCH });
        let ids = Grid::from_fn(
            10,
            1,
            |x, _| if x % 3 == 2 { 0 } else { (x / 3 + 1) as u16 },
        );
        (classes, ids)
    }

    #[test]
    fn defectwise_examples() {
        let (classes, ids) = three_scratches();
        let set = InstanceSet::from_masks(&classes, &ids).unwrap();
        assert_eq!(set.instances.len(), 4);
        let r = defectwise_recall(&mask(10, 1, &[0, 4]), &set, 0.0).unwrap();
        // instances {0,1}, {3,4}, {6,7}, {9}
        assert_eq!(r.per_class[&SCRATCH], 0.5);
        assert_eq!(r.mean_defect, Some(0.5));
        let r = defectwise_recall(&mask(10, 1, &[0, 1, 3]), &set, 50.0).unwrap();
        assert_eq!(r.per_class[&SCRATCH], 0.25);
        let r = defectwise_recall(&mask(10, 1, &[0, 1, 3]), &set, 100.0).unwrap();
        assert_eq!(r.per_class[&SCRATCH], 0.25);
        assert!(defectwise_recall(&mask(10, 1, &[]), &set, 101.0).is_err());
    }

    #[test]
    fn detection_boundaries() {
        assert!(!is_detected(0, 5, 0.0));
        assert!(is_detected(1, 1000, 0.0));
        assert!(!is_detected(3, 10, 50.0));
        assert!(!is_detected(5, 10, 50.0));
        assert!(is_detected(6, 10, 50.0));
        assert!(is_detected(10, 10, 100.0));
        assert!(!is_detected(9, 10, 100.0));
    }

    #[test]
    fn mean_ignores_impurities() {
        let classes = Grid::from_vec(4, 1, vec![DENT, DENT, WATER_STAIN, WATER_STAIN]).unwrap();
        let ids = Grid::from_vec(4, 1, vec![1u16, 1, 2, 2]).unwrap();
        let set = InstanceSet::from_masks(&classes, &ids).unwrap();
        let r = defectwise_recall(&mask(4, 1, &[2]), &set, 0.0).unwrap();
        assert_eq!(r.per_class[&WATER_STAIN], 1.0);
        assert_eq!(r.per_class[&DENT], 0.0);
        assert_eq!(r.mean_defect, Some(0.0));
    }

    #[test]
    fn majority_class_wins() {
        let classes = Grid::from_vec(3, 1, vec![BUMP, SCRATCH, SCRATCH]).unwrap();
        let ids = Grid::from_vec(3, 1, vec![4u16, 4, 4]).unwrap();
        let set = InstanceSet::from_masks(&classes, &ids).unwrap();
        assert_eq!(set.instances[0].class, SCRATCH);
    }

    #[test]
    fn accumulated_report() {
        let (classes, ids) = three_scratches();
        let mut acc = EvalAccumulator::default();
        acc.add_image(&defect_mask(&classes), &classes, &ids)
            .unwrap();
        acc.add_image(&mask(10, 1, &[]), &classes, &ids).unwrap();
        let r = acc.report();
        assert_eq!(r.images, 2);
        assert_eq!((r.p_px, r.r_px), (1.0, 0.5));
        assert_eq!(r.mr_dw, Some(0.5));
        assert_eq!(r.sweep.len(), 12);
        assert_eq!(r.sweep[11].mr_dw, Some(0.5));
        let csv = r.to_csv();
        assert!(csv.contains("mr_dw,defects,100,0.5"));
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn overlay_colors() {
        let o = overlay(None, &mask(4, 1, &[0, 1]), &mask(4, 1, &[1, 2])).unwrap();
        assert_eq!(
            o.as_slice(),
            &[[255, 0, 0], [0, 255, 0], [0, 0, 255], [0, 0, 0]]
        );
    }
}
