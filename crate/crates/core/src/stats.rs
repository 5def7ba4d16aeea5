//! Pitch/yaw histograms of label files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::LabelRecord;
use crate::error::{Error, Result};
use crate::geometry::Angles;

pub const DEFAULT_BIN_DEG: f64 = 5.0;

/// Bin index of an angle in degrees; bins are centered on multiples of the width.
pub fn bin_of(deg: f64, width: f64) -> i64 {
    (deg / width).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram2D {
    pub bin_deg: f64,
    /// `(pitch bin, yaw bin) -> count`.
    pub bins: BTreeMap<(i64, i64), usize>,
    pub total: usize,
    pub mean_deg: (f64, f64),
    pub min_deg: (f64, f64),
    pub max_deg: (f64, f64),
}

impl Histogram2D {
    pub fn from_angles(angles: impl IntoIterator<Item = Angles>, bin_deg: f64) -> Result<Self> {
        if !(bin_deg > 0.0) {
            return Err(Error::Config(format!("bin width must be positive, got {bin_deg}")));
        }
        let mut h = Self {
            bin_deg,
            bins: BTreeMap::new(),
            total: 0,
            mean_deg: (0.0, 0.0),
            min_deg: (f64::INFINITY, f64::INFINITY),
            max_deg: (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        let mut sum = (0.0, 0.0);
        for a in angles {
            let (p, y) = a.to_degrees();
            *h.bins.entry((bin_of(p, bin_deg), bin_of(y, bin_deg))).or_default() += 1;
            h.total += 1;
            sum.0 += p;
            sum.1 += y;
            h.min_deg = (h.min_deg.0.min(p), h.min_deg.1.min(y));
            h.max_deg = (h.max_deg.0.max(p), h.max_deg.1.max(y));
        }
        if h.total > 0 {
            h.mean_deg = (sum.0 / h.total as f64, sum.1 / h.total as f64);
        }
        Ok(h)
    }

    pub fn support(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.bins.keys().copied()
    }

    pub fn center_deg(&self, bin: (i64, i64)) -> (f64, f64) {
        (bin.0 as f64 * self.bin_deg, bin.1 as f64 * self.bin_deg)
    }

    /// Grid of counts, pitch rows from top to bottom, yaw columns left to right.
    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}: {} records, bin {} deg", self.total, self.bin_deg);
        if self.total == 0 {
            return s;
        }
        let _ = writeln!(
            s,
            "  pitch mean {:.2} range [{:.2}, {:.2}]; yaw mean {:.2} range [{:.2}, {:.2}]",
            self.mean_deg.0, self.min_deg.0, self.max_deg.0, self.mean_deg.1, self.min_deg.1, self.max_deg.1
        );
        let (p_lo, p_hi) = self.bins.keys().fold((i64::MAX, i64::MIN), |(a, b), k| (a.min(k.0), b.max(k.0)));
        let (y_lo, y_hi) = self.bins.keys().fold((i64::MAX, i64::MIN), |(a, b), k| (a.min(k.1), b.max(k.1)));
        let _ = write!(s, "  {:>7} |", "p \\ y");
        for y in y_lo..=y_hi {
            let _ = write!(s, "{:>6}", y as f64 * self.bin_deg);
        }
        s.push('\n');
        for p in p_lo..=p_hi {
            let _ = write!(s, "  {:>7} |", p as f64 * self.bin_deg);
            for y in y_lo..=y_hi {
                match self.bins.get(&(p, y)) {
                    Some(c) => {
                        let _ = write!(s, "{c:>6}");
                    }
                    None => s.push_str("     ."),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub records: usize,
    pub gaze: Histogram2D,
    pub head: Histogram2D,
}

impl StatsReport {
    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    pub fn to_text(&self) -> String {
        if self.is_empty() {
            return "no label records: empty report\n".into();
        }
        format!("{}\n{}", self.head.to_text("head pose"), self.gaze.to_text("gaze"))
    }

    /// `kind,pitch_deg,yaw_deg,count` with bin centers in degrees.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,pitch_deg,yaw_deg,count\n");
        for (kind, h) in [("head", &self.head), ("gaze", &self.gaze)] {
            for (&bin, &count) in &h.bins {
                let (p, y) = h.center_deg(bin);
                let _ = writeln!(s, "{kind},{p},{y},{count}");
            }
        }
        s
    }
}

pub fn run_stats(labels: &[LabelRecord], bin_deg: f64) -> Result<StatsReport> {
    Ok(StatsReport {
        records: labels.len(),
        gaze: Histogram2D::from_angles(labels.iter().map(LabelRecord::gaze), bin_deg)?,
        head: Histogram2D::from_angles(labels.iter().map(LabelRecord::head), bin_deg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(g: (f64, f64), h: (f64, f64)) -> LabelRecord {
        let g = Angles::from_degrees(g.0, g.1);
        let h = Angles::from_degrees(h.0, h.1);
        LabelRecord {
            file: "a.png".into(),
            gaze_pitch: g.pitch,
            gaze_yaw: g.yaw,
            head_pitch: h.pitch,
            head_yaw: h.yaw,
            bg_kind: "black".into(),
            ambient: 1.0,
            source_sample_id: "a".into(),
            pose_index: 0,
            seed_trace: String::new(),
        }
    }

    #[test]
    fn frontal_labels_fill_one_bin() {
        let labels = vec![label((0.0, 0.0), (0.0, 0.0)); 7];
        let r = run_stats(&labels, 5.0).unwrap();
        assert_eq!(r.head.bins.len(), 1);
        assert_eq!(r.head.bins[&(0, 0)], 7);
        assert_eq!(r.gaze.total, 7);
        assert!(r.to_text().contains("7 records"));
        assert_eq!(r.to_csv().lines().count(), 3);
    }

    #[test]
    fn totals_and_bins() {
        let labels = vec![label((1.0, 2.4), (12.0, -7.0)), label((-3.0, 30.0), (7.4, -12.6)), label((0.0, 0.0), (0.0, 0.0))];
        let r = run_stats(&labels, 5.0).unwrap();
        assert_eq!(r.head.bins.values().sum::<usize>(), 3);
        assert_eq!(r.gaze.bins.values().sum::<usize>(), 3);
        assert!(r.head.bins.contains_key(&(2, -1)) && r.head.bins.contains_key(&(1, -3)));
        assert!((r.head.max_deg.0 - 12.0).abs() < 1e-9);
    }

    #[test]
    fn empty_report() {
        let r = run_stats(&[], 5.0).unwrap();
        assert!(r.is_empty());
        assert!(r.to_text().contains("empty"));
        assert!(run_stats(&[], 0.0).is_err());
    }
}
