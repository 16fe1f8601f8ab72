//! Label binning and positive/negative pair sets for a batch.
//!
//! Two samples are a positive pair when their labels fall in the same bin;
//! every other ordered pair is negative. Anchors are never their own
//! positive. Anchors whose bin holds no other sample simply have an empty
//! positive set; the losses skip them.

use crate::geometry::{GeometryError, LabelRange};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairingError {
    #[error("bin count must be >= 1")]
    ZeroBins,
    #[error("bin width must be finite and > 0, got {width}")]
    BadWidth { width: f64 },
    #[error("batch has no labels")]
    EmptyBatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinMode {
    /// Fixed number of equal-width bins across the range.
    Count(usize),
    /// Fixed bin width in label units; the last bin may be narrower.
    Width(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinConfig {
    range: LabelRange,
    mode: BinMode,
}

impl BinConfig {
    pub fn new(range: LabelRange, mode: BinMode) -> Result<Self, PairingError> {
        match mode {
            BinMode::Count(0) => return Err(PairingError::ZeroBins),
            BinMode::Width(w) if !(w.is_finite() && w > 0.0) => {
                return Err(PairingError::BadWidth { width: w })
            }
            _ => {}
        }
        Ok(Self { range, mode })
    }

    /// Unit-width bins, the default same-bin notion for contrastive pairs.
    pub fn unit_width(range: LabelRange) -> Self {
        Self {
            range,
            mode: BinMode::Width(1.0),
        }
    }

    pub fn range(&self) -> &LabelRange {
        &self.range
    }

    pub fn n_bins(&self) -> usize {
        match self.mode {
            BinMode::Count(m) => m,
            BinMode::Width(w) => (self.range.span() / w).ceil().max(1.0) as usize,
        }
    }

    /// Bin of a label; y_max lands in the last bin rather than one past it.
    pub fn bin_index(&self, y: f64) -> Result<usize, PairingError> {
        if !self.range.contains(y) {
            return Err(GeometryError::LabelOutOfRange {
                label: y,
                y_min: self.range.y_min(),
                y_max: self.range.y_max(),
            }
            .into());
        }
        let m = self.n_bins();
        let raw = match self.mode {
            BinMode::Count(m) => ((y - self.range.y_min()) / self.range.span()) * m as f64,
            BinMode::Width(w) => (y - self.range.y_min()) / w,
        };
        Ok((raw.floor() as usize).min(m - 1))
    }

    /// Inclusive-exclusive edges of bin `idx` (last bin closes at y_max).
    pub fn bin_edges(&self, idx: usize) -> (f64, f64) {
        let width = match self.mode {
            BinMode::Count(m) => self.range.span() / m as f64,
            BinMode::Width(w) => w,
        };
        let lo = self.range.y_min() + idx as f64 * width;
        let hi = (lo + width).min(self.range.y_max());
        (lo, hi)
    }
}

/// Per-anchor positive and negative index sets over one batch.
/// For every anchor i, positives[i], negatives[i], and {i} partition the
/// batch indices; both lists are ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSets {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl PairSets {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

pub fn build_pair_sets(labels: &[f64], bin: &BinConfig) -> Result<PairSets, PairingError> {
    if labels.is_empty() {
        return Err(PairingError::EmptyBatch);
    }
    let bins: Vec<usize> = labels
        .iter()
        .map(|&y| bin.bin_index(y))
        .collect::<Result<_, _>>()?;
    let n = labels.len();
    let mut positives = vec![Vec::new(); n];
    let mut negatives = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            if bins[j] == bins[i] {
                positives[i].push(j);
            } else {
                negatives[i].push(j);
            }
        }
    }
    Ok(PairSets {
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn range(lo: f64, hi: f64) -> LabelRange {
        LabelRange::new(lo, hi).unwrap()
    }

    fn count_bins(m: usize) -> BinConfig {
        BinConfig::new(range(0.0, 100.0), BinMode::Count(m)).unwrap()
    }

    #[test]
    fn count_mode_bin_indices() {
        let cfg = count_bins(100);
        assert_eq!(cfg.bin_index(21.7).unwrap(), 21);
        assert_eq!(cfg.bin_index(0.0).unwrap(), 0);
        // y_max maps to the last bin, not one past it.
        assert_eq!(cfg.bin_index(100.0).unwrap(), 99);
        assert_eq!(cfg.n_bins(), 100);
    }

    #[test]
    fn width_mode_bin_indices() {
        let cfg = BinConfig::new(range(0.0, 100.0), BinMode::Width(30.0)).unwrap();
        assert_eq!(cfg.n_bins(), 4);
        assert_eq!(cfg.bin_index(29.9).unwrap(), 0);
        assert_eq!(cfg.bin_index(95.0).unwrap(), 3);
        assert_eq!(cfg.bin_index(100.0).unwrap(), 3);
        // Last bin is narrower: [90, 100].
        assert_eq!(cfg.bin_edges(3), (90.0, 100.0));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert_eq!(
            BinConfig::new(range(0.0, 1.0), BinMode::Count(0)).unwrap_err(),
            PairingError::ZeroBins
        );
        assert!(matches!(
            BinConfig::new(range(0.0, 1.0), BinMode::Width(0.0)),
            Err(PairingError::BadWidth { .. })
        ));
        assert!(BinConfig::new(range(0.0, 1.0), BinMode::Width(f64::NAN)).is_err());
    }

    #[test]
    fn out_of_range_label_is_error() {
        let cfg = count_bins(10);
        assert!(matches!(
            cfg.bin_index(100.1),
            Err(PairingError::Geometry(_))
        ));
        let err = build_pair_sets(&[5.0, -0.1], &cfg).unwrap_err();
        assert!(matches!(err, PairingError::Geometry(_)));
    }

    #[test]
    fn two_groups_pair_up() {
        let cfg = BinConfig::unit_width(range(0.0, 100.0));
        let pairs = build_pair_sets(&[10.0, 10.0, 20.0, 20.0], &cfg).unwrap();
        assert_eq!(pairs.positives, vec![vec![1], vec![0], vec![3], vec![2]]);
        assert_eq!(pairs.negatives[0], vec![2, 3]);
        assert_eq!(pairs.negatives[3], vec![0, 1]);
    }

    #[test]
    fn single_bin_batch_has_no_negatives() {
        let cfg = BinConfig::unit_width(range(0.0, 100.0));
        let pairs = build_pair_sets(&[50.0, 50.2, 50.4], &cfg).unwrap();
        for i in 0..3 {
            assert_eq!(pairs.positives[i].len(), 2);
            assert!(pairs.negatives[i].is_empty());
        }
    }

    #[test]
    fn all_distinct_bins_have_empty_positives() {
        let cfg = BinConfig::unit_width(range(0.0, 100.0));
        let pairs = build_pair_sets(&[1.0, 10.0, 20.0, 30.0], &cfg).unwrap();
        for i in 0..4 {
            assert!(pairs.positives[i].is_empty());
            assert_eq!(pairs.negatives[i].len(), 3);
        }
    }

    #[test]
    fn empty_batch_is_error() {
        let cfg = count_bins(10);
        assert_eq!(build_pair_sets(&[], &cfg), Err(PairingError::EmptyBatch));
    }

    #[test]
    fn matches_bucket_grouping_oracle() {
        // Independent construction: group indices by bin, then read P/N
        // memberships straight off the groups.
        let labels = [3.2, 87.1, 3.9, 45.0, 45.9, 87.2, 12.0, 3.5, 99.9, 45.1, 0.0, 61.7];
        let cfg = count_bins(100);
        let pairs = build_pair_sets(&labels, &cfg).unwrap();

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in labels.iter().enumerate() {
            groups.entry(cfg.bin_index(y).unwrap()).or_default().push(i);
        }
        for (i, &y) in labels.iter().enumerate() {
            let mine = cfg.bin_index(y).unwrap();
            let pos: Vec<usize> = groups[&mine].iter().copied().filter(|&j| j != i).collect();
            let neg: Vec<usize> = (0..labels.len())
                .filter(|&j| j != i && !groups[&mine].contains(&j))
                .collect();
            assert_eq!(pairs.positives[i], pos, "anchor {i}");
            assert_eq!(pairs.negatives[i], neg, "anchor {i}");
        }
    }

    proptest! {
        #[test]
        fn partition_and_symmetry(
            labels in proptest::collection::vec(0.0f64..100.0, 1..24),
            m in 1usize..40,
        ) {
            let cfg = count_bins(m);
            let pairs = build_pair_sets(&labels, &cfg).unwrap();
            let n = labels.len();
            for i in 0..n {
                // Partition: P(i), N(i), {i} cover 0..n exactly once.
                let mut seen = vec![0u8; n];
                seen[i] += 1;
                for &j in &pairs.positives[i] {
                    seen[j] += 1;
                }
                for &j in &pairs.negatives[i] {
                    seen[j] += 1;
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
                // Symmetry of both relations.
                for &j in &pairs.positives[i] {
                    prop_assert!(pairs.positives[j].contains(&i));
                }
                for &j in &pairs.negatives[i] {
                    prop_assert!(pairs.negatives[j].contains(&i));
                }
            }
        }

        #[test]
        fn two_view_duplication_gives_everyone_a_positive(
            labels in proptest::collection::vec(0.0f64..100.0, 1..12),
        ) {
            let mut doubled = labels.clone();
            doubled.extend_from_slice(&labels);
            let cfg = BinConfig::unit_width(range(0.0, 100.0));
            let pairs = build_pair_sets(&doubled, &cfg).unwrap();
            for p in &pairs.positives {
                prop_assert!(!p.is_empty());
            }
        }
    }
}
