//! Threshold sweep, equal error rate, DET curve and threshold calibration.
//!
//! The decision rule everywhere is *same speaker iff `score > threshold`*:
//! a score equal to the threshold is rejected.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fmt::sig_digits;
use crate::scoring::Scored;

/// Rates at one candidate threshold. Counts are kept alongside the ratios so
/// callers can compare operating points exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
    /// Positives with `score > threshold`.
    pub true_accepts: u64,
    /// Negatives with `score <= threshold`.
    pub true_rejects: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub tpr_at: f64,
    pub tnr_at: f64,
    pub interpolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    /// Ordered by increasing threshold: fpr falls, fnr rises.
    pub points: Vec<DetPoint>,
}

struct Sweep {
    positives: u64,
    negatives: u64,
    points: Vec<SweepPoint>,
}

impl Sweep {
    fn build<S: Scored>(scored: &[S]) -> Result<Sweep> {
        let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(scored.len());
        for s in scored {
            let v = s.score();
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite score {v}")));
            }
            pairs.push((v, s.is_same()));
        }
        let positives = pairs.iter().filter(|p| p.1).count() as u64;
        let negatives = pairs.len() as u64 - positives;
        if positives == 0 || negatives == 0 {
            return Err(Error::UndefinedMetric(format!(
                "need both classes, got {positives} same-speaker and {negatives} different-speaker pairs"
            )));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let point = |threshold: f64, tp: u64, tn: u64| SweepPoint {
            threshold,
            tpr: tp as f64 / positives as f64,
            tnr: tn as f64 / negatives as f64,
            fpr: (negatives - tn) as f64 / negatives as f64,
            fnr: (positives - tp) as f64 / positives as f64,
            true_accepts: tp,
            true_rejects: tn,
        };

        let min = pairs[0].0;
        let max = pairs[pairs.len() - 1].0;
        let mut points = Vec::with_capacity(pairs.len() + 2);
        points.push(point(min - min.abs().max(1.0), positives, 0));
        let (mut pos_le, mut neg_le) = (0u64, 0u64);
        let mut i = 0;
        while i < pairs.len() {
            let v = pairs[i].0;
            while i < pairs.len() && pairs[i].0 == v {
                if pairs[i].1 {
                    pos_le += 1;
                } else {
                    neg_le += 1;
                }
                i += 1;
            }
            points.push(point(v, positives - pos_le, neg_le));
        }
        points.push(point(max + max.abs().max(1.0), 0, negatives));
        Ok(Sweep {
            positives,
            negatives,
            points,
        })
    }

    /// `(fpr − fnr) · P · N` as an exact integer.
    fn gap(&self, p: &SweepPoint) -> i128 {
        let false_accepts = (self.negatives - p.true_rejects) as i128;
        let false_rejects = (self.positives - p.true_accepts) as i128;
        false_accepts * self.positives as i128 - false_rejects * self.negatives as i128
    }

    fn eer(&self) -> EerResult {
        let pts = &self.points;
        // gap(points[0]) = P·N > 0 and the last point's gap is −P·N < 0.
        let k = (1..pts.len())
            .find(|&k| self.gap(&pts[k]) <= 0)
            .expect("sweep ends with a negative gap");
        let cur = &pts[k];
        if self.gap(cur) == 0 {
            // Rates hold on [v_k, v_{k+1}); report the middle of that plateau.
            let next = pts[k + 1].threshold;
            return EerResult {
                eer: cur.fpr,
                threshold: cur.threshold + (next - cur.threshold) / 2.0,
                tpr_at: cur.tpr,
                tnr_at: cur.tnr,
                interpolated: false,
            };
        }
        let prev = &pts[k - 1];
        let (g0, g1) = (self.gap(prev) as f64, self.gap(cur) as f64);
        let alpha = g0 / (g0 - g1);
        let fpr = prev.fpr + alpha * (cur.fpr - prev.fpr);
        let fnr = prev.fnr + alpha * (cur.fnr - prev.fnr);
        EerResult {
            eer: fpr,
            threshold: prev.threshold + alpha * (cur.threshold - prev.threshold),
            tpr_at: 1.0 - fnr,
            tnr_at: 1.0 - fpr,
            interpolated: true,
        }
    }

    /// Indices of the sweep points bracketing the EER crossing.
    fn eer_neighbours(&self) -> Vec<usize> {
        let k = (1..self.points.len())
            .find(|&k| self.gap(&self.points[k]) <= 0)
            .unwrap();
        if self.gap(&self.points[k]) == 0 {
            vec![k]
        } else {
            vec![k - 1, k]
        }
    }
}

/// One point per distinct score plus a sentinel below the minimum and one above the maximum.
pub fn sweep<S: Scored>(scored: &[S]) -> Result<Vec<SweepPoint>> {
    Ok(Sweep::build(scored)?.points)
}

/// Equal error rate, linearly interpolated between the sweep points where
/// `fpr − fnr` changes sign.
pub fn eer<S: Scored>(scored: &[S]) -> Result<EerResult> {
    Ok(Sweep::build(scored)?.eer())
}

/// DET staircase downsampled to at most `max_points`, always keeping both
/// endpoints and the points around the EER crossing.
pub fn det_curve<S: Scored>(scored: &[S], max_points: usize) -> Result<DetCurve> {
    if max_points < 4 {
        return Err(Error::InvalidArgument(format!(
            "max_points must be at least 4, got {max_points}"
        )));
    }
    let sweep = Sweep::build(scored)?;
    let eer_idx = sweep.eer_neighbours();
    // Collapse runs of identical (fpr, fnr), keeping the first threshold of each.
    let mut full: Vec<(usize, &SweepPoint)> = Vec::new();
    for (i, p) in sweep.points.iter().enumerate() {
        if let Some((_, last)) = full.last() {
            if last.true_accepts == p.true_accepts && last.true_rejects == p.true_rejects {
                continue;
            }
        }
        full.push((i, p));
    }
    let n = full.len();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    for (pos, (i, _)) in full.iter().enumerate() {
        if eer_idx.contains(i) {
            keep[pos] = true;
        }
    }
    if n <= max_points {
        keep.iter_mut().for_each(|k| *k = true);
    } else {
        let budget = max_points - keep.iter().filter(|&&k| k).count();
        let step = (n - 1) as f64 / (budget + 1) as f64;
        for s in 1..=budget {
            keep[((s as f64) * step).round() as usize] = true;
        }
    }
    let points = full
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|((_, p), _)| DetPoint {
            threshold: p.threshold,
            fpr: p.fpr,
            fnr: p.fnr,
        })
        .collect();
    Ok(DetCurve { points })
}

/// Exact `(tpr, tnr)` under the strict-greater rule.
pub fn rates_at_threshold<S: Scored>(scored: &[S], threshold: f64) -> Result<(f64, f64)> {
    let (mut pos, mut neg, mut tp, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for s in scored {
        let accept = s.score() > threshold;
        if s.is_same() {
            pos += 1;
            tp += accept as u64;
        } else {
            neg += 1;
            tn += !accept as u64;
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("rates need both classes".into()));
    }
    Ok((tp as f64 / pos as f64, tn as f64 / neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    EerPoint,
    /// Largest acceptance rate subject to a false-accept rate of at most the target.
    TargetFpr(f64),
    /// Largest rejection rate subject to a false-reject rate of at most the target.
    TargetFnr(f64),
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::EerPoint => f.write_str("eer"),
            ThresholdPolicy::TargetFpr(x) => write!(f, "target-fpr={x}"),
            ThresholdPolicy::TargetFnr(x) => write!(f, "target-fnr={x}"),
        }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown threshold policy {s:?}"));
        if s == "eer" {
            return Ok(ThresholdPolicy::EerPoint);
        }
        let (name, value) = s.split_once('=').ok_or_else(bad)?;
        let x: f64 = value.parse().map_err(|_| bad())?;
        match name {
            "target-fpr" => Ok(ThresholdPolicy::TargetFpr(x)),
            "target-fnr" => Ok(ThresholdPolicy::TargetFnr(x)),
            _ => Err(bad()),
        }
    }
}

pub fn calibrate_threshold<S: Scored>(scored: &[S], policy: ThresholdPolicy) -> Result<f64> {
    let sweep = Sweep::build(scored)?;
    let check_target = |x: f64| {
        if x > 0.0 && x < 1.0 {
            Ok(x)
        } else {
            Err(Error::InvalidArgument(format!(
                "target rate must lie in (0, 1), got {x}"
            )))
        }
    };
    let pts = &sweep.points;
    match policy {
        ThresholdPolicy::EerPoint => Ok(sweep.eer().threshold),
        ThresholdPolicy::TargetFpr(x) => {
            let x = check_target(x)?;
            let p = pts.iter().find(|p| p.fpr <= x).expect("last point has fpr 0");
            if p.true_accepts == 0 {
                let achievable = pts
                    .iter()
                    .rev()
                    .find(|p| p.true_accepts > 0)
                    .map(|p| p.fpr)
                    .unwrap_or(1.0);
                return Err(Error::TargetUnreachable {
                    requested: x,
                    achievable,
                });
            }
            Ok(p.threshold)
        }
        ThresholdPolicy::TargetFnr(x) => {
            let x = check_target(x)?;
            let p = pts.iter().rev().find(|p| p.fnr <= x).expect("first point has fnr 0");
            if p.true_rejects == 0 {
                let achievable = pts.iter().find(|p| p.true_rejects > 0).map(|p| p.fnr).unwrap_or(1.0);
                return Err(Error::TargetUnreachable {
                    requested: x,
                    achievable,
                });
            }
            Ok(p.threshold)
        }
    }
}

/// `tpr | tnr` with three decimals, e.g. `1.000 | 0.990`.
pub fn format_tpr_tnr(tpr: f64, tnr: f64) -> String {
    format!("{tpr:.3} | {tnr:.3}")
}

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scope: String,
    pub n_pos: u64,
    pub n_neg: u64,
    pub eer: EerResult,
    /// Threshold selected by the calibration policy.
    pub threshold: f64,
    /// Rates observed at `threshold`.
    pub tpr: f64,
    pub tnr: f64,
}

impl MetricsRow {
    pub fn compute<S: Scored>(scope: impl Into<String>, scored: &[S], policy: ThresholdPolicy) -> Result<MetricsRow> {
        let eer = eer(scored)?;
        let threshold = match policy {
            ThresholdPolicy::EerPoint => eer.threshold,
            other => calibrate_threshold(scored, other)?,
        };
        let (tpr, tnr) = rates_at_threshold(scored, threshold)?;
        let n_pos = scored.iter().filter(|s| s.is_same()).count() as u64;
        Ok(MetricsRow {
            scope: scope.into(),
            n_pos,
            n_neg: scored.len() as u64 - n_pos,
            eer,
            threshold,
            tpr,
            tnr,
        })
    }
}

pub const METRICS_COLUMNS: [&str; 8] = [
    "scope",
    "n_pos",
    "n_neg",
    "eer_pct",
    "threshold",
    "tpr",
    "tnr",
    "interpolated",
];

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.scope.clone(),
            r.n_pos.to_string(),
            r.n_neg.to_string(),
            format!("{:.2}", r.eer.eer * 100.0),
            sig_digits(r.threshold, 9),
            format!("{:.3}", r.tpr),
            format!("{:.3}", r.tnr),
            r.eer.interpolated.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(pos: &[f64], neg: &[f64]) -> Vec<(f64, bool)> {
        pos.iter()
            .map(|&s| (s, true))
            .chain(neg.iter().map(|&s| (s, false)))
            .collect()
    }

    #[test]
    fn sweep_two_points() {
        let pts = sweep(&set(&[0.9], &[0.1])).unwrap();
        let rates: Vec<(f64, f64)> = pts.iter().map(|p| (p.tpr, p.tnr)).collect();
        assert_eq!(rates, [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 1.0)]);
        assert!(pts[0].threshold < 0.1 && pts[3].threshold > 0.9);
        for p in &pts {
            assert_eq!(p.fpr, 1.0 - p.tnr);
            assert_eq!(p.fnr, 1.0 - p.tpr);
        }
    }

    #[test]
    fn sweep_identical_scores() {
        let pts = sweep(&set(&[0.5, 0.5], &[0.5])).unwrap();
        for p in &pts {
            assert!(matches!((p.tpr, p.tnr), (1.0, 0.0) | (0.0, 1.0)));
        }
    }

    #[test]
    fn sweep_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let scores: Vec<(f64, bool)> = (0..50)
            .map(|i| ((rng.random_range(0..20) as f64) / 20.0, i % 3 == 0))
            .collect();
        let pts = sweep(&scores).unwrap();
        for w in pts.windows(2) {
            assert!(w[0].tpr >= w[1].tpr && w[0].tnr <= w[1].tnr);
        }
        for p in &pts {
            assert_eq!((p.tpr, p.tnr), oracle::rates(&scores, p.threshold));
        }
    }

    #[test]
    fn undefined_without_both_classes() {
        assert!(matches!(eer(&set(&[0.1, 0.2], &[])), Err(Error::UndefinedMetric(_))));
        assert!(matches!(sweep(&set(&[], &[0.3])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn separable_eer_is_zero_with_midpoint() {
        let r = eer(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap();
        assert_eq!(r.eer, 0.0);
        assert!((r.threshold - 0.5).abs() < 1e-12);
        assert!(!r.interpolated);
        assert_eq!(
            calibrate_threshold(&set(&[0.9, 0.8], &[0.1, 0.2]), ThresholdPolicy::EerPoint).unwrap(),
            r.threshold
        );
    }

    #[test]
    fn indistinguishable_classes() {
        let r = eer(&set(&[0.6, 0.2], &[0.6, 0.2])).unwrap();
        assert_eq!(r.eer, 0.5);
    }

    #[test]
    fn one_third_case() {
        let s = set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]);
        let r = eer(&s).unwrap();
        assert!((r.eer - 1.0 / 3.0).abs() < 1e-12);
        assert!(r.threshold > 0.4 && r.threshold < 0.7, "{}", r.threshold);
        assert!((oracle::eer(&s) - r.eer).abs() < 1e-12);
    }

    #[test]
    fn interpolated_crossing() {
        // fpr/fnr jump past each other without an exact tie.
        let s = set(&[0.1, 0.1, 0.1, 0.9], &[0.1, 0.5]);
        let r = eer(&s).unwrap();
        assert!(r.interpolated);
        assert!(((1.0 - r.tpr_at) - (1.0 - r.tnr_at)).abs() <= 1e-9);
        assert!((r.eer - oracle::eer(&s)).abs() < 1e-12);
    }

    #[test]
    fn det_endpoints_and_eer_points() {
        let c = det_curve(&set(&[0.9, 0.8], &[0.1, 0.2]), 10).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.fnr == 0.0));
        let c = det_curve(&set(&[0.6, 0.2], &[0.6, 0.2]), 4).unwrap();
        assert!(c
            .points
            .iter()
            .any(|p| (p.fpr - 0.5).abs() < 1e-9 && (p.fnr - 0.5).abs() < 1e-9));
        assert!(det_curve(&set(&[0.6], &[0.2]), 3).is_err());
    }

    #[test]
    fn det_points_come_from_full_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let s: Vec<(f64, bool)> = (0..200)
            .map(|_| {
                let same = rng.random_bool(0.3);
                (rng.random_range(0.0..1.0) + if same { 0.4 } else { 0.0 }, same)
            })
            .collect();
        let full = sweep(&s).unwrap();
        let c = det_curve(&s, 25).unwrap();
        assert!(c.points.len() <= 25);
        assert_eq!((c.points[0].fpr, c.points[0].fnr), (1.0, 0.0));
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.fnr), (0.0, 1.0));
        for p in &c.points {
            assert!(full
                .iter()
                .any(|f| f.fpr == p.fpr && f.fnr == p.fnr && f.threshold == p.threshold));
        }
        for w in c.points.windows(2) {
            assert!(w[1].fpr <= w[0].fpr && w[1].fnr >= w[0].fnr);
        }
    }

    #[test]
    fn rates_outside_score_range() {
        let s = set(&[0.9, 0.3], &[0.2, 0.5]);
        assert_eq!(rates_at_threshold(&s, 2.0).unwrap(), (0.0, 1.0));
        assert_eq!(rates_at_threshold(&s, -2.0).unwrap(), (1.0, 0.0));
        // Ties at the threshold are rejected.
        assert_eq!(rates_at_threshold(&s, 0.3).unwrap(), (0.5, 0.5));
        assert_eq!(format_tpr_tnr(1.0, 0.99), "1.000 | 0.990");
    }

    #[test]
    fn target_fpr_on_identical_distribution() {
        let s = set(&[0.6, 0.2], &[0.6, 0.2]);
        let t = calibrate_threshold(&s, ThresholdPolicy::TargetFpr(0.5)).unwrap();
        let (tpr, tnr) = rates_at_threshold(&s, t).unwrap();
        assert!(1.0 - tnr <= 0.5);
        // Exhaustive: no candidate with fpr <= 0.5 has a higher tpr, and none lower than t qualifies.
        for p in sweep(&s).unwrap() {
            if p.fpr <= 0.5 {
                assert!(p.tpr <= tpr);
                assert!(p.threshold >= t);
            }
        }
    }

    #[test]
    fn target_fnr_and_unreachable() {
        let s = set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]);
        let t = calibrate_threshold(&s, ThresholdPolicy::TargetFnr(0.34)).unwrap();
        let (tpr, _) = rates_at_threshold(&s, t).unwrap();
        assert!(1.0 - tpr <= 0.34);
        assert_eq!(t, 0.4);

        // Top score is a negative: any fpr below 1/2 forces rejecting every positive.
        let s = set(&[0.5], &[0.9, 0.1]);
        let err = calibrate_threshold(&s, ThresholdPolicy::TargetFpr(0.1)).unwrap_err();
        assert!(matches!(err, Error::TargetUnreachable { achievable, .. } if achievable == 0.5));
        assert!(calibrate_threshold(&s, ThresholdPolicy::TargetFpr(1.5)).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("eer".parse::<ThresholdPolicy>().unwrap(), ThresholdPolicy::EerPoint);
        assert_eq!(
            "target-fpr=0.01".parse::<ThresholdPolicy>().unwrap(),
            ThresholdPolicy::TargetFpr(0.01)
        );
        assert!("fpr".parse::<ThresholdPolicy>().is_err());
        let p = ThresholdPolicy::TargetFnr(0.2);
        assert_eq!(p.to_string().parse::<ThresholdPolicy>().unwrap(), p);
    }

    #[test]
    fn metrics_csv_layout() {
        let s = set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]);
        let row = MetricsRow::compute("d/en", &s, ThresholdPolicy::EerPoint).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[row]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scope,n_pos,n_neg,eer_pct,threshold,tpr,tnr,interpolated\nd/en,3,3,33.33,0.55,0.667,0.667,false\n"
        );
    }

    fn scored_sets() -> impl Strategy<Value = Vec<(f64, bool)>> {
        (1usize..30, 1usize..30).prop_flat_map(|(p, n)| {
            (
                proptest::collection::vec(-100i32..100, p),
                proptest::collection::vec(-100i32..100, n),
            )
                .prop_map(|(ps, ns)| {
                    ps.into_iter()
                        .map(|v| (v as f64 / 100.0, true))
                        .chain(ns.into_iter().map(|v| (v as f64 / 100.0, false)))
                        .collect()
                })
        })
    }

    proptest! {
        #[test]
        fn eer_matches_oracle(s in scored_sets()) {
            let r = eer(&s).unwrap();
            prop_assert!((r.eer - oracle::eer(&s)).abs() <= 1e-9);
            prop_assert!(((1.0 - r.tpr_at) - (1.0 - r.tnr_at)).abs() <= 1e-9);
        }

        #[test]
        fn permutation_invariant(s in scored_sets(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = s.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(eer(&s).unwrap(), eer(&shuffled).unwrap());
            prop_assert_eq!(sweep(&s).unwrap(), sweep(&shuffled).unwrap());
        }
    }
}
