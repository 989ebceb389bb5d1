//! Threshold, neural and dynamic threshold detectors.
//!
//! The dynamic threshold detector (DTD) picks the sensing threshold that
//! best agrees with a reference labelling of `M` blocks, normally the hard
//! decisions of a neural detector:
//!
//! ```text
//! R_adj = argmin_R  Σ_i d(x̂_i, 1[y_i >= R])
//! ```
//!
//! The objective is piecewise constant in `R` with breakpoints at the read
//! values, so it is minimized exactly by one sorted sweep instead of a grid.

use crate::channel::{Block, QuantizerSpec};
use crate::error::{Error, Result};
use crate::nn::{Model, Network};

/// Soft estimates and the hard decisions derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorOutput {
    pub soft: Vec<f64>,
    pub hard: Vec<u8>,
}

/// Outcome of a DTD search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtdResult {
    /// Adjusted threshold, kΩ.
    pub r_adj: f64,
    /// Total Hamming distance at `r_adj`.
    pub objective: u64,
    /// Every threshold in `(lo, hi]` attains `objective`; either end may be infinite.
    pub interval: (f64, f64),
}

/// `soft > 0.5` decides 1; exactly 0.5 decides 0.
pub fn hard_decision(soft: &[f64]) -> Vec<u8> {
    soft.iter().map(|&s| u8::from(s > 0.5)).collect()
}

/// `y >= r_th` decides 1.
pub fn threshold_detect(y: &[f64], r_th: f64) -> Vec<u8> {
    y.iter().map(|&v| u8::from(v >= r_th)).collect()
}

pub fn hamming(a: &[u8], b: &[u8]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "hamming distance",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Exact minimizer of the DTD objective over `M` blocks.
pub fn dtd_search<Y: AsRef<[f64]>, H: AsRef<[u8]>>(reads: &[Y], nn_hard: &[H]) -> Result<DtdResult> {
    if reads.is_empty() {
        return Err(Error::Empty("dtd search needs at least one block"));
    }
    if reads.len() != nn_hard.len() {
        return Err(Error::Shape {
            context: "dtd block count",
            expected: reads.len(),
            got: nn_hard.len(),
        });
    }
    let mut pairs = Vec::with_capacity(reads.len() * reads[0].as_ref().len());
    for (y, h) in reads.iter().zip(nn_hard) {
        let (y, h) = (y.as_ref(), h.as_ref());
        if y.len() != h.len() {
            return Err(Error::Shape {
                context: "dtd block length",
                expected: y.len(),
                got: h.len(),
            });
        }
        pairs.extend(y.iter().copied().zip(h.iter().copied()));
    }
    sweep_threshold(pairs)
}

/// Sweep core shared by the DTD and the empirical optimum search.
///
/// `F(R)` counts reads labelled 0 with `y >= R` plus reads labelled 1 with
/// `y < R`. Below every read `F` equals the number of 0 labels; moving `R`
/// past a read value changes it by (#1 labels - #0 labels) at that value.
/// The returned threshold is the midpoint of the first widest minimizing
/// interval between consecutive distinct reads; the unbounded end intervals
/// are used only when no bounded interval attains the minimum.
pub fn sweep_threshold(mut pairs: Vec<(f64, u8)>) -> Result<DtdResult> {
    if pairs.is_empty() {
        return Err(Error::Empty("threshold sweep needs at least one read"));
    }
    if pairs.iter().any(|(y, _)| !y.is_finite()) {
        return Err(Error::invalid("threshold sweep got a non-finite read"));
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    // Distinct read values and F on the interval just above each one.
    let mut values: Vec<f64> = Vec::new();
    let mut above: Vec<i64> = Vec::new();
    let below_all = pairs.iter().filter(|p| p.1 == 0).count() as i64;
    let mut f = below_all;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            f += if pairs[i].1 == 0 { -1 } else { 1 };
            i += 1;
        }
        values.push(v);
        above.push(f);
    }

    let k = values.len();
    let bounded_min = above[..k - 1].iter().copied().min();
    let overall = [below_all, above[k - 1]]
        .into_iter()
        .chain(bounded_min)
        .min()
        .expect("non-empty");

    if bounded_min == Some(overall) {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..k - 1 {
            if above[j] == overall {
                let width = values[j + 1] - values[j];
                if best.is_none_or(|(_, w)| width > w) {
                    best = Some((j, width));
                }
            }
        }
        let (j, _) = best.expect("bounded minimum exists");
        let (lo, hi) = (values[j], values[j + 1]);
        let mut mid = 0.5 * (lo + hi);
        if mid <= lo {
            // Adjacent floats: the upper read itself is the only choice.
            mid = hi;
        }
        return Ok(DtdResult {
            r_adj: mid,
            objective: overall as u64,
            interval: (lo, hi),
        });
    }

    let (first, last) = (values[0], values[k - 1]);
    let pad = if k > 1 { 0.5 * (last - first) } else { 0.5 * first.abs().max(1.0) };
    if below_all == overall {
        Ok(DtdResult {
            r_adj: first - pad,
            objective: overall as u64,
            interval: (f64::NEG_INFINITY, first),
        })
    } else {
        Ok(DtdResult {
            r_adj: last + pad,
            objective: overall as u64,
            interval: (last, f64::INFINITY),
        })
    }
}

/// Optional quantization, forward pass and hard decision.
pub fn detect_with_nn<M: Network>(model: &M, y: &[f64], quantizer: Option<&QuantizerSpec>) -> Result<DetectorOutput> {
    let soft = match quantizer {
        Some(q) => {
            let yq: Vec<f64> = y.iter().map(|&v| q.quantize(v)).collect();
            model.forward(&yq)?
        }
        None => model.forward(y)?,
    };
    let hard = hard_decision(&soft);
    Ok(DetectorOutput { soft, hard })
}

/// Anything that turns a block of reads into bit decisions.
///
/// Detectors see the whole [`Block`] so that the test-only genie can be
/// expressed; every other detector reads `block.y` only.
pub trait Detector: Send + Sync {
    fn name(&self) -> String;

    fn detect(&self, block: &Block) -> Result<Vec<u8>>;
}

/// Fixed-threshold sensing.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdDetector {
    pub label: String,
    pub r_th: f64,
    pub quantizer: Option<QuantizerSpec>,
}

impl ThresholdDetector {
    pub fn new(label: impl Into<String>, r_th: f64) -> Self {
        ThresholdDetector {
            label: label.into(),
            r_th,
            quantizer: None,
        }
    }
}

impl Detector for ThresholdDetector {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn detect(&self, block: &Block) -> Result<Vec<u8>> {
        Ok(match &self.quantizer {
            Some(q) => block.y.iter().map(|&v| u8::from(q.quantize(v) >= self.r_th)).collect(),
            None => threshold_detect(&block.y, self.r_th),
        })
    }
}

/// Neural detector with the hard-decision rule.
#[derive(Clone, Debug)]
pub struct NnDetector {
    pub label: String,
    pub model: Model,
    pub quantizer: Option<QuantizerSpec>,
}

impl NnDetector {
    pub fn new(label: impl Into<String>, model: Model) -> Self {
        NnDetector {
            label: label.into(),
            model,
            quantizer: None,
        }
    }

    pub fn run(&self, y: &[f64]) -> Result<DetectorOutput> {
        detect_with_nn(&self.model, y, self.quantizer.as_ref())
    }
}

impl Detector for NnDetector {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn detect(&self, block: &Block) -> Result<Vec<u8>> {
        Ok(self.run(&block.y)?.hard)
    }
}

/// Test-only detector that returns the stored bits.
#[derive(Clone, Copy, Debug, Default)]
pub struct GenieDetector;

impl Detector for GenieDetector {
    fn name(&self) -> String {
        "genie".into()
    }

    fn detect(&self, block: &Block) -> Result<Vec<u8>> {
        Ok(block.x.clone())
    }
}

/// Runs `reference` on `blocks` and fits a threshold to its decisions.
pub fn calibrate<D: Detector + ?Sized>(reference: &D, blocks: &[Block]) -> Result<DtdResult> {
    let labels = blocks.iter().map(|b| reference.detect(b)).collect::<Result<Vec<_>>>()?;
    let reads: Vec<&[f64]> = blocks.iter().map(|b| b.y.as_slice()).collect();
    dtd_search(&reads, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::optimal_threshold_bisection;
    use crate::channel::{ChannelParams, NoiseModel};
    use crate::nn::{MlpModel, RnnModel};
    use crate::rng::{purpose_rng, Purpose};
    use rand::Rng;

    #[test]
    fn hard_decision_rule() {
        assert_eq!(hard_decision(&[0.1, 0.9, 0.5]), vec![0, 1, 0]);
        assert_eq!(hard_decision(&[0.0; 5]), vec![0; 5]);
        let bits = [0.0, 1.0, 1.0, 0.0];
        let once = hard_decision(&bits);
        let f: Vec<f64> = once.iter().map(|&b| f64::from(b)).collect();
        assert_eq!(hard_decision(&f), once);
    }

    #[test]
    fn threshold_detect_examples() {
        assert_eq!(threshold_detect(&[1.0, 2.0], 1.5), vec![0, 1]);
        assert_eq!(threshold_detect(&[1.0, 2.0], 0.5), vec![1, 1]);
        assert_eq!(threshold_detect(&[1.0, 2.0], 2.5), vec![0, 0]);
        assert_eq!(threshold_detect(&[1.5], 1.5), vec![1]);
    }

    #[test]
    fn hamming_examples() {
        let a = [0, 1, 1, 0, 1];
        let b = [1, 0, 0, 1, 0];
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &b).unwrap(), 5);
        assert_eq!(hamming(&a, &b[..4]).unwrap_err().to_string(), "shape mismatch in hamming distance: expected 5, got 4");
        let c = [0, 0, 1, 1, 1];
        assert_eq!(hamming(&a, &c).unwrap(), hamming(&c, &a).unwrap());
    }

    #[test]
    fn dtd_hand_examples() {
        let r = dtd_search(&[vec![1.0, 2.0]], &[vec![0u8, 1]]).unwrap();
        assert_eq!(r.objective, 0);
        assert_eq!(r.interval, (1.0, 2.0));
        assert_eq!(r.r_adj, 1.5);

        let empty: [Vec<f64>; 0] = [];
        let no_labels: [Vec<u8>; 0] = [];
        assert!(matches!(dtd_search(&empty, &no_labels), Err(Error::Empty(_))));
        assert!(dtd_search(&[vec![1.0]], &[vec![0u8, 1]]).is_err());
    }

    #[test]
    fn dtd_zero_objective_contains_truth() {
        let mut rng = purpose_rng(5, Purpose::Misc);
        let reads: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..16).map(|_| rng.random_range(0.8..2.2)).collect())
            .collect();
        let labels: Vec<Vec<u8>> = reads.iter().map(|y| threshold_detect(y, 1.5)).collect();
        let r = dtd_search(&reads, &labels).unwrap();
        assert_eq!(r.objective, 0);
        assert!(r.interval.0 < 1.5 && 1.5 <= r.interval.1);
    }

    #[test]
    fn dtd_unbounded_minimizers() {
        let all_zero = dtd_search(&[vec![1.0, 1.2, 1.9]], &[vec![0u8, 0, 0]]).unwrap();
        assert_eq!(all_zero.objective, 0);
        assert!(all_zero.r_adj > 1.9);
        assert_eq!(threshold_detect(&[1.0, 1.2, 1.9], all_zero.r_adj), vec![0, 0, 0]);

        let all_one = dtd_search(&[vec![1.0, 1.2, 1.9]], &[vec![1u8, 1, 1]]).unwrap();
        assert_eq!(all_one.objective, 0);
        assert_eq!(threshold_detect(&[1.0, 1.2, 1.9], all_one.r_adj), vec![1, 1, 1]);

        let single = dtd_search(&[vec![1.3]], &[vec![1u8]]).unwrap();
        assert_eq!(threshold_detect(&[1.3], single.r_adj), vec![1]);
    }

    #[test]
    fn dtd_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let r = dtd_search(&[vec![a, b]], &[vec![0u8, 1]]).unwrap();
        assert_eq!(r.objective, 0);
        assert_eq!(threshold_detect(&[a, b], r.r_adj), vec![0, 1]);
    }

    fn brute_force(reads: &[Vec<f64>], labels: &[Vec<u8>], grid: &[f64]) -> (u64, Vec<f64>) {
        let objective = |r: f64| -> u64 {
            reads
                .iter()
                .zip(labels)
                .map(|(y, l)| hamming(l, &threshold_detect(y, r)).unwrap() as u64)
                .sum()
        };
        let vals: Vec<u64> = grid.iter().map(|&r| objective(r)).collect();
        let best = *vals.iter().min().unwrap();
        let argmin = grid.iter().zip(&vals).filter(|(_, v)| **v == best).map(|(r, _)| *r).collect();
        (best, argmin)
    }

    #[test]
    fn dtd_matches_brute_force_grid() {
        let mut rng = purpose_rng(6, Purpose::Misc);
        // Reads on a 0.05 grid in [0.5, 2.5]; candidate thresholds every 0.0002
        // hit every gap between grid reads and both unbounded ends.
        let grid: Vec<f64> = (0..10_000).map(|i| 0.499 + i as f64 * 0.0002012).collect();
        for _ in 0..200 {
            let m = rng.random_range(1..=8);
            let n = rng.random_range(1..=8);
            let reads: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| 0.5 + 0.05 * rng.random_range(0..=40) as f64).collect())
                .collect();
            let labels: Vec<Vec<u8>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(0..=1)).collect()).collect();
            let res = dtd_search(&reads, &labels).unwrap();
            let (best, _) = brute_force(&reads, &labels, &grid);
            assert_eq!(res.objective, best);
            let at: u64 = reads
                .iter()
                .zip(&labels)
                .map(|(y, l)| hamming(l, &threshold_detect(y, res.r_adj)).unwrap() as u64)
                .sum();
            assert_eq!(at, res.objective);
        }
    }

    #[test]
    fn threshold_monotonicity() {
        let mut rng = purpose_rng(7, Purpose::Misc);
        let y: Vec<f64> = (0..200).map(|_| rng.random_range(0.5..2.5)).collect();
        for _ in 0..100 {
            let a = rng.random_range(0.5..2.5);
            let b = a + rng.random_range(0.0..0.5);
            let lo = threshold_detect(&y, a);
            let hi = threshold_detect(&y, b);
            assert!(lo.iter().zip(&hi).all(|(l, h)| h <= l));
        }
    }

    #[test]
    fn genie_dtd_tracks_optimum() {
        let p = ChannelParams::stt_mram(0.10, -0.2, 0.04, NoiseModel::Gaussian).unwrap();
        let opt = optimal_threshold_bisection(&p).unwrap();
        for seed in 1..=5 {
            let blocks = p.sampler().unwrap().generate(71, 1000, seed, Purpose::Calibration, 0);
            let res = calibrate(&GenieDetector, &blocks).unwrap();
            assert!((res.r_adj - opt.r_th).abs() < 0.02, "{} vs {}", res.r_adj, opt.r_th);
        }
    }

    #[test]
    fn error_free_genie_labels_give_gap_midpoint() {
        // At low spread the genie blocks hold no errors, so the only
        // zero-objective interval is the gap between the two states.
        let p = ChannelParams::stt_mram(0.05, -0.2, 0.04, NoiseModel::Gaussian).unwrap();
        let blocks = p.sampler().unwrap().generate(71, 1000, 1, Purpose::Calibration, 0);
        let res = calibrate(&GenieDetector, &blocks).unwrap();
        let top0 = blocks
            .iter()
            .flat_map(|b| b.x.iter().zip(&b.y).filter(|(x, _)| **x == 0).map(|(_, y)| *y))
            .fold(f64::NEG_INFINITY, f64::max);
        let low1 = blocks
            .iter()
            .flat_map(|b| b.x.iter().zip(&b.y).filter(|(x, _)| **x == 1).map(|(_, y)| *y))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(res.objective, 0);
        assert_eq!(res.interval, (top0, low1));
        assert_eq!(res.r_adj, 0.5 * (top0 + low1));
    }

    #[test]
    fn nn_detection_shapes() {
        let mut rng = purpose_rng(8, Purpose::Init);
        let rnn = Model::Rnn(RnnModel::init(71, 8, &mut rng));
        let y: Vec<f64> = (0..71).map(|_| rng.random_range(0.5..2.5)).collect();
        let a = detect_with_nn(&rnn, &y, None).unwrap();
        let b = detect_with_nn(&rnn, &y, None).unwrap();
        assert_eq!(a, b);
        assert!(a.soft.iter().all(|&s| s > 0.0 && s < 1.0));
        assert_eq!(a.hard, hard_decision(&a.soft));
        let q = QuantizerSpec::default();
        assert!(detect_with_nn(&rnn, &y, Some(&q)).is_ok());
        let mlp = Model::Mlp(MlpModel::zeros(71));
        assert!(detect_with_nn(&mlp, &y[..70], None).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<u8>>)> {
            (1usize..=8, 1usize..=8).prop_flat_map(|(m, n)| {
                (
                    prop::collection::vec(prop::collection::vec((0u32..=20).prop_map(|k| 1.0 + 0.05 * k as f64), n), m),
                    prop::collection::vec(prop::collection::vec(0u8..=1, n), m),
                )
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn sweep_equals_grid((reads, labels) in instance()) {
                let grid: Vec<f64> = (0..10_000).map(|i| 0.99 + i as f64 * 1.02e-4).collect();
                let res = dtd_search(&reads, &labels).unwrap();
                let (best, argmin) = brute_force(&reads, &labels, &grid);
                prop_assert_eq!(res.objective, best);
                // The returned interval overlaps the grid's argmin set.
                prop_assert!(argmin.iter().any(|&r| r > res.interval.0 && r <= res.interval.1));
            }
        }
    }
}
