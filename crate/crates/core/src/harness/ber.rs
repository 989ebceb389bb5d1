use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::detectors::Detector;
use crate::error::Result;
use crate::rng::Purpose;

/// Monte-Carlo bit error rate with a 3-sigma binomial half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    pub errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub ci_half_width: f64,
}

impl BerEstimate {
    pub fn from_counts(errors: u64, bits: u64) -> Self {
        let ber = if bits == 0 { 0.0 } else { errors as f64 / bits as f64 };
        BerEstimate {
            errors,
            bits,
            ber,
            ci_half_width: binomial_half_width(ber, bits),
        }
    }

    pub fn merge(self, other: BerEstimate) -> Self {
        Self::from_counts(self.errors + other.errors, self.bits + other.bits)
    }

    /// Whether `p` lies within `k` binomial standard deviations of the
    /// estimate, with the deviation evaluated at `p`.
    pub fn agrees_with(&self, p: f64, k: f64) -> bool {
        let sd = (p * (1.0 - p) / self.bits.max(1) as f64).sqrt();
        (self.ber - p).abs() <= k * sd
    }
}

/// `3 sqrt(p (1 - p) / bits)`.
pub fn binomial_half_width(p: f64, bits: u64) -> f64 {
    if bits == 0 {
        return 0.0;
    }
    3.0 * (p * (1.0 - p) / bits as f64).sqrt()
}

/// BER of one detector on `nblocks` fresh test blocks.
pub fn estimate_ber(
    detector: &dyn Detector,
    params: &ChannelParams,
    n: usize,
    nblocks: usize,
    seed: u64,
) -> Result<BerEstimate> {
    Ok(estimate_ber_many(&[detector], params, n, nblocks, seed)?[0])
}

/// Evaluates several detectors on the same test blocks.
///
/// Block `i` always comes from test stream `i`, and error counts are
/// integers, so the result does not depend on the number of threads.
pub fn estimate_ber_many(
    detectors: &[&dyn Detector],
    params: &ChannelParams,
    n: usize,
    nblocks: usize,
    seed: u64,
) -> Result<Vec<BerEstimate>> {
    let sampler = params.sampler()?;
    let k = detectors.len();
    let counts = (0..nblocks as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<u64>> {
            let block = sampler.block_at(n, seed, Purpose::Test, i);
            detectors
                .iter()
                .map(|d| {
                    let hard = d.detect(&block)?;
                    crate::detectors::hamming(&hard, &block.x).map(|e| e as u64)
                })
                .collect()
        })
        .try_reduce(
            || vec![0u64; k],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let bits = (n * nblocks) as u64;
    Ok(counts.into_iter().map(|e| BerEstimate::from_counts(e, bits)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{ber_fixed_offset, ber_variable_offset, optimal_threshold_closed_form};
    use crate::channel::NoiseModel;
    use crate::detectors::{GenieDetector, ThresholdDetector};

    #[test]
    fn genie_has_no_errors() {
        let p = ChannelParams::stt_mram(0.12, -0.2, 0.07, NoiseModel::Gaussian).unwrap();
        let est = estimate_ber(&GenieDetector, &p, 71, 1000, 1).unwrap();
        assert_eq!(est.errors, 0);
        assert_eq!(est.bits, 71_000);
        assert_eq!(est.ber, 0.0);
    }

    #[test]
    fn threshold_detector_matches_formulas() {
        let p = ChannelParams::stt_mram(0.1, 0.0, 0.0, NoiseModel::Gaussian).unwrap();
        let opt = optimal_threshold_closed_form(&p, 0.0).unwrap();
        let est = estimate_ber(&ThresholdDetector::new("opt", opt.r_th), &p, 71, 50_000, 2).unwrap();
        let exact = ber_fixed_offset(opt.r_th, &p, 0.0).unwrap();
        assert!(est.agrees_with(exact, 3.0), "{} vs {exact}", est.ber);

        let p = ChannelParams::stt_mram(0.08, -0.2, 0.04, NoiseModel::Gaussian).unwrap();
        let est = estimate_ber(&ThresholdDetector::new("mid", 1.5), &p, 71, 50_000, 3).unwrap();
        let exact = ber_variable_offset(1.5, &p).unwrap();
        assert!(est.agrees_with(exact, 3.0), "{} vs {exact}", est.ber);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let p = ChannelParams::stt_mram(0.1, -0.2, 0.04, NoiseModel::Gaussian).unwrap();
        let d = ThresholdDetector::new("mid", 1.5);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate_ber(&d, &p, 71, 5_000, 9).unwrap());
        let b = four.install(|| estimate_ber(&d, &p, 71, 5_000, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_fields() {
        let e = BerEstimate::from_counts(25, 10_000);
        assert_eq!(e.ber, 0.0025);
        assert!((e.ci_half_width - 3.0 * (0.0025f64 * 0.9975 / 10_000.0).sqrt()).abs() < 1e-15);
        assert_eq!(e.merge(e).errors, 50);
    }
}
