//! Recalibration sessions on a drifting channel.
//!
//! Time is counted in epochs of `blocks_per_epoch` blocks. A threshold
//! detector decodes every epoch with the current threshold. After an epoch
//! the trigger policy may start a recalibration: the reference detector
//! (normally an NN) decodes the next `calibration_blocks` blocks, the DTD
//! search runs on those labels and its threshold replaces the current one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ber::BerEstimate;
use crate::analytic::{optimal_threshold_bisection, ThresholdResult};
use crate::channel::{ChannelParams, NoiseModel};
use crate::detectors::{dtd_search, hamming, threshold_detect, Detector};
use crate::error::{Error, Result};
use crate::rng::Purpose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSegment {
    /// First epoch in which this channel is active.
    pub epoch: usize,
    pub params: ChannelParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerPolicy {
    /// Recalibrate after every `period`-th epoch.
    Periodic { period: usize },
    /// Recalibrate after an epoch in which more than `max_block_failure_rate`
    /// of the blocks had more than `correctable_bits` bit errors, standing in
    /// for an ECC decoding failure.
    OnFailure {
        correctable_bits: usize,
        max_block_failure_rate: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSchedule {
    pub segments: Vec<DriftSegment>,
    pub total_epochs: usize,
    pub blocks_per_epoch: usize,
    pub trigger: TriggerPolicy,
    /// `M`.
    pub calibration_blocks: usize,
    /// Starting threshold; the first segment's midpoint when absent.
    pub initial_r_th: Option<f64>,
    pub block_len: usize,
    pub seed: u64,
}

impl Default for DriftSchedule {
    fn default() -> Self {
        let base = ChannelParams::stt_mram(0.1, 0.0, 0.0, NoiseModel::Gaussian).expect("valid default channel");
        let drifted = ChannelParams::stt_mram(0.1, -0.2, 0.04, NoiseModel::Gaussian).expect("valid default channel");
        DriftSchedule {
            segments: vec![
                DriftSegment { epoch: 0, params: base },
                DriftSegment {
                    epoch: 5,
                    params: drifted,
                },
            ],
            total_epochs: 10,
            blocks_per_epoch: 2_000,
            trigger: TriggerPolicy::Periodic { period: 5 },
            calibration_blocks: 100,
            initial_r_th: None,
            block_len: 71,
            seed: 1,
        }
    }
}

impl DriftSchedule {
    pub fn validate(&self) -> Result<()> {
        let first = self.segments.first().ok_or(Error::Empty("drift schedule segments"))?;
        if first.epoch != 0 {
            return Err(Error::invalid("the first segment must start at epoch 0"));
        }
        for w in self.segments.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::invalid("segments must be strictly ordered by epoch"));
            }
        }
        if self.segments.last().is_some_and(|s| s.epoch >= self.total_epochs) {
            return Err(Error::invalid("every segment must start before total_epochs"));
        }
        for s in &self.segments {
            s.params.validate()?;
        }
        if self.blocks_per_epoch == 0 || self.calibration_blocks == 0 || self.block_len == 0 {
            return Err(Error::invalid("block counts and block length must be positive"));
        }
        match self.trigger {
            TriggerPolicy::Periodic { period: 0 } => Err(Error::invalid("trigger period must be at least 1")),
            TriggerPolicy::OnFailure {
                max_block_failure_rate, ..
            } if !(0.0..=1.0).contains(&max_block_failure_rate) => {
                Err(Error::invalid("max_block_failure_rate must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    fn segment_at(&self, epoch: usize) -> usize {
        self.segments.iter().rposition(|s| s.epoch <= epoch).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    /// Epoch after which the recalibration ran.
    pub epoch: usize,
    pub r_before: f64,
    pub r_adj: f64,
    /// Interval of thresholds that tie with `r_adj`.
    pub interval: (f64, f64),
    pub objective: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentLog {
    pub segment: usize,
    pub start_epoch: usize,
    pub params: ChannelParams,
    pub triggers: usize,
    /// Blocks decoded by the reference detector.
    pub nn_blocks: usize,
    pub r_th_start: f64,
    pub r_th_end: f64,
    /// Full-knowledge optimum for Gaussian channels.
    pub optimum: Option<ThresholdResult>,
    /// Threshold decoding up to the segment's first recalibration.
    pub before: BerEstimate,
    /// Reference-detector decoding of the calibration blocks.
    pub calibration: BerEstimate,
    /// Threshold decoding after the segment's first recalibration.
    pub after: BerEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub segments: Vec<SegmentLog>,
    pub recalibrations: Vec<Recalibration>,
    pub total_blocks: usize,
    pub nn_blocks: usize,
}

impl SessionLog {
    pub fn triggers(&self) -> usize {
        self.recalibrations.len()
    }
}

#[derive(Default)]
struct Counts {
    errors: u64,
    bits: u64,
}

impl Counts {
    fn add(&mut self, errors: usize, bits: usize) {
        self.errors += errors as u64;
        self.bits += bits as u64;
    }

    fn estimate(&self) -> BerEstimate {
        BerEstimate::from_counts(self.errors, self.bits)
    }
}

/// Runs the schedule sequentially. Block `k` of the session (counting
/// calibration blocks) comes from session stream `k`.
pub fn simulate_recalibration_session(schedule: &DriftSchedule, reference: &dyn Detector) -> Result<SessionLog> {
    schedule.validate()?;
    let first = &schedule.segments[0].params;
    let mut r_th = schedule.initial_r_th.unwrap_or(0.5 * (first.mu0 + first.mu1));
    let mut stream = 0u64;
    let mut recalibrations = Vec::new();
    let mut segments = Vec::new();
    let n = schedule.block_len;

    for (si, seg) in schedule.segments.iter().enumerate() {
        let end = schedule
            .segments
            .get(si + 1)
            .map_or(schedule.total_epochs, |s| s.epoch);
        let sampler = seg.params.sampler()?;
        let optimum = match seg.params.noise_model {
            NoiseModel::Gaussian => Some(optimal_threshold_bisection(&seg.params)?),
            _ => None,
        };
        let r_th_start = r_th;
        let (mut before, mut calibration, mut after) = (Counts::default(), Counts::default(), Counts::default());
        let mut triggers = 0;
        let mut nn_blocks = 0;

        for epoch in seg.epoch..end {
            debug_assert_eq!(schedule.segment_at(epoch), si);
            let mut failed_blocks = 0usize;
            for _ in 0..schedule.blocks_per_epoch {
                let block = sampler.block_at(n, schedule.seed, Purpose::Session, stream);
                stream += 1;
                let errors = hamming(&threshold_detect(&block.y, r_th), &block.x)?;
                if triggers == 0 {
                    before.add(errors, n);
                } else {
                    after.add(errors, n);
                }
                if let TriggerPolicy::OnFailure { correctable_bits, .. } = schedule.trigger {
                    failed_blocks += usize::from(errors > correctable_bits);
                }
            }
            let fire = match schedule.trigger {
                TriggerPolicy::Periodic { period } => (epoch + 1) % period == 0,
                TriggerPolicy::OnFailure {
                    max_block_failure_rate, ..
                } => failed_blocks as f64 > max_block_failure_rate * schedule.blocks_per_epoch as f64,
            };
            if !fire {
                continue;
            }
            let mut reads = Vec::with_capacity(schedule.calibration_blocks);
            let mut labels = Vec::with_capacity(schedule.calibration_blocks);
            for _ in 0..schedule.calibration_blocks {
                let block = sampler.block_at(n, schedule.seed, Purpose::Session, stream);
                stream += 1;
                let hard = reference.detect(&block)?;
                calibration.add(hamming(&hard, &block.x)?, n);
                reads.push(block.y);
                labels.push(hard);
            }
            nn_blocks += schedule.calibration_blocks;
            triggers += 1;
            let res = dtd_search(&reads, &labels)?;
            recalibrations.push(Recalibration {
                epoch,
                r_before: r_th,
                r_adj: res.r_adj,
                interval: res.interval,
                objective: res.objective,
            });
            r_th = res.r_adj;
        }
        segments.push(SegmentLog {
            segment: si,
            start_epoch: seg.epoch,
            params: seg.params.clone(),
            triggers,
            nn_blocks,
            r_th_start,
            r_th_end: r_th,
            optimum,
            before: before.estimate(),
            calibration: calibration.estimate(),
            after: after.estimate(),
        });
    }
    let nn_blocks = segments.iter().map(|s| s.nn_blocks).sum();
    Ok(SessionLog {
        segments,
        recalibrations,
        total_blocks: stream as usize,
        nn_blocks,
    })
}

pub const SESSION_CSV_HEADER: &str = "segment,start_epoch,ratio,mu_b,sigma_b_over_mu1,noise_model,triggers,nn_blocks,\
r_th_start,r_th_end,optimum_r_th,optimum_ber,before_errors,before_bits,before_ber,\
calibration_errors,calibration_bits,calibration_ber,after_errors,after_bits,after_ber,after_ci";

pub fn write_session_csv<W: Write>(w: W, log: &SessionLog) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(SESSION_CSV_HEADER.split(','))?;
    for s in &log.segments {
        let p = &s.params;
        let (opt_r, opt_ber) = s
            .optimum
            .as_ref()
            .map_or((String::new(), String::new()), |o| (o.r_th.to_string(), o.ber.to_string()));
        out.write_record([
            s.segment.to_string(),
            s.start_epoch.to_string(),
            p.ratio().to_string(),
            p.offset_mu_b.to_string(),
            p.sigma_b_over_mu1().to_string(),
            p.noise_model.to_string(),
            s.triggers.to_string(),
            s.nn_blocks.to_string(),
            s.r_th_start.to_string(),
            s.r_th_end.to_string(),
            opt_r,
            opt_ber,
            s.before.errors.to_string(),
            s.before.bits.to_string(),
            s.before.ber.to_string(),
            s.calibration.errors.to_string(),
            s.calibration.bits.to_string(),
            s.calibration.ber.to_string(),
            s.after.errors.to_string(),
            s.after.bits.to_string(),
            s.after.ber.to_string(),
            s.after.ci_half_width.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
