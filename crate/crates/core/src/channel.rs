//! STT-MRAM resistance read channel.
//!
//! A stored bit `x_k` is read back as
//!
//! ```text
//! y_k = r_k + n_k + b_k
//! ```
//!
//! where `r_k` is the nominal resistance of the programmed state (`mu0` or
//! `mu1`), `n_k` is zero-mean process variation with state-dependent standard
//! deviation, and `b_k ~ N(offset_mu_b, offset_sigma_b^2)` is an offset that
//! only affects the high-resistance state. All resistances are in kΩ.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{block_rng, Purpose, StreamRng};

/// Ratio `beta / alpha` of the skewed Beta variation law.
pub const BETA_SHAPE_RATIO: f64 = 1.2;

/// Mean of `Beta(alpha, 1.2 alpha)`, independent of `alpha`.
pub const BETA_MEAN: f64 = 1.0 / (1.0 + BETA_SHAPE_RATIO);

/// Supremum of the variance of `Beta(alpha, 1.2 alpha)` as `alpha -> 0`.
pub const BETA_VARIANCE_SUP: f64 = BETA_SHAPE_RATIO / ((1.0 + BETA_SHAPE_RATIO) * (1.0 + BETA_SHAPE_RATIO));

/// Distribution family of the process variation `n_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian,
    /// `Beta(alpha, 1.2 alpha) - 1/2.2`, with `alpha` solved from the state sigma.
    CenteredBeta,
}

impl NoiseModel {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseModel::Gaussian => "gaussian",
            NoiseModel::CenteredBeta => "centered_beta",
        }
    }
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full parameterization of the read channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub offset_mu_b: f64,
    pub offset_sigma_b: f64,
    pub noise_model: NoiseModel,
}

/// Returns `(ratio * mu0, ratio * mu1)`: equal relative spread in both states.
pub fn derive_sigmas(mu0: f64, mu1: f64, ratio: f64) -> Result<(f64, f64)> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("sigma/mu ratio must be positive, got {ratio}")));
    }
    if !(mu0 > 0.0 && mu1 > 0.0 && mu0.is_finite() && mu1.is_finite()) {
        return Err(Error::invalid(format!(
            "nominal resistances must be positive, got mu0={mu0}, mu1={mu1}"
        )));
    }
    Ok((ratio * mu0, ratio * mu1))
}

/// Shape `alpha` of `Beta(alpha, 1.2 alpha)` whose variance equals `sigma^2`.
///
/// The variance of that law is `(1.2/4.84) / (2.2 alpha + 1)`, so a positive
/// solution exists only for `sigma^2 < 1.2/4.84`.
pub fn beta_alpha_for_sigma(sigma: f64) -> Result<f64> {
    let var = sigma * sigma;
    if !(sigma > 0.0) || !var.is_finite() || var >= BETA_VARIANCE_SUP {
        return Err(Error::invalid(format!(
            "beta noise needs 0 < sigma^2 < {BETA_VARIANCE_SUP:.6} (1.2/4.84), got sigma={sigma}"
        )));
    }
    Ok((BETA_VARIANCE_SUP / var - 1.0) / (1.0 + BETA_SHAPE_RATIO))
}

impl ChannelParams {
    pub fn new(
        mu0: f64,
        mu1: f64,
        sigma0: f64,
        sigma1: f64,
        offset_mu_b: f64,
        offset_sigma_b: f64,
        noise_model: NoiseModel,
    ) -> Result<Self> {
        let p = ChannelParams {
            mu0,
            mu1,
            sigma0,
            sigma1,
            offset_mu_b,
            offset_sigma_b,
            noise_model,
        };
        p.validate()?;
        Ok(p)
    }

    /// Channel with `sigma_i = ratio * mu_i` and an absolute offset spread.
    pub fn from_ratio(
        mu0: f64,
        mu1: f64,
        ratio: f64,
        offset_mu_b: f64,
        offset_sigma_b: f64,
        noise_model: NoiseModel,
    ) -> Result<Self> {
        let (sigma0, sigma1) = derive_sigmas(mu0, mu1, ratio)?;
        Self::new(mu0, mu1, sigma0, sigma1, offset_mu_b, offset_sigma_b, noise_model)
    }

    /// The `mu0 = 1 kΩ`, `mu1 = 2 kΩ` cell with `sigma_b` given relative to `mu1`.
    pub fn stt_mram(ratio: f64, offset_mu_b: f64, sigma_b_over_mu1: f64, noise_model: NoiseModel) -> Result<Self> {
        Self::from_ratio(1.0, 2.0, ratio, offset_mu_b, sigma_b_over_mu1 * 2.0, noise_model)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu0,
            self.mu1,
            self.sigma0,
            self.sigma1,
            self.offset_mu_b,
            self.offset_sigma_b,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("channel parameters must be finite"));
        }
        if !(self.mu0 < self.mu1) {
            return Err(Error::invalid(format!(
                "need mu0 < mu1, got mu0={}, mu1={}",
                self.mu0, self.mu1
            )));
        }
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) {
            return Err(Error::invalid(format!(
                "need sigma0, sigma1 > 0, got {}, {}",
                self.sigma0, self.sigma1
            )));
        }
        if self.offset_sigma_b < 0.0 {
            return Err(Error::invalid(format!(
                "offset_sigma_b must be >= 0, got {}",
                self.offset_sigma_b
            )));
        }
        if self.noise_model == NoiseModel::CenteredBeta {
            beta_alpha_for_sigma(self.sigma0)?;
            beta_alpha_for_sigma(self.sigma1)?;
        }
        Ok(())
    }

    pub fn sigma(&self, state: u8) -> f64 {
        if state == 0 {
            self.sigma0
        } else {
            self.sigma1
        }
    }

    pub fn mu(&self, state: u8) -> f64 {
        if state == 0 {
            self.mu0
        } else {
            self.mu1
        }
    }

    /// `sigma0 / mu0`.
    pub fn ratio(&self) -> f64 {
        self.sigma0 / self.mu0
    }

    pub fn sigma_b_over_mu1(&self) -> f64 {
        self.offset_sigma_b / self.mu1
    }

    /// Same channel with the offset removed.
    pub fn without_offset(&self) -> Self {
        ChannelParams {
            offset_mu_b: 0.0,
            offset_sigma_b: 0.0,
            ..self.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialize");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn sampler(&self) -> Result<ChannelSampler> {
        ChannelSampler::new(self)
    }
}

#[derive(Clone, Debug)]
enum StateNoise {
    Gaussian(Normal<f64>),
    CenteredBeta(Beta<f64>),
}

impl StateNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StateNoise::Gaussian(d) => d.sample(rng),
            StateNoise::CenteredBeta(d) => d.sample(rng) - BETA_MEAN,
        }
    }
}

/// Pre-built distributions for one [`ChannelParams`].
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    params: ChannelParams,
    noise: [StateNoise; 2],
    offset: Option<Normal<f64>>,
}

impl ChannelSampler {
    pub fn new(params: &ChannelParams) -> Result<Self> {
        params.validate()?;
        let build = |sigma: f64| -> Result<StateNoise> {
            Ok(match params.noise_model {
                NoiseModel::Gaussian => StateNoise::Gaussian(
                    Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?,
                ),
                NoiseModel::CenteredBeta => {
                    let alpha = beta_alpha_for_sigma(sigma)?;
                    StateNoise::CenteredBeta(
                        Beta::new(alpha, BETA_SHAPE_RATIO * alpha).map_err(|e| Error::invalid(e.to_string()))?,
                    )
                }
            })
        };
        let offset = if params.offset_sigma_b > 0.0 {
            Some(Normal::new(params.offset_mu_b, params.offset_sigma_b).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(ChannelSampler {
            params: params.clone(),
            noise: [build(params.sigma0)?, build(params.sigma1)?],
            offset,
        })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// One draw of the zero-mean variation `n_k` for the given state.
    pub fn sample_noise<R: Rng + ?Sized>(&self, state: u8, rng: &mut R) -> f64 {
        self.noise[usize::from(state != 0)].sample(rng)
    }

    fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.offset {
            Some(d) => d.sample(rng),
            None => self.params.offset_mu_b,
        }
    }

    /// One read of a cell storing `bit`.
    pub fn read_cell<R: Rng + ?Sized>(&self, bit: u8, rng: &mut R) -> f64 {
        if bit == 0 {
            self.params.mu0 + self.sample_noise(0, rng)
        } else {
            self.params.mu1 + self.sample_noise(1, rng) + self.sample_offset(rng)
        }
    }

    /// Reads back `bits` that were written by the caller.
    pub fn read_bits<R: Rng + ?Sized>(&self, bits: Vec<u8>, rng: &mut R) -> Block {
        let y = bits.iter().map(|&b| self.read_cell(b, rng)).collect();
        Block { x: bits, y }
    }

    /// `n` i.i.d. uniform bits and their reads.
    pub fn sample_block<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Block {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let bit = u8::from(rng.random::<bool>());
            x.push(bit);
            y.push(self.read_cell(bit, rng));
        }
        Block { x, y }
    }

    /// Block `index` of the `purpose` family under `seed`.
    pub fn block_at(&self, n: usize, seed: u64, purpose: Purpose, index: u64) -> Block {
        let mut rng = block_rng(seed, purpose, index);
        self.sample_block(n, &mut rng)
    }

    /// Blocks `start .. start + count`, generated in parallel; identical to
    /// calling [`ChannelSampler::block_at`] for each index in order.
    pub fn generate(&self, n: usize, count: usize, seed: u64, purpose: Purpose, start: u64) -> Vec<Block> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.block_at(n, seed, purpose, start + i))
            .collect()
    }
}

/// Convenience wrapper building a sampler for a single draw.
pub fn sample_noise(params: &ChannelParams, state: u8, rng: &mut StreamRng) -> Result<f64> {
    Ok(params.sampler()?.sample_noise(state, rng))
}

/// Convenience wrapper building a sampler for a single block.
pub fn sample_block(params: &ChannelParams, n: usize, rng: &mut StreamRng) -> Result<Block> {
    if n == 0 {
        return Err(Error::invalid("block length must be >= 1"));
    }
    Ok(params.sampler()?.sample_block(n, rng))
}

/// One codeword-length record of channel inputs and reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub x: Vec<u8>,
    pub y: Vec<f64>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Copy of this block with every read passed through `q`.
    pub fn quantized(&self, q: &QuantizerSpec) -> Block {
        Block {
            x: self.x.clone(),
            y: self.y.iter().map(|&v| q.quantize(v)).collect(),
        }
    }
}

/// Uniform mid-rise read quantizer over `[lo, hi]` with `2^bits` cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    pub bits: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Default for QuantizerSpec {
    /// 3 bits over `[0.5, 2.5]` kΩ.
    fn default() -> Self {
        QuantizerSpec {
            bits: 3,
            lo: 0.5,
            hi: 2.5,
        }
    }
}

impl QuantizerSpec {
    pub fn new(bits: u32, lo: f64, hi: f64) -> Result<Self> {
        let q = QuantizerSpec { bits, lo, hi };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=24).contains(&self.bits) {
            return Err(Error::invalid(format!("quantizer bits must be in 1..=24, got {}", self.bits)));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid(format!(
                "quantizer range must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        1usize << self.bits
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.levels() as f64
    }

    /// Cell index of `y`; a read on a cell boundary belongs to the upper cell.
    pub fn cell(&self, y: f64) -> usize {
        let last = self.levels() - 1;
        if !(y > self.lo) {
            return 0;
        }
        let k = ((y - self.lo) / self.step()).floor();
        if k >= last as f64 {
            last
        } else {
            k as usize
        }
    }

    pub fn midpoint(&self, cell: usize) -> f64 {
        self.lo + (cell as f64 + 0.5) * self.step()
    }

    pub fn quantize(&self, y: f64) -> f64 {
        self.midpoint(self.cell(y))
    }
}

/// Quantizes `y` under `spec`.
pub fn quantize(y: f64, spec: &QuantizerSpec) -> f64 {
    spec.quantize(y)
}
