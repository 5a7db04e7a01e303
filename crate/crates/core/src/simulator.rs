//! Monte Carlo bit-error-rate simulation of FTN links.
//!
//! The primary path draws matched-filter samples directly: full ISI from every
//! tap plus Gaussian noise with covariance `(N0/2) h((k-k')T)`, generated by a
//! banded Cholesky factor. A waveform-level path exists as a cross-check.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{autocorr_taps, IsiTaps};
use crate::equalizer::{Constellation, Detector, TrellisConfig};
use crate::error::{FtnError, Result};
use crate::pulse::Pulse;

/// Blocks simulated between early-stop checks.
const BATCH: usize = 32;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub pulse: Pulse,
    pub t_mod: f64,
    pub constellation: Constellation,
    pub depth: usize,
    pub ebn0_db: Vec<f64>,
    pub max_bits: u64,
    pub max_errors: u64,
    pub block_len: usize,
    pub master_seed: u64,
}

impl SimConfig {
    /// Binary signalling, 400-error early stop, 10^7 bits, blocks of 2048.
    pub fn new(pulse: Pulse, t_mod: f64, depth: usize) -> Self {
        Self {
            pulse,
            t_mod,
            constellation: Constellation::binary(),
            depth,
            ebn0_db: Vec::new(),
            max_bits: 10_000_000,
            max_errors: 400,
            block_len: 2048,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub ebn0_db: f64,
    pub n0: f64,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub blocks: u64,
    pub seed_base: u64,
}

impl BerPoint {
    /// Binomial standard error of the estimate.
    pub fn std_error(&self) -> f64 {
        (self.ber * (1.0 - self.ber) / self.bits_sent as f64).sqrt()
    }

    /// Wilson score interval at normal quantile `z`.
    pub fn wilson_interval(&self, z: f64) -> (f64, f64) {
        let n = self.bits_sent as f64;
        let p = self.ber;
        let z2 = z * z;
        let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
        let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        ((centre - half).max(0.0), (centre + half).min(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub pulse_kind: String,
    pub t_mod: f64,
    pub depth: usize,
    pub constellation_size: usize,
    pub block_len: usize,
    pub max_bits: u64,
    pub max_errors: u64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerResult {
    pub points: Vec<BerPoint>,
    pub config: SimSummary,
    pub wall_time_s: f64,
}

/// Lower-triangular band factor of a symmetric Toeplitz matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    band: usize,
    /// Row i holds L[i][i-band..=i], left-padded with zeros.
    rows: Vec<f64>,
    jitter: f64,
}

impl BandedCholesky {
    /// Factors the `n x n` Toeplitz matrix with first row `taps` (band = taps.len() - 1),
    /// escalating diagonal jitter `h(0) * {0, 1e-12, 1e-10, 1e-8}` before giving up.
    pub fn toeplitz(taps: &[f64], n: usize) -> Result<Self> {
        let mut last = (0, 0.0);
        for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
            match Self::try_factor(taps, n, jitter * taps[0]) {
                Ok(f) => return Ok(f),
                Err(e) => last = e,
            }
        }
        Err(FtnError::CovarianceNotPd {
            pivot: last.0,
            value: last.1,
        })
    }

    fn try_factor(taps: &[f64], n: usize, jitter: f64) -> std::result::Result<Self, (usize, f64)> {
        let band = taps.len() - 1;
        let width = band + 1;
        let mut rows = vec![0.0; n * width];
        // L[i][j] stored at rows[i * width + (j + band - i)]
        for i in 0..n {
            let j0 = i.saturating_sub(band);
            for j in j0..=i {
                let mut s = taps[i - j];
                if i == j {
                    s += jitter;
                }
                let k0 = j0.max(j.saturating_sub(band));
                for k in k0..j {
                    s -= rows[i * width + (k + band - i)] * rows[j * width + (k + band - j)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err((i, s));
                    }
                    rows[i * width + band] = s.sqrt();
                } else {
                    rows[i * width + (j + band - i)] = s / rows[j * width + band];
                }
            }
        }
        Ok(Self { n, band, rows, jitter })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `out = scale * L z`.
    pub fn apply(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        let width = self.band + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.band);
            let mut acc = 0.0;
            for j in j0..=i {
                acc += self.rows[i * width + (j + self.band - i)] * z[j];
            }
            out[i] = scale * acc;
        }
    }
}

/// Complementary Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Pure function of (master seed, stream, block) used to seed each block's RNG.
pub fn block_seed(master: u64, stream: u64, block: u64) -> u64 {
    let mut z = master
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ block.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counts per block, summed over a batch.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    bits: u64,
    errors: u64,
}

/// A configured link: taps, noise factor and detector, reused across points.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    taps: IsiTaps,
    noise: BandedCholesky,
    detector: Detector,
    eb: f64,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        let taps = autocorr_taps(&config.pulse, config.t_mod)?;
        let l_max = taps.l_max();
        if config.block_len < 10 * l_max.max(1) {
            return Err(FtnError::InvalidConfig(format!(
                "block length {} must be at least 10 * l_max = {}",
                config.block_len,
                10 * l_max
            )));
        }
        if config.max_errors < 100 {
            return Err(FtnError::InvalidConfig(format!(
                "max_errors must be at least 100, got {}",
                config.max_errors
            )));
        }
        if config.max_bits == 0 {
            return Err(FtnError::InvalidConfig("max_bits must be positive".into()));
        }
        let padded: Vec<f64> = (0..=config.depth).map(|l| taps.at(l as i64)).collect();
        let trellis = TrellisConfig::new(config.depth, config.constellation.clone(), &padded, config.block_len)?;
        let noise = BandedCholesky::toeplitz(taps.as_slice(), config.block_len)?;
        let eb = taps.at(0) / config.constellation.bits_per_symbol() as f64;
        Ok(Self {
            detector: Detector::new(trellis),
            config,
            taps,
            noise,
            eb,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn taps(&self) -> &IsiTaps {
        &self.taps
    }

    pub fn n0(&self, ebn0_db: f64) -> f64 {
        self.eb / 10f64.powf(ebn0_db / 10.0)
    }

    fn counted_bits_per_block(&self) -> u64 {
        let l = self.taps.l_max();
        ((self.config.block_len - 2 * l) as u64) * self.config.constellation.bits_per_symbol() as u64
    }

    /// One block of correlated matched-filter noise with covariance `(N0/2) h`.
    pub fn discrete_noise(&self, n0: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.config.block_len;
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = vec![0.0; n];
        self.noise.apply(&z, (0.5 * n0).sqrt(), &mut out);
        out
    }

    fn draw_symbols(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let m = self.config.constellation.size();
        (0..self.config.block_len).map(|_| rng.random_range(0..m)).collect()
    }

    fn count_errors(&self, sent: &[usize], observations: &[f64]) -> Result<Tally> {
        let decisions = self.detector.detect(observations)?;
        let l = self.taps.l_max();
        let c = &self.config.constellation;
        let errors = (l..self.config.block_len - l)
            .map(|k| c.bit_distance(sent[k], decisions[k]) as u64)
            .sum();
        Ok(Tally {
            bits: self.counted_bits_per_block(),
            errors,
        })
    }

    fn discrete_block(&self, n0: f64, seed: u64) -> Result<Tally> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sent = self.draw_symbols(&mut rng);
        let noise = self.discrete_noise(n0, &mut rng);
        let c = &self.config.constellation;
        let n = self.config.block_len;
        let h = self.taps.as_slice();
        let amps: Vec<f64> = sent.iter().map(|&s| c.point(s)).collect();
        let mut obs = noise;
        for (k, y) in obs.iter_mut().enumerate() {
            let mut acc = h[0] * amps[k];
            for (l, &hl) in h.iter().enumerate().skip(1) {
                if k >= l {
                    acc += hl * amps[k - l];
                }
                if k + l < n {
                    acc += hl * amps[k + l];
                }
            }
            *y += acc;
        }
        self.count_errors(&sent, &obs)
    }

    fn stream_id(ebn0_db: f64) -> u64 {
        ebn0_db.to_bits()
    }

    fn accumulate<F>(&self, ebn0_db: f64, max_blocks: Option<u64>, block: F) -> Result<BerPoint>
    where
        F: Fn(u64) -> Result<Tally> + Sync,
    {
        let n0 = self.n0(ebn0_db);
        let seed_base = block_seed(self.config.master_seed, Self::stream_id(ebn0_db), 0);
        let per_block = self.counted_bits_per_block();
        let mut total = Tally::default();
        let mut blocks = 0u64;
        loop {
            let by_bits = (self.config.max_bits - total.bits.min(self.config.max_bits)).div_ceil(per_block);
            let remaining = match max_blocks {
                Some(b) => b - blocks,
                None => by_bits,
            };
            if remaining == 0 || (max_blocks.is_none() && total.errors >= self.config.max_errors) {
                break;
            }
            let batch = remaining.min(BATCH as u64);
            let tallies: Vec<Result<Tally>> = (blocks..blocks + batch).into_par_iter().map(&block).collect();
            for t in tallies {
                let t = t?;
                total.bits += t.bits;
                total.errors += t.errors;
            }
            blocks += batch;
        }
        Ok(BerPoint {
            ebn0_db,
            n0,
            bits_sent: total.bits,
            bit_errors: total.errors,
            ber: total.errors as f64 / total.bits as f64,
            blocks,
            seed_base,
        })
    }

    /// BER at one E_b/N_0 with the discrete model; stops at `max_errors` or `max_bits`.
    pub fn simulate_point(&self, ebn0_db: f64) -> Result<BerPoint> {
        let n0 = self.n0(ebn0_db);
        let stream = Self::stream_id(ebn0_db);
        let master = self.config.master_seed;
        self.accumulate(ebn0_db, None, |b| self.discrete_block(n0, block_seed(master, stream, b)))
    }

    /// All configured points.
    pub fn run(&self) -> Result<BerResult> {
        let start = Instant::now();
        let points = self
            .config
            .ebn0_db
            .iter()
            .map(|&e| self.simulate_point(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(BerResult {
            points,
            config: self.summary(),
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    pub fn summary(&self) -> SimSummary {
        SimSummary {
            pulse_kind: self.config.pulse.kind_name().to_string(),
            t_mod: self.config.t_mod,
            depth: self.config.depth,
            constellation_size: self.config.constellation.size(),
            block_len: self.config.block_len,
            max_bits: self.config.max_bits,
            max_errors: self.config.max_errors,
            master_seed: self.config.master_seed,
        }
    }

    /// BER over exactly `n_blocks` blocks with waveform synthesis and a sampled matched filter.
    pub fn waveform_point(&self, ebn0_db: f64, n_blocks: u64) -> Result<BerPoint> {
        let wave = Waveform::new(&self.config.pulse, self.config.t_mod, self.config.block_len);
        let n0 = self.n0(ebn0_db);
        // separate stream from the discrete path
        let stream = Self::stream_id(ebn0_db) ^ 0x5741_5645;
        let master = self.config.master_seed;
        self.accumulate(ebn0_db, Some(n_blocks), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(block_seed(master, stream, b));
            let sent = self.draw_symbols(&mut rng);
            let amps: Vec<f64> = sent.iter().map(|&s| self.config.constellation.point(s)).collect();
            let obs = wave.receive(&amps, n0, &mut rng);
            self.count_errors(&sent, &obs)
        })
    }

    /// Empirical autocovariance of waveform-path noise after the matched filter, lags `0..=max_lag`,
    /// averaged over blocks until at least `samples` sampled outputs are used.
    pub fn waveform_noise_autocov(&self, ebn0_db: f64, samples: usize, max_lag: usize, seed: u64) -> Vec<f64> {
        let wave = Waveform::new(&self.config.pulse, self.config.t_mod, self.config.block_len);
        let n0 = self.n0(ebn0_db);
        let zeros = vec![0.0; self.config.block_len];
        let mut sums = vec![0.0; max_lag + 1];
        let mut counts = vec![0usize; max_lag + 1];
        let mut used = 0;
        let mut block = 0u64;
        while used < samples {
            let mut rng = ChaCha8Rng::seed_from_u64(block_seed(seed, 0x4E4F_4953, block));
            let y = wave.receive(&zeros, n0, &mut rng);
            for lag in 0..=max_lag {
                for k in 0..y.len() - lag {
                    sums[lag] += y[k] * y[k + lag];
                    counts[lag] += 1;
                }
            }
            used += y.len();
            block += 1;
        }
        sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect()
    }
}

/// Oversampled transmitter and matched filter at `dt = T / 16`.
struct Waveform {
    /// p(j dt) for j = -half..=half.
    taps: Vec<f64>,
    half: usize,
    stride: usize,
    dt: f64,
    block_len: usize,
}

impl Waveform {
    const OVERSAMPLE: usize = 16;

    fn new(pulse: &Pulse, t_mod: f64, block_len: usize) -> Self {
        let dt = t_mod / Self::OVERSAMPLE as f64;
        let half = (0.5 * pulse.ts() / dt).floor() as usize;
        let taps = (0..=2 * half)
            .map(|j| pulse.eval((j as f64 - half as f64) * dt))
            .collect();
        Self {
            taps,
            half,
            stride: Self::OVERSAMPLE,
            dt,
            block_len,
        }
    }

    /// Matched-filter samples at kT for symbols `amps` plus white noise of PSD N0/2.
    fn receive(&self, amps: &[f64], n0: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let len = (self.block_len - 1) * self.stride + 2 * self.half + 1;
        let sigma = (0.5 * n0 / self.dt).sqrt();
        // grid index g corresponds to t = (g - half) dt
        let mut r: Vec<f64> = if sigma > 0.0 {
            (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sigma * z
                })
                .collect()
        } else {
            vec![0.0; len]
        };
        for (k, &a) in amps.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let off = k * self.stride;
            for (j, p) in self.taps.iter().enumerate() {
                r[off + j] += a * p;
            }
        }
        (0..self.block_len)
            .map(|k| {
                let off = k * self.stride;
                self.dt * self.taps.iter().zip(&r[off..off + self.taps.len()]).map(|(p, x)| p * x).sum::<f64>()
            })
            .collect()
    }
}

/// Convenience wrapper: one point of the discrete model.
pub fn simulate_point(config: &SimConfig, ebn0_db: f64) -> Result<BerPoint> {
    Simulator::new(config.clone())?.simulate_point(ebn0_db)
}

/// Convenience wrapper: one point of the waveform model over `n_blocks` blocks.
pub fn waveform_crosscheck(config: &SimConfig, ebn0_db: f64, n_blocks: u64) -> Result<BerPoint> {
    Simulator::new(config.clone())?.waveform_point(ebn0_db, n_blocks)
}
