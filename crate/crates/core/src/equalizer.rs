//! Truncated Viterbi sequence detection on matched-filter samples (Ungerboeck metric).

use serde::{Deserialize, Serialize};

use crate::analysis::IsiTaps;
use crate::error::{FtnError, Result};

/// Real PAM alphabet with zero mean, unit average energy, and Gray bit labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    points: Vec<f64>,
    labels: Vec<u32>,
    bits_per_symbol: u32,
}

impl Constellation {
    /// M-ary PAM, M a power of two; points ascending.
    pub fn pam(m: usize) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() || m > 256 {
            return Err(FtnError::InvalidConfig(format!(
                "constellation size must be a power of two in [2, 256], got {m}"
            )));
        }
        let scale = (3.0 / ((m * m - 1) as f64)).sqrt();
        let points = (0..m)
            .map(|i| (2.0 * i as f64 - (m as f64 - 1.0)) * scale)
            .collect();
        let labels = (0..m as u32).map(|i| i ^ (i >> 1)).collect();
        Ok(Self {
            points,
            labels,
            bits_per_symbol: m.trailing_zeros(),
        })
    }

    pub fn binary() -> Self {
        Self::pam(2).expect("M=2 is valid")
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> f64 {
        self.points[index]
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    /// Index of the nearest point (ties to the lower index).
    pub fn slice(&self, x: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (x - p).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    /// Bit errors between two symbol indices under the labeling.
    pub fn bit_distance(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrellisConfig {
    depth: usize,
    constellation: Constellation,
    /// h(0..=depth).
    taps: Vec<f64>,
    block_len: usize,
}

impl TrellisConfig {
    pub fn new(depth: usize, constellation: Constellation, taps: &[f64], block_len: usize) -> Result<Self> {
        if taps.len() < depth + 1 {
            return Err(FtnError::InvalidConfig(format!(
                "depth {depth} needs {} taps, got {}",
                depth + 1,
                taps.len()
            )));
        }
        if block_len == 0 {
            return Err(FtnError::InvalidConfig("block length must be positive".into()));
        }
        let states = (constellation.size() as u128).pow(depth as u32);
        if states > 1 << 20 {
            return Err(FtnError::InvalidConfig(format!("trellis with {states} states is too large")));
        }
        Ok(Self {
            depth,
            constellation,
            taps: taps[..=depth].to_vec(),
            block_len,
        })
    }

    pub fn from_isi_taps(depth: usize, constellation: Constellation, taps: &IsiTaps, block_len: usize) -> Result<Self> {
        Self::new(depth, constellation, taps.as_slice(), block_len)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn state_count(&self) -> usize {
        self.constellation.size().pow(self.depth as u32)
    }
}

/// Work counters from one detection run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectStats {
    pub states: usize,
    pub branch_evaluations: u64,
}

/// Viterbi detector with precomputed steady-state branch terms.
#[derive(Debug, Clone)]
pub struct Detector {
    config: TrellisConfig,
    /// For each state: sum_l h(l) a_{k-l} over the stored history.
    interference: Vec<f64>,
    /// -h(0)/2 a^2 per symbol.
    self_term: Vec<f64>,
}

impl Detector {
    pub fn new(config: TrellisConfig) -> Self {
        let m = config.constellation.size();
        let states = config.state_count();
        let interference = (0..states)
            .map(|s| history_interference(&config, s, usize::MAX))
            .collect();
        let self_term = config
            .constellation
            .points()
            .iter()
            .map(|a| -0.5 * config.taps[0] * a * a)
            .collect();
        debug_assert_eq!(config.constellation.points().len(), m);
        Self {
            config,
            interference,
            self_term,
        }
    }

    pub fn config(&self) -> &TrellisConfig {
        &self.config
    }

    /// Symbol indices maximizing the cumulative metric.
    pub fn detect(&self, observations: &[f64]) -> Result<Vec<usize>> {
        Ok(self.detect_instrumented(observations)?.0)
    }

    pub fn detect_instrumented(&self, observations: &[f64]) -> Result<(Vec<usize>, DetectStats)> {
        self.run(observations, |_| 0.0)
    }

    fn run<F: Fn(usize) -> f64>(&self, obs: &[f64], offset: F) -> Result<(Vec<usize>, DetectStats)> {
        let cfg = &self.config;
        if obs.len() != cfg.block_len {
            return Err(FtnError::DimensionMismatch {
                expected: cfg.block_len,
                got: obs.len(),
            });
        }
        let m = cfg.constellation.size();
        let states = cfg.state_count();
        let points = cfg.constellation.points();
        if cfg.depth == 0 {
            // memoryless metric: per-sample maximization
            let decisions = obs
                .iter()
                .map(|&y| {
                    let mut best = (0, f64::NEG_INFINITY);
                    for (x, &a) in points.iter().enumerate() {
                        let v = a * y + self.self_term[x];
                        if v > best.1 {
                            best = (x, v);
                        }
                    }
                    best.0
                })
                .collect();
            let stats = DetectStats {
                states: 1,
                branch_evaluations: (obs.len() * m) as u64,
            };
            return Ok((decisions, stats));
        }
        let shift = states / m; // M^{L-1}

        let mut metric = vec![f64::NEG_INFINITY; states];
        metric[0] = 0.0;
        let mut next = vec![f64::NEG_INFINITY; states];
        // survivor: the oldest history digit of the chosen predecessor
        let mut survivors = vec![0u8; cfg.block_len * states];
        let mut stats = DetectStats {
            states,
            branch_evaluations: 0,
        };
        let mut masked = vec![0.0; states];

        for (k, &y) in obs.iter().enumerate() {
            let warmup = k < cfg.depth;
            if warmup {
                for (s, v) in masked.iter_mut().enumerate() {
                    *v = history_interference(cfg, s, k);
                }
            }
            let interference = if warmup { &masked } else { &self.interference };
            next.fill(f64::NEG_INFINITY);
            let row = &mut survivors[k * states..(k + 1) * states];
            let extra = offset(k);
            for s_new in 0..states {
                let x = s_new % m;
                let base = s_new / m;
                let a = points[x];
                let local = a * y + self.self_term[x] + extra;
                let mut best = f64::NEG_INFINITY;
                let mut best_d = 0u8;
                for d in 0..m {
                    let s = base + d * shift;
                    let pm = metric[s];
                    if pm == f64::NEG_INFINITY {
                        continue;
                    }
                    stats.branch_evaluations += 1;
                    let cand = pm + local - a * interference[s];
                    if cand > best {
                        best = cand;
                        best_d = d as u8;
                    }
                }
                next[s_new] = best;
                row[s_new] = best_d;
            }
            std::mem::swap(&mut metric, &mut next);
        }

        let mut decisions = vec![0usize; cfg.block_len];
        let mut state = 0;
        let mut best = f64::NEG_INFINITY;
        for (s, &v) in metric.iter().enumerate() {
            if v > best {
                best = v;
                state = s;
            }
        }
        for k in (0..cfg.block_len).rev() {
            decisions[k] = state % m;
            let d = survivors[k * states + state] as usize;
            state = state / m + d * shift;
        }
        Ok((decisions, stats))
    }
}

/// Interference from the history encoded in `state`, with positions older than
/// `available` symbols treated as virtual zeros.
fn history_interference(cfg: &TrellisConfig, state: usize, available: usize) -> f64 {
    let m = cfg.constellation.size();
    let mut s = state;
    let mut acc = 0.0;
    for l in 1..=cfg.depth {
        let digit = s % m;
        s /= m;
        if l <= available {
            acc += cfg.taps[l] * cfg.constellation.point(digit);
        }
    }
    acc
}

/// Convenience wrapper around [`Detector`].
pub fn detect(config: &TrellisConfig, observations: &[f64]) -> Result<Vec<usize>> {
    Detector::new(config.clone()).detect(observations)
}

/// The cumulative metric of a symbol-index sequence, with zero history before the block.
pub fn sequence_metric(config: &TrellisConfig, observations: &[f64], symbols: &[usize]) -> f64 {
    let c = &config.constellation;
    let mut total = 0.0;
    for (k, (&y, &x)) in observations.iter().zip(symbols).enumerate() {
        let a = c.point(x);
        let mut isi = 0.0;
        for l in 1..=config.depth.min(k) {
            isi += config.taps[l] * c.point(symbols[k - l]);
        }
        total += a * y - 0.5 * config.taps[0] * a * a - a * isi;
    }
    total
}
