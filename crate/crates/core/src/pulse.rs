//! Unit-energy, time-limited transmit pulses.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FtnError, Result};
use crate::pswf::{dot, PswfBasis};
use crate::quadrature::{normalized_legendre, CompositeRule, GaussLegendre};

/// Panel length of the support quadrature, in units of 1/(2W).
const PANEL_LEN: f64 = 0.5;
const PANEL_ORDER: usize = 16;

#[derive(Debug, Clone)]
pub enum PulseShape {
    TruncatedRrc {
        beta: f64,
        /// Nyquist design interval `(1 + beta) / (2 W)`.
        t_nyq: f64,
        /// Rescale applied after truncation so the pulse has unit energy.
        norm_factor: f64,
    },
    PswfCombination {
        basis: Arc<PswfBasis>,
        alphas: Vec<f64>,
        /// `sum_i alpha_i d_i`: the pulse as one Legendre series.
        legendre: Vec<f64>,
    },
}

/// A real pulse `p(t)`, zero outside `[-ts/2, ts/2]`, with unit energy.
#[derive(Debug, Clone)]
pub struct Pulse {
    ts: f64,
    w: f64,
    shape: PulseShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub in_band_energy: f64,
    pub oobe: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<(f64, f64)>>,
}

/// Root raised cosine with unit energy over the real line.
pub fn rrc(t: f64, beta: f64, t_sym: f64) -> f64 {
    let x = t / t_sym;
    let scale = 1.0 / t_sym.sqrt();
    if x.abs() < 1e-12 {
        return scale * (1.0 - beta + 4.0 * beta / PI);
    }
    if beta > 0.0 {
        let x0 = 1.0 / (4.0 * beta);
        let gap = x.abs() - x0;
        if gap.abs() < 1e-4 {
            // 0/0 at |x| = 1/(4 beta): quadratic through the limit and two safe neighbours
            let h = 1e-3;
            let centre = edge_limit(beta) * scale;
            let left = rrc_direct(x0 - h, beta) * scale;
            let right = rrc_direct(x0 + h, beta) * scale;
            let u = gap / h;
            return centre + 0.5 * u * (right - left) + 0.5 * u * u * (right - 2.0 * centre + left);
        }
    }
    scale * rrc_direct(x, beta)
}

fn rrc_direct(x: f64, beta: f64) -> f64 {
    let num = (PI * x * (1.0 - beta)).sin() + 4.0 * beta * x * (PI * x * (1.0 + beta)).cos();
    let den = PI * x * (1.0 - (4.0 * beta * x).powi(2));
    num / den
}

fn edge_limit(beta: f64) -> f64 {
    let a = PI / (4.0 * beta);
    beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
}

impl Pulse {
    /// Root raised cosine with roll-off `beta` at its Nyquist interval `(1 + beta) / (2 w)`,
    /// truncated to `[-ts/2, ts/2]` and then rescaled to unit energy.
    pub fn truncated_rrc(beta: f64, w: f64, ts: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(FtnError::InvalidConfig(format!("roll-off must lie in [0, 1], got {beta}")));
        }
        if !(ts.is_finite() && ts > 0.0) {
            return Err(FtnError::InvalidConfig(format!("duration must be positive, got {ts}")));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(FtnError::InvalidConfig(format!("bandwidth must be positive, got {w}")));
        }
        let t_nyq = (1.0 + beta) / (2.0 * w);
        let rule = support_rule(ts, w);
        let raw_energy = rule.integrate(|t| rrc(t, beta, t_nyq).powi(2));
        Ok(Self {
            ts,
            w,
            shape: PulseShape::TruncatedRrc {
                beta,
                t_nyq,
                norm_factor: 1.0 / raw_energy.sqrt(),
            },
        })
    }

    /// `p(t) = sum_i alpha_i u_i(t)` over unit-energy truncated PSWFs. The coefficient
    /// vector is renormalized to exactly unit length.
    pub fn pswf(basis: Arc<PswfBasis>, alphas: &[f64], ts: f64, w: f64) -> Result<Self> {
        if !(ts.is_finite() && ts > 0.0 && w.is_finite() && w > 0.0) {
            return Err(FtnError::InvalidConfig(format!(
                "duration and bandwidth must be positive, got ts = {ts}, w = {w}"
            )));
        }
        let required = 2.0 * ts * w;
        if (basis.c() - required).abs() > 1e-12 * required.max(1.0) {
            return Err(FtnError::BasisMismatch {
                basis_c: basis.c(),
                required,
            });
        }
        if alphas.len() > basis.len() {
            return Err(FtnError::DimensionMismatch {
                expected: basis.len(),
                got: alphas.len(),
            });
        }
        let energy: f64 = alphas.iter().map(|a| a * a).sum();
        if (energy - 1.0).abs() > 1e-6 {
            return Err(FtnError::InvalidConfig(format!(
                "coefficients must have unit energy, got sum of squares {energy}"
            )));
        }
        let norm = energy.sqrt();
        let alphas: Vec<f64> = alphas.iter().map(|a| a / norm).collect();
        let order = basis.config().legendre_order;
        let mut legendre = vec![0.0; order];
        for (i, a) in alphas.iter().enumerate() {
            for (g, d) in legendre.iter_mut().zip(basis.legendre_coeffs(i)) {
                *g += a * d;
            }
        }
        Ok(Self {
            ts,
            w,
            shape: PulseShape::PswfCombination {
                basis,
                alphas,
                legendre,
            },
        })
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn shape(&self) -> &PulseShape {
        &self.shape
    }

    pub fn alphas(&self) -> Option<&[f64]> {
        match &self.shape {
            PulseShape::PswfCombination { alphas, .. } => Some(alphas),
            PulseShape::TruncatedRrc { .. } => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.shape {
            PulseShape::TruncatedRrc { .. } => "truncated_rrc",
            PulseShape::PswfCombination { .. } => "pswf_combination",
        }
    }

    /// `p(t)`; exactly zero outside the support.
    pub fn eval(&self, t: f64) -> f64 {
        let half = 0.5 * self.ts;
        if !(t.abs() <= half) {
            return 0.0;
        }
        match &self.shape {
            PulseShape::TruncatedRrc {
                beta,
                t_nyq,
                norm_factor,
            } => norm_factor * rrc(t, *beta, *t_nyq),
            PulseShape::PswfCombination { legendre, .. } => {
                let mut buf = vec![0.0; legendre.len()];
                normalized_legendre(t / half, &mut buf);
                (2.0 / self.ts).sqrt() * dot(legendre, &buf)
            }
        }
    }

    /// Quadrature rule on the support; the pulse is smooth inside it.
    pub fn support_rule(&self) -> CompositeRule {
        support_rule(self.ts, self.w)
    }

    pub fn energy(&self) -> f64 {
        self.support_rule().integrate(|t| self.eval(t).powi(2))
    }

    /// Fourier transform `P(f) = int p(t) exp(-j 2 pi f t) dt` as (re, im).
    pub fn spectrum(&self, f: f64) -> (f64, f64) {
        spectrum_on(&self.sampled(), f)
    }

    /// (node, weight * p(node)) pairs for repeated spectral evaluation.
    pub fn sampled(&self) -> Vec<(f64, f64)> {
        let rule = self.support_rule();
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| (t, w * self.eval(t)))
            .collect()
    }

    /// Out-of-band energy. PSWF combinations use the exact concentration identity;
    /// other pulses integrate `|P(f)|^2` over `[-W, W]` numerically.
    pub fn oobe(&self) -> SpectrumReport {
        match &self.shape {
            PulseShape::PswfCombination { basis, alphas, .. } => {
                let oobe: f64 = alphas
                    .iter()
                    .zip(basis.complements())
                    .map(|(a, q)| a * a * q)
                    .sum();
                SpectrumReport {
                    in_band_energy: 1.0 - oobe,
                    oobe,
                    samples: None,
                }
            }
            PulseShape::TruncatedRrc { .. } => {
                let in_band = self.in_band_energy_numeric();
                SpectrumReport {
                    in_band_energy: in_band,
                    oobe: 1.0 - in_band,
                    samples: None,
                }
            }
        }
    }

    /// `int_{-W}^{W} |P(f)|^2 df` by quadrature over frequency (at least 2048 points),
    /// doubled until the out-of-band remainder is stable to 1e-4 relative.
    pub fn in_band_energy_numeric(&self) -> f64 {
        let samples = self.sampled();
        let gl = GaussLegendre::new(16);
        let band = |panels: usize| {
            let rule = CompositeRule::new(&gl, 0.0, self.w, panels);
            2.0 * rule.integrate(|f| {
                let (re, im) = spectrum_on(&samples, f);
                re * re + im * im
            })
        };
        let mut panels = 64;
        let mut coarse = band(panels / 2);
        let mut fine = band(panels);
        while ((1.0 - fine) - (1.0 - coarse)).abs() > 1e-4 * (1.0 - fine).abs() && panels < 4096 {
            panels *= 2;
            coarse = fine;
            fine = band(panels);
        }
        fine
    }

    /// `(f, |P(f)|^2)` on an even grid over `[-f_max, f_max]`.
    pub fn psd_samples(&self, f_max: f64, count: usize) -> Vec<(f64, f64)> {
        let samples = self.sampled();
        let count = count.max(2);
        (0..count)
            .map(|k| {
                let f = -f_max + 2.0 * f_max * k as f64 / (count - 1) as f64;
                let (re, im) = spectrum_on(&samples, f);
                (f, re * re + im * im)
            })
            .collect()
    }
}

fn support_rule(ts: f64, w: f64) -> CompositeRule {
    let gl = GaussLegendre::new(PANEL_ORDER);
    let panels = (2.0 * w * ts / PANEL_LEN).ceil().max(1.0) as usize;
    CompositeRule::new(&gl, -0.5 * ts, 0.5 * ts, panels)
}

pub(crate) fn spectrum_on(samples: &[(f64, f64)], f: f64) -> (f64, f64) {
    let mut re = 0.0;
    let mut im = 0.0;
    for &(t, wp) in samples {
        let (s, c) = (2.0 * PI * f * t).sin_cos();
        re += wp * c;
        im -= wp * s;
    }
    (re, im)
}

/// Design parameters recorded with a pulse file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_mod: Option<f64>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseMetadata {
    pub created_by: String,
    #[serde(default)]
    pub design_params: DesignParams,
}

pub const PULSE_FORMAT_VERSION: u32 = 1;

/// On-disk description of a pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseFile {
    pub format_version: u32,
    pub kind: String,
    pub ts: f64,
    pub w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Size of the PSWF family the coefficients refer to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_funcs: Option<usize>,
    pub metadata: PulseMetadata,
}

impl PulseFile {
    pub fn from_pulse(pulse: &Pulse, metadata: PulseMetadata) -> Self {
        let (beta, alphas, c, n_funcs) = match &pulse.shape {
            PulseShape::TruncatedRrc { beta, .. } => (Some(*beta), None, None, None),
            PulseShape::PswfCombination { basis, alphas, .. } => {
                (None, Some(alphas.clone()), Some(basis.c()), Some(basis.len()))
            }
        };
        Self {
            format_version: PULSE_FORMAT_VERSION,
            kind: pulse.kind_name().to_string(),
            ts: pulse.ts,
            w: pulse.w,
            beta,
            alphas,
            c,
            n_funcs,
            metadata,
        }
    }

    /// Rebuilds the pulse. PSWF pulses rebuild their basis deterministically.
    pub fn to_pulse(&self) -> Result<Pulse> {
        if self.format_version != PULSE_FORMAT_VERSION {
            return Err(FtnError::InvalidConfig(format!(
                "unsupported pulse format_version {}",
                self.format_version
            )));
        }
        match self.kind.as_str() {
            "truncated_rrc" => {
                let beta = self
                    .beta
                    .ok_or_else(|| FtnError::InvalidConfig("truncated_rrc pulse needs beta".into()))?;
                Pulse::truncated_rrc(beta, self.w, self.ts)
            }
            "pswf_combination" => {
                let alphas = self.alphas.as_ref().ok_or_else(|| {
                    FtnError::InvalidConfig("pswf_combination pulse needs alphas".into())
                })?;
                let c = self.c.unwrap_or(2.0 * self.ts * self.w);
                let n = self.n_funcs.unwrap_or(alphas.len()).max(alphas.len());
                let basis = PswfBasis::build(crate::pswf::PswfConfig::new(c, n))?;
                Pulse::pswf(Arc::new(basis), alphas, self.ts, self.w)
            }
            other => Err(FtnError::InvalidConfig(format!("unknown pulse kind {other:?}"))),
        }
    }
}

/// Optimal coefficients for `eps = 4.4e-4`, `T = 0.7 / (2W)`, `L = 2`, `c = 15`,
/// indices 0..=21 (odd entries zero).
pub const REFERENCE_ALPHAS_T07_L2: [f64; 22] = [
    0.8053, 0.0, -0.442, 0.0, 0.2923, 0.0, -0.1996, 0.0, 0.136, 0.0, -0.0905, 0.0, 0.0562, 0.0,
    -0.03, 0.0, 0.0107, 0.0, 0.00014, 0.0, 0.0011, 0.0,
];
