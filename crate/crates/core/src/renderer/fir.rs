use std::f64::consts::PI;

use thiserror::Error;

use crate::frame::HeadRotation;

pub const DEFAULT_TAPS: usize = 25;
pub const DEFAULT_CUTOFF_HZ: f64 = 4.0;
pub const SERVO_RATE_HZ: f64 = 125.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("tap count must be odd and non-zero, got {0}")]
    TapCount(usize),
    #[error("taps must sum to 1 (got {0})")]
    DcGain(f64),
    #[error("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")]
    Cutoff { cutoff: f64, nyquist: f64 },
}

/// Hamming-windowed sinc low-pass, normalized to unit DC gain.
pub fn design_lowpass(taps: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Vec<f64>, FilterError> {
    if taps == 0 || taps.is_multiple_of(2) {
        return Err(FilterError::TapCount(taps));
    }
    let nyquist = sample_rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(FilterError::Cutoff {
            cutoff: cutoff_hz,
            nyquist,
        });
    }
    let fc = cutoff_hz / sample_rate_hz;
    let m = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let k = n as f64 - m;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * k).sin() / (PI * k)
            };
            let window = if taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos()
            };
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= sum);
    Ok(h)
}

pub fn default_taps() -> Vec<f64> {
    design_lowpass(DEFAULT_TAPS, DEFAULT_CUTOFF_HZ, SERVO_RATE_HZ).expect("valid default design")
}

/// Single-channel direct-form FIR.
#[derive(Debug, Clone)]
pub struct FirFilter {
    taps: Vec<f64>,
    history: Vec<f64>,
    pos: usize,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>) -> Result<Self, FilterError> {
        if taps.is_empty() || taps.len().is_multiple_of(2) {
            return Err(FilterError::TapCount(taps.len()));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FilterError::DcGain(sum));
        }
        let n = taps.len();
        Ok(Self {
            taps,
            history: vec![0.0; n],
            pos: 0,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// In samples: (taps − 1) / 2 for a symmetric design.
    pub fn group_delay(&self) -> f64 {
        (self.taps.len() - 1) as f64 / 2.0
    }

    /// Fill the history with `value` so the output starts there.
    pub fn prime(&mut self, value: f64) {
        self.history.iter_mut().for_each(|h| *h = value);
    }

    pub fn push(&mut self, x: f64) -> f64 {
        let n = self.taps.len();
        self.history[self.pos] = x;
        let mut acc = 0.0;
        // taps[k] multiplies x[t - k]
        for (k, tap) in self.taps.iter().enumerate() {
            acc += tap * self.history[(self.pos + n - k) % n];
        }
        self.pos = (self.pos + 1) % n;
        acc
    }

    /// |H(f)| of the tap set.
    pub fn magnitude_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (k, h)| {
                (re + h * (w * k as f64).cos(), im - h * (w * k as f64).sin())
            });
        re.hypot(im)
    }
}

/// Independent filters for the three rotation axes.
#[derive(Debug, Clone)]
pub struct RotationFilter {
    axes: [FirFilter; 3],
}

impl RotationFilter {
    pub fn new(taps: Vec<f64>) -> Result<Self, FilterError> {
        let f = FirFilter::new(taps)?;
        Ok(Self {
            axes: [f.clone(), f.clone(), f],
        })
    }

    pub fn push(&mut self, r: HeadRotation) -> HeadRotation {
        HeadRotation::new(self.axes[0].push(r.x), self.axes[1].push(r.y), self.axes[2].push(r.z))
    }

    pub fn group_delay(&self) -> f64 {
        self.axes[0].group_delay()
    }

    pub fn taps(&self) -> &[f64] {
        self.axes[0].taps()
    }
}

impl Default for RotationFilter {
    fn default() -> Self {
        Self::new(default_taps()).expect("default taps are valid")
    }
}
