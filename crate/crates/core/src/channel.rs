//! Complex-baseband fronthaul simulation.
//!
//! A real message of even length `S` occupies `S/2` orthogonal resource
//! blocks: the first half carries real parts and the second half imaginary
//! parts. The uplink applies phase precoding at the edge node, so the cloud
//! observes `y = H s + n` with `H = diag([|h|; |h|])`. The downlink reuses the
//! same realization (TDD reciprocity): the cloud sends `alpha * conj(h) * m`,
//! and the node undoes the phase and the scaling, recovering `H m + n_E`
//! without the cloud ever knowing `h`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PowerMode;

/// Floor applied to the power-scaling denominator.
pub const ALPHA_FLOOR: f64 = 1e-12;

/// Real-form fronthaul signal of even length.
#[derive(Debug, Clone, PartialEq)]
pub struct FronthaulSignal {
    real: Vec<f64>,
}

impl FronthaulSignal {
    pub fn new(real: Vec<f64>) -> Result<Self> {
        if !real.len().is_multiple_of(2) {
            return Err(Error::OddLength(real.len()));
        }
        Ok(Self { real })
    }

    pub fn from_complex(blocks: &[Complex64]) -> Self {
        Self {
            real: unpack(blocks),
        }
    }

    pub fn real(&self) -> &[f64] {
        &self.real
    }

    pub fn into_real(self) -> Vec<f64> {
        self.real
    }

    pub fn complex(&self) -> Vec<Complex64> {
        pack(&self.real).expect("length checked at construction")
    }

    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }

    pub fn blocks(&self) -> usize {
        self.real.len() / 2
    }
}

/// `[s_R; s_I] -> s_R + j s_I`.
pub fn pack(s: &[f64]) -> Result<Vec<Complex64>> {
    if !s.len().is_multiple_of(2) {
        return Err(Error::OddLength(s.len()));
    }
    let half = s.len() / 2;
    Ok((0..half)
        .map(|j| Complex64::new(s[j], s[j + half]))
        .collect())
}

pub fn unpack(blocks: &[Complex64]) -> Vec<f64> {
    blocks
        .iter()
        .map(|c| c.re)
        .chain(blocks.iter().map(|c| c.im))
        .collect()
}

/// Noise variance for a given SNR in dB with unit transmit power.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Distance-based pathloss: per-entry channel variance `distance^-exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pathloss {
    pub distance: f64,
    pub exponent: f64,
}

impl Pathloss {
    pub fn factor(&self) -> f64 {
        self.distance.powf(-self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h: Vec<Complex64>,
    pub uplink_noise_var: f64,
    pub downlink_noise_var: f64,
    pub pathloss_factor: f64,
}

impl ChannelRealization {
    pub fn from_coefficients(h: Vec<Complex64>) -> Self {
        Self {
            h,
            uplink_noise_var: 0.0,
            downlink_noise_var: 0.0,
            pathloss_factor: 1.0,
        }
    }

    pub fn with_noise(mut self, uplink_var: f64, downlink_var: f64) -> Self {
        self.uplink_noise_var = uplink_var;
        self.downlink_noise_var = downlink_var;
        self
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.h
    }

    pub fn blocks(&self) -> usize {
        self.h.len()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.h.iter().map(|c| c.norm()).collect()
    }

    pub fn phase(&self) -> Vec<f64> {
        self.h.iter().map(|c| c.arg()).collect()
    }

    /// Diagonal of the effective real channel `H = diag([|h|; |h|])`.
    pub fn effective_diag(&self) -> Vec<f64> {
        let mag = self.magnitude();
        mag.iter().chain(mag.iter()).copied().collect()
    }
}

/// Draws `CN(0, var)` entries: real and imaginary parts each `N(0, var/2)`.
pub fn complex_noise<R: Rng + ?Sized>(rng: &mut R, blocks: usize, var: f64) -> Vec<Complex64> {
    if var == 0.0 {
        return vec![Complex64::new(0.0, 0.0); blocks];
    }
    let sd = (var / 2.0).sqrt();
    (0..blocks)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(sd * re, sd * im)
        })
        .collect()
}

/// Rayleigh block fading: i.i.d. `CN(0, d^-alpha)` (or `CN(0, 1)`) entries.
pub fn sample_channel<R: Rng + ?Sized>(
    rng: &mut R,
    blocks: usize,
    pathloss: Option<Pathloss>,
) -> Result<ChannelRealization> {
    if blocks == 0 {
        return Err(Error::Dimension {
            context: "channel blocks",
            expected: 1,
            got: 0,
        });
    }
    let factor = match pathloss {
        Some(p) if p.distance <= 0.0 => {
            return Err(Error::Config(format!(
                "pathloss distance must be positive, got {}",
                p.distance
            )))
        }
        Some(p) => p.factor(),
        None => 1.0,
    };
    let mut ch = ChannelRealization::from_coefficients(complex_noise(rng, blocks, factor));
    ch.pathloss_factor = factor;
    Ok(ch)
}

/// Unit-magnitude channel with uniformly random phases.
pub fn sample_unit_channel<R: Rng + ?Sized>(rng: &mut R, blocks: usize) -> ChannelRealization {
    let h = (0..blocks)
        .map(|_| {
            Complex64::from_polar(
                1.0,
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            )
        })
        .collect();
    ChannelRealization::from_coefficients(h)
}

fn check_blocks(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Uplink with an explicit noise draw: precode by `e^{-j angle h}`, pass
/// through `h`, add `noise`.
pub fn uplink_transmit_with_noise(
    s: &FronthaulSignal,
    ch: &ChannelRealization,
    noise: &[Complex64],
) -> Result<FronthaulSignal> {
    check_blocks("uplink message", ch.blocks(), s.blocks())?;
    check_blocks("uplink noise", ch.blocks(), noise.len())?;
    let received: Vec<Complex64> = s
        .complex()
        .iter()
        .zip(&ch.h)
        .zip(noise)
        .map(|((sj, hj), nj)| {
            let precoded = Complex64::from_polar(1.0, -hj.arg()) * sj;
            hj * precoded + nj
        })
        .collect();
    Ok(FronthaulSignal::from_complex(&received))
}

/// Uplink transmission with noise `CN(0, sigma_C^2)` drawn from `rng`.
pub fn uplink_transmit<R: Rng + ?Sized>(
    s: &FronthaulSignal,
    ch: &ChannelRealization,
    rng: &mut R,
) -> Result<FronthaulSignal> {
    let noise = complex_noise(rng, ch.blocks(), ch.uplink_noise_var);
    uplink_transmit_with_noise(s, ch, &noise)
}

/// Downlink power-scaling factor for node `i`.
///
/// Per-block: `sqrt(p_C / max_j |m_i[j]|^2)`. Sum: `sqrt(p_C / sum_l |m_l|^2)`
/// over every message in `messages`. The denominator is floored at
/// [`ALPHA_FLOOR`].
pub fn compute_alpha(
    messages: &[&[Complex64]],
    power: f64,
    mode: PowerMode,
    i: usize,
) -> Result<f64> {
    if power <= 0.0 || power.is_nan() {
        return Err(Error::NegativePower(power));
    }
    let denom = match mode {
        PowerMode::PerBlock => {
            let m = messages.get(i).ok_or(Error::Dimension {
                context: "downlink message index",
                expected: messages.len(),
                got: i,
            })?;
            m.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
        }
        PowerMode::Sum => messages
            .iter()
            .map(|m| m.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum(),
    };
    Ok((power / denom.max(ALPHA_FLOOR)).sqrt())
}

/// `y_E = alpha * conj(h) * m + n_E` with `n_E ~ CN(0, sigma_E^2)`.
pub fn downlink_transmit_with_noise(
    m: &[Complex64],
    ch: &ChannelRealization,
    alpha: f64,
    noise: &[Complex64],
) -> Result<Vec<Complex64>> {
    check_blocks("downlink message", ch.blocks(), m.len())?;
    check_blocks("downlink noise", ch.blocks(), noise.len())?;
    Ok(m.iter()
        .zip(&ch.h)
        .zip(noise)
        .map(|((mj, hj), nj)| alpha * hj.conj() * mj + nj)
        .collect())
}

pub fn downlink_transmit<R: Rng + ?Sized>(
    m: &[Complex64],
    ch: &ChannelRealization,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let noise = complex_noise(rng, ch.blocks(), ch.downlink_noise_var);
    downlink_transmit_with_noise(m, ch, alpha, &noise)
}

/// Edge-side decoding `e^{j angle h} * y_E / alpha`, returned in real form.
pub fn downlink_decode(y: &[Complex64], phase: &[f64], alpha: f64) -> Result<FronthaulSignal> {
    if alpha <= 0.0 || alpha.is_nan() {
        return Err(Error::NonPositiveScale(alpha));
    }
    check_blocks("downlink phase", y.len(), phase.len())?;
    let decoded: Vec<Complex64> = y
        .iter()
        .zip(phase)
        .map(|(yj, th)| Complex64::from_polar(1.0, *th) * yj / alpha)
        .collect();
    Ok(FronthaulSignal::from_complex(&decoded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_noise_var(0.0), 1.0);
        assert!((snr_to_noise_var(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_var(30.0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn pack_unpack() {
        assert_eq!(
            pack(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![c(1.0, 3.0), c(2.0, 4.0)]
        );
        assert!(matches!(pack(&[1.0, 2.0, 3.0]), Err(Error::OddLength(3))));
        assert!(FronthaulSignal::new(vec![0.0; 3]).is_err());
    }

    #[test]
    fn uplink_cancels_phase() {
        let ch = ChannelRealization::from_coefficients(vec![c(3.0, 4.0)]);
        let s = FronthaulSignal::from_complex(&[c(1.0, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = uplink_transmit(&s, &ch, &mut rng).unwrap().complex();
        assert!((y[0] - c(5.0, 0.0)).norm() < 1e-12);

        for theta in [0.3, -2.0, 3.1] {
            let ch = ChannelRealization::from_coefficients(vec![Complex64::from_polar(1.0, theta)]);
            let s = FronthaulSignal::from_complex(&[c(0.25, -0.7)]);
            let y = uplink_transmit(&s, &ch, &mut rng).unwrap().complex();
            assert!((y[0] - c(0.25, -0.7)).norm() < 1e-12);
        }
    }

    #[test]
    fn alpha_examples() {
        let m1 = [c(1.0, 1.0), c(0.0, 0.0)];
        let a = compute_alpha(&[&m1], 1.0, PowerMode::PerBlock, 0).unwrap();
        assert!((a - 0.5f64.sqrt()).abs() < 1e-15);

        let m1 = [c(1.0, 1.0), c(1.0, 0.0)];
        let m2 = [c(1.0, 0.0), c(0.0, 0.0)];
        let a = compute_alpha(&[&m1, &m2], 1.0, PowerMode::Sum, 1).unwrap();
        assert!((a - 0.5).abs() < 1e-15);

        let zero = [c(0.0, 0.0); 3];
        let a = compute_alpha(&[&zero], 4.0, PowerMode::PerBlock, 0).unwrap();
        assert_eq!(a, (4.0 / ALPHA_FLOOR).sqrt());
    }

    #[test]
    fn downlink_examples() {
        let ch = ChannelRealization::from_coefficients(vec![c(3.0, 4.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = downlink_transmit(&[c(1.0, 0.0)], &ch, 1.0, &mut rng).unwrap();
        assert!((y[0] - c(3.0, -4.0)).norm() < 1e-15);
        let decoded = downlink_decode(&y, &ch.phase(), 1.0).unwrap();
        assert!((decoded.real()[0] - 5.0).abs() < 1e-12);
        assert!(decoded.real()[1].abs() < 1e-12);

        let y = downlink_transmit(&[c(0.0, 0.0)], &ch, 2.0, &mut rng).unwrap();
        assert_eq!(y[0], c(0.0, 0.0));

        assert!(matches!(
            downlink_decode(&y, &[0.0], 0.0),
            Err(Error::NonPositiveScale(_))
        ));
    }

    #[test]
    fn fixed_seed_replays() {
        let a = sample_channel(&mut ChaCha8Rng::seed_from_u64(5), 4, None).unwrap();
        let b = sample_channel(&mut ChaCha8Rng::seed_from_u64(5), 4, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn effective_diag_halves_match() {
        let ch = sample_channel(&mut ChaCha8Rng::seed_from_u64(9), 3, None).unwrap();
        let d = ch.effective_diag();
        assert_eq!(&d[..3], &d[3..]);
        assert!(d.iter().all(|v| *v >= 0.0));
        for ((h, m), p) in ch.coefficients().iter().zip(ch.magnitude()).zip(ch.phase()) {
            assert!((Complex64::from_polar(m, p) - h).norm() < 1e-12);
        }
    }
}
