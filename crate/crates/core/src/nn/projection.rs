//! Power-projection output activation.
//!
//! A length-`S` real vector is read as `S/2` complex resource blocks: entry
//! `j` pairs `v[j]` (real part) with `v[j + S/2]` (imaginary part). Per-block
//! mode rescales each block whose power exceeds the budget back onto the
//! budget circle; sum mode rescales the whole vector onto the budget sphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerMode {
    /// Peak power per resource block (PPC).
    PerBlock,
    /// Total power over the whole message (SPC).
    Sum,
}

impl std::str::FromStr for PowerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-rb" | "ppc" | "per_block" => Ok(Self::PerBlock),
            "sum" | "spc" => Ok(Self::Sum),
            other => Err(Error::Config(format!("unknown power mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for PowerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerBlock => "per-rb",
            Self::Sum => "sum",
        })
    }
}

fn validate(len: usize, budget: f64) -> Result<()> {
    if !len.is_multiple_of(2) {
        return Err(Error::OddLength(len));
    }
    if budget < 0.0 || budget.is_nan() {
        return Err(Error::NegativePower(budget));
    }
    Ok(())
}

/// Per-block powers `p[j] = v[j]^2 + v[j + S/2]^2`.
pub fn block_powers(v: &[f64]) -> Result<Vec<f64>> {
    validate(v.len(), 0.0)?;
    let half = v.len() / 2;
    Ok((0..half)
        .map(|j| v[j] * v[j] + v[j + half] * v[j + half])
        .collect())
}

pub fn projection_forward(v: &[f64], budget: f64, mode: PowerMode) -> Result<Vec<f64>> {
    validate(v.len(), budget)?;
    let half = v.len() / 2;
    let mut out = v.to_vec();
    match mode {
        PowerMode::PerBlock => {
            for j in 0..half {
                let p = v[j] * v[j] + v[j + half] * v[j + half];
                if p > budget {
                    let c = (budget / p).sqrt();
                    out[j] *= c;
                    out[j + half] *= c;
                }
            }
        }
        PowerMode::Sum => {
            let q: f64 = v.iter().map(|x| x * x).sum();
            if q > budget {
                let c = (budget / q).sqrt();
                out.iter_mut().for_each(|x| *x *= c);
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`projection_forward`] at `v`.
///
/// On a clipped region the map is `x -> sqrt(P) x / |x|`, whose Jacobian is
/// `sqrt(P)/|x| (I - x x^T / |x|^2)`. Points exactly on the budget take the
/// pass-through branch.
pub fn projection_backward(
    v: &[f64],
    budget: f64,
    mode: PowerMode,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    validate(v.len(), budget)?;
    if upstream.len() != v.len() {
        return Err(Error::Dimension {
            context: "projection upstream",
            expected: v.len(),
            got: upstream.len(),
        });
    }
    let half = v.len() / 2;
    let mut grad = upstream.to_vec();
    match mode {
        PowerMode::PerBlock => {
            for j in 0..half {
                let (a, b) = (v[j], v[j + half]);
                let p = a * a + b * b;
                if p > budget {
                    let (ga, gb) = (upstream[j], upstream[j + half]);
                    let c = (budget / p).sqrt();
                    let dot = (a * ga + b * gb) / p;
                    grad[j] = c * (ga - a * dot);
                    grad[j + half] = c * (gb - b * dot);
                }
            }
        }
        PowerMode::Sum => {
            let q: f64 = v.iter().map(|x| x * x).sum();
            if q > budget {
                let c = (budget / q).sqrt();
                let dot = v.iter().zip(upstream).map(|(x, g)| x * g).sum::<f64>() / q;
                for ((out, x), g) in grad.iter_mut().zip(v).zip(upstream) {
                    *out = c * (g - x * dot);
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_block_clip_example() {
        let out = projection_forward(&[3.0, 4.0], 1.0, PowerMode::PerBlock).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert!((out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pass_through_when_feasible() {
        let v = [0.1, -0.5, 0.3, 0.2];
        assert_eq!(projection_forward(&v, 1.0, PowerMode::PerBlock).unwrap(), v);
        assert_eq!(projection_forward(&v, 1.0, PowerMode::Sum).unwrap(), v);
    }

    #[test]
    fn sum_mode_scale() {
        let v = [2.0, 2.0, 2.0, 2.0];
        let out = projection_forward(&v, 4.0, PowerMode::Sum).unwrap();
        assert_eq!(out, vec![1.0; 4]);
    }

    #[test]
    fn rejects_odd_and_negative() {
        assert!(matches!(
            projection_forward(&[1.0, 2.0, 3.0], 1.0, PowerMode::PerBlock),
            Err(Error::OddLength(3))
        ));
        assert!(matches!(
            projection_forward(&[1.0, 2.0], -1.0, PowerMode::Sum),
            Err(Error::NegativePower(_))
        ));
        assert!(projection_backward(&[1.0], 1.0, PowerMode::Sum, &[1.0]).is_err());
    }

    #[test]
    fn backward_identity_region_and_zero() {
        let v = [0.1, 0.2, 0.1, 0.1];
        let g = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(
            projection_backward(&v, 1.0, PowerMode::PerBlock, &g).unwrap(),
            g
        );
        let v = [3.0, 1.0, 4.0, 0.0];
        let zero = projection_backward(&v, 1.0, PowerMode::PerBlock, &[0.0; 4]).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn boundary_uses_pass_through() {
        let v = [1.0, 0.0];
        let g = [1.0, 1.0];
        assert_eq!(
            projection_backward(&v, 1.0, PowerMode::PerBlock, &g).unwrap(),
            g
        );
    }
}
