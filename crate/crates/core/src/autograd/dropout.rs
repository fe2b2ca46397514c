//! Inverted dropout with a selectable backward rule.
//!
//! `Standard` routes the upstream gradient through the same mask (and
//! scale) the forward pass applied. `StraightThrough` keeps the forward
//! masking but hands the upstream gradient back untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    #[default]
    Standard,
    StraightThrough,
}

impl DropoutMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DropoutMode::Standard => "standard",
            DropoutMode::StraightThrough => "straight-through",
        }
    }
}

impl std::str::FromStr for DropoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(DropoutMode::Standard),
            "straight-through" | "straight_through" => Ok(DropoutMode::StraightThrough),
            other => Err(Error::Config(format!(
                "unknown dropout gradient mode {other:?} (expected standard|straight-through)"
            ))),
        }
    }
}

impl std::fmt::Display for DropoutMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Keep-mask sampled by a forward pass. `keep[i]` is false where the
/// element was zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub shape: Vec<usize>,
    pub keep: Vec<bool>,
    pub p: f64,
}

impl DropoutMask {
    pub fn all_kept(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            keep: vec![true; shape.iter().product()],
            p: 0.0,
        }
    }

    pub fn dropped_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        self.keep.iter().filter(|k| !**k).count() as f64 / self.keep.len() as f64
    }
}

pub(crate) fn check_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    Ok(())
}

fn survivor_scale<T: Real>(p: f64) -> T {
    T::ONE / (T::ONE - T::from_f64(p))
}

/// Samples a mask and applies it. Returns the input unchanged (with an
/// all-kept mask) when `training` is false or `p == 0`.
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    p: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, DropoutMask)> {
    check_rate(p)?;
    if !training || p == 0.0 {
        return Ok((x.clone(), DropoutMask::all_kept(x.shape())));
    }
    let keep: Vec<bool> = (0..x.numel()).map(|_| rng.random::<f64>() >= p).collect();
    let mask = DropoutMask {
        shape: x.shape().to_vec(),
        keep,
        p,
    };
    let out = apply_mask(x, &mask);
    Ok((out, mask))
}

fn apply_mask<T: Real>(x: &Tensor<T>, mask: &DropoutMask) -> Tensor<T> {
    let scale: T = survivor_scale(mask.p);
    let data = x
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&v, &k)| if k { v * scale } else { T::ZERO })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("mask shape matches input")
}

/// Gradient of dropout with respect to its input.
pub fn dropout_backward<T: Real>(
    upstream: &Tensor<T>,
    mask: &DropoutMask,
    mode: DropoutMode,
) -> Result<Tensor<T>> {
    if upstream.shape() != mask.shape.as_slice() || upstream.numel() != mask.keep.len() {
        return Err(Error::TapeCorruption(format!(
            "dropout mask shape {:?} does not match upstream gradient {:?}",
            mask.shape,
            upstream.shape()
        )));
    }
    match mode {
        DropoutMode::StraightThrough => Ok(upstream.clone()),
        DropoutMode::Standard => Ok(apply_mask(upstream, mask)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn rate_one_is_rejected() {
        let x = Tensor::<f32>::ones(&[2]);
        let mut rng = stream_rng(0, Stream::Dropout, 0);
        assert!(matches!(
            dropout_forward(&x, 1.0, &mut rng, true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn p_zero_and_eval_are_identity() {
        let x = Tensor::<f32>::from_rows(&[&[1.0, -2.0], &[3.5, 0.25]]);
        let mut rng = stream_rng(0, Stream::Dropout, 0);
        let (y, _) = dropout_forward(&x, 0.0, &mut rng, true).unwrap();
        assert!(y.bit_eq(&x));
        let (y, _) = dropout_forward(&x, 0.7, &mut rng, false).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn standard_backward_on_known_mask() {
        let up = Tensor::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mask = DropoutMask {
            shape: vec![2, 2],
            keep: vec![true, false, false, true],
            p: 0.5,
        };
        let g = dropout_backward(&up, &mask, DropoutMode::Standard).unwrap();
        assert_eq!(g.data(), &[2.0, 0.0, 0.0, 8.0]);
    }

    #[test]
    fn standard_all_kept_is_identity() {
        let up = Tensor::<f32>::from_rows(&[&[1.5, -2.0, 0.1]]);
        let g = dropout_backward(&up, &DropoutMask::all_kept(&[1, 3]), DropoutMode::Standard)
            .unwrap();
        assert!(g.bit_eq(&up));
    }

    #[test]
    fn straight_through_ignores_mask() {
        let up = Tensor::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mask = DropoutMask {
            shape: vec![2, 2],
            keep: vec![false, false, true, false],
            p: 0.9,
        };
        let g = dropout_backward(&up, &mask, DropoutMode::StraightThrough).unwrap();
        assert!(g.bit_eq(&up));
    }

    #[test]
    fn mismatched_mask_is_tape_corruption() {
        let up = Tensor::<f32>::ones(&[3]);
        let mask = DropoutMask::all_kept(&[4]);
        assert!(matches!(
            dropout_backward(&up, &mask, DropoutMode::Standard),
            Err(Error::TapeCorruption(_))
        ));
    }

    #[test]
    fn half_rate_statistics() {
        let n = 1_000_000;
        let x = Tensor::<f64>::ones(&[n]);
        let mut rng = stream_rng(42, Stream::Dropout, 0);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let zero_frac = y.data().iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        assert!((zero_frac - 0.5).abs() < 0.005, "zero fraction {zero_frac}");
        assert_eq!(zero_frac, mask.dropped_fraction());
        let survivors: Vec<f64> = y.data().iter().copied().filter(|v| *v != 0.0).collect();
        let mean = survivors.iter().sum::<f64>() / survivors.len() as f64;
        assert!((mean - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("standard".parse::<DropoutMode>().unwrap(), DropoutMode::Standard);
        assert_eq!(
            "straight-through".parse::<DropoutMode>().unwrap(),
            DropoutMode::StraightThrough
        );
        assert!("both".parse::<DropoutMode>().is_err());
    }
}
