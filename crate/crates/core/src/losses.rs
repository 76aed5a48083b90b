//! Per-hop loss terms and the weighted objective.
//!
//! All L1 and squared-error reductions are means over elements (and over the
//! batch), so the default weights keep their meaning at any image size.
//!
//! The `*_grad` reductions return the value together with its gradient with
//! respect to the first argument; the training step composes them with the
//! networks' backward passes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{hop_sequence_tensor, patch_means, Generator, ModelBundle, PatchDiscriminator};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "x_to_y")]
    XToY,
    #[serde(rename = "y_to_x")]
    YToX,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::XToY => Direction::YToX,
            Direction::YToX => Direction::XToY,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::XToY => "X->Y",
            Direction::YToX => "Y->X",
        })
    }
}

/// Weights of the cycle, adversarial, hybrid and smoothness terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub zeta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            epsilon: 1.0,
            delta: 1.0,
            zeta: 2.5,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            gamma: 0.0,
            epsilon: 0.0,
            delta: 0.0,
            zeta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("zeta", self.zeta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn combine(&self, cycle: f64, adversarial: f64, hybrid: f64, smoothness: f64) -> f64 {
        self.gamma * cycle + self.epsilon * adversarial + self.delta * hybrid + self.zeta * smoothness
    }
}

/// The four generator-side components for one hop of one direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cycle: f64,
    pub adversarial: f64,
    pub hybrid: f64,
    pub smoothness: f64,
    pub weighted_total: f64,
    pub hop: usize,
    pub direction: Direction,
}

impl LossBreakdown {
    pub fn new(
        weights: &LossWeights,
        hop: usize,
        direction: Direction,
        cycle: f64,
        adversarial: f64,
        hybrid: f64,
        smoothness: f64,
    ) -> Self {
        Self {
            cycle,
            adversarial,
            hybrid,
            smoothness,
            weighted_total: weights.combine(cycle, adversarial, hybrid, smoothness),
            hop,
            direction,
        }
    }
}

/// Target hybridness of hop `n` out of `h`: `n/h` toward Y, `(h-n)/h` toward X.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridnessTarget {
    pub n: usize,
    pub h: usize,
    pub direction: Direction,
}

impl HybridnessTarget {
    pub fn new(n: usize, h: usize, direction: Direction) -> Result<Self> {
        if h == 0 || n > h {
            return Err(Error::Config(format!("hop {n} out of range for h = {h}")));
        }
        Ok(Self { n, h, direction })
    }

    pub fn value(&self) -> f64 {
        let (n, h) = (self.n as f64, self.h as f64);
        match self.direction {
            Direction::XToY => n / h,
            Direction::YToX => (h - n) / h,
        }
    }
}

fn check_same<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Contract(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn count<T: Real>(n: usize) -> T {
    T::from_usize(n).unwrap()
}

/// Mean absolute difference over all elements, accumulated in `f64`.
pub fn mean_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    check_same(a, b, "L1")?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs().to_f64_lossy())
        .sum();
    Ok(T::from_f64_lossy(sum / a.len() as f64))
}

/// [`mean_abs_diff`] and its gradient with respect to `a`.
pub fn mean_abs_diff_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let value = mean_abs_diff(a, b)?;
    let inv = count::<T>(a.len()).recip();
    let mut grad = a.clone();
    for (g, &y) in grad.data.iter_mut().zip(&b.data) {
        let d = *g - y;
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((value, grad))
}

/// Mean of `(m - target)^2` over every patch of every image.
pub fn mean_sq_to<T: Real>(map: &Tensor<T>, target: T) -> T {
    let sum: f64 = map
        .data
        .iter()
        .map(|&v| ((v - target) * (v - target)).to_f64_lossy())
        .sum();
    T::from_f64_lossy(sum / map.len() as f64)
}

pub fn mean_sq_to_grad<T: Real>(map: &Tensor<T>, target: T) -> (T, Tensor<T>) {
    let scale = count::<T>(2) / count(map.len());
    (mean_sq_to(map, target), map.map(|v| scale * (v - target)))
}

/// Generator side of the least-squares game: patches pushed toward 1.
pub fn lsgan_generator<T: Real>(fake_map: &Tensor<T>) -> T {
    mean_sq_to(fake_map, T::one())
}

/// Discriminator side: real patches toward 1, generated patches toward 0.
pub fn lsgan_discriminator<T: Real>(real_map: &Tensor<T>, fake_map: &Tensor<T>) -> T {
    mean_sq_to(real_map, T::one()) + mean_sq_to(fake_map, T::zero())
}

/// Batch mean of `(score_i - target)^2`, where `score_i` is image `i`'s pooled patch map.
pub fn hybrid_penalty<T: Real>(map: &Tensor<T>, target: T) -> T {
    let scores = patch_means(map);
    let sum: f64 = scores
        .iter()
        .map(|&s| ((s - target) * (s - target)).to_f64_lossy())
        .sum();
    T::from_f64_lossy(sum / scores.len() as f64)
}

pub fn hybrid_penalty_grad<T: Real>(map: &Tensor<T>, target: T) -> (T, Tensor<T>) {
    let scores = patch_means(map);
    let per_patch = count::<T>(2) / count::<T>(scores.len() * map.plane_len());
    let mut grad = Tensor::zeros(1, map.batch, map.height, map.width);
    for (n, &s) in scores.iter().enumerate() {
        let g = per_patch * (s - target);
        grad.plane_mut(0, n).fill(g);
    }
    (hybrid_penalty(map, target), grad)
}

/// `mean(score_x^2) + mean((score_y - 1)^2)` for the hybrid classifier.
pub fn classifier_penalty<T: Real>(map_x: &Tensor<T>, map_y: &Tensor<T>) -> T {
    hybrid_penalty(map_x, T::zero()) + hybrid_penalty(map_y, T::one())
}

fn weight<T: Real>(w: f64) -> T {
    T::from_f64_lossy(w)
}

/// L1 between the opposite generator's reconstruction of `current` and `previous`.
pub fn cycle_term<T: Real>(gen_back: &Generator<T>, current: &Tensor<T>, previous: &Tensor<T>) -> Result<T> {
    check_same(current, previous, "cycle term")?;
    mean_abs_diff(&gen_back.forward(current)?, previous)
}

pub fn adversarial_gen_term<T: Real>(disc: &PatchDiscriminator<T>, generated: &Tensor<T>) -> Result<T> {
    Ok(lsgan_generator(&disc.forward(generated)?))
}

pub fn adversarial_disc_term<T: Real>(
    disc: &PatchDiscriminator<T>,
    real: &Tensor<T>,
    generated: &Tensor<T>,
) -> Result<T> {
    Ok(lsgan_discriminator(&disc.forward(real)?, &disc.forward(generated)?))
}

pub fn hybrid_term<T: Real>(
    disc_h: &PatchDiscriminator<T>,
    generated: &Tensor<T>,
    target: HybridnessTarget,
) -> Result<T> {
    Ok(hybrid_penalty(&disc_h.forward(generated)?, weight(target.value())))
}

pub fn smoothness_term<T: Real>(current: &Tensor<T>, previous: &Tensor<T>) -> Result<T> {
    mean_abs_diff(current, previous)
}

pub fn classifier_term<T: Real>(disc_h: &PatchDiscriminator<T>, real_x: &Tensor<T>, real_y: &Tensor<T>) -> Result<T> {
    Ok(classifier_penalty(&disc_h.forward(real_x)?, &disc_h.forward(real_y)?))
}

/// The whole-sum objective over all hops and both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullObjective {
    pub cycle: f64,
    pub adversarial: f64,
    pub hybrid: f64,
    pub smoothness: f64,
    pub weighted_total: f64,
    /// One entry per `(direction, hop)`, X->Y first.
    pub per_hop: Vec<LossBreakdown>,
}

/// Evaluates the full objective for batches `x` and `y` with `h` hops.
///
/// The adversarial component uses the discriminator form of the least-squares
/// game with one real-image term per hop, matching what each hop's update sees.
pub fn full_objective(
    bundle: &ModelBundle,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    h: usize,
    weights: &LossWeights,
) -> Result<FullObjective> {
    if h == 0 {
        return Err(Error::Config("hop count h must be >= 1".into()));
    }
    let mut per_hop = Vec::with_capacity(2 * h);
    for (direction, real_src, real_dst, main, back, adv) in [
        (Direction::XToY, x, y, &bundle.gen_g, &bundle.gen_f, &bundle.disc_y),
        (Direction::YToX, y, x, &bundle.gen_f, &bundle.gen_g, &bundle.disc_x),
    ] {
        let seq = hop_sequence_tensor(main, real_src, h)?;
        for n in 1..=h {
            let (cur, prev) = (&seq[n], &seq[n - 1]);
            let target = HybridnessTarget::new(n, h, direction)?;
            per_hop.push(LossBreakdown::new(
                weights,
                n,
                direction,
                f64::from(cycle_term(back, cur, prev)?),
                f64::from(adversarial_disc_term(adv, real_dst, cur)?),
                f64::from(hybrid_term(&bundle.disc_h, cur, target)?),
                f64::from(smoothness_term(cur, prev)?),
            ));
        }
    }
    let sum = |f: fn(&LossBreakdown) -> f64| per_hop.iter().map(f).sum::<f64>();
    let (cycle, adversarial, hybrid, smoothness) = (
        sum(|b| b.cycle),
        sum(|b| b.adversarial),
        sum(|b| b.hybrid),
        sum(|b| b.smoothness),
    );
    Ok(FullObjective {
        cycle,
        adversarial,
        hybrid,
        smoothness,
        weighted_total: weights.combine(cycle, adversarial, hybrid, smoothness),
        per_hop,
    })
}
