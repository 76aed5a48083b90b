//! Loss values and parameter gradients for the individual sub-updates of a hop.
//!
//! The hop input is always a plain tensor: nothing is propagated into earlier
//! hops. The discriminators act as fixed functions inside the generator
//! update (input gradients only), and generated images are constants inside
//! the discriminator updates.

use crate::error::Result;
use crate::losses::{
    hybrid_penalty_grad, mean_abs_diff_grad, mean_sq_to_grad, Direction, HybridnessTarget, LossBreakdown, LossWeights,
};
use crate::networks::{Generator, ParamSet, PatchDiscriminator};
use crate::tensor::{Real, Tensor};

/// Outcome of one generator update's forward and backward pass.
pub struct GeneratorHop<T> {
    pub breakdown: LossBreakdown,
    /// Gradient for the generator that produced the hop.
    pub main_grads: ParamSet<T>,
    /// Gradient for the opposite generator, through the cycle term only.
    pub back_grads: ParamSet<T>,
    /// The hop output computed with the parameters before the update.
    pub current: Tensor<T>,
}

/// Networks seen by a generator update for one direction.
pub struct GeneratorRoles<'a, T> {
    pub main: &'a Generator<T>,
    pub back: &'a Generator<T>,
    pub adversary: &'a PatchDiscriminator<T>,
    pub hybrid: &'a PatchDiscriminator<T>,
}

/// Hop-`n` loss of `main` applied to `previous`, and its gradients.
///
/// `loss = γ·|back(main(p)) - p| + ε·mean((D(main(p)) - 1)²)
///        + δ·mean_i((score_H(main(p))_i - target)²) + ζ·|main(p) - p|`
pub fn generator_hop<T: Real>(
    roles: &GeneratorRoles<'_, T>,
    previous: &Tensor<T>,
    target: HybridnessTarget,
    weights: &LossWeights,
) -> Result<GeneratorHop<T>> {
    let w = |v: f64| T::from_f64_lossy(v);
    let (current, main_trace) = roles.main.forward_traced(previous)?;
    let mut main_grads = roles.main.params().zeros_like();
    let mut back_grads = roles.back.params().zeros_like();
    let mut d_current = Tensor::zeros(current.channels, current.batch, current.height, current.width);

    let (recon, back_trace) = roles.back.forward_traced(&current)?;
    let (cycle, d_recon) = mean_abs_diff_grad(&recon, previous)?;
    drop(recon);
    if weights.gamma != 0.0 {
        let g = roles
            .back
            .backward(back_trace, d_recon.scale(w(weights.gamma)), Some(&mut back_grads), true)
            .expect("input gradient requested");
        d_current.add_assign(&g);
    }

    let (adv_map, adv_trace) = roles.adversary.forward_traced(&current)?;
    let (adversarial, d_map) = mean_sq_to_grad(&adv_map, T::one());
    if weights.epsilon != 0.0 {
        let g = roles
            .adversary
            .backward(adv_trace, d_map.scale(w(weights.epsilon)), None, true)
            .expect("input gradient requested");
        d_current.add_assign(&g);
    }

    let (hyb_map, hyb_trace) = roles.hybrid.forward_traced(&current)?;
    let (hybrid, d_map) = hybrid_penalty_grad(&hyb_map, w(target.value()));
    if weights.delta != 0.0 {
        let g = roles
            .hybrid
            .backward(hyb_trace, d_map.scale(w(weights.delta)), None, true)
            .expect("input gradient requested");
        d_current.add_assign(&g);
    }

    let (smoothness, d_smooth) = mean_abs_diff_grad(&current, previous)?;
    if weights.zeta != 0.0 {
        d_current.add_assign(&d_smooth.scale(w(weights.zeta)));
    }

    roles.main.backward(main_trace, d_current, Some(&mut main_grads), false);

    let breakdown = LossBreakdown::new(
        weights,
        target.n,
        target.direction,
        cycle.to_f64_lossy(),
        adversarial.to_f64_lossy(),
        hybrid.to_f64_lossy(),
        smoothness.to_f64_lossy(),
    );
    Ok(GeneratorHop {
        breakdown,
        main_grads,
        back_grads,
        current,
    })
}

/// Least-squares discriminator loss on real and (constant) generated images.
pub fn discriminator_step<T: Real>(
    disc: &PatchDiscriminator<T>,
    real: &Tensor<T>,
    generated: &Tensor<T>,
) -> Result<(T, ParamSet<T>)> {
    let mut grads = disc.params().zeros_like();
    let (map, trace) = disc.forward_traced(real)?;
    let (real_loss, d) = mean_sq_to_grad(&map, T::one());
    disc.backward(trace, d, Some(&mut grads), false);
    let (map, trace) = disc.forward_traced(generated)?;
    let (fake_loss, d) = mean_sq_to_grad(&map, T::zero());
    disc.backward(trace, d, Some(&mut grads), false);
    Ok((real_loss + fake_loss, grads))
}

/// Hybrid classifier loss on real images: pooled score 0 for X, 1 for Y.
pub fn classifier_step<T: Real>(
    disc_h: &PatchDiscriminator<T>,
    real_x: &Tensor<T>,
    real_y: &Tensor<T>,
) -> Result<(T, ParamSet<T>)> {
    let mut grads = disc_h.params().zeros_like();
    let (map, trace) = disc_h.forward_traced(real_x)?;
    let (loss_x, d) = hybrid_penalty_grad(&map, T::zero());
    disc_h.backward(trace, d, Some(&mut grads), false);
    let (map, trace) = disc_h.forward_traced(real_y)?;
    let (loss_y, d) = hybrid_penalty_grad(&map, T::one());
    disc_h.backward(trace, d, Some(&mut grads), false);
    Ok((loss_x + loss_y, grads))
}

/// Scalar hop-`n` generator loss without gradients, for finite-difference checks.
pub fn generator_hop_loss<T: Real>(
    roles: &GeneratorRoles<'_, T>,
    previous: &Tensor<T>,
    target: HybridnessTarget,
    weights: &LossWeights,
) -> Result<f64> {
    let current = roles.main.forward(previous)?;
    let cycle = crate::losses::cycle_term(roles.back, &current, previous)?;
    let adversarial = crate::losses::adversarial_gen_term(roles.adversary, &current)?;
    let hybrid = crate::losses::hybrid_term(roles.hybrid, &current, target)?;
    let smoothness = crate::losses::smoothness_term(&current, previous)?;
    Ok(weights.combine(
        cycle.to_f64_lossy(),
        adversarial.to_f64_lossy(),
        hybrid.to_f64_lossy(),
        smoothness.to_f64_lossy(),
    ))
}

pub(crate) fn direction_roles<'a, T>(
    direction: Direction,
    gen_g: &'a Generator<T>,
    gen_f: &'a Generator<T>,
    disc_x: &'a PatchDiscriminator<T>,
    disc_y: &'a PatchDiscriminator<T>,
    disc_h: &'a PatchDiscriminator<T>,
) -> GeneratorRoles<'a, T> {
    match direction {
        Direction::XToY => GeneratorRoles {
            main: gen_g,
            back: gen_f,
            adversary: disc_y,
            hybrid: disc_h,
        },
        Direction::YToX => GeneratorRoles {
            main: gen_f,
            back: gen_g,
            adversary: disc_x,
            hybrid: disc_h,
        },
    }
}
