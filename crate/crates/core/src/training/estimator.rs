use crate::controller::{EpisodeTrace, SanasModel, GAMMA_BIAS, GAMMA_WEIGHT, GRU_NAMES};
use crate::error::{Result, SanasError};
use crate::numcore::{linear_backward, GruGrads, Gradients, ParamStore, Tensor};
use crate::supernet::{evaluate_backward, log_prob_grad};

/// `L = Σ Δ_t + λ Σ C(A_t)`.
pub fn episode_return(trace: &EpisodeTrace, lambda: f64) -> f64 {
    trace.total_loss() + lambda * trace.total_cost()
}

/// `b' = ρ b + (1 - ρ) L`.
pub fn baseline_update(b: f64, l: f64, rho: f64) -> f64 {
    rho * b + (1.0 - rho) * l
}

pub(crate) fn accumulate_gru(grads: &mut Gradients, g: GruGrads) -> Result<()> {
    let parts = [g.w_a, g.u_a, g.b_a, g.w_r, g.u_r, g.b_r, g.w_c, g.u_c, g.b_c];
    for (name, t) in GRU_NAMES.iter().zip(parts) {
        grads.accumulate(name, t)?;
    }
    Ok(())
}

/// `(Σ_t ∇ log P(A_t | z_t)) (L - b) + Σ_t ∇ Δ_t` for one recorded sequence.
///
/// The score term is back-propagated through time: `z_t` depends on every
/// earlier `Φ`, hence on the edge modules and the `Φ` projection. With a zero
/// advantage only the pathwise term is computed, timestep by timestep.
pub fn reinforce_backward(
    model: &SanasModel,
    params: &ParamStore,
    trace: &EpisodeTrace,
    lambda: f64,
    baseline: f64,
) -> Result<Gradients> {
    let record = trace
        .record
        .as_ref()
        .ok_or_else(|| SanasError::Usage("trace was produced without gradient recording (argmax mode)".into()))?;
    let spec = model.spec();
    let advantage = episode_return(trace, lambda) - baseline;
    if !advantage.is_finite() {
        return Err(SanasError::Numeric(format!("non-finite episode advantage {advantage}")));
    }
    let mut grads = Gradients::new();
    if advantage == 0.0 {
        for step in record {
            evaluate_backward(spec, &step.eval, params, step.dlogits.as_ref(), None, &mut grads)?;
        }
        return Ok(grads);
    }

    let gru = model.gru_params(params)?;
    let w_h = params.get(GAMMA_WEIGHT)?;
    let d_z = model.controller().d_z;
    // gradient w.r.t. z_{t+1}; nothing downstream of the last state
    let mut dz_next: Option<Tensor> = None;
    for step in record.iter().rev() {
        let mut dz = Tensor::zeros(&[d_z]);
        let mut dphi = None;
        if let Some(dzn) = dz_next.take() {
            let (dz_prev, du, g) = crate::numcore::gru_backward(gru, &step.gru, &dzn);
            accumulate_gru(&mut grads, g)?;
            dz.add_assign(&dz_prev)?;
            dphi = Some(du);
        }
        let score = log_prob_grad(&step.probs, step.arch.bits());
        let dlogit: Vec<f64> = score
            .iter()
            .zip(&step.probs)
            .map(|(s, p)| advantage * s * p * (1.0 - p))
            .collect();
        let dlogit = Tensor::vector(dlogit);
        let g = linear_backward(&step.z, w_h, &dlogit, true);
        grads.accumulate(GAMMA_WEIGHT, g.dw)?;
        grads.accumulate(GAMMA_BIAS, g.db)?;
        if let Some(dx) = g.dx {
            dz.add_assign(&dx)?;
        }
        evaluate_backward(spec, &step.eval, params, step.dlogits.as_ref(), dphi.as_ref(), &mut grads)?;
        dz_next = Some(dz);
    }
    Ok(grads)
}
