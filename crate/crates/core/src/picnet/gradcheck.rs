//! Central finite-difference check of end-to-end receiver gradients.

use super::{joint_loss, Labels, PicGrads, PicModel};
use crate::error::Result;
use crate::prep::StandardizedSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub n_params: usize,
}

fn loss_at(model: &PicModel, set: &StandardizedSet, labels: &Labels, lambda: f64, weights: &[f64]) -> Result<f64> {
    let (trace, _) = model.forward(set, false)?;
    Ok(joint_loss(model.kind, &trace, labels, lambda, weights)?.0.total)
}

pub fn analytic_gradients(
    model: &PicModel,
    set: &StandardizedSet,
    labels: &Labels,
    lambda: f64,
    weights: &[f64],
) -> Result<PicGrads> {
    let (trace, tape) = model.forward(set, true)?;
    let (_, seeds) = joint_loss(model.kind, &trace, labels, lambda, weights)?;
    model.backward(&trace, tape.as_ref().expect("recorded"), &seeds)
}

/// Compares analytic gradients of the joint loss with central differences of step `h`
/// for every parameter. The relative error uses `max(|fd|, |analytic|, floor)` as denominator.
pub fn check_gradients(
    model: &PicModel,
    set: &StandardizedSet,
    labels: &Labels,
    lambda: f64,
    weights: &[f64],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let analytic: Vec<f64> = analytic_gradients(model, set, labels, lambda, weights)?
        .iter()
        .copied()
        .collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    let n_modules = model.modules().count();
    for mi in 0..n_modules {
        let n = model.modules().nth(mi).unwrap().spec.n_params();
        for pi in 0..n {
            let orig = *model.modules().nth(mi).unwrap().params().nth(pi).unwrap();
            let set_param = |m: &mut PicModel, v: f64| {
                *m.modules_mut().nth(mi).unwrap().params_mut().nth(pi).unwrap() = v;
            };
            set_param(&mut probe, orig + h);
            let up = loss_at(&probe, set, labels, lambda, weights)?;
            set_param(&mut probe, orig - h);
            let dn = loss_at(&probe, set, labels, lambda, weights)?;
            set_param(&mut probe, orig);
            let fd = (up - dn) / (2.0 * h);
            let a = analytic[idx];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(floor);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        n_params: idx,
    })
}
