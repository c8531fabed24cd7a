//! Update rules. Each step clips the gradient per element to
//! `[-grad_clip, grad_clip]` and then applies the declared family's rule in
//! fixed point.

use serde::{Deserialize, Serialize};

use super::fixed::{div_floor, sqrt_floor, widen, Fixed};
use super::net::{Gradient, Weights};
use crate::error::{Error, Result};
use crate::model::{OptimizerFamily, OptimizerParams};

/// Optimizer memory carried between steps. Flat vectors follow
/// [`Weights::params`] order and are empty when a family does not use them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<Fixed>,
    pub second_moment: Vec<Fixed>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(family: &OptimizerFamily, param_count: usize) -> Result<OptimizerState> {
        match family {
            OptimizerFamily::Sgd => Ok(OptimizerState::default()),
            OptimizerFamily::Momentum => {
                Ok(OptimizerState { first_moment: vec![Fixed::ZERO; param_count], ..Default::default() })
            }
            OptimizerFamily::AdamLike => Ok(OptimizerState {
                first_moment: vec![Fixed::ZERO; param_count],
                second_moment: vec![Fixed::ZERO; param_count],
                steps: 0,
            }),
            OptimizerFamily::Other(name) => Err(Error::UnsupportedOptimizer(name.clone())),
        }
    }
}

/// Applies one update in place.
pub fn apply_update(
    weights: &mut Weights,
    state: &mut OptimizerState,
    grad: &Gradient,
    family: &OptimizerFamily,
    params: &OptimizerParams,
) -> Result<()> {
    let clip = params.grad_clip;
    let g: Vec<Fixed> = grad.params().map(|&v| v.clamp_to(-clip, clip)).collect();
    let lr = params.learning_rate;
    match family {
        OptimizerFamily::Sgd => {
            for (w, &gi) in weights.params_mut().zip(&g) {
                *w += lr.wrapping_mul(-gi);
            }
        }
        OptimizerFamily::Momentum => {
            ensure_len(&state.first_moment, g.len())?;
            let beta = params.momentum;
            for ((w, v), &gi) in weights.params_mut().zip(state.first_moment.iter_mut()).zip(&g) {
                *v = beta.wrapping_mul(*v) + gi;
                *w += lr.wrapping_mul(-*v);
            }
        }
        OptimizerFamily::AdamLike => {
            ensure_len(&state.first_moment, g.len())?;
            ensure_len(&state.second_moment, g.len())?;
            let (b1, b2, eps) = (params.momentum, params.beta2, params.epsilon);
            let (c1, c2) = (Fixed::ONE - b1, Fixed::ONE - b2);
            let params_iter = weights.params_mut().zip(state.first_moment.iter_mut()).zip(state.second_moment.iter_mut());
            for (((w, m), v), &gi) in params_iter.zip(&g) {
                *m = b1.wrapping_mul(*m) + c1.wrapping_mul(gi);
                *v = b2.wrapping_mul(*v) + c2.wrapping_mul(gi.wrapping_mul(gi));
                let denom = sqrt_floor(*v) + eps;
                let step = div_floor(widen(*m), (denom.raw() as i64).max(1)).clamp_to(-Fixed::ONE, Fixed::ONE);
                *w += lr.wrapping_mul(-step);
            }
        }
        OptimizerFamily::Other(name) => return Err(Error::UnsupportedOptimizer(name.clone())),
    }
    state.steps += 1;
    Ok(())
}

fn ensure_len(v: &[Fixed], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Shape(format!("optimizer state has {} entries for {n} parameters", v.len())));
    }
    Ok(())
}

/// Upper bound, in raw units, on how far one update can move a single
/// parameter. Includes one raw unit of rounding slack.
pub fn max_step_raw(family: &OptimizerFamily, params: &OptimizerParams) -> Result<i64> {
    let lr = params.learning_rate.abs_raw();
    let clip = params.grad_clip.abs_raw();
    let one = Fixed::ONE.raw() as i64;
    let bound = match family {
        OptimizerFamily::Sgd => lr * clip / one,
        OptimizerFamily::Momentum => {
            // |v| <= (clip + 1) / (1 - beta), the +1 from flooring beta * v
            let gap = (one - params.momentum.raw() as i64).max(1);
            lr * ((clip + 1) * one / gap + 1) / one + 1
        }
        OptimizerFamily::AdamLike => lr,
        OptimizerFamily::Other(name) => return Err(Error::UnsupportedOptimizer(name.clone())),
    };
    Ok(bound + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detnet::net::Layer;

    fn single(w: Fixed) -> Weights {
        Weights { architecture: vec![1, 1], layers: vec![Layer { weights: vec![w], biases: vec![Fixed::ZERO] }] }
    }

    #[test]
    fn sgd_step_exact() {
        let mut w = single(Fixed::ZERO);
        let g = single(Fixed::from_ratio(1, 2));
        let params = OptimizerParams { learning_rate: Fixed::from_ratio(1, 4), ..Default::default() };
        let mut state = OptimizerState::new(&OptimizerFamily::Sgd, 2).unwrap();
        apply_update(&mut w, &mut state, &g, &OptimizerFamily::Sgd, &params).unwrap();
        assert_eq!(w.layers[0].weights[0].raw(), -8192);
        assert_eq!(state.steps, 1);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let start = single(Fixed::from_ratio(3, 7));
        let g = single(Fixed::from_ratio(-5, 9));
        let params = OptimizerParams { learning_rate: Fixed::ZERO, ..Default::default() };
        for family in [OptimizerFamily::Sgd, OptimizerFamily::Momentum, OptimizerFamily::AdamLike] {
            let mut w = start.clone();
            let mut state = OptimizerState::new(&family, 2).unwrap();
            apply_update(&mut w, &mut state, &g, &family, &params).unwrap();
            assert_eq!(w, start, "{family}");
        }
    }

    #[test]
    fn unknown_family_is_refused() {
        let fam = OptimizerFamily::Other("lion".into());
        assert!(matches!(OptimizerState::new(&fam, 1), Err(Error::UnsupportedOptimizer(_))));
        assert!(max_step_raw(&fam, &OptimizerParams::default()).is_err());
    }

    #[test]
    fn steps_stay_within_bound() {
        let params = OptimizerParams::default();
        for family in [OptimizerFamily::Sgd, OptimizerFamily::Momentum, OptimizerFamily::AdamLike] {
            let bound = max_step_raw(&family, &params).unwrap();
            let mut w = single(Fixed::ZERO);
            let mut state = OptimizerState::new(&family, 2).unwrap();
            for k in 0..200 {
                let g = single(Fixed::from_int(if k % 3 == 0 { -7 } else { 5 }));
                let before = w.clone();
                apply_update(&mut w, &mut state, &g, &family, &params).unwrap();
                assert!(w.max_abs_diff(&before) <= bound, "{family} step exceeded {bound}");
            }
        }
    }
}
