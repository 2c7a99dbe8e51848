use std::collections::BTreeMap;

use super::{AutodiffError, ParamStore, Tensor};

/// Running averages for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub accum_grad_sq: Tensor,
    pub accum_delta_sq: Tensor,
}

impl AdadeltaState {
    pub fn fresh(shape: &[usize]) -> Self {
        Self {
            accum_grad_sq: Tensor::zeros(shape),
            accum_delta_sq: Tensor::zeros(shape),
        }
    }
}

/// Adadelta:
/// `E[g²] ← ρE[g²] + (1−ρ)g²`,
/// `Δx = −sqrt(E[Δx²]+ε) / sqrt(E[g²]+ε) · g`,
/// `E[Δx²] ← ρE[Δx²] + (1−ρ)Δx²`, `x ← x + Δx`.
#[derive(Clone, Debug)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    states: BTreeMap<String, AdadeltaState>,
}

impl Default for Adadelta {
    fn default() -> Self {
        Self::new(0.95, 1e-6)
    }
}

impl Adadelta {
    pub fn new(rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&AdadeltaState> {
        self.states.get(name)
    }

    /// Updates one tensor in place. The step is rejected, leaving parameter
    /// and state untouched, if the gradient holds a non-finite value.
    pub fn step_tensor(
        rho: f64,
        eps: f64,
        param: &mut Tensor,
        grad: &Tensor,
        state: &mut AdadeltaState,
    ) -> Result<(), AutodiffError> {
        if param.shape() != grad.shape()
            || param.shape() != state.accum_grad_sq.shape()
            || param.shape() != state.accum_delta_sq.shape()
        {
            return Err(AutodiffError::Shape(format!(
                "adadelta param {:?}, grad {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        if !grad.is_finite() {
            return Err(AutodiffError::NonFinite("gradient".into()));
        }
        let eg = state.accum_grad_sq.data_mut();
        let ed = state.accum_delta_sq.data_mut();
        for (((x, &g), eg), ed) in param.data_mut().iter_mut().zip(grad.data()).zip(eg).zip(ed) {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let dx = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ed = rho * *ed + (1.0 - rho) * dx * dx;
            *x += dx;
        }
        Ok(())
    }

    /// Applies one step to every named gradient. All gradients are checked
    /// before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(String, Tensor)]) -> Result<(), AutodiffError> {
        for (name, g) in grads {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(AutodiffError::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite(format!("gradient of `{name}`")));
            }
        }
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let st = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdadeltaState::fresh(g.shape()));
            Self::step_tensor(self.rho, self.eps, p, g, st)?;
        }
        Ok(())
    }
}
