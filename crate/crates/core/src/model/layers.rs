use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{kaiming_uniform, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Affine map `x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, slope: f64, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.weight"), kaiming_uniform(rng, fan_out, fan_in, slope));
        let b = store.add(format!("{name}.bias"), Array2::zeros((1, fan_out)));
        Self { w, b: Some(b) }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// Two affine maps with a leaky ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
    pub slope: f64,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), fan_in, hidden, slope, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, fan_out, slope, rng),
            slope,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.leaky_relu(h, self.slope);
        self.out.forward(tape, h)
    }
}
