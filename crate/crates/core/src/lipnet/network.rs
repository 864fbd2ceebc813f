use std::f64::consts::SQRT_2;

use super::cayley::{cayley_backward, cayley_cached, CayleyCache};
use super::params::{Gradient, LipNetParams, SandwichParams};
use crate::error::{Error, Result};
use crate::numcore::{spectral_norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Activation {
    Relu,
    /// Linearized network, used to check homogeneity in `γ`.
    #[cfg_attr(not(test), allow(dead_code))]
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Identity => u,
        }
    }

    /// Subgradient; ReLU takes 0 at the kink.
    #[inline]
    fn slope(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct PreparedLayer {
    cayley: CayleyCache,
    psi: Vec<f64>,
}

/// A parameter set with its Cayley transforms evaluated once.
///
/// Forward passes and gradients over a batch reuse these matrices.
#[derive(Debug, Clone)]
pub struct PreparedNet<'a> {
    params: &'a LipNetParams,
    layers: Vec<PreparedLayer>,
    output: CayleyCache,
    activation: Activation,
}

/// Per-layer intermediates of one forward pass.
struct LayerTrace {
    input: Vec<f64>,
    pre_scale: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

impl<'a> PreparedNet<'a> {
    pub fn new(params: &'a LipNetParams) -> Result<Self> {
        Self::with_activation(params, Activation::Relu)
    }

    pub(crate) fn with_activation(
        params: &'a LipNetParams,
        activation: Activation,
    ) -> Result<Self> {
        params.validate()?;
        let layers = params
            .hidden
            .iter()
            .map(|l| {
                Ok(PreparedLayer {
                    cayley: cayley_cached(&l.x, &l.y)?,
                    psi: l.s.iter().map(|s| s.exp()).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let output = cayley_cached(&params.output.x, &params.output.y)?;
        Ok(PreparedNet {
            params,
            layers,
            output,
            activation,
        })
    }

    pub fn params(&self) -> &LipNetParams {
        self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.params.output_dim()
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        Ok(self.forward_traced(z, None))
    }

    fn forward_traced(&self, z: &[f64], mut trace: Option<&mut Vec<LayerTrace>>) -> Vec<f64> {
        let sg = self.params.gamma.sqrt();
        let mut h: Vec<f64> = z.iter().map(|v| sg * v).collect();
        for (layer, prep) in self.params.hidden.iter().zip(&self.layers) {
            let pre_scale = prep.cayley.pair.n.matvec(&h);
            let pre_act: Vec<f64> = pre_scale
                .iter()
                .zip(&prep.psi)
                .zip(&layer.b)
                .map(|((v, psi), b)| SQRT_2 * v / psi + b)
                .collect();
            let act: Vec<f64> = pre_act.iter().map(|&u| self.activation.apply(u)).collect();
            let scaled: Vec<f64> = act.iter().zip(&prep.psi).map(|(a, p)| a * p).collect();
            let next: Vec<f64> = prep
                .cayley
                .pair
                .m
                .matvec_t(&scaled)
                .into_iter()
                .map(|v| SQRT_2 * v)
                .collect();
            if let Some(t) = trace.as_deref_mut() {
                t.push(LayerTrace {
                    input: std::mem::take(&mut h),
                    pre_scale,
                    pre_act,
                    act,
                });
            }
            h = next;
        }
        let mut out = self.output.pair.n.matvec(&h);
        for (o, b) in out.iter_mut().zip(&self.params.output.b) {
            *o = sg * *o + b;
        }
        if let Some(t) = trace {
            t.push(LayerTrace {
                input: h,
                pre_scale: Vec::new(),
                pre_act: Vec::new(),
                act: Vec::new(),
            });
        }
        out
    }

    /// Mean squared error over `(z, x)` pairs and its gradient.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], &[f64])]) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(Error::invalid("gradient of an empty batch"));
        }
        let params = self.params;
        let sg = params.gamma.sqrt();
        let inv_b = 1.0 / batch.len() as f64;
        let mut grad = Gradient::zeros_like(params);
        // adjoints of the Cayley outputs, pulled back once per batch
        let mut d_m: Vec<Matrix> = self
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.cayley.pair.m.rows(), l.cayley.pair.m.cols()))
            .collect();
        let mut d_n: Vec<Matrix> = self
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.cayley.pair.n.rows(), l.cayley.pair.n.cols()))
            .collect();
        let mut d_n_out = Matrix::zeros(self.output.pair.n.rows(), self.output.pair.n.cols());

        let mut loss = 0.0;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        for (z, x) in batch {
            self.check_input(z)?;
            if x.len() != self.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "network target",
                    expected: self.output_dim(),
                    actual: x.len(),
                });
            }
            trace.clear();
            let xhat = self.forward_traced(z, Some(&mut trace));
            let err: Vec<f64> = xhat.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            loss += err.iter().map(|e| e * e).sum::<f64>() * inv_b;

            // output layer: x̂ = √γ N h + b
            let g_out: Vec<f64> = err.iter().map(|e| 2.0 * e * inv_b).collect();
            let last = trace.last().expect("output trace");
            for (gb, g) in grad.output.b.iter_mut().zip(&g_out) {
                *gb += g;
            }
            d_n_out.add_outer(sg, &g_out, &last.input);
            let mut g_h: Vec<f64> = self
                .output
                .pair
                .n
                .matvec_t(&g_out)
                .into_iter()
                .map(|v| sg * v)
                .collect();

            for (l, prep) in self.layers.iter().enumerate().rev() {
                let t = &trace[l];
                let m = &prep.cayley.pair.m;
                let gl = &mut grad.hidden[l];
                // out = √2 Mᵀ w, w = ψ ⊙ a
                let w: Vec<f64> = t.act.iter().zip(&prep.psi).map(|(a, p)| a * p).collect();
                d_m[l].add_outer(SQRT_2, &w, &g_h);
                let g_w: Vec<f64> = m.matvec(&g_h).into_iter().map(|v| SQRT_2 * v).collect();
                let d = prep.psi.len();
                let mut g_v = vec![0.0; d];
                for i in 0..d {
                    let psi = prep.psi[i];
                    let g_a = psi * g_w[i];
                    let mut g_psi = t.act[i] * g_w[i];
                    let g_u = g_a * self.activation.slope(t.pre_act[i]);
                    gl.b[i] += g_u;
                    // u = √2 v / ψ + b
                    g_v[i] = SQRT_2 * g_u / psi;
                    g_psi -= SQRT_2 * t.pre_scale[i] * g_u / (psi * psi);
                    gl.s[i] += g_psi * psi;
                }
                d_n[l].add_outer(1.0, &g_v, &t.input);
                g_h = prep.cayley.pair.n.matvec_t(&g_v);
            }
        }

        for (l, prep) in self.layers.iter().enumerate() {
            let (gx, gy) = cayley_backward(&prep.cayley, &params.hidden[l].y, &d_m[l], &d_n[l]);
            grad.hidden[l].x = gx;
            grad.hidden[l].y = gy;
        }
        let zero_m = Matrix::zeros(self.output.pair.m.rows(), self.output.pair.m.cols());
        let (gx, gy) = cayley_backward(&self.output, &params.output.y, &zero_m, &d_n_out);
        grad.output.x = gx;
        grad.output.y = gy;
        Ok((loss, grad))
    }

    /// Upper bound from the layer factorization: `γ·‖N_out‖₂`, each sandwich layer contributing 1.
    pub fn certified_bound(&self) -> Result<f64> {
        Ok(self.params.gamma * spectral_norm(&self.output.pair.n)?)
    }

    /// Product of spectral norms of every linear factor, times `γ`.
    ///
    /// Each sandwich layer contributes `‖√2·Mᵀ·Ψ‖·‖√2·Ψ⁻¹·N‖`; this is the
    /// classical (loose) estimate and can exceed `γ`.
    pub fn spectral_product_bound(&self) -> Result<f64> {
        let mut bound = self.params.gamma * spectral_norm(&self.output.pair.n)?;
        for prep in &self.layers {
            let pair = &prep.cayley.pair;
            let left = Matrix::from_fn(pair.m.cols(), pair.m.rows(), |i, j| {
                SQRT_2 * pair.m[(j, i)] * prep.psi[j]
            });
            let right = Matrix::from_fn(pair.n.rows(), pair.n.cols(), |i, j| {
                SQRT_2 * pair.n[(i, j)] / prep.psi[i]
            });
            bound *= spectral_norm(&left)? * spectral_norm(&right)?;
        }
        Ok(bound)
    }
}

/// One sandwich layer `Ξ(h) = √2·Mᵀ·Ψ·ReLU(√2·Ψ⁻¹·N·h + b)`.
pub fn sandwich_forward(p: &SandwichParams, h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "sandwich input",
            expected: p.input_dim(),
            actual: h.len(),
        });
    }
    let cache = cayley_cached(&p.x, &p.y)?;
    let pair = &cache.pair;
    let w: Vec<f64> = pair
        .n
        .matvec(h)
        .iter()
        .zip(&p.s)
        .zip(&p.b)
        .map(|((v, s), b)| {
            let psi = s.exp();
            psi * (SQRT_2 * v / psi + b).max(0.0)
        })
        .collect();
    Ok(pair
        .m
        .matvec_t(&w)
        .into_iter()
        .map(|v| SQRT_2 * v)
        .collect())
}

pub fn forward(params: &LipNetParams, z: &[f64]) -> Result<Vec<f64>> {
    PreparedNet::new(params)?.forward(z)
}

/// Mean squared loss and its gradient over `(z, x)` pairs.
pub fn backward(params: &LipNetParams, batch: &[(&[f64], &[f64])]) -> Result<(f64, Gradient)> {
    PreparedNet::new(params)?.loss_and_gradient(batch)
}
