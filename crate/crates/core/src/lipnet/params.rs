use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngState};

/// Parameters of one 1-Lipschitz sandwich layer mapping `ℝᶜ → ℝᵈ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParams {
    /// `d×d`
    pub x: Matrix,
    /// `c×d`
    pub y: Matrix,
    /// log-scales of `Ψ`
    pub s: Vec<f64>,
    pub b: Vec<f64>,
}

impl SandwichParams {
    pub fn zeros(c: usize, d: usize) -> Self {
        SandwichParams {
            x: Matrix::zeros(d, d),
            y: Matrix::zeros(c, d),
            s: vec![0.0; d],
            b: vec![0.0; d],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.y.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.x.rows()
    }

    fn validate(&self) -> Result<()> {
        let d = self.output_dim();
        if !self.x.is_square() || self.y.cols() != d || self.s.len() != d || self.b.len() != d {
            return Err(Error::invalid(format!(
                "inconsistent sandwich layer shapes: X {}x{}, Y {}x{}, s {}, b {}",
                self.x.rows(),
                self.x.cols(),
                self.y.rows(),
                self.y.cols(),
                self.s.len(),
                self.b.len()
            )));
        }
        if self.s.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sandwich layer parameters"));
        }
        Ok(())
    }
}

/// The final half-sandwich `x̂ = √γ·N·h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams {
    pub x: Matrix,
    pub y: Matrix,
    pub b: Vec<f64>,
}

impl OutputParams {
    pub fn zeros(c: usize, d: usize) -> Self {
        OutputParams {
            x: Matrix::zeros(d, d),
            y: Matrix::zeros(c, d),
            b: vec![0.0; d],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.y.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.x.rows()
    }
}

/// All trainable parameters of a Wang-Manchester network plus its bound `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipNetParams {
    pub gamma: f64,
    pub hidden: Vec<SandwichParams>,
    pub output: OutputParams,
}

/// Gradient with the same layout as [`LipNetParams`] (no `γ`).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub hidden: Vec<SandwichParams>,
    pub output: OutputParams,
}

impl LipNetParams {
    /// All-zero parameters for the given widths `(input, hidden…, output)`.
    pub fn zeros(widths: &[usize], gamma: f64) -> Result<Self> {
        check_widths(widths)?;
        check_gamma(gamma)?;
        let nu = widths.len() - 2;
        Ok(LipNetParams {
            gamma,
            hidden: (0..nu)
                .map(|l| SandwichParams::zeros(widths[l], widths[l + 1]))
                .collect(),
            output: OutputParams::zeros(widths[nu], widths[nu + 1]),
        })
    }

    pub fn nu(&self) -> usize {
        self.hidden.len()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.input_dim(), SandwichParams::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.hidden.iter().map(SandwichParams::output_dim));
        w.push(self.output_dim());
        w
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        let mut width = self.input_dim();
        for layer in &self.hidden {
            layer.validate()?;
            if layer.input_dim() != width {
                return Err(Error::DimensionMismatch {
                    context: "chained layer width",
                    expected: width,
                    actual: layer.input_dim(),
                });
            }
            width = layer.output_dim();
        }
        let out = &self.output;
        if out.input_dim() != width {
            return Err(Error::DimensionMismatch {
                context: "output layer input width",
                expected: width,
                actual: out.input_dim(),
            });
        }
        if !out.x.is_square() || out.y.cols() != out.output_dim() || out.b.len() != out.output_dim()
        {
            return Err(Error::invalid("inconsistent output layer shapes"));
        }
        if out.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("output bias"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.to_flat().len()
    }

    /// Trainable scalars in layout order: per hidden layer `X, Y, s, b`, then output `X, Y, b`.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.hidden, &self.output)
    }

    /// Overwrites the trainable scalars from a slice in [`to_flat`](Self::to_flat) order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected,
                actual: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for layer in &mut self.hidden {
            fill(layer.x.as_mut_slice(), &mut it);
            fill(layer.y.as_mut_slice(), &mut it);
            fill(&mut layer.s, &mut it);
            fill(&mut layer.b, &mut it);
        }
        fill(self.output.x.as_mut_slice(), &mut it);
        fill(self.output.y.as_mut_slice(), &mut it);
        fill(&mut self.output.b, &mut it);
        Ok(())
    }

    /// `θ ← θ + k·g`
    pub fn add_scaled(&mut self, k: f64, g: &Gradient) {
        for (p, gp) in self.hidden.iter_mut().zip(&g.hidden) {
            p.x.axpy(k, &gp.x);
            p.y.axpy(k, &gp.y);
            axpy(&mut p.s, k, &gp.s);
            axpy(&mut p.b, k, &gp.b);
        }
        self.output.x.axpy(k, &g.output.x);
        self.output.y.axpy(k, &g.output.y);
        axpy(&mut self.output.b, k, &g.output.b);
    }
}

impl Gradient {
    pub fn zeros_like(p: &LipNetParams) -> Self {
        Gradient {
            hidden: p
                .hidden
                .iter()
                .map(|l| SandwichParams::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            output: OutputParams::zeros(p.output.input_dim(), p.output.output_dim()),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.hidden, &self.output)
    }

    /// `self ← k·self + g`
    pub fn scale_add(&mut self, k: f64, g: &Gradient) {
        for (p, gp) in self.hidden.iter_mut().zip(&g.hidden) {
            p.x = p.x.scale(k).add(&gp.x);
            p.y = p.y.scale(k).add(&gp.y);
            p.s.iter_mut().zip(&gp.s).for_each(|(a, b)| *a = k * *a + b);
            p.b.iter_mut().zip(&gp.b).for_each(|(a, b)| *a = k * *a + b);
        }
        let o = &mut self.output;
        o.x = o.x.scale(k).add(&g.output.x);
        o.y = o.y.scale(k).add(&g.output.y);
        o.b.iter_mut()
            .zip(&g.output.b)
            .for_each(|(a, b)| *a = k * *a + b);
    }
}

fn flatten(hidden: &[SandwichParams], output: &OutputParams) -> Vec<f64> {
    let mut v = Vec::new();
    for layer in hidden {
        v.extend_from_slice(layer.x.as_slice());
        v.extend_from_slice(layer.y.as_slice());
        v.extend_from_slice(&layer.s);
        v.extend_from_slice(&layer.b);
    }
    v.extend_from_slice(output.x.as_slice());
    v.extend_from_slice(output.y.as_slice());
    v.extend_from_slice(&output.b);
    v
}

fn fill(dst: &mut [f64], it: &mut impl Iterator<Item = f64>) {
    for d in dst {
        *d = it.next().expect("length checked by caller");
    }
}

fn axpy(dst: &mut [f64], k: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::invalid(format!(
            "widths must list input and output sizes, all positive; got {widths:?}"
        )));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "Lipschitz bound must be > 0, got {gamma}"
        )));
    }
    Ok(())
}

/// Trainable scalars for widths `(input, hidden…, output)` with `nu` hidden layers.
pub fn param_count(widths: &[usize], nu: usize) -> Result<usize> {
    check_widths(widths)?;
    if widths.len() != nu + 2 {
        return Err(Error::invalid(format!(
            "{} widths given for {nu} hidden layers (expected {})",
            widths.len(),
            nu + 2
        )));
    }
    let hidden: usize = widths
        .windows(2)
        .take(nu)
        .map(|w| {
            let (c, d) = (w[0], w[1]);
            d * d + c * d + 2 * d
        })
        .sum();
    let (c, d) = (widths[nu], widths[nu + 1]);
    Ok(hidden + d * d + c * d + d)
}

/// Random initialization: `X`, `Y` entries iid `N(0, 1/fan_in)`, `s = 0`, `b = 0`.
pub fn init_params(
    widths: &[usize],
    nu: usize,
    gamma: f64,
    rng: &mut RngState,
) -> Result<LipNetParams> {
    param_count(widths, nu)?;
    let mut p = LipNetParams::zeros(widths, gamma)?;
    let mut draw = |m: &mut Matrix, fan_in: usize| {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in m.as_mut_slice() {
            *v = scale * rng.normal();
        }
    };
    for layer in &mut p.hidden {
        let (c, d) = (layer.input_dim(), layer.output_dim());
        draw(&mut layer.x, d);
        draw(&mut layer.y, c);
    }
    let (c, d) = (p.output.input_dim(), p.output.output_dim());
    draw(&mut p.output.x, d);
    draw(&mut p.output.y, c);
    Ok(p)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputFile {
    x: Vec<f64>,
    y: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    gamma: f64,
    widths: Vec<usize>,
    nu: usize,
    layers: Vec<LayerFile>,
    output: OutputFile,
}

impl LipNetParams {
    /// Single JSON document with row-major layer arrays.
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            gamma: self.gamma,
            widths: self.widths(),
            nu: self.nu(),
            layers: self
                .hidden
                .iter()
                .map(|l| LayerFile {
                    x: l.x.as_slice().to_vec(),
                    y: l.y.as_slice().to_vec(),
                    s: l.s.clone(),
                    b: l.b.clone(),
                })
                .collect(),
            output: OutputFile {
                x: self.output.x.as_slice().to_vec(),
                y: self.output.y.as_slice().to_vec(),
                b: self.output.b.clone(),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let widths = &file.widths;
        param_count(widths, file.nu)?;
        if file.layers.len() != file.nu {
            return Err(Error::DimensionMismatch {
                context: "model layers vs nu",
                expected: file.nu,
                actual: file.layers.len(),
            });
        }
        let hidden = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(l, layer)| {
                let (c, d) = (widths[l], widths[l + 1]);
                Ok(SandwichParams {
                    x: Matrix::from_vec(d, d, layer.x)?,
                    y: Matrix::from_vec(c, d, layer.y)?,
                    s: layer.s,
                    b: layer.b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (c, d) = (widths[file.nu], widths[file.nu + 1]);
        let params = LipNetParams {
            gamma: file.gamma,
            hidden,
            output: OutputParams {
                x: Matrix::from_vec(d, d, file.output.x)?,
                y: Matrix::from_vec(c, d, file.output.y)?,
                b: file.output.b,
            },
        };
        params.validate()?;
        Ok(params)
    }
}
