//! Fully connected networks over a flat parameter buffer.
//!
//! A network is a shared trunk followed by one or more output heads. Batches
//! are row-major `n × width` matrices; each row is routed to one head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Identity => {}
        }
    }

    /// Multiply `grad` by the derivative, given the activated output `y`.
    fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => grad.iter_mut().zip(y).for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

/// `c = beta·c + a·b` with optional transposes, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided extents implied by m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the row-major `fan_in × fan_out` weight; the bias follows.
    offset: usize,
}

impl Layer {
    fn weight<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.fan_in * self.fan_out]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_in * self.fan_out;
        &params[start..start + self.fan_out]
    }

    fn len(&self) -> usize {
        (self.fan_in + 1) * self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    heads: usize,
    hidden: Activation,
    output: Activation,
    trunk: Vec<Layer>,
    head_layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Activations saved by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    heads: Vec<usize>,
    /// Trunk inputs and outputs: `layers[0]` is the batch input.
    layers: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl Mlp {
    /// `sizes` lists input width, hidden widths, and output width per head.
    /// Weights start Xavier-uniform, biases at zero.
    pub fn new(
        sizes: &[usize],
        heads: usize,
        hidden: Activation,
        output: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer sizes {sizes:?}")));
        }
        if heads == 0 {
            return Err(Error::Parameter("a network needs at least one head".into()));
        }
        let mut offset = 0;
        let mut layer = |fan_in, fan_out| {
            let l = Layer {
                fan_in,
                fan_out,
                offset,
            };
            offset += l.len();
            l
        };
        let trunk: Vec<Layer> = sizes
            .windows(2)
            .take(sizes.len() - 2)
            .map(|w| layer(w[0], w[1]))
            .collect();
        let last = sizes.len() - 1;
        let head_layers: Vec<Layer> = (0..heads).map(|_| layer(sizes[last - 1], sizes[last])).collect();
        let mut params = vec![0.0; offset];
        for l in trunk.iter().chain(&head_layers) {
            let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for w in &mut params[l.offset..l.offset + l.fan_in * l.fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            heads,
            hidden,
            output,
            trunk,
            head_layers,
            params,
        })
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter range owned by head `h`.
    pub fn head_range(&self, h: usize) -> std::ops::Range<usize> {
        let l = &self.head_layers[h];
        l.offset..l.offset + l.len()
    }

    /// Named weight and bias tensors with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        let mut push = |name: String, l: &Layer| {
            out.push((format!("{name}.weight"), vec![l.fan_in, l.fan_out], l.weight(&self.params)));
            out.push((format!("{name}.bias"), vec![l.fan_out], l.bias(&self.params)));
        };
        for (i, l) in self.trunk.iter().enumerate() {
            push(format!("layer{i}"), l);
        }
        for (h, l) in self.head_layers.iter().enumerate() {
            push(format!("head{h}"), l);
        }
        out
    }

    fn check_batch(&self, input: &[f64], heads: &[usize]) -> Result<usize> {
        let width = self.input_len();
        if !input.len().is_multiple_of(width) {
            return Err(Error::Parameter(format!(
                "input length {} is not a multiple of the input width {width}",
                input.len()
            )));
        }
        let rows = input.len() / width;
        if heads.len() != rows {
            return Err(Error::Parameter(format!(
                "{} head indices for {rows} rows",
                heads.len()
            )));
        }
        if let Some(h) = heads.iter().find(|&&h| h >= self.heads) {
            return Err(Error::Parameter(format!(
                "head index {h} out of range for {} heads",
                self.heads
            )));
        }
        Ok(rows)
    }

    pub fn forward(&self, input: &[f64], heads: &[usize]) -> Result<Tape> {
        let rows = self.check_batch(input, heads)?;
        let mut layers = Vec::with_capacity(self.trunk.len() + 1);
        layers.push(input.to_vec());
        for l in &self.trunk {
            let x = layers.last().expect("input pushed");
            let mut z: Vec<f64> = l.bias(&self.params).repeat(rows);
            gemm(rows, l.fan_in, l.fan_out, x, false, l.weight(&self.params), false, 1.0, &mut z);
            self.hidden.apply(&mut z);
            layers.push(z);
        }
        let x = layers.last().expect("input pushed");
        let (fan_in, fan_out) = (self.sizes[self.sizes.len() - 2], self.output_len());
        let mut output = vec![0.0; rows * fan_out];
        for (h, l) in self.head_layers.iter().enumerate() {
            let idx: Vec<usize> = (0..rows).filter(|&r| heads[r] == h).collect();
            if idx.is_empty() {
                continue;
            }
            let xs: Vec<f64> = if idx.len() == rows {
                x.clone()
            } else {
                idx.iter().flat_map(|&r| &x[r * fan_in..(r + 1) * fan_in]).copied().collect()
            };
            let mut z: Vec<f64> = l.bias(&self.params).repeat(idx.len());
            gemm(idx.len(), fan_in, fan_out, &xs, false, l.weight(&self.params), false, 1.0, &mut z);
            for (k, &r) in idx.iter().enumerate() {
                output[r * fan_out..(r + 1) * fan_out].copy_from_slice(&z[k * fan_out..(k + 1) * fan_out]);
            }
        }
        self.output.apply(&mut output);
        Ok(Tape {
            rows,
            heads: heads.to_vec(),
            layers,
            output,
        })
    }

    /// Single-head convenience forward returning only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let rows = input.len() / self.input_len();
        Ok(self.forward(input, &vec![0; rows])?.output)
    }

    /// Accumulate the parameter gradient of `Σ output ⊙ output_grad` into
    /// `grad` and return the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let rows = tape.rows;
        let fan_out = self.output_len();
        if output_grad.len() != rows * fan_out || grad.len() != self.params.len() {
            return Err(Error::Parameter("gradient shape mismatch".into()));
        }
        let mut dz = output_grad.to_vec();
        self.output.backprop(&tape.output, &mut dz);

        let x = tape.layers.last().expect("input recorded");
        let fan_in = self.sizes[self.sizes.len() - 2];
        let mut dx = vec![0.0; rows * fan_in];
        for (h, l) in self.head_layers.iter().enumerate() {
            let idx: Vec<usize> = (0..rows).filter(|&r| tape.heads[r] == h).collect();
            if idx.is_empty() {
                continue;
            }
            let gather = |m: &[f64], w: usize| -> Vec<f64> {
                idx.iter().flat_map(|&r| &m[r * w..(r + 1) * w]).copied().collect()
            };
            let (xs, dzs) = if idx.len() == rows {
                (x.clone(), dz.clone())
            } else {
                (gather(x, fan_in), gather(&dz, fan_out))
            };
            let n = idx.len();
            let (w_range, b_start) = (l.offset..l.offset + fan_in * fan_out, l.offset + fan_in * fan_out);
            gemm(fan_in, n, fan_out, &xs, true, &dzs, false, 1.0, &mut grad[w_range]);
            for row in dzs.chunks_exact(fan_out) {
                for (g, d) in grad[b_start..b_start + fan_out].iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut dxs = vec![0.0; n * fan_in];
            gemm(n, fan_out, fan_in, &dzs, false, l.weight(&self.params), true, 0.0, &mut dxs);
            for (k, &r) in idx.iter().enumerate() {
                dx[r * fan_in..(r + 1) * fan_in].copy_from_slice(&dxs[k * fan_in..(k + 1) * fan_in]);
            }
        }

        for (i, l) in self.trunk.iter().enumerate().rev() {
            let y = &tape.layers[i + 1];
            let x = &tape.layers[i];
            let mut dz = dx;
            self.hidden.backprop(y, &mut dz);
            let b_start = l.offset + l.fan_in * l.fan_out;
            gemm(
                l.fan_in,
                rows,
                l.fan_out,
                x,
                true,
                &dz,
                false,
                1.0,
                &mut grad[l.offset..b_start],
            );
            for row in dz.chunks_exact(l.fan_out) {
                for (g, d) in grad[b_start..b_start + l.fan_out].iter_mut().zip(row) {
                    *g += d;
                }
            }
            dx = vec![0.0; rows * l.fan_in];
            gemm(rows, l.fan_out, l.fan_in, &dz, false, l.weight(&self.params), true, 0.0, &mut dx);
        }
        Ok(dx)
    }

    /// `self ← (1 − tau)·self + tau·source`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t += tau * (s - *t);
        }
    }
}
