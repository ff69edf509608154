//! Dense MLPs with SiLU activations, hand-written backprop and AdamW.

use rand::Rng;

/// Fully connected network stored as one flat parameter vector: for each
/// layer the `out x in` weight matrix (row-major) followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Layer inputs and hidden pre-activations recorded by [`Mlp::forward_taped`].
#[derive(Clone, Debug, Default)]
pub struct MlpTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `+-1/sqrt(fan_in)` initialization; `zero_output` zeroes the
    /// last layer so the untrained network outputs exactly zero.
    pub fn new(sizes: &[usize], rng: &mut impl Rng, zero_output: bool) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let zero = zero_output && l == layers - 1;
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(if zero { 0.0 } else { rng.random_range(-bound..bound) });
            }
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == Self::param_count(sizes))
            .then(|| Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer(&self, x: &[f64], offset: usize, n_in: usize, n_out: usize) -> Vec<f64> {
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        let mut y = b.to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        y
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "MLP input width");
        let mut h = x.to_vec();
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut y = self.layer(&h, offset, n_in, n_out);
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = silu(*v));
            }
            offset += n_in * n_out + n_out;
            h = y;
        }
        h
    }

    pub fn forward_taped(&self, x: &[f64]) -> (Vec<f64>, MlpTape) {
        assert_eq!(x.len(), self.input_dim(), "MLP input width");
        let mut tape = MlpTape::default();
        let mut h = x.to_vec();
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let y = self.layer(&h, offset, n_in, n_out);
            tape.inputs.push(std::mem::take(&mut h));
            offset += n_in * n_out + n_out;
            if l + 1 < layers {
                h = y.iter().map(|&v| silu(v)).collect();
                tape.pre.push(y);
            } else {
                h = y;
            }
        }
        (h, tape)
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, tape: &MlpTape, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut g = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (gv, &p) in g.iter_mut().zip(&tape.pre[l]) {
                    *gv *= silu_grad(p);
                }
            }
            let x = &tape.inputs[l];
            let o = offsets[l];
            let w = &self.params[o..o + n_in * n_out];
            let (gw, gb) = grads[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut gx = vec![0.0; n_in];
            for r in 0..n_out {
                let gr = g[r];
                if gr == 0.0 {
                    continue;
                }
                gb[r] += gr;
                let row = &w[r * n_in..(r + 1) * n_in];
                let grow = &mut gw[r * n_in..(r + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += gr * x[i];
                    gx[i] += row[i] * gr;
                }
            }
            g = gx;
        }
        g
    }
}

/// Adam with decoupled weight decay over several parameter groups.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(group_sizes: &[usize], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[gi], &mut self.v[gi]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                p[j] -= self.lr * (update + self.weight_decay * p[j]);
            }
        }
    }
}
