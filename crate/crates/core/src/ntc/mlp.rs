//! Small fully-connected ReLU network with a linear head. Layers carry no
//! bias, so an all-zero encoding maps to a zero output.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
        }
    }

    /// Xavier-uniform weights.
    pub fn xavier<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        d.weights.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        d
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *yo = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-sample activations: `acts[0]` is the input, `acts[k]` the
/// post-ReLU output of hidden layer k, and the last entry the linear output.
pub type Activations = Vec<Vec<f64>>;

impl Mlp {
    /// Hidden layers are Xavier initialized; the output layer starts at zero.
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = inputs;
        for &h in hidden {
            layers.push(Dense::xavier(prev, h, rng));
            prev = h;
        }
        layers.push(Dense::zeros(prev, outputs));
        Mlp { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Activations {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; layer.outputs];
            layer.apply(&acts[k], &mut y);
            if k < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    /// Accumulates parameter gradients into `grads` (same shape as
    /// `self`) and returns the gradient with respect to the input.
    pub fn backward(&self, acts: &Activations, d_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut g = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let gl = &mut grads.layers[k];
            let x = &acts[k];
            let mut gx = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = o * layer.inputs;
                for i in 0..layer.inputs {
                    gl.weights[row + i] += go * x[i];
                    gx[i] += go * layer.weights[row + i];
                }
            }
            if k > 0 {
                // ReLU mask of the previous layer's output
                for (v, a) in gx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            g = gx;
        }
        g
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
        }
    }

    /// All weights in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
        }
        v
    }

    pub fn unflatten(&mut self, v: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&v[at..at + n]);
            at += n;
        }
    }
}
