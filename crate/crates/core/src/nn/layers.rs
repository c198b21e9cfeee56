use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};
use super::{ShapeError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
}

/// Multi-layer perceptron with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width,
    /// input first.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: glorot(rng, w[0], w[1]),
                bias: Tensor::zeros(&[1, w[1]]),
            })
            .collect();
        Self { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.cols()).unwrap_or(0)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn check(&self) -> Result<(), ShapeError> {
        for pair in self.layers.windows(2) {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(ShapeError::new(format!(
                    "layer widths {} and {} do not chain",
                    pair[0].weight.cols(),
                    pair[1].weight.rows()
                )));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weight.cols() {
                return Err(ShapeError::new("bias width".to_string()));
            }
        }
        Ok(())
    }

    /// Evaluates the MLP on the rows of `x` without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ShapeError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let input = tape.constant(x.clone());
        let out = bound.forward(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let leaf = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (leaf(tape, &l.weight), leaf(tape, &l.bias)))
                .collect(),
            output: self.output,
            input_dim: self.input_dim(),
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId)>,
    output: OutputActivation,
    input_dim: usize,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, ShapeError> {
        if tape.value(x).cols() != self.input_dim {
            return Err(ShapeError::new(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim,
                tape.value(x).cols()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let a = tape.matmul(h, w)?;
            let a = tape.add_bias(a, b)?;
            h = if i < last {
                tape.relu(a)
            } else {
                match self.output {
                    OutputActivation::Identity => a,
                    OutputActivation::Softplus => tape.softplus(a),
                }
            };
        }
        Ok(h)
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Gated recurrent unit, row-vector convention (`x . W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruCell {
    /// Glorot-uniform input weights, `U(-1/sqrt(h), 1/sqrt(h))` recurrent
    /// weights, zero biases.
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let recurrent = |rng: &mut _| {
            let a = 1.0 / (hidden_dim as f64).sqrt();
            let data = (0..hidden_dim * hidden_dim)
                .map(|_| Rng::random_range(rng, -a..a))
                .collect();
            Tensor::matrix(hidden_dim, hidden_dim, data)
        };
        let w_z = glorot(rng, input_dim, hidden_dim);
        let w_r = glorot(rng, input_dim, hidden_dim);
        let w_h = glorot(rng, input_dim, hidden_dim);
        let u_z = recurrent(rng);
        let u_r = recurrent(rng);
        let u_h = recurrent(rng);
        let zero = Tensor::zeros(&[1, hidden_dim]);
        Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: zero.clone(),
            b_r: zero.clone(),
            b_h: zero,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn check(&self) -> Result<(), ShapeError> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        let ok = [&self.w_z, &self.w_r, &self.w_h]
            .iter()
            .all(|w| w.rows() == i && w.cols() == h)
            && [&self.u_z, &self.u_r, &self.u_h]
                .iter()
                .all(|u| u.rows() == h && u.cols() == h)
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|b| b.len() == h);
        if ok {
            Ok(())
        } else {
            Err(ShapeError::new(format!("inconsistent GRU weights for {i} -> {h}")))
        }
    }

    /// One step on a batch of rows: `x` is `n x input`, `h` is `n x hidden`.
    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor, ShapeError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let h = tape.constant(h.clone());
        let out = bound.step(&mut tape, x, h)?;
        Ok(tape.value(out).clone())
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGru {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundGru {
            w_z: leaf(&self.w_z),
            w_r: leaf(&self.w_r),
            w_h: leaf(&self.w_h),
            u_z: leaf(&self.u_z),
            u_r: leaf(&self.u_r),
            u_h: leaf(&self.u_h),
            b_z: leaf(&self.b_z),
            b_r: leaf(&self.b_r),
            b_h: leaf(&self.b_h),
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundGru {
    w_z: NodeId,
    w_r: NodeId,
    w_h: NodeId,
    u_z: NodeId,
    u_r: NodeId,
    u_h: NodeId,
    b_z: NodeId,
    b_r: NodeId,
    b_h: NodeId,
    input_dim: usize,
    hidden_dim: usize,
}

impl BoundGru {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// z = s(xWz + hUz + bz); r = s(xWr + hUr + br);
    /// c = tanh(xWh + (r*h)Uh + bh); h' = (1 - z)*h + z*c.
    pub fn step(&self, tape: &mut Tape, x: NodeId, h: NodeId) -> Result<NodeId, ShapeError> {
        let (xv, hv) = (tape.value(x), tape.value(h));
        if xv.cols() != self.input_dim || hv.cols() != self.hidden_dim || xv.rows() != hv.rows() {
            return Err(ShapeError::new(format!(
                "GRU {}->{} given input {}x{} and state {}x{}",
                self.input_dim,
                self.hidden_dim,
                xv.rows(),
                xv.cols(),
                hv.rows(),
                hv.cols()
            )));
        }
        let gate = |tape: &mut Tape, w, u, b, hin| -> Result<NodeId, ShapeError> {
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(hin, u)?;
            let s = tape.add(xw, hu)?;
            tape.add_bias(s, b)
        };
        let z = gate(tape, self.w_z, self.u_z, self.b_z, h)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, self.w_r, self.u_r, self.b_r, h)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let c = gate(tape, self.w_h, self.u_h, self.b_h, rh)?;
        let c = tape.tanh(c);
        // h + z * (c - h)
        let diff = tape.sub(c, h)?;
        let step = tape.mul(z, diff)?;
        tape.add(h, step)
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        vec![
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::new(&[3, 4, 2], OutputActivation::Identity, &mut rng);
        for t in mlp.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        mlp.layers[1].bias = Tensor::row_vector(vec![0.25, -3.0]);
        let y = mlp
            .forward(&Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 9.0]))
            .unwrap();
        assert_eq!(y.data(), &[0.25, -3.0, 0.25, -3.0]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mlp = Mlp {
            layers: vec![Dense {
                weight: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
                bias: Tensor::zeros(&[1, 2]),
            }],
            output: OutputActivation::Identity,
        };
        let x = Tensor::matrix(1, 2, vec![-0.5, 7.0]);
        assert_eq!(mlp.forward(&x).unwrap(), x);
    }

    #[test]
    fn softplus_of_zero_preactivation_is_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mlp = Mlp::new(&[2, 3, 3], OutputActivation::Softplus, &mut rng);
        for t in mlp.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let y = mlp.forward(&Tensor::matrix(1, 2, vec![4.0, 5.0])).unwrap();
        for v in y.data() {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[3, 2], OutputActivation::Identity, &mut rng);
        assert!(mlp.forward(&Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn gru_zero_input_zero_state_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = GruCell::new(3, 5, &mut rng);
        let h = cell.step(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 5])).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_all_zero_weights_halves_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cell = GruCell::new(2, 3, &mut rng);
        for t in cell.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let h = Tensor::matrix(1, 3, vec![0.8, -2.0, 0.1]);
        let out = cell.step(&Tensor::matrix(1, 2, vec![5.0, -1.0]), &h).unwrap();
        for (o, v) in out.data().iter().zip(h.data()) {
            assert!((o - 0.5 * v).abs() < 1e-15);
        }
    }

    /// Scalar-loop reference for the three GRU equations.
    fn reference_step(cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let (ni, nh) = (cell.input_dim(), cell.hidden_dim());
        let lin = |w: &Tensor, u: &Tensor, b: &Tensor, hin: &[f64], j: usize| {
            let mut s = b.data()[j];
            for i in 0..ni {
                s += x[i] * w.get(i, j);
            }
            for k in 0..nh {
                s += hin[k] * u.get(k, j);
            }
            s
        };
        let z: Vec<f64> = (0..nh)
            .map(|j| sigmoid(lin(&cell.w_z, &cell.u_z, &cell.b_z, h, j)))
            .collect();
        let r: Vec<f64> = (0..nh)
            .map(|j| sigmoid(lin(&cell.w_r, &cell.u_r, &cell.b_r, h, j)))
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = (0..nh)
            .map(|j| lin(&cell.w_h, &cell.u_h, &cell.b_h, &rh, j).tanh())
            .collect();
        (0..nh).map(|j| (1.0 - z[j]) * h[j] + z[j] * c[j]).collect()
    }

    #[test]
    fn gru_matches_scalar_reference() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut cell = GruCell::new(4, 3, &mut rng);
            for b in [&mut cell.b_z, &mut cell.b_r, &mut cell.b_h] {
                b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = cell
                .step(&Tensor::matrix(1, 4, x.clone()), &Tensor::matrix(1, 3, h.clone()))
                .unwrap();
            for (g, e) in got.data().iter().zip(reference_step(&cell, &x, &h)) {
                assert!((g - e).abs() < 1e-14, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn gru_rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cell = GruCell::new(2, 3, &mut rng);
        assert!(cell.step(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 3])).is_err());
    }
}
