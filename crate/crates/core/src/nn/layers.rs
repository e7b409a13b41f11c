use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use super::params::{orthogonal_init, ParamId, ParamStore};
use super::tape::{silu, Tape, Var};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
}

/// `y = act(x · Wᵀ + b)` with `W` of shape `out × in` and `b` of shape `1 × out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl DenseLayer {
    /// Registers `<name>.weight` (orthogonal, gain 1) and `<name>.bias` (zero).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> DenseLayer {
        let weight = store.add(
            format!("{name}.weight"),
            orthogonal_init(rng, outputs, inputs, 1.0),
        );
        let bias = store.add(format!("{name}.bias"), Tensor2::zeros(1, outputs));
        DenseLayer {
            weight,
            bias,
            activation,
        }
    }

    pub fn inputs(&self, store: &ParamStore) -> usize {
        store.value(self.weight).cols()
    }

    pub fn outputs(&self, store: &ParamStore) -> usize {
        store.value(self.weight).rows()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.check_input(store, tape.value(x))?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul_t(x, w)?;
        let y = tape.add_bias(xw, b)?;
        Ok(match self.activation {
            Activation::Identity => y,
            Activation::Silu => tape.silu(y),
        })
    }

    /// Tape-free evaluation.
    pub fn apply(&self, store: &ParamStore, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(store, x)?;
        let mut y = x.matmul_t(store.value(self.weight))?;
        let b = store.value(self.bias);
        for r in 0..y.rows() {
            for (d, s) in y.row_mut(r).iter_mut().zip(b.data()) {
                *d += s;
                if self.activation == Activation::Silu {
                    *d = silu(*d);
                }
            }
        }
        Ok(y)
    }

    fn check_input(&self, store: &ParamStore, x: &Tensor2) -> Result<()> {
        let expected = self.inputs(store);
        if x.cols() != expected {
            return Err(Error::ShapeError {
                op: "dense_forward",
                detail: format!("input has {} columns, layer expects {expected}", x.cols()),
            });
        }
        Ok(())
    }
}

/// `y = (x + D2(silu(D1(silu(x))))) / √2` with square layers of equal width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBlock {
    pub first: DenseLayer,
    pub second: DenseLayer,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
    ) -> ResidualBlock {
        ResidualBlock {
            first: DenseLayer::new(
                store,
                rng,
                &format!("{name}.dense1"),
                width,
                width,
                Activation::Identity,
            ),
            second: DenseLayer::new(
                store,
                rng,
                &format!("{name}.dense2"),
                width,
                width,
                Activation::Identity,
            ),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let a = tape.silu(x);
        let a = self.first.forward(tape, store, a)?;
        let a = tape.silu(a);
        let a = self.second.forward(tape, store, a)?;
        let sum = tape.add(x, a)?;
        Ok(tape.scale(sum, FRAC_1_SQRT_2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(store: &mut ParamStore, w: Tensor2, b: Tensor2, activation: Activation) -> DenseLayer {
        let weight = store.add("w", w);
        let bias = store.add("b", b);
        DenseLayer {
            weight,
            bias,
            activation,
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let d = layer(
            &mut store,
            Tensor2::identity(3),
            Tensor2::zeros(1, 3),
            Activation::Identity,
        );
        let x = Tensor2::from_fn(4, 3, |r, c| r as f64 - 2.0 * c as f64);
        assert_eq!(d.apply(&store, &x).unwrap(), x);
    }

    #[test]
    fn zero_input_returns_bias_rows() {
        let mut store = ParamStore::new();
        let bias = Tensor2::from_vec(1, 2, vec![0.5, -1.5]).unwrap();
        let d = layer(
            &mut store,
            Tensor2::filled(2, 3, 7.0),
            bias.clone(),
            Activation::Identity,
        );
        let y = d.apply(&store, &Tensor2::zeros(5, 3)).unwrap();
        for r in 0..5 {
            assert_eq!(y.row(r), bias.data());
        }
    }

    #[test]
    fn dense_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor2::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = Tensor2::from_fn(1, 5, |_, _| rng.random_range(-1.0..1.0));
        let x = Tensor2::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut expected = Tensor2::zeros(3, 5);
        for i in 0..3 {
            for o in 0..5 {
                let mut s = b.get(0, o);
                for k in 0..4 {
                    s += x.get(i, k) * w.get(o, k);
                }
                expected.set(i, o, s);
            }
        }
        let mut store = ParamStore::new();
        let d = layer(&mut store, w, b, Activation::Identity);
        assert!(d.apply(&store, &x).unwrap().max_abs_diff(&expected) < 1e-14);

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = d.forward(&mut tape, &store, xv).unwrap();
        assert!(tape.value(y).max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let d = layer(
            &mut store,
            Tensor2::zeros(2, 3),
            Tensor2::zeros(1, 2),
            Activation::Silu,
        );
        assert!(matches!(
            d.apply(&store, &Tensor2::zeros(1, 4)),
            Err(Error::ShapeError { .. })
        ));
    }
}
