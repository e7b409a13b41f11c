use super::params::ParamStore;
use super::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay.
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: Vec<Tensor2>,
    second_moment: Vec<Tensor2>,
}

impl Optimizer {
    pub fn adamw(store: &ParamStore, learning_rate: f64, weight_decay: f64) -> Optimizer {
        Optimizer::with_kind(
            store,
            OptimizerKind::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            learning_rate,
            weight_decay,
        )
    }

    pub fn sgd(store: &ParamStore, learning_rate: f64) -> Optimizer {
        Optimizer::with_kind(store, OptimizerKind::Sgd, learning_rate, 0.0)
    }

    fn with_kind(
        store: &ParamStore,
        kind: OptimizerKind,
        learning_rate: f64,
        weight_decay: f64,
    ) -> Optimizer {
        let zeros: Vec<Tensor2> = store
            .ids()
            .map(|id| {
                let (r, c) = store.value(id).shape();
                Tensor2::zeros(r, c)
            })
            .collect();
        Optimizer {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(
            self.first_moment.len(),
            store.len(),
            "optimizer built for another store"
        );
        self.step += 1;
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        let (values, grads) = store.split_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in values.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * (gv + wd * *pv);
                    }
                }
            }
            OptimizerKind::AdamW { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in values
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let update = (*mv / c1) / ((*vv / c2).sqrt() + eps);
                        *pv -= lr * (update + wd * *pv);
                    }
                }
            }
        }
    }
}
