use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor2;

/// Handle to a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors with one gradient buffer each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Tensor2>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name `{name}`"
        );
        self.grads.push(Tensor2::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.grads[id.0]
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.rows() * v.cols()).sum()
    }

    pub(crate) fn split_mut(&mut self) -> (&mut [Tensor2], &[Tensor2]) {
        (&mut self.values, &self.grads)
    }
}

/// Matrix with orthonormal rows or columns (whichever is fewer), times `gain`.
pub fn orthogonal_init<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    gain: f64,
) -> Tensor2 {
    let tall = rows >= cols;
    let (m, n) = if tall { (rows, cols) } else { (cols, rows) };
    let gaussian = nalgebra::DMatrix::<f64>::from_fn(m, n, |_, _| rng.sample(StandardNormal));
    let qr = gaussian.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix the sign ambiguity of the factorization so the result is Haar distributed.
    let q = nalgebra::DMatrix::from_fn(m, n, |i, j| {
        if r[(j, j)] < 0.0 {
            -q[(i, j)]
        } else {
            q[(i, j)]
        }
    });
    Tensor2::from_fn(rows, cols, |i, j| {
        gain * if tall { q[(i, j)] } else { q[(j, i)] }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (r, c) in [(5, 3), (3, 5), (4, 4)] {
            let w = orthogonal_init(&mut rng, r, c, 1.0);
            let gram = if r >= c {
                w.t_matmul(&w).unwrap()
            } else {
                w.matmul_t(&w).unwrap()
            };
            assert!(gram.max_abs_diff(&Tensor2::identity(r.min(c))) < 1e-12);
        }
    }

    #[test]
    fn store_bookkeeping() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor2::filled(2, 3, 1.0));
        let b = s.add("b", Tensor2::zeros(1, 4));
        assert_eq!(s.num_scalars(), 10);
        assert_eq!(s.find("b"), Some(b));
        assert_eq!(s.grad(a).shape(), (2, 3));
        s.grad_mut(a).fill(3.0);
        s.zero_grad();
        assert_eq!(s.grad(a).sum(), 0.0);
    }
}
