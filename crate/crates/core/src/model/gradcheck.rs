use super::{Model, Prepared};
use crate::error::Result;
use crate::nn::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|a - n| / max(|a|, |n|, floor)` over all scalars.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: (String, usize),
    pub checked: usize,
}

const RIDDERS_SHRINK: f64 = 1.4;
const RIDDERS_TABLE: usize = 10;

/// Ridders' extrapolation of central differences of `f` at 0, starting from
/// step `h`. Returns the estimate and its error bound.
pub fn ridders_derivative(mut f: impl FnMut(f64) -> Result<f64>, mut h: f64) -> Result<(f64, f64)> {
    let con2 = RIDDERS_SHRINK * RIDDERS_SHRINK;
    let mut table = vec![vec![0.0; RIDDERS_TABLE]; RIDDERS_TABLE];
    table[0][0] = (f(h)? - f(-h)?) / (2.0 * h);
    let (mut best, mut err) = (table[0][0], f64::INFINITY);
    for i in 1..RIDDERS_TABLE {
        h /= RIDDERS_SHRINK;
        table[0][i] = (f(h)? - f(-h)?) / (2.0 * h);
        let mut fac = con2;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= con2;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    Ok((best, err))
}

/// Compares tape gradients of the raw energy with Ridders-extrapolated
/// central differences (initial step `step`) for every parameter scalar.
pub fn gradient_check(
    model: &mut Model,
    p: &Prepared,
    step: f64,
    floor: f64,
) -> Result<GradcheckReport> {
    let mut tape = Tape::new();
    let e = model.forward(&mut tape, p)?;
    model.store.zero_grad();
    tape.backward(e, 1.0, &mut model.store)?;

    let ids: Vec<_> = model.store.ids().collect();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    for id in ids {
        for k in 0..model.store.value(id).data().len() {
            let analytic = model.store.grad(id).data()[k];
            let original = model.store.value(id).data()[k];
            let (numeric, _) = ridders_derivative(
                |offset| {
                    model.store.value_mut(id).data_mut()[k] = original + offset;
                    model.raw_energy(p)
                },
                step,
            )?;
            model.store.value_mut(id).data_mut()[k] = original;
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (model.store.name(id).to_string(), k);
            }
        }
    }
    Ok(report)
}
