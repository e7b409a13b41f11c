//! Acceptance suite: one pass/fail line per criterion on stderr.
//!
//! Run with `cargo test -p ewald-cli --test acceptance --release -- --nocapture`
//! for live output; the summary lines are written to stderr directly and show
//! up without `--nocapture` too.

use std::io::Write;
use std::time::Instant;

use ewald_cli::commands::{self, random_cell, CheckArgs, Crystal, Suite};
use ewald_cli::RunConfig;
use ewald_core::coulomb::{
    ewald_energy, make_synthetic_dataset, periodic_direct_sum, EwaldParams, SyntheticConfig,
};
use ewald_core::geometry::{enumerate_index_frequencies, reciprocal_basis, Cell, Structure};
use ewald_core::model::train::TrainConfig;
use ewald_core::model::{FrequencyChoice, Model, ModelConfig, ModelMode};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(
    lines: &mut Vec<(usize, &'static str, bool)>,
    id: usize,
    name: &'static str,
    outcome: anyhow::Result<Outcome>,
) {
    let (pass, detail) = match outcome {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {id} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    lines.push((id, name, pass));
}

fn madelung() -> anyhow::Result<Outcome> {
    let cfg = RunConfig::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for crystal in [Crystal::Nacl, Crystal::Cscl] {
        let t = Instant::now();
        let r = commands::madelung(&cfg, crystal)?;
        let secs = t.elapsed().as_secs_f64();
        let diff = (r.ewald - r.direct).abs();
        pass &= diff <= 1e-4 && secs <= 5.0;
        detail.push(format!(
            "{} ewald {:.8} direct {:.8} |diff| {diff:.1e} in {secs:.2}s",
            r.crystal, r.ewald, r.direct
        ));
    }
    Ok(Outcome {
        pass,
        detail: detail.join("; "),
    })
}

fn random_neutral_cell(rng: &mut ChaCha8Rng) -> Structure {
    let cell = random_cell(rng, 4.0, 7.0);
    let n = rng.random_range(2..=8);
    let positions: Vec<_> = (0..n)
        .map(|_| cell.matrix() * Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)))
        .collect();
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mean = q.iter().sum::<f64>() / n as f64;
    q.iter_mut().for_each(|x| *x -= mean);
    Structure::new(positions, vec!["X".into(); n], Some(cell)).with_charges(q)
}

fn ewald_vs_direct() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_direct, mut worst_alpha) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let s = random_neutral_cell(&mut rng);
        let reference = ewald_energy(
            &s,
            EwaldParams {
                alpha: 0.5,
                real_cutoff: 12.0,
                freq_cutoff: 6.0,
            },
        )?;
        let direct = periodic_direct_sum(&s, Default::default())?.energy;
        worst_direct = worst_direct.max((direct - reference).abs() / reference.abs());
        for alpha in [0.35, 0.45, 0.6, 0.75] {
            let e = ewald_energy(
                &s,
                EwaldParams {
                    alpha,
                    real_cutoff: 6.0 / alpha,
                    freq_cutoff: 12.0 * alpha,
                },
            )?;
            worst_alpha = worst_alpha.max((e - reference).abs() / reference.abs());
        }
    }
    Ok(Outcome {
        pass: worst_direct <= 1e-5 && worst_alpha <= 1e-6,
        detail: format!("20 cells: max rel |ewald - direct| {worst_direct:.1e} (≤ 1e-5), max rel α-sweep spread {worst_alpha:.1e} (≤ 1e-6)"),
    })
}

fn suite(s: Suite, args: CheckArgs) -> anyhow::Result<Outcome> {
    let r = commands::check(&RunConfig::default(), s, args)?;
    let cases: Vec<String> = r
        .cases
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.error))
        .collect();
    Ok(Outcome {
        pass: r.pass,
        detail: format!("max error {:.2e}; {}", r.max_error, cases.join(", ")),
    })
}

fn sf_equivalence() -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, nk, seed) in [(64, 100, 1), (17, 33, 2), (1, 1, 3)] {
        let r = commands::check(
            &RunConfig::default(),
            Suite::SfEquivalence,
            CheckArgs { n, nk, seed },
        )?;
        pass &= r.pass;
        detail.push(format!("N={n} N_k={nk}: {:.1e}", r.max_error));
    }
    Ok(Outcome {
        pass,
        detail: format!(
            "{} (≤ 1e-10, periodic + aperiodic, pairwise + complex paths)",
            detail.join(", ")
        ),
    })
}

fn filter_count() -> anyhow::Result<Outcome> {
    let freqs = enumerate_index_frequencies(&reciprocal_basis(&Cell::cubic(5.0)?)?, [2, 2, 5]);
    let model = Model::new(ModelConfig {
        frequency: FrequencyChoice::PeriodicIndex,
        index_counts: [2, 2, 5],
        width: 8,
        blocks: 1,
        ..Default::default()
    })?;
    let id = model
        .store
        .find("filter.down")
        .expect("lattice model has a shared down projection");
    let cols = model.store.value(id).cols();
    Ok(Outcome {
        pass: freqs.n_unique == 137 && cols == 137,
        detail: format!(
            "{} frequencies, {} unique filter slots, W_down has {cols} columns",
            freqs.len(),
            freqs.n_unique
        ),
    })
}

fn long_range_improvement() -> anyhow::Result<Outcome> {
    let t = Instant::now();
    let samples = make_synthetic_dataset(&SyntheticConfig::default())?;
    let (structures, energies): (Vec<_>, Vec<_>) =
        samples.into_iter().map(|s| (s.structure, s.energy)).unzip();
    let atoms: Vec<usize> = structures.iter().map(|s| s.len()).collect();
    let mut pass = structures.len() >= 2000 && atoms.iter().all(|&n| (16..=32).contains(&n));
    let mut detail = Vec::new();
    let mut gains = Vec::new();
    for seed in 0..3u64 {
        let mut mae = [0.0; 2];
        for (slot, mode) in [ModelMode::Baseline, ModelMode::Ewald]
            .into_iter()
            .enumerate()
        {
            let cfg = RunConfig {
                model: ModelConfig {
                    mode,
                    width: 16,
                    blocks: 2,
                    n_hidden: 1,
                    n_rbf: 32,
                    seed,
                    ..Default::default()
                },
                train: TrainConfig {
                    epochs: 40,
                    seed,
                    ..Default::default()
                },
                ..Default::default()
            };
            mae[slot] = commands::fit(&cfg, &structures, &energies)?
                .outcome
                .best_val_mae;
        }
        pass &= mae[1] < mae[0];
        gains.push(1.0 - mae[1] / mae[0]);
        detail.push(format!(
            "seed {seed}: baseline {:.4} ewald {:.4}",
            mae[0], mae[1]
        ));
    }
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    pass &= minutes <= 30.0;
    let mean_gain = 100.0 * gains.iter().sum::<f64>() / gains.len() as f64;
    Ok(Outcome {
        pass,
        detail: format!(
            "{}; mean improvement {mean_gain:.0}%; {minutes:.1} min total",
            detail.join(", ")
        ),
    })
}

fn scaling() -> anyhow::Result<Outcome> {
    let r = commands::bench(&RunConfig::default(), &[64, 256, 1024, 4096])?;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("{}: {:.2e}s", row.atoms, row.seconds_per_structure))
        .collect();
    Ok(Outcome {
        pass: r.exponent <= 1.2,
        detail: format!(
            "exponent {:.3} (≤ 1.2) at N_k = {}; {}",
            r.exponent,
            r.n_freqs,
            rows.join(", ")
        ),
    })
}

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    report(&mut lines, 1, "Madelung constants", madelung());
    report(&mut lines, 2, "Ewald vs direct sum", ewald_vs_direct());
    report(
        &mut lines,
        3,
        "Gaussian kernel identity",
        suite(
            Suite::Identity,
            CheckArgs {
                seed: 3,
                ..Default::default()
            },
        ),
    );
    report(
        &mut lines,
        4,
        "structure-factor path equivalence",
        sf_equivalence(),
    );
    report(
        &mut lines,
        5,
        "gradient correctness",
        suite(
            Suite::Gradcheck,
            CheckArgs {
                seed: 1,
                ..Default::default()
            },
        ),
    );
    report(
        &mut lines,
        6,
        "invariances",
        suite(
            Suite::Invariance,
            CheckArgs {
                seed: 5,
                ..Default::default()
            },
        ),
    );
    report(&mut lines, 7, "filter bookkeeping", filter_count());
    report(
        &mut lines,
        8,
        "long-range improvement",
        long_range_improvement(),
    );
    report(&mut lines, 9, "scaling", scaling());
    let failed: Vec<_> = lines
        .iter()
        .filter(|l| !l.2)
        .map(|l| format!("{} ({})", l.0, l.1))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
