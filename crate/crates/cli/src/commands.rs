//! Subcommand implementations; `main` only parses flags and prints.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ewald_core::coulomb::{
    cesium_chloride, ewald_energy, gaussian_kernel_identity_check, madelung_constant,
    make_synthetic_dataset, periodic_direct_sum, rocksalt,
};
use ewald_core::filters::RadialBasis;
use ewald_core::geometry::{reciprocal_basis, svd_frame, voxel_grid, Cell, Structure};
use ewald_core::model::gradcheck::gradient_check;
use ewald_core::model::messages::{
    complex_long_range_messages, long_range_messages, pairwise_long_range_messages,
};
use ewald_core::model::train::{metrics_csv, train, TrainOutcome};
use ewald_core::model::{FrequencyChoice, Model, ModelConfig, ModelMode};
use ewald_core::nn::Tensor2;
use ewald_core::structure_factor::{
    phase_positions, phase_table, phase_table_at, structure_factor, Damping,
};
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::io::{write_records, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crystal {
    Nacl,
    Cscl,
}

impl Crystal {
    pub fn name(self) -> &'static str {
        match self {
            Crystal::Nacl => "nacl",
            Crystal::Cscl => "cscl",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MadelungReport {
    pub crystal: &'static str,
    pub ewald: f64,
    pub direct: f64,
    pub direct_window: u32,
    pub ewald_seconds: f64,
    pub direct_seconds: f64,
}

impl MadelungReport {
    pub fn csv(&self, cfg: &RunConfig) -> String {
        format!(
            "{}crystal,ewald,direct,abs_diff,direct_window,ewald_seconds,direct_seconds\n{},{:.12},{:.12},{:e},{},{:.4},{:.4}\n",
            cfg.header(),
            self.crystal,
            self.ewald,
            self.direct,
            (self.ewald - self.direct).abs(),
            self.direct_window,
            self.ewald_seconds,
            self.direct_seconds
        )
    }
}

/// Madelung constant from the Ewald sum and from the direct lattice sum.
pub fn madelung(cfg: &RunConfig, crystal: Crystal) -> Result<MadelungReport> {
    let d = cfg.nn_distance;
    let (s, pairs) = match crystal {
        Crystal::Nacl => rocksalt(d)?,
        Crystal::Cscl => cesium_chloride(d)?,
    };
    let t = Instant::now();
    let ewald = madelung_constant(ewald_energy(&s, cfg.ewald)?, d, pairs);
    let ewald_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let direct = periodic_direct_sum(&s, cfg.direct)?;
    let direct_seconds = t.elapsed().as_secs_f64();
    Ok(MadelungReport {
        crystal: crystal.name(),
        ewald,
        direct: madelung_constant(direct.energy, d, pairs),
        direct_window: direct.window,
        ewald_seconds,
        direct_seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    SfEquivalence,
    Gradcheck,
    Identity,
    Invariance,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::SfEquivalence => "sf-equivalence",
            Suite::Gradcheck => "gradcheck",
            Suite::Identity => "identity",
            Suite::Invariance => "invariance",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckCase {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub suite: &'static str,
    pub cases: Vec<CheckCase>,
    pub max_error: f64,
    pub pass: bool,
    pub config: std::collections::BTreeMap<String, String>,
}

/// Sizes and seed of a check run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckArgs {
    pub n: usize,
    pub nk: usize,
    pub seed: u64,
}

impl Default for CheckArgs {
    fn default() -> Self {
        CheckArgs {
            n: 32,
            nk: 64,
            seed: 7,
        }
    }
}

fn case(name: impl Into<String>, error: f64, tolerance: f64) -> CheckCase {
    CheckCase {
        name: name.into(),
        error,
        tolerance,
        pass: error <= tolerance,
    }
}

pub fn check(cfg: &RunConfig, suite: Suite, args: CheckArgs) -> Result<CheckReport> {
    let cases = match suite {
        Suite::SfEquivalence => sf_equivalence(args)?,
        Suite::Gradcheck => gradcheck_suite(args.seed)?,
        Suite::Identity => identity_suite(cfg, args.seed)?,
        Suite::Invariance => invariance_suite(args.seed)?,
    };
    let max_error = cases.iter().map(|c| c.error).fold(0.0, f64::max);
    let pass = !cases.is_empty() && cases.iter().all(|c| c.pass);
    let mut config: std::collections::BTreeMap<String, String> =
        cfg.entries().into_iter().collect();
    config.insert("check_n".into(), args.n.to_string());
    config.insert("check_nk".into(), args.nk.to_string());
    config.insert("check_seed".into(), args.seed.to_string());
    Ok(CheckReport {
        suite: suite.name(),
        cases,
        max_error,
        pass,
        config,
    })
}

fn random_vec(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(lo..hi))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    Rotation3::from_euler_angles(
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
    )
}

/// Triclinic cell with axis lengths in `[lo, hi)` and moderate shear.
pub fn random_cell(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Cell {
    loop {
        let mut v = [Vector3::zeros(); 3];
        for (a, slot) in v.iter_mut().enumerate() {
            *slot = random_vec(rng, -0.25 * lo, 0.25 * lo);
            slot[a] = rng.random_range(lo..hi);
        }
        if let Ok(c) = Cell::new(v[0], v[1], v[2]) {
            return c;
        }
    }
}

/// `nk` frequencies closed under negation (plus the origin when `nk` is
/// odd) and a filter that is even in `k`.
fn paired_frequencies(
    rng: &mut ChaCha8Rng,
    nk: usize,
    width: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vector3<f64>,
) -> (Vec<Vector3<f64>>, Tensor2) {
    let mut kvecs = Vec::with_capacity(nk);
    let mut rows = Vec::with_capacity(nk);
    if nk % 2 == 1 {
        kvecs.push(Vector3::zeros());
        rows.push(
            (0..width)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        );
    }
    while kvecs.len() < nk {
        let k = draw(rng);
        if k.norm() < 1e-9
            || kvecs
                .iter()
                .any(|q: &Vector3<f64>| (q - k).norm() < 1e-9 || (q + k).norm() < 1e-9)
        {
            continue;
        }
        let row: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
        kvecs.push(k);
        kvecs.push(-k);
        rows.push(row.clone());
        rows.push(row);
    }
    let phi = Tensor2::from_fn(nk, width, |r, c| rows[r][c]);
    (kvecs, phi)
}

/// Structure-factor path against the pairwise double sum and the complex
/// recomputation, for a periodic and an aperiodic instance.
fn sf_equivalence(args: CheckArgs) -> Result<Vec<CheckCase>> {
    if args.n == 0 || args.nk == 0 {
        bail!("sf-equivalence needs --n and --nk of at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let width = 4;
    let mut cases = Vec::new();

    let cell = random_cell(&mut rng, 4.0, 7.0);
    let recip = reciprocal_basis(&cell)?;
    let positions: Vec<_> = (0..args.n)
        .map(|_| cell.matrix() * random_vec(&mut rng, 0.0, 1.0))
        .collect();
    let (kvecs, phi) = paired_frequencies(&mut rng, args.nk, width, |r| {
        recip.frequency([
            r.random_range(-4..=4),
            r.random_range(-4..=4),
            r.random_range(-4..=4),
        ])
    });
    let h = Tensor2::from_fn(args.n, width, |_, _| rng.random_range(-1.0..1.0));
    let table = phase_table_at(&positions, &kvecs, None);
    let fast = long_range_messages(&structure_factor(&h, &table)?, &table, &phi)?;
    let slow = pairwise_long_range_messages(&positions, &kvecs, None, &phi, &h);
    let (re, im) = complex_long_range_messages(&positions, &kvecs, None, &phi, &h);
    cases.push(case("periodic pairwise", fast.max_abs_diff(&slow), 1e-10));
    cases.push(case(
        "periodic complex real part",
        fast.max_abs_diff(&re),
        1e-10,
    ));
    cases.push(case(
        "periodic complex imaginary part",
        im.max_abs_diff(&Tensor2::zeros(args.n, width)),
        1e-10,
    ));

    let spacing = 0.2;
    for damping in [Damping::Analytic, Damping::WavevectorScaled] {
        let s = Structure::new(
            (0..args.n)
                .map(|_| random_vec(&mut rng, -4.0, 4.0))
                .collect(),
            vec!["A".into(); args.n],
            None,
        );
        let frame = svd_frame(&s.positions);
        let local = phase_positions(&s, Some(&frame));
        let (kvecs, phi) = paired_frequencies(&mut rng, args.nk, width, |r| {
            let k = random_vec(r, -0.6, 0.6);
            (k / spacing).map(f64::round) * spacing
        });
        let h = Tensor2::from_fn(args.n, width, |_, _| rng.random_range(-1.0..1.0));
        let voxel = Some((spacing, damping));
        let table = phase_table_at(&local, &kvecs, voxel);
        let fast = long_range_messages(&structure_factor(&h, &table)?, &table, &phi)?;
        let slow = pairwise_long_range_messages(&local, &kvecs, voxel, &phi, &h);
        let (re, im) = complex_long_range_messages(&local, &kvecs, voxel, &phi, &h);
        let tag = format!("aperiodic {}", damping.name());
        cases.push(case(
            format!("{tag} pairwise"),
            fast.max_abs_diff(&slow),
            1e-10,
        ));
        cases.push(case(
            format!("{tag} complex real part"),
            fast.max_abs_diff(&re),
            1e-10,
        ));
        cases.push(case(
            format!("{tag} complex imaginary part"),
            im.max_abs_diff(&Tensor2::zeros(args.n, width)),
            1e-10,
        ));
    }
    Ok(cases)
}

/// Small model used by the gradient and invariance checks.
pub fn check_model_config(mode: ModelMode, frequency: FrequencyChoice, seed: u64) -> ModelConfig {
    ModelConfig {
        mode,
        frequency,
        width: 6,
        blocks: 2,
        cutoff: 3.5,
        edge_rbf: 8,
        index_counts: [1, 1, 2],
        freq_cutoff: 0.6,
        voxel_spacing: 0.2,
        n_hidden: 1,
        n_rbf: 6,
        bottleneck: 3,
        seed,
        ..Default::default()
    }
}

fn random_structure(rng: &mut ChaCha8Rng, n: usize, cell: Option<Cell>) -> Structure {
    let species = ["P", "M", "N"];
    let positions = match &cell {
        Some(c) => (0..n)
            .map(|_| c.matrix() * random_vec(rng, 0.0, 1.0))
            .collect(),
        None => (0..n).map(|_| random_vec(rng, 0.0, 5.0)).collect(),
    };
    Structure::new(
        positions,
        (0..n).map(|i| species[i % 3].to_string()).collect(),
        cell,
    )
}

/// Central differences against tape gradients for every parameter of a
/// 16-atom instance in each frequency mode.
fn gradcheck_suite(seed: u64) -> Result<Vec<CheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let runs = [
        (ModelMode::Ewald, FrequencyChoice::Voxel, false),
        (ModelMode::Ewald, FrequencyChoice::PeriodicIndex, true),
        (ModelMode::Ewald, FrequencyChoice::RadialCutoff, true),
        (ModelMode::Baseline, FrequencyChoice::Voxel, false),
    ];
    for (mode, frequency, periodic) in runs {
        let mut config = check_model_config(mode, frequency, seed);
        if frequency == FrequencyChoice::RadialCutoff {
            config.freq_cutoff = 2.0;
        }
        let cell = periodic.then(|| random_cell(&mut rng, 4.5, 5.5));
        let s = random_structure(&mut rng, 16, cell);
        let mut model = Model::new(config)?;
        let p = model.prepare(&s)?;
        let report = gradient_check(&mut model, &p, 3e-4, 1e-4)?;
        cases.push(case(
            format!(
                "{} {} ({} parameters, worst {}[{}])",
                mode.name(),
                frequency.name(),
                report.checked,
                report.worst.0,
                report.worst.1
            ),
            report.max_rel_error,
            1e-5,
        ));
    }
    Ok(cases)
}

/// Real-space Gaussian image sums against their Fourier series over the
/// configured `c_k` sweep; the last point must meet 1e-8 and the error must
/// shrink at every step.
fn identity_suite(cfg: &RunConfig, seed: u64) -> Result<Vec<CheckCase>> {
    if cfg.identity_sweep.len() < 2 {
        bail!("identity_sweep needs at least two cutoffs");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = random_cell(&mut rng, 4.0, 6.0);
    let s = random_structure(&mut rng, 8, Some(cell));
    let h: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut cases = Vec::new();
    let mut previous = f64::INFINITY;
    let last = cfg.identity_sweep.len() - 1;
    for (i, &ck) in cfg.identity_sweep.iter().enumerate() {
        let report = gaussian_kernel_identity_check(&s, &h, cfg.identity_sigma, ck)?;
        let decreasing = report.max_abs_error < previous;
        let tolerance = if i == last { 1e-8 } else { f64::INFINITY };
        let mut c = case(
            format!(
                "c_k = {ck} ({} frequencies, sigma = {})",
                report.n_freqs, cfg.identity_sigma
            ),
            report.max_abs_error,
            tolerance,
        );
        if !decreasing {
            c.name.push_str(" [not below the previous cutoff]");
            c.pass = false;
        }
        previous = report.max_abs_error;
        cases.push(c);
    }
    Ok(cases)
}

/// End-to-end energy invariances of untrained models.
fn invariance_suite(seed: u64) -> Result<Vec<CheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for frequency in [
        FrequencyChoice::PeriodicIndex,
        FrequencyChoice::RadialCutoff,
    ] {
        let mut config = check_model_config(ModelMode::Ewald, frequency, seed);
        config.freq_cutoff = 2.0;
        let model = Model::new(config)?;
        let cell = random_cell(&mut rng, 4.5, 6.0);
        let s = random_structure(&mut rng, 12, Some(cell));
        let e = model.predict(&s)?;

        let mut shifted = s.clone();
        for x in shifted.positions.iter_mut() {
            *x += cell.shift([
                rng.random_range(-2..=2),
                rng.random_range(-2..=2),
                rng.random_range(-2..=2),
            ]);
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        for a in (1..order.len()).rev() {
            order.swap(a, rng.random_range(0..=a));
        }
        let rotated = s.transformed(random_rotation(&mut rng).matrix(), &Vector3::zeros());
        let tag = frequency.name();
        cases.push(case(
            format!("{tag} lattice translation"),
            (model.predict(&shifted)? - e).abs(),
            1e-9,
        ));
        cases.push(case(
            format!("{tag} permutation"),
            (model.predict(&s.permuted(&order))? - e).abs(),
            1e-9,
        ));
        cases.push(case(
            format!("{tag} rotation with cell"),
            (model.predict(&rotated)? - e).abs(),
            1e-9,
        ));
    }

    for damping in [Damping::Analytic, Damping::WavevectorScaled] {
        let mut config = check_model_config(ModelMode::Ewald, FrequencyChoice::Voxel, seed);
        config.damping = damping;
        let model = Model::new(config)?;
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let s = random_structure(&mut rng, 14, None);
            let e = model.predict(&s)?;
            let moved = s.transformed(
                random_rotation(&mut rng).matrix(),
                &random_vec(&mut rng, -20.0, 20.0),
            );
            worst = worst.max((model.predict(&moved)? - e).abs());
        }
        cases.push(case(
            format!("aperiodic {} rotation and translation", damping.name()),
            worst,
            1e-6,
        ));
    }
    Ok(cases)
}

/// Training outcome plus the files `fit` writes.
pub struct FitResult {
    pub outcome: TrainOutcome,
    pub metrics_csv: String,
    pub checkpoint: String,
}

/// Dataset of `fit`: the records of `path`, or the synthetic set of the config.
pub fn load_dataset(cfg: &RunConfig, path: Option<&Path>) -> Result<(Vec<Structure>, Vec<f64>)> {
    match path {
        Some(p) => {
            let records =
                crate::io::read_records(p).with_context(|| format!("reading {}", p.display()))?;
            let mut structures = Vec::with_capacity(records.len());
            let mut energies = Vec::with_capacity(records.len());
            for (i, r) in records.into_iter().enumerate() {
                let e = r
                    .energy
                    .with_context(|| format!("frame {i} of {} has no Energy", p.display()))?;
                structures.push(r.structure);
                energies.push(e);
            }
            Ok((structures, energies))
        }
        None => {
            let samples = make_synthetic_dataset(&cfg.dataset)?;
            Ok(samples.into_iter().map(|s| (s.structure, s.energy)).unzip())
        }
    }
}

pub fn fit(cfg: &RunConfig, structures: &[Structure], energies: &[f64]) -> Result<FitResult> {
    let outcome = train(cfg.model.clone(), &cfg.train, structures, energies)?;
    let metrics_csv = format!("{}{}", cfg.header(), metrics_csv(&outcome.history));
    let mut ck = outcome.model.checkpoint();
    for (k, v) in cfg.entries() {
        ck.meta.entry(format!("run.{k}")).or_insert(v);
    }
    ck.meta
        .insert("fit.best_epoch".into(), outcome.best_epoch.to_string());
    ck.meta.insert(
        "fit.best_val_mae".into(),
        format!("{:?}", outcome.best_val_mae),
    );
    Ok(FitResult {
        checkpoint: ck.to_text(),
        metrics_csv,
        outcome,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub atoms: usize,
    pub seconds_per_structure: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub n_freqs: usize,
    /// Least-squares slope of `log t` against `log N`.
    pub exponent: f64,
}

impl BenchReport {
    pub fn csv(&self, cfg: &RunConfig) -> String {
        let mut out = cfg.header();
        out.push_str(&format!(
            "# n_freqs = {}\n# exponent = {:.4}\natoms,seconds_per_structure\n",
            self.n_freqs, self.exponent
        ));
        for r in &self.rows {
            out.push_str(&format!("{},{:e}\n", r.atoms, r.seconds_per_structure));
        }
        out
    }
}

pub fn power_law_exponent(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Times the long-range block (frame, damped phases, structure factor,
/// radial filters, messages) on random aperiodic structures at fixed
/// density with the voxel frequency set of the config.
pub fn bench(cfg: &RunConfig, sizes: &[usize]) -> Result<BenchReport> {
    if sizes.len() < 2 || cfg.bench_timed == 0 || cfg.bench_repeats == 0 {
        bail!("bench needs at least two sizes and positive bench_timed/bench_repeats");
    }
    let m = &cfg.model;
    let freqs = voxel_grid(m.freq_cutoff, m.voxel_spacing)?;
    let basis = RadialBasis::new(m.n_rbf, m.freq_cutoff)?;
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
    let width = cfg.bench_width;
    let projection = Tensor2::from_fn(m.n_rbf, width, |_, _| rng.random_range(-0.1..0.1));
    let mut rows = Vec::new();
    for &n in sizes {
        let side = (n as f64 / cfg.bench_density).cbrt();
        let s = Structure::new(
            (0..n).map(|_| random_vec(&mut rng, 0.0, side)).collect(),
            vec!["A".into(); n],
            None,
        );
        let h = Tensor2::from_fn(n, width, |_, _| rng.random_range(-1.0..1.0));
        let run = || -> Result<f64> {
            let frame = svd_frame(&s.positions);
            let table = phase_table(&s, &freqs, Some(&frame), m.damping)?;
            let sf = structure_factor(&h, &table)?;
            let phi = basis.eval_many(&freqs.norms()).matmul(&projection)?;
            Ok(long_range_messages(&sf, &table, &phi)?.data()[0])
        };
        for _ in 0..cfg.bench_warmup {
            std::hint::black_box(run()?);
        }
        let mut best = f64::INFINITY;
        for _ in 0..cfg.bench_repeats {
            let t = Instant::now();
            for _ in 0..cfg.bench_timed {
                std::hint::black_box(run()?);
            }
            best = best.min(t.elapsed().as_secs_f64() / cfg.bench_timed as f64);
        }
        rows.push(BenchRow {
            atoms: n,
            seconds_per_structure: best,
        });
    }
    let exponent = power_law_exponent(
        &rows
            .iter()
            .map(|r| (r.atoms as f64, r.seconds_per_structure))
            .collect::<Vec<_>>(),
    );
    Ok(BenchReport {
        rows,
        n_freqs: freqs.len(),
        exponent,
    })
}

/// Synthetic dataset as structure-file text plus a sidecar CSV.
pub fn make_dataset(cfg: &RunConfig) -> Result<(String, String)> {
    let samples = make_synthetic_dataset(&cfg.dataset)?;
    let mut csv = cfg.header();
    csv.push_str("index,atoms,energy,long_range\n");
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.into_iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{:?},{:?}\n",
            s.structure.len(),
            s.energy,
            s.long_range
        ));
        let mut r = Record::new(s.structure);
        r.energy = Some(s.energy);
        r.info
            .insert("LongRange".into(), format!("{:?}", s.long_range));
        records.push(r);
    }
    Ok((write_records(&records), csv))
}
