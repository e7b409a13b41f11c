use ewald_core::coulomb::{ewald_energy, EwaldParams};
use ewald_core::geometry::{
    enumerate_index_frequencies, enumerate_radial_frequencies, neighbor_list, reciprocal_basis,
    svd_frame, voxel_grid, Cell, Structure,
};
use ewald_core::model::messages::{
    combine_update, complex_long_range_messages, long_range_messages, pairwise_long_range_messages,
};
use ewald_core::model::offsets::fit_element_offsets;
use ewald_core::nn::Tensor2;
use ewald_core::structure_factor::{phase_positions, phase_table, structure_factor, Damping};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_positions(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(0.0..extent)))
        .collect()
}

fn random_cell(rng: &mut ChaCha8Rng) -> Cell {
    loop {
        let v = |rng: &mut ChaCha8Rng, axis: usize| {
            Vector3::from_fn(|r, _| {
                if r == axis {
                    rng.random_range(3.0..5.0)
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
        };
        if let Ok(c) = Cell::new(v(rng, 0), v(rng, 1), v(rng, 2)) {
            return c;
        }
    }
}

fn neutral_charges(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = q.iter().sum::<f64>() / n as f64;
    q.iter_mut().for_each(|x| *x -= mean);
    q
}

/// Random filter values shared by `k` and `-k` (one row per unique slot).
fn even_filter(rng: &mut ChaCha8Rng, slot: &[usize], n_unique: usize, f: usize) -> Tensor2 {
    let unique = Tensor2::from_fn(n_unique, f, |_, _| rng.random_range(-1.0..1.0));
    Tensor2::from_fn(slot.len(), f, |n, c| unique.get(slot[n], c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn binned_neighbors_match_brute_force(seed in any::<u64>(), n in 1usize..40, cutoff in 0.5f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Structure::new(random_positions(&mut rng, n, 8.0), vec!["A".into(); n], None);
        let nl = neighbor_list(&s, cutoff, usize::MAX).unwrap();
        let mut expected = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let d = (s.positions[i] - s.positions[j]).norm();
                if i != j && d < cutoff {
                    expected.push((i, j));
                }
            }
        }
        let mut got: Vec<_> = nl.edges.iter().map(|e| (e.i, e.j)).collect();
        got.sort();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn periodic_long_range_matches_pairwise_and_complex_paths(seed in any::<u64>(), n in 1usize..=64, cutoff in 1.0f64..2.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = random_cell(&mut rng);
        let s = Structure::new(random_positions(&mut rng, n, 4.0), vec!["A".into(); n], Some(cell));
        let freqs = enumerate_radial_frequencies(&reciprocal_basis(&cell).unwrap(), cutoff).unwrap();
        prop_assume!(freqs.kvecs.len() <= 100);
        let f = 3;
        let h = Tensor2::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0));
        let phi = even_filter(&mut rng, &freqs.slot, freqs.n_unique, f);
        let table = phase_table(&s, &freqs, None, Damping::Analytic).unwrap();
        let fast = long_range_messages(&structure_factor(&h, &table).unwrap(), &table, &phi).unwrap();
        let slow = pairwise_long_range_messages(&s.positions, &freqs.kvecs, None, &phi, &h);
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-10);
        let (re, im) = complex_long_range_messages(&s.positions, &freqs.kvecs, None, &phi, &h);
        prop_assert!(fast.max_abs_diff(&re) <= 1e-10);
        prop_assert!(im.data().iter().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn aperiodic_long_range_matches_pairwise_and_complex_paths(seed in any::<u64>(), n in 1usize..=64, wavevector_scaled in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Structure::new(random_positions(&mut rng, n, 6.0), vec!["A".into(); n], None);
        let freqs = voxel_grid(0.6, 0.25).unwrap();
        assert!(freqs.kvecs.len() <= 100);
        let damping = if wavevector_scaled { Damping::WavevectorScaled } else { Damping::Analytic };
        let frame = svd_frame(&s.positions);
        let local = phase_positions(&s, Some(&frame));
        let f = 2;
        let h = Tensor2::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0));
        let phi = even_filter(&mut rng, &freqs.slot, freqs.n_unique, f);
        let table = phase_table(&s, &freqs, Some(&frame), damping).unwrap();
        let fast = long_range_messages(&structure_factor(&h, &table).unwrap(), &table, &phi).unwrap();
        let voxel = Some((0.25, damping));
        let slow = pairwise_long_range_messages(&local, &freqs.kvecs, voxel, &phi, &h);
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-10);
        let (re, im) = complex_long_range_messages(&local, &freqs.kvecs, voxel, &phi, &h);
        prop_assert!(fast.max_abs_diff(&re) <= 1e-10);
        prop_assert!(im.data().iter().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn combined_update_is_scaled_sum(h in prop::collection::vec(-5.0f64..5.0, 1..16), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = h.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = h.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
        let out = combine_update(&h, &a, Some(&b)).unwrap();
        for i in 0..h.len() {
            prop_assert!((out[i] - (h[i] + a[i] + b[i]) / 3f64.sqrt()).abs() <= 1e-15);
        }
    }

    #[test]
    fn ewald_energy_is_independent_of_splitting(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = random_cell(&mut rng);
        let s = Structure::new(random_positions(&mut rng, n, 3.0), vec!["A".into(); n], Some(cell))
            .with_charges(neutral_charges(&mut rng, n));
        let reference = ewald_energy(&s, EwaldParams { alpha: 0.5, real_cutoff: 11.0, freq_cutoff: 6.0 }).unwrap();
        for alpha in [0.4, 0.6, 0.7] {
            let p = EwaldParams { alpha, real_cutoff: 6.0 / alpha, freq_cutoff: 12.0 * alpha };
            let e = ewald_energy(&s, p).unwrap();
            prop_assert!((e - reference).abs() <= 1e-6 * reference.abs().max(1e-3), "{} vs {}", e, reference);
        }
    }

    #[test]
    fn offsets_round_trip(seed in any::<u64>(), rows in 3usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let species = vec!["A".to_string(), "B".to_string()];
        let counts: Vec<Vec<usize>> = (0..rows).map(|_| vec![rng.random_range(0..10), rng.random_range(0..10)]).collect();
        let energies: Vec<f64> = (0..rows).map(|_| rng.random_range(-10.0..10.0)).collect();
        if let Ok(fit) = fit_element_offsets(&species, &counts, &energies) {
            let residuals: Vec<f64> = counts.iter().zip(&energies).map(|(c, &e)| fit.apply(c, e)).collect();
            prop_assert!(residuals.iter().sum::<f64>().abs() <= 1e-9 * rows as f64);
            for (c, (&e, &r)) in counts.iter().zip(energies.iter().zip(&residuals)) {
                prop_assert!((fit.invert(c, r) - e).abs() <= 1e-12 * e.abs().max(1.0));
            }
        }
    }
}

#[test]
fn two_two_five_index_grid_has_137_filter_weights() {
    let recip = reciprocal_basis(&Cell::cubic(4.0).unwrap()).unwrap();
    let freqs = enumerate_index_frequencies(&recip, [2, 2, 5]);
    assert_eq!(freqs.n_unique, 137);
    assert_eq!(freqs.kvecs.len(), 5 * 5 * 11 - 1);
}

#[test]
fn doubled_cell_reproduces_structure_factor_at_shared_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cell = random_cell(&mut rng);
    let n = 7;
    let s = Structure::new(
        random_positions(&mut rng, n, 4.0),
        vec!["A".into(); n],
        Some(cell),
    );
    let doubled_cell = Cell::new(cell.vector(0) * 2.0, cell.vector(1), cell.vector(2)).unwrap();
    let mut positions = s.positions.clone();
    positions.extend(s.positions.iter().map(|x| x + cell.vector(0)));
    let d = Structure::new(positions, vec!["A".into(); 2 * n], Some(doubled_cell));

    let h = Tensor2::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    let mut h2 = Tensor2::zeros(2 * n, 2);
    for i in 0..2 * n {
        h2.row_mut(i).copy_from_slice(h.row(i % n));
    }
    let single = enumerate_radial_frequencies(&reciprocal_basis(&cell).unwrap(), 2.5).unwrap();
    let double =
        enumerate_radial_frequencies(&reciprocal_basis(&doubled_cell).unwrap(), 2.5).unwrap();
    let sf1 = structure_factor(
        &h,
        &phase_table(&s, &single, None, Damping::Analytic).unwrap(),
    )
    .unwrap();
    let sf2 = structure_factor(
        &h2,
        &phase_table(&d, &double, None, Damping::Analytic).unwrap(),
    )
    .unwrap();

    let mut shared = 0;
    for (a, k) in single.kvecs.iter().enumerate() {
        let b = double
            .kvecs
            .iter()
            .position(|q| (q - k).norm() < 1e-9)
            .expect("single-cell frequency is on the doubled grid");
        shared += 1;
        for c in 0..2 {
            // Two copies of every atom contribute identical phases.
            assert!((sf2.re.get(b, c) - 2.0 * sf1.re.get(a, c)).abs() <= 1e-10);
            assert!((sf2.im.get(b, c) - 2.0 * sf1.im.get(a, c)).abs() <= 1e-10);
        }
    }
    assert!(shared > 0 && double.kvecs.len() > single.kvecs.len());
}
