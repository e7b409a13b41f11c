use std::rc::Rc;

use ewald_core::geometry::{neighbor_list, Cell, Structure};
use ewald_core::model::gradcheck::gradient_check;
use ewald_core::model::{FrequencyChoice, Model, ModelConfig, ModelMode};
use ewald_core::nn::{silu, Tape, Tensor2};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(mode: ModelMode, frequency: FrequencyChoice) -> ModelConfig {
    ModelConfig {
        mode,
        frequency,
        width: 6,
        blocks: 2,
        cutoff: 3.5,
        edge_rbf: 8,
        index_counts: [1, 1, 2],
        freq_cutoff: 0.5,
        voxel_spacing: 0.2,
        n_hidden: 1,
        n_rbf: 6,
        bottleneck: 3,
        seed: 4,
        ..Default::default()
    }
}

fn random_structure(rng: &mut ChaCha8Rng, n: usize, cell: Option<Cell>) -> Structure {
    let positions = (0..n)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(0.0..5.0)))
        .collect();
    let names = ["P", "M", "N"];
    let species = (0..n).map(|i| names[i % 3].to_string()).collect();
    Structure::new(positions, species, cell)
}

#[test]
fn gradients_match_central_differences_on_sixteen_atoms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = [
        (ModelMode::Ewald, FrequencyChoice::Voxel, 0.6, None),
        (
            ModelMode::Ewald,
            FrequencyChoice::PeriodicIndex,
            0.6,
            Some(Cell::cubic(5.0).unwrap()),
        ),
        (
            ModelMode::Ewald,
            FrequencyChoice::RadialCutoff,
            2.0,
            Some(Cell::cubic(5.0).unwrap()),
        ),
        (ModelMode::Baseline, FrequencyChoice::Voxel, 0.6, None),
    ];
    for (mode, freq, freq_cutoff, cell) in cases {
        let s = random_structure(&mut rng, 16, cell);
        let mut model = Model::new(ModelConfig {
            freq_cutoff,
            ..config(mode, freq)
        })
        .unwrap();
        let p = model.prepare(&s).unwrap();
        let report = gradient_check(&mut model, &p, 3e-4, 1e-4).unwrap();
        assert_eq!(report.checked, model.store.num_scalars());
        assert!(
            report.max_rel_error <= 1e-5,
            "{mode:?}/{freq:?}: {report:?}"
        );
    }
}

#[test]
fn short_range_messages_match_edge_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_structure(&mut rng, 12, None);
    let model = Model::new(config(ModelMode::Baseline, FrequencyChoice::Voxel)).unwrap();
    let nl = neighbor_list(&s, 3.5, 50).unwrap();
    let block = &model.blocks[0].short_range;
    let basis = model
        .edge_basis
        .eval_many(&nl.edges.iter().map(|e| e.distance).collect::<Vec<_>>());
    let filt = block
        .filter_out
        .apply(
            &model.store,
            &block.filter_in.apply(&model.store, &basis).unwrap(),
        )
        .unwrap();
    let h = Tensor2::from_fn(12, 6, |_, _| rng.random_range(-1.0..1.0));

    let mut expected = Tensor2::zeros(12, 6);
    for (e, edge) in nl.edges.iter().enumerate() {
        for c in 0..6 {
            expected.set(
                edge.i,
                c,
                expected.get(edge.i, c) + h.get(edge.j, c) * filt.get(e, c),
            );
        }
    }

    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let fv = tape.constant(filt);
    let centers: Rc<[usize]> = nl.edges.iter().map(|e| e.i).collect();
    let neighbors: Rc<[usize]> = nl.edges.iter().map(|e| e.j).collect();
    let hj = tape.gather_rows(hv, neighbors).unwrap();
    let msg = tape.mul(hj, fv).unwrap();
    let m = tape.scatter_add_rows(msg, centers, 12).unwrap();
    assert!(tape.value(m).max_abs_diff(&expected) <= 1e-13);
}

#[test]
fn isolated_atom_gets_zero_short_range_message() {
    let mut tape = Tape::new();
    let msg = tape.constant(Tensor2::filled(1, 3, 2.0));
    let m = tape.scatter_add_rows(msg, Rc::from(vec![0]), 2).unwrap();
    assert_eq!(tape.value(m).row(1), &[0.0; 3]);
}

#[test]
fn readout_matches_two_layer_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(config(ModelMode::Ewald, FrequencyChoice::Voxel)).unwrap();
    let h = Tensor2::from_fn(7, 6, |_, _| rng.random_range(-2.0..2.0));
    let [d1, d2] = &model.readout;
    let (w1, b1) = (model.store.value(d1.weight), model.store.value(d1.bias));
    let (w2, b2) = (model.store.value(d2.weight), model.store.value(d2.bias));

    let mut expected = 0.0;
    for i in 0..7 {
        let mut hidden = vec![0.0; w1.rows()];
        for (o, slot) in hidden.iter_mut().enumerate() {
            let z: f64 = (0..6).map(|c| w1.get(o, c) * h.get(i, c)).sum::<f64>() + b1.data()[o];
            *slot = silu(z);
        }
        expected += hidden
            .iter()
            .enumerate()
            .map(|(o, x)| w2.get(0, o) * x)
            .sum::<f64>()
            + b2.data()[0];
    }

    let mut tape = Tape::new();
    let x = tape.constant(h);
    let y = d1.forward(&mut tape, &model.store, x).unwrap();
    let y = d2.forward(&mut tape, &model.store, y).unwrap();
    let e = tape.sum_all(y);
    assert!((tape.value(e).get(0, 0) - expected).abs() <= 1e-13);
}

#[test]
fn permutation_leaves_energy_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::new(config(ModelMode::Ewald, FrequencyChoice::Voxel)).unwrap();
    let s = random_structure(&mut rng, 10, None);
    let mut order: Vec<usize> = (0..10).collect();
    order.reverse();
    let a = model.predict(&s).unwrap();
    let b = model.predict(&s.permuted(&order)).unwrap();
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

#[test]
fn zero_embeddings_and_biases_give_zero_readout() {
    let model = Model::new(config(ModelMode::Baseline, FrequencyChoice::Voxel)).unwrap();
    let mut store = model.store.clone();
    for d in &model.readout {
        store.value_mut(d.bias).fill(0.0);
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor2::zeros(4, 6));
    let y = model.readout[0].forward(&mut tape, &store, x).unwrap();
    let y = model.readout[1].forward(&mut tape, &store, y).unwrap();
    let e = tape.sum_all(y);
    assert_eq!(tape.value(e).get(0, 0), 0.0);
}
