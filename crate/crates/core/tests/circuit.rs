mod common;

use tnc_core::circuit::{export_mpo, export_tto, CircuitDescription};
use tnc_core::exec::Execution;
use tnc_core::mps::{self, BuildPlan};
use tnc_core::{ttn, Error};

fn plan(d: usize) -> BuildPlan {
    BuildPlan {
        d_encode: 32,
        d_batch: 32,
        d_final: d,
        batch_size: 10,
        orthogonalise: true,
    }
}

fn assert_recomposes(circuit: &CircuitDescription, class_state: impl Fn(usize) -> Vec<f64>) {
    for b in 0..10 {
        let prepared = circuit.simulate(b).unwrap();
        assert!(common::max_diff(&prepared, &class_state(b)) < 1e-8, "class {b}");
    }
}

#[test]
fn mpo_circuit_prepares_every_class_state() {
    let data = common::clustered(10, 10, 12, 0.3, 7);
    for d in [32, 8, 4] {
        let c = mps::train_classifier(&data, &plan(d), Execution::Sequential).unwrap();
        let circuit = export_mpo(&c).unwrap();
        assert_recomposes(&circuit, |b| c.class_state(b).unwrap());
    }
}

#[test]
fn truncated_mpo_uses_small_blocks() {
    let data = common::clustered(10, 10, 12, 0.3, 8);
    let c = mps::train_classifier(&data, &plan(4), Execution::Sequential).unwrap();
    let circuit = export_mpo(&c).unwrap();
    // site blocks take two bond wires to a physical wire plus two bond wires;
    // the centre carries the four-qubit label register
    for b in &circuit.unitaries {
        let limit = if b.name == "centre" { 4 } else { 3 };
        assert!(b.qubits() <= limit, "{} acts on {} qubits", b.name, b.qubits());
    }
    assert_eq!(circuit.largest_block(), 4);
}

#[test]
fn full_bond_centre_dominates() {
    let data = common::clustered(10, 10, 12, 0.3, 9);
    let c = mps::train_classifier(&data, &plan(32), Execution::Sequential).unwrap();
    let circuit = export_mpo(&c).unwrap();
    let centre = circuit.unitaries.iter().find(|b| b.name == "centre").unwrap();
    // bonds of 32 on both sides of the centre need five wires each
    assert_eq!(centre.qubits(), 10);
    assert!(circuit.unitaries.iter().all(|b| b.qubits() <= centre.qubits()));
}

#[test]
fn tto_circuit_prepares_class_states_with_fewer_blocks() {
    let data = common::clustered(10, 10, 12, 0.3, 10);
    for d in [16, 4] {
        let t = ttn::train_classifier(&data, &plan(d), Execution::Sequential).unwrap();
        let tree = export_tto(&t).unwrap();
        assert_recomposes(&tree, |b| t.class_state(b).unwrap());
        let m = mps::train_classifier(&data, &plan(d), Execution::Sequential).unwrap();
        let chain = export_mpo(&m).unwrap();
        assert!(tree.unitaries.len() < chain.unitaries.len());
    }
}

#[test]
fn blocks_are_orthogonal_and_serialise() {
    let data = common::clustered(6, 10, 4, 0.2, 11);
    let c = mps::train_classifier(&data, &plan(8), Execution::Sequential).unwrap();
    let circuit = export_mpo(&c).unwrap();
    for b in &circuit.unitaries {
        let n = 1 << b.qubits();
        for i in 0..n {
            for j in 0..n {
                let d: f64 = (0..n).map(|r| b.matrix[r * n + i] * b.matrix[r * n + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }
    let json = serde_json::to_string(&circuit).unwrap();
    let back: CircuitDescription = serde_json::from_str(&json).unwrap();
    assert_eq!(back.label_wires, circuit.label_wires);
    for (a, b) in back.unitaries.iter().zip(&circuit.unitaries) {
        assert_eq!(a.targets, b.targets);
        assert!(common::max_diff(&a.matrix, &b.matrix) < 1e-15);
    }
}

#[test]
fn unorthogonalised_classifiers_are_refused() {
    let data = common::clustered(6, 10, 4, 0.2, 12);
    let mut p = plan(8);
    p.orthogonalise = false;
    let c = mps::train_classifier(&data, &p, Execution::Sequential).unwrap();
    assert!(matches!(export_mpo(&c), Err(Error::NotOrthogonalised)));
    let t = ttn::train_classifier(&data, &p, Execution::Sequential).unwrap();
    assert!(matches!(export_tto(&t), Err(Error::NotOrthogonalised)));
}
