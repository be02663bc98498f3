mod common;

use common::*;
use covar_core::shadows::{plan_budget, ShadowSet, Snapshot};
use covar_core::{
    rng, ExactProvider, ExpectationProvider, Letter, PauliString, ShadowProvider, Statevector,
};
use proptest::prelude::*;

const BASES: [Letter; 3] = [Letter::X, Letter::Y, Letter::Z];

/// `(I + s sigma_b) / 2` on every qubit, tensored in the oracle's order.
fn projector(bases: &[Letter], outcomes: &[bool]) -> CMatrix {
    let mut m = CMatrix::from_element(1, 1, c(1.0, 0.0));
    for q in (0..bases.len()).rev() {
        let sign = if outcomes[q] { -1.0 } else { 1.0 };
        let local =
            (letter_matrix(Letter::I) + letter_matrix(bases[q]) * c(sign, 0.0)) * c(0.5, 0.0);
        m = m.kronecker(&local);
    }
    m
}

/// `E[estimator]` by summing over every basis choice and outcome with Born
/// probabilities from dense projectors.
fn enumerated_mean(psi: &CVector, p: &PauliString) -> f64 {
    let n = p.n_qubits();
    let mut total = 0.0;
    for choice in 0..3usize.pow(n as u32) {
        let bases: Vec<Letter> = (0..n)
            .map(|q| BASES[(choice / 3usize.pow(q as u32)) % 3])
            .collect();
        for bits in 0..(1usize << n) {
            let outcomes: Vec<bool> = (0..n).map(|q| (bits >> q) & 1 == 1).collect();
            let prob = expectation(&projector(&bases, &outcomes), psi).re;
            let value = Snapshot::new(&bases, &outcomes).unwrap().estimate(p);
            total += prob * value / 3f64.powi(n as i32);
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_snapshot_estimator_is_unbiased(seed in 0u64..100_000, n in 1usize..=2, p in non_identity(2)) {
        let p = if n == 2 { p } else { PauliString::from_letters(&p.letters()[..1]).unwrap() };
        prop_assume!(!p.is_identity());
        let state = Statevector::random(n, &mut rng::seeded(seed)).unwrap();
        let psi = CVector::from_vec(state.amplitudes().to_vec());
        let exact = expectation(&dense(&p), &psi).re;
        prop_assert!((enumerated_mean(&psi, &p) - exact).abs() < 1e-12);
    }

    #[test]
    fn binary_record_round_trips(seed in 0u64..1000, n in 1usize..=9, count in 1usize..40) {
        let state = Statevector::random(n, &mut rng::seeded(seed)).unwrap();
        let set = ShadowSet::acquire(&state, count, seed).unwrap();
        let mut buf = Vec::new();
        set.write_binary(&mut buf).unwrap();
        let back = ShadowSet::read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back.snapshots(), set.snapshots());
        prop_assert_eq!(back.n_batches(), set.n_batches());
    }
}

#[test]
fn estimator_variance_is_bounded_by_three_to_the_weight() {
    let state = Statevector::random(3, &mut rng::seeded(4)).unwrap();
    let set = ShadowSet::acquire(&state, 60_000, 8).unwrap();
    for (s, weight) in [("ZII", 1), ("XYI", 2), ("XYZ", 3)] {
        let p: PauliString = s.parse().unwrap();
        let values: Vec<f64> = set.snapshots().iter().map(|x| x.estimate(&p)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        assert!(var <= 3f64.powi(weight) * 1.05, "{s}: {var}");
    }
}

#[test]
fn planned_budget_concentrates() {
    let strings: Vec<PauliString> = ["ZI", "IX", "YI", "IY"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let budget = plan_budget(0.1, 0.05, 1, strings.len()).unwrap();
    let a = covar_core::build_hea(2, 1).unwrap();
    let theta = vec![0.4, -1.1, 0.7, 2.0, -0.3, 1.3];
    let bound = a.bind(&theta).unwrap();
    let exact = ExactProvider::new().estimate(&bound, &strings).unwrap();
    let trials = 200;
    let mut good = 0;
    for t in 0..trials {
        let provider = ShadowProvider::new(budget, 1000 + t);
        let est = provider.estimate(&bound, &strings).unwrap();
        if est.iter().zip(&exact).all(|(a, b)| (a - b).abs() <= 0.1) {
            good += 1;
        }
    }
    assert!(
        good as f64 >= (1.0 - 0.05) * trials as f64,
        "{good}/{trials}"
    );
}

#[test]
fn provider_reports_snapshot_usage() {
    let strings: Vec<PauliString> = vec!["ZZ".parse().unwrap()];
    let budget = plan_budget(0.5, 0.5, 2, 1).unwrap();
    let a = covar_core::build_hea(2, 1).unwrap();
    let bound = a.bind(&[0.0; 6]).unwrap();
    let provider = ShadowProvider::new(budget, 3);
    provider
        .estimate_batch(&[bound.clone(), bound], &strings)
        .unwrap();
    let usage = provider.usage();
    assert_eq!(usage.points, 2);
    assert_eq!(usage.snapshots, 2 * budget.total() as u64);
}
