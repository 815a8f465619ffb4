use proptest::prelude::*;

use treebound::bp::{serial_compose, star_combine};
use treebound::quantize::{q_bec, q_bec_chi2, q_bsc, q_bsc_chi2, uniform_grid};
use treebound::{binary_entropy, DeltaMeasure};

const TOL: f64 = 1e-12;

fn measure() -> impl Strategy<Value = DeltaMeasure> {
    prop::collection::vec((0.0..=0.5f64, 0.01..1.0f64), 1..12).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        DeltaMeasure::new(atoms.into_iter().map(|(d, w)| (d, w / total))).unwrap()
    })
}

fn cells() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![1usize, 2, 3, 8, 17, 64])
}

proptest! {
    #[test]
    fn functional_inequalities(w in measure()) {
        let f = w.functionals();
        prop_assert!((0.0..=0.5).contains(&f.p_e));
        prop_assert!(1.0 - binary_entropy(f.p_e).unwrap() <= f.capacity + TOL);
        prop_assert!(f.capacity <= 1.0 - 2.0 * f.p_e + TOL);
        prop_assert!(f.capacity <= f.chi2 + TOL);
        prop_assert!((1.0 - 2.0 * f.p_e).powi(2) <= f.chi2 + TOL);
    }

    #[test]
    fn star_combination_is_symmetric_and_informative(a in measure(), b in measure()) {
        let ab = star_combine(&a, &b);
        let ba = star_combine(&b, &a);
        prop_assert!((ab.total_weight() - 1.0).abs() < TOL);
        prop_assert!((ab.p_e() - ba.p_e()).abs() < TOL);
        prop_assert!((ab.capacity() - ba.capacity()).abs() < TOL);
        prop_assert!(ab.p_e() <= a.p_e().min(b.p_e()) + TOL);
        prop_assert!(ab.capacity() + TOL >= a.capacity().max(b.capacity()));
    }

    #[test]
    fn serial_composition_adds_noise(w in measure(), delta in 0.0..=0.5f64) {
        let noisy = serial_compose(delta, &w).unwrap();
        prop_assert!(noisy.p_e() + TOL >= w.p_e());
        prop_assert!(noisy.capacity() <= w.capacity() + TOL);
        let chi2 = (1.0 - 2.0 * delta).powi(2) * w.chi2();
        prop_assert!((noisy.chi2() - chi2).abs() < 1e-10);
    }

    #[test]
    fn quantizers_preserve_and_order(w in measure(), n in cells()) {
        let grid = uniform_grid(n).unwrap();
        let cap = w.capacity();
        let down = q_bsc(&w, &grid).unwrap();
        let up = q_bec(&w, &grid).unwrap();
        prop_assert!((down.p_e() - w.p_e()).abs() < TOL);
        prop_assert!((up.p_e() - w.p_e()).abs() < TOL);
        prop_assert!(down.capacity() <= cap + TOL && cap <= up.capacity() + TOL);

        let down = q_bsc_chi2(&w, &grid).unwrap();
        let up = q_bec_chi2(&w, &grid).unwrap();
        prop_assert!((down.chi2() - w.chi2()).abs() < TOL);
        prop_assert!((up.chi2() - w.chi2()).abs() < TOL);
        prop_assert!(down.capacity() <= cap + TOL && cap <= up.capacity() + TOL);
        prop_assert!(down.len() <= n && up.len() <= n + 1);
    }
}
