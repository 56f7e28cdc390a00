use ncpoly::algebra::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Family {
    name: &'static str,
    alphabet: Alphabet,
    rules: RewriteSystem,
}

fn families() -> Vec<Family> {
    let herm = Alphabet::hermitian(&["x1", "x2", "x3"]);
    let mut idem = RewriteSystem::new();
    for l in 0..3 {
        idem = idem.idempotent(l).unwrap();
    }
    let mut proj = idem.clone();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        proj = proj.orthogonal(a, b).unwrap();
    }
    let comm = herm.clone().commutative();
    let mut comm_rules = RewriteSystem::for_alphabet(&comm);
    comm_rules = comm_rules.idempotent(0).unwrap();
    let mut anti = RewriteSystem::new();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        anti = anti.anticommute(a, b).unwrap();
    }
    let ferm = Alphabet::with_adjoints(&["a1", "a2", "a3"]);
    let ferm_rules = RewriteSystem::new().fermionic(&[0, 1, 2], &ferm).unwrap();
    let bell = Alphabet::hermitian(&["a0", "a1", "b0", "b1"]).with_commuting_groups(vec![0, 0, 1, 1]).unwrap();
    let mut bell_rules = RewriteSystem::for_alphabet(&bell);
    for l in 0..4 {
        bell_rules = bell_rules.idempotent(l).unwrap();
    }
    bell_rules = bell_rules.orthogonal(0, 1).unwrap().orthogonal(2, 3).unwrap();
    vec![
        Family { name: "idempotent", alphabet: herm.clone(), rules: idem },
        Family { name: "orthogonal", alphabet: herm.clone(), rules: proj },
        Family { name: "commuting", alphabet: comm, rules: comm_rules },
        Family { name: "anticommuting", alphabet: herm, rules: anti },
        Family { name: "fermionic", alphabet: ferm, rules: ferm_rules },
        Family { name: "grouped projectors", alphabet: bell, rules: bell_rules },
    ]
}

fn raw_poly() -> impl Strategy<Value = Vec<(Vec<Letter>, i32)>> {
    prop::collection::vec((prop::collection::vec(0 as Letter..6, 0..=3), -3i32..=3), 0..5)
}

/// Folds letters into the alphabet's range.
fn fit(terms: &[(Vec<Letter>, i32)], a: &Alphabet) -> Polynomial {
    let n = a.len() as Letter;
    Polynomial::from_terms(terms.iter().map(|(w, c)| (Word::new(w.iter().map(|l| l % n).collect()), *c as f64)))
}

fn alphabets() -> Vec<Alphabet> {
    vec![
        Alphabet::hermitian(&["x1", "x2", "x3"]),
        Alphabet::with_adjoints(&["a1", "a2"]),
        Alphabet::from_variables(&[("x".into(), true), ("a".into(), false), ("y".into(), true)]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn involution_is_an_involution(mode in 0usize..3, letters in prop::collection::vec(0 as Letter..5, 0..12)) {
        let a = &alphabets()[mode];
        let w = Word::new(letters.into_iter().map(|l| l % a.len() as Letter).collect());
        let once = involute(&w, a).unwrap();
        prop_assert_eq!(once.len(), w.len());
        prop_assert_eq!(involute(&once, a).unwrap(), w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reduction_is_confluent(fam in 0usize..6, seed in any::<u64>(), letters in prop::collection::vec(0 as Letter..6, 0..7)) {
        let f = &families()[fam];
        let w = Word::new(letters.into_iter().map(|l| l % f.alphabet.len() as Letter).collect());
        let canonical = f.rules.reduce(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shuffled = f.rules.reduce_with(&w, |n| rng.gen_range(0..n)).unwrap();
        prop_assert!(canonical.approx_eq(&shuffled, 1e-12), "{}: {:?} vs {:?}", f.name, canonical, shuffled);
        // reduction is idempotent and never raises the degree
        prop_assert!(f.rules.reduce_poly(&canonical).unwrap().approx_eq(&canonical, 0.0));
        prop_assert!(canonical.degree() <= w.len());
        prop_assert!(canonical.terms().all(|(_, c)| c != 0.0));
    }

    #[test]
    fn products_respect_degree_and_adjoint(fam in 0usize..6, p in raw_poly(), q in raw_poly()) {
        let f = &families()[fam];
        let p = f.rules.reduce_poly(&fit(&p, &f.alphabet)).unwrap();
        let q = f.rules.reduce_poly(&fit(&q, &f.alphabet)).unwrap();
        let pq = poly_mul(&p, &q, &f.rules).unwrap();
        if !pq.is_zero() {
            prop_assert!(pq.degree() <= p.degree() + q.degree());
        }
        let lhs = poly_adjoint(&pq, &f.alphabet, &f.rules).unwrap();
        let rhs = poly_mul(
            &poly_adjoint(&q, &f.alphabet, &f.rules).unwrap(),
            &poly_adjoint(&p, &f.alphabet, &f.rules).unwrap(),
            &f.rules,
        )
        .unwrap();
        prop_assert!(lhs.approx_eq(&rhs, 1e-9), "{}: {:?} vs {:?}", f.name, lhs, rhs);
        // associativity up to reduction
        let r = f.rules.reduce_poly(&Polynomial::letter(0)).unwrap();
        let a = poly_mul(&pq, &r, &f.rules).unwrap();
        let b = poly_mul(&p, &poly_mul(&q, &r, &f.rules).unwrap(), &f.rules).unwrap();
        prop_assert!(a.approx_eq(&b, 1e-9), "{}", f.name);
    }
}

#[test]
fn basis_counts_without_rules() {
    for n in 1usize..=4 {
        let names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        for (alphabet, letters) in [(Alphabet::hermitian(&names), n), (Alphabet::with_adjoints(&names), 2 * n)] {
            for d in 0..=4 {
                let basis = monomial_basis(d, &alphabet, &RewriteSystem::new());
                let closed = if letters == 1 { d + 1 } else { (letters.pow(d as u32 + 1) - 1) / (letters - 1) };
                assert_eq!(basis.len(), closed, "letters={letters} d={d}");
                assert_eq!(free_word_count(letters, d), closed);
                assert!(basis.windows(2).all(|w| w[0] < w[1]), "ordered and distinct");
            }
        }
    }
}

#[test]
fn basis_counts_with_rules() {
    let a = Alphabet::hermitian(&["x1", "x2"]);
    let rs = RewriteSystem::new().idempotent(0).unwrap();
    let names: Vec<String> = monomial_basis(2, &a, &rs).iter().map(|w| w.fmt_with(&a).to_string()).collect();
    assert_eq!(names, ["1", "x1", "x2", "x1*x2", "x2*x1", "x2*x2"]);
    let c = a.clone().commutative();
    assert_eq!(monomial_basis(2, &c, &RewriteSystem::for_alphabet(&c)).len(), 6);
    assert_eq!(monomial_basis(2, &a, &RewriteSystem::new()).len(), 7);
}
