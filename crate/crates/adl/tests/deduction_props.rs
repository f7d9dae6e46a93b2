use adl::deduction::{
    all_recipes, deducible, views_equivalent, views_equivalent_naive, RecipeSignature, View,
};
use adl::term::{Destructor, SymbolicModel, Term};
use proptest::prelude::*;
use std::sync::Arc;

fn model() -> SymbolicModel {
    let dec = Destructor::new(
        "dec",
        2,
        Arc::new(|a: &[Term]| {
            let c = &a[1];
            (c.is_app_of("enc") && c.args()[0] == a[0]).then(|| c.args()[1].clone())
        }),
    );
    SymbolicModel::new()
        .with_constructor("pair", 2)
        .and_then(|m| m.with_constructor("enc", 2))
        .and_then(|m| m.with_destructor(Destructor::project("fst", "pair", 0)))
        .and_then(|m| m.with_destructor(dec))
        .unwrap()
}

fn atom() -> impl Strategy<Value = Term> {
    prop::sample::select(vec!["n!k", "n!m", "n?a", "n?b"]).prop_map(|s| s.parse::<Term>().unwrap())
}

/// Constructor terms of size at most 3.
fn small_term() -> impl Strategy<Value = Term> {
    prop_oneof![
        atom(),
        (prop::sample::select(vec!["pair", "enc"]), atom(), atom())
            .prop_map(|(f, a, b)| Term::app(f, vec![a, b])),
    ]
}

fn outs() -> impl Strategy<Value = Vec<Term>> {
    prop::collection::vec(small_term(), 1..=3)
}

fn oracle_hit(
    m: &SymbolicModel,
    sig: &RecipeSignature,
    outs: &[Term],
    target: &Term,
    d: usize,
) -> bool {
    all_recipes(sig, outs.len(), d, 1_000_000)
        .unwrap()
        .iter()
        .any(|r| m.eval_checked(r, outs).as_ref() == Some(target))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn search_is_sound_and_complete_at_depth_two(outs in outs(), target in small_term()) {
        let m = model();
        let sig = RecipeSignature::full(&m);
        let hit = deducible(&m, &sig, &View::outs(outs.clone()), &target, 2).unwrap();
        if let Some(r) = &hit {
            prop_assert_eq!(m.eval_checked(r, &outs), Some(target.clone()));
        }
        prop_assert_eq!(hit.is_some(), oracle_hit(&m, &sig, &outs, &target, 2));
    }

    #[test]
    fn deeper_search_keeps_hits(outs in outs(), target in small_term()) {
        let m = model();
        let sig = RecipeSignature::full(&m);
        let v = View::outs(outs);
        for d in 1..3 {
            if deducible(&m, &sig, &v, &target, d).unwrap().is_some() {
                prop_assert!(deducible(&m, &sig, &v, &target, d + 1).unwrap().is_some());
            }
        }
    }

    #[test]
    fn fast_and_naive_view_comparison_agree(a in outs(), b in outs()) {
        let m = model();
        let sig = RecipeSignature::full(&m);
        let (va, vb) = (View::outs(a), View::outs(b));
        let fast = views_equivalent(&m, &sig, &va, &vb, 2).unwrap();
        let naive = views_equivalent_naive(&m, &sig, &va, &vb, 2, 1_000_000).unwrap();
        prop_assert_eq!(fast.is_none(), naive.is_none());
    }
}

#[test]
fn view_equivalence_is_an_equivalence_relation() {
    use rand::{Rng, SeedableRng};
    let m = model();
    let sig = RecipeSignature::full(&m);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let atoms: Vec<Term> = ["n!k", "n!m", "n?a"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let pick = |rng: &mut rand_chacha::ChaCha8Rng| atoms[rng.gen_range(0..atoms.len())].clone();
    // Few atoms and two outputs each, so that some distinct views coincide.
    let views: Vec<View> = (0..20)
        .map(|_| {
            View::outs(
                (0..2)
                    .map(|_| {
                        if rng.gen_bool(0.5) {
                            pick(&mut rng)
                        } else {
                            Term::app("enc", vec![pick(&mut rng), pick(&mut rng)])
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    let n = views.len();
    let mut eq = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            eq[i][j] = views_equivalent(&m, &sig, &views[i], &views[j], 2)
                .unwrap()
                .is_none();
        }
    }
    let mut related = 0;
    for i in 0..n {
        assert!(eq[i][i]);
        for j in 0..n {
            assert_eq!(eq[i][j], eq[j][i]);
            if i != j && eq[i][j] {
                related += 1;
            }
            for k in 0..n {
                if eq[i][j] && eq[j][k] {
                    assert!(eq[i][k]);
                }
            }
        }
    }
    assert!(related > 0, "no non-trivial pairs");
}
