//! The compiled queries cover exactly the violations of the source property.

use std::collections::BTreeMap;

use aps_core::dataset::INPUT_DIM;
use aps_core::property::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn thresholds() -> BTreeMap<String, f64> {
    [
        ("Delta", 20.0),
        ("beta1", 20.0),
        ("rho1", 200.0),
        ("beta2", 2.0),
        ("alpha", 3.0),
        ("beta3", 10.0),
        ("beta4", 1.0),
        ("beta5", 1.5),
        ("rho2", 150.0),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), *v))
    .collect()
}

/// Coarse grid values so that atoms are frequently hit with equality.
fn grid(rng: &mut ChaCha8Rng, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).floor() as i64;
    lo + step * rng.gen_range(0..=n) as f64
}

fn sample_x(rng: &mut ChaCha8Rng, b: &[Interval]) -> Vec<f64> {
    b.iter()
        .map(|iv| {
            let pad = 0.1 * iv.width().max(1.0);
            if rng.gen_bool(0.97) {
                grid(rng, iv.lo, iv.hi, (iv.width() / 8.0).max(0.5))
            } else {
                rng.gen_range(iv.lo - pad..=iv.hi + pad)
            }
        })
        .collect()
}

fn sample_y(rng: &mut ChaCha8Rng, centre: f64) -> Vec<f64> {
    let base = grid(rng, 40.0, 300.0, 10.0);
    (0..6)
        .map(|_| match rng.gen_range(0..3) {
            0 => base,
            1 => base + grid(rng, -30.0, 30.0, 1.0),
            _ => centre + grid(rng, -5.0, 5.0, 1.0),
        })
        .collect()
}

fn check(prop: &Property, queries: &[Query], x: &[f64], y: &[f64]) {
    let violated = !prop.evaluate_concrete(x, y);
    let hit = queries.iter().any(|q| q.satisfied(x, y));
    assert_eq!(violated, hit, "{}: x={x:?} y={y:?}", prop.id);
}

#[test]
fn templates_compile_soundly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let th = thresholds();
    let b = BoxSpec::uniform(Interval::new(40.0, 400.0), Interval::new(0.0, 10.0), Interval::new(0.0, 100.0));
    let mut violations = 0;
    for id in TEMPLATE_IDS.iter().filter(|id| **id != "ML-RQ1.3") {
        let prop = instantiate(id, &th, b.clone()).unwrap();
        let queries = compile(&prop).unwrap();
        let resolved = prop.input_box.resolved();
        for _ in 0..10_000 {
            let x = sample_x(&mut rng, &resolved);
            let y = sample_y(&mut rng, 180.0);
            violations += usize::from(!prop.evaluate_concrete(&x, &y));
            check(&prop, &queries, &x, &y);
        }
    }
    assert!(violations > 1000, "sampler too weak: {violations}");
}

#[test]
fn reference_queries_compile_soundly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for r in reference_queries() {
        let queries = compile(&r.property).unwrap();
        let resolved = r.property.input_box.resolved();
        let post_bound = r.property.post.atoms()[0].bound;
        for _ in 0..10_000 {
            let x = sample_x(&mut rng, &resolved);
            let y = sample_y(&mut rng, post_bound);
            check(&r.property, &queries, &x, &y);
        }
    }
}

fn random_atom(rng: &mut ChaCha8Rng, input: bool) -> AffineAtom {
    let n = rng.gen_range(1..=3);
    let terms = (0..n)
        .map(|_| Term {
            coef: [1.0, -1.0, 2.0, -0.5][rng.gen_range(0..4)],
            var: if input {
                VarRef::new(Channel::INPUTS[rng.gen_range(0..3)], rng.gen_range(0..2))
            } else {
                VarRef::bg_out(rng.gen_range(0..3))
            },
        })
        .collect();
    let cmp = [Comparator::Le, Comparator::Ge, Comparator::Lt, Comparator::Gt][rng.gen_range(0..4)];
    let expr = LinExpr {
        terms,
        constant: grid(rng, -2.0, 2.0, 1.0),
    };
    let bound = grid(rng, -3.0, 3.0, 1.0);
    if rng.gen_bool(0.3) {
        AffineAtom::abs(expr, cmp, bound.abs())
    } else {
        AffineAtom::new(expr, cmp, bound)
    }
}

fn random_formula(rng: &mut ChaCha8Rng, input: bool, depth: u32) -> Formula {
    if depth == 0 || rng.gen_bool(0.3) {
        return Formula::Atom(random_atom(rng, input));
    }
    let parts = (0..rng.gen_range(2..=3)).map(|_| random_formula(rng, input, depth - 1)).collect();
    if rng.gen_bool(0.5) {
        Formula::And(parts)
    } else {
        Formula::Or(parts)
    }
}

#[test]
fn random_formulas_compile_soundly() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..200 {
        let mut b = BoxSpec::default();
        for k in 0..INPUT_DIM {
            b.set(VarRef::from_input_position(k), Interval::new(-2.0, 2.0));
        }
        let prop = Property {
            id: format!("random-{case}"),
            input_box: b,
            pre: random_formula(&mut rng, true, 3),
            post: random_formula(&mut rng, false, 3),
            thresholds: BTreeMap::new(),
            unit_mode: UnitMode::NetworkNative,
        };
        let queries = compile(&prop).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..INPUT_DIM).map(|_| grid(&mut rng, -3.0, 3.0, 0.5)).collect();
            let y: Vec<f64> = (0..6).map(|_| grid(&mut rng, -3.0, 3.0, 0.5)).collect();
            check(&prop, &queries, &x, &y);
        }
    }
}
