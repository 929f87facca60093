//! The physiology-inspired ML requirements as property templates, and the
//! reference verification queries built from them.

use std::collections::BTreeMap;

use super::{
    AffineAtom, BoxSpec, Comparator, Formula, Interval, LinExpr, Property, PropertyError, Result, UnitMode, VarRef,
};
use crate::dataset::{INPUT_STEPS, OUTPUT_STEPS};

pub const TEMPLATE_IDS: [&str; 8] = [
    "ML-RQ1.1", "ML-RQ1.2", "ML-RQ1.3", "ML-RQ1.4", "ML-RQ1.5", "ML-RQ1.6", "ML-RQ1.7", "ML-RQ1.8",
];

/// Scaled insulin value used to pin the non-bolus insulin inputs.
pub const PINNED_INSULIN: f64 = 0.006525;

pub fn required_thresholds(id: &str) -> Result<&'static [&'static str]> {
    Ok(match id {
        "ML-RQ1.1" => &["Delta"],
        "ML-RQ1.2" => &["beta1", "rho1"],
        "ML-RQ1.3" => return Err(not_supported(id)),
        "ML-RQ1.4" => &["beta2", "alpha"],
        "ML-RQ1.5" => &["beta3"],
        "ML-RQ1.6" | "ML-RQ1.7" => &["beta4"],
        "ML-RQ1.8" => &["beta5", "rho2"],
        other => return Err(PropertyError::UnknownTemplate(other.to_string())),
    })
}

fn not_supported(id: &str) -> PropertyError {
    PropertyError::NotSupported {
        id: id.to_string(),
        reason: "no available data".into(),
    }
}

fn atom(expr: LinExpr, cmp: Comparator, bound: f64) -> Formula {
    Formula::Atom(AffineAtom::new(expr, cmp, bound))
}

fn tagged(expr: LinExpr, cmp: Comparator, th: (&str, f64)) -> Formula {
    Formula::Atom(AffineAtom::new(expr, cmp, th.1).with_threshold(th.0))
}

fn abs_tagged(expr: LinExpr, cmp: Comparator, th: (&str, f64)) -> Formula {
    Formula::Atom(AffineAtom::abs(expr, cmp, th.1).with_threshold(th.0))
}

/// Builds the template `id` with the named thresholds over `input_box`.
/// Unit mode defaults to mixed; thresholds beyond the required ones are ignored.
pub fn instantiate(id: &str, thresholds: &BTreeMap<String, f64>, input_box: BoxSpec) -> Result<Property> {
    let names = required_thresholds(id)?;
    let mut used = BTreeMap::new();
    for &n in names {
        let v = *thresholds.get(n).ok_or_else(|| PropertyError::MissingThreshold {
            id: id.to_string(),
            name: n.to_string(),
        })?;
        used.insert(n.to_string(), v);
    }
    let th = |n: &'static str| (n, used[n]);
    use Comparator::*;

    let (pre, post) = match id {
        "ML-RQ1.1" => (
            Formula::and(
                (0..INPUT_STEPS - 1)
                    .map(|i| abs_tagged(LinExpr::diff(VarRef::bg_in(i + 1), VarRef::bg_in(i)), Le, th("Delta")))
                    .collect(),
            ),
            Formula::and(
                (0..OUTPUT_STEPS - 1)
                    .map(|j| abs_tagged(LinExpr::diff(VarRef::bg_out(j + 1), VarRef::bg_out(j)), Le, th("Delta")))
                    .collect(),
            ),
        ),
        "ML-RQ1.2" => (
            Formula::or((0..INPUT_STEPS).map(|i| tagged(LinExpr::var(VarRef::m_in(i)), Ge, th("beta1"))).collect()),
            Formula::or((0..OUTPUT_STEPS).map(|j| tagged(LinExpr::var(VarRef::bg_out(j)), Ge, th("rho1"))).collect()),
        ),
        "ML-RQ1.4" => (
            tagged(LinExpr::var(VarRef::in_in(0)), Ge, th("beta2")),
            Formula::or(
                (1..OUTPUT_STEPS)
                    .map(|j| abs_tagged(LinExpr::diff(VarRef::bg_out(j), VarRef::bg_out(0)), Ge, th("alpha")))
                    .collect(),
            ),
        ),
        "ML-RQ1.5" => (
            Formula::or((0..INPUT_STEPS).map(|i| tagged(LinExpr::var(VarRef::m_in(i)), Ge, th("beta3"))).collect()),
            Formula::or(
                (1..OUTPUT_STEPS)
                    .map(|j| Formula::Atom(AffineAtom::abs(LinExpr::diff(VarRef::bg_out(j), VarRef::bg_out(0)), Gt, 0.0)))
                    .collect(),
            ),
        ),
        "ML-RQ1.6" | "ML-RQ1.7" => {
            let last = VarRef::bg_out(OUTPUT_STEPS - 1);
            let mut post = vec![atom(LinExpr::var(last), Ge, 70.0), atom(LinExpr::var(last), Le, 180.0)];
            post.extend((0..OUTPUT_STEPS - 1).map(|j| {
                Formula::or(vec![
                    atom(LinExpr::var(VarRef::bg_out(j)), Le, 70.0),
                    atom(LinExpr::var(VarRef::bg_out(j)), Ge, 180.0),
                ])
            }));
            (tagged(LinExpr::var(VarRef::in_in(0)), Ge, th("beta4")), Formula::and(post))
        }
        "ML-RQ1.8" => (
            Formula::or((0..INPUT_STEPS).map(|i| tagged(LinExpr::var(VarRef::in_in(i)), Ge, th("beta5"))).collect()),
            Formula::or((0..OUTPUT_STEPS).map(|j| tagged(LinExpr::var(VarRef::bg_out(j)), Le, th("rho2"))).collect()),
        ),
        _ => unreachable!("id checked by required_thresholds"),
    };
    let prop = Property {
        id: id.to_string(),
        input_box,
        pre,
        post,
        thresholds: used,
        unit_mode: UnitMode::Mixed,
    };
    prop.validate()?;
    Ok(prop)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceQuery {
    /// Short file-friendly name, e.g. `rq1_8_in0_le230`.
    pub name: String,
    /// Human-readable form of the pinned implication.
    pub label: String,
    pub property: Property,
}

fn pinned_property(id: &str, input_box: BoxSpec, post: Formula) -> Property {
    Property {
        id: id.to_string(),
        input_box,
        pre: Formula::truth(),
        post,
        thresholds: BTreeMap::new(),
        unit_mode: UnitMode::Mixed,
    }
}

/// Insulin bolus pinned at step `bolus` (others at the pinned basal value),
/// no meals, BG in `bg`.
fn insulin_box(bg: Interval, bolus: usize) -> BoxSpec {
    let mut b = BoxSpec::uniform(bg, Interval::point(PINNED_INSULIN), Interval::point(0.0));
    b.set(VarRef::in_in(bolus), Interval::point(5.0));
    b
}

/// Meal of 20 pinned at the newest step, other meals 0, insulin pinned.
fn meal_box(bg: Interval) -> BoxSpec {
    let mut b = BoxSpec::uniform(bg, Interval::point(PINNED_INSULIN), Interval::point(0.0));
    b.set(VarRef::m_in(INPUT_STEPS - 1), Interval::point(20.0));
    b
}

/// The eight reference verification queries: two rate-of-change checks and six
/// pinned insulin/meal implications.
pub fn reference_queries() -> Vec<ReferenceQuery> {
    let delta: BTreeMap<String, f64> = [("Delta".to_string(), 20.0)].into();
    let unit = Interval::unit();
    let rq11 = |bg_lo: f64| {
        instantiate("ML-RQ1.1", &delta, BoxSpec::uniform(Interval::new(bg_lo, 180.0), unit, unit)).expect("static template")
    };
    let last = LinExpr::var(VarRef::bg_out(OUTPUT_STEPS - 1));
    let post = |cmp, bound| Formula::Atom(AffineAtom::new(last.clone(), cmp, bound));
    use Comparator::*;
    let q = |name: &str, label: &str, property| ReferenceQuery {
        name: name.into(),
        label: label.into(),
        property,
    };
    vec![
        q("rq1_1_bg130", "ML-RQ1.1 with BG in [130,180], Delta=20", rq11(130.0)),
        q("rq1_1_bg109", "ML-RQ1.1 with BG in [109,180], Delta=20", rq11(109.0)),
        q(
            "rq1_8_in0_le230",
            "ML-RQ1.8: In_in[0]=5 => BG_out[5] <= 230",
            pinned_property("ML-RQ1.8", insulin_box(Interval::new(212.0, 230.0), 0), post(Le, 230.0)),
        ),
        q(
            "rq1_8_in11_le230",
            "ML-RQ1.8: In_in[11]=5 => BG_out[5] <= 230",
            pinned_property("ML-RQ1.8", insulin_box(Interval::new(211.0, 220.0), 11), post(Le, 230.0)),
        ),
        q(
            "rq1_8_in11_lt220",
            "ML-RQ1.8: In_in[11]=5 => BG_out[5] < 220",
            pinned_property("ML-RQ1.8", insulin_box(Interval::new(212.0, 222.0), 11), post(Lt, 220.0)),
        ),
        q(
            "rq1_2_gt210",
            "ML-RQ1.2: M_in[11]=20 => BG_out[5] > 210",
            pinned_property("ML-RQ1.2", meal_box(Interval::point(180.0)), post(Gt, 210.0)),
        ),
        q(
            "rq1_2_gt200",
            "ML-RQ1.2: M_in[11]=20 => BG_out[5] > 200",
            pinned_property("ML-RQ1.2", meal_box(Interval::point(180.0)), post(Gt, 200.0)),
        ),
        q(
            "rq1_2_gt200_bg183",
            "ML-RQ1.2: M_in[11]=20 => BG_out[5] > 200, BG in [180,183]",
            pinned_property("ML-RQ1.2", meal_box(Interval::new(180.0, 183.0)), post(Gt, 200.0)),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::INPUT_DIM;

    fn th(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn v(var: VarRef) -> LinExpr {
        LinExpr::var(var)
    }

    // Expected trees written out independently of the builder above.
    fn abs_le(e: LinExpr, b: f64, name: &str) -> Formula {
        Formula::Atom(AffineAtom {
            expr: e,
            comparator: Comparator::Le,
            bound: b,
            abs: true,
            threshold: Some(name.into()),
        })
    }

    fn plain(e: LinExpr, c: Comparator, b: f64, name: Option<&str>) -> Formula {
        Formula::Atom(AffineAtom {
            expr: e,
            comparator: c,
            bound: b,
            abs: false,
            threshold: name.map(String::from),
        })
    }

    #[test]
    fn rq1_1_structure() {
        let p = instantiate("ML-RQ1.1", &th(&[("Delta", 20.0)]), BoxSpec::default()).unwrap();
        let pre: Vec<Formula> = (0..11).map(|i| abs_le(LinExpr::diff(VarRef::bg_in(i + 1), VarRef::bg_in(i)), 20.0, "Delta")).collect();
        let post: Vec<Formula> = (0..5).map(|j| abs_le(LinExpr::diff(VarRef::bg_out(j + 1), VarRef::bg_out(j)), 20.0, "Delta")).collect();
        assert_eq!(p.pre, Formula::And(pre));
        assert_eq!(p.post, Formula::And(post));
        assert_eq!(p.thresholds, th(&[("Delta", 20.0)]));
    }

    #[test]
    fn rq1_2_5_8_structure() {
        let p = instantiate("ML-RQ1.2", &th(&[("beta1", 20.0), ("rho1", 200.0)]), BoxSpec::default()).unwrap();
        assert_eq!(
            p.pre,
            Formula::Or((0..12).map(|i| plain(v(VarRef::m_in(i)), Comparator::Ge, 20.0, Some("beta1"))).collect())
        );
        assert_eq!(
            p.post,
            Formula::Or((0..6).map(|j| plain(v(VarRef::bg_out(j)), Comparator::Ge, 200.0, Some("rho1"))).collect())
        );

        let p = instantiate("ML-RQ1.5", &th(&[("beta3", 10.0)]), BoxSpec::default()).unwrap();
        let Formula::Or(post) = &p.post else { panic!() };
        assert_eq!(post.len(), 5);
        assert_eq!(
            post[0],
            Formula::Atom(AffineAtom::abs(LinExpr::diff(VarRef::bg_out(1), VarRef::bg_out(0)), Comparator::Gt, 0.0))
        );

        let p = instantiate("ML-RQ1.8", &th(&[("beta5", 2.0), ("rho2", 230.0)]), BoxSpec::default()).unwrap();
        assert_eq!(
            p.pre,
            Formula::Or((0..12).map(|i| plain(v(VarRef::in_in(i)), Comparator::Ge, 2.0, Some("beta5"))).collect())
        );
        assert_eq!(
            p.post,
            Formula::Or((0..6).map(|j| plain(v(VarRef::bg_out(j)), Comparator::Le, 230.0, Some("rho2"))).collect())
        );
    }

    #[test]
    fn rq1_4_6_7_structure() {
        let p = instantiate("ML-RQ1.4", &th(&[("beta2", 1.0), ("alpha", 5.0)]), BoxSpec::default()).unwrap();
        assert_eq!(p.pre, plain(v(VarRef::in_in(0)), Comparator::Ge, 1.0, Some("beta2")));
        let Formula::Or(post) = &p.post else { panic!() };
        assert_eq!(post.len(), 5);
        assert_eq!(
            post[4],
            Formula::Atom(AffineAtom {
                expr: LinExpr::diff(VarRef::bg_out(5), VarRef::bg_out(0)),
                comparator: Comparator::Ge,
                bound: 5.0,
                abs: true,
                threshold: Some("alpha".into()),
            })
        );

        let t = th(&[("beta4", 3.0)]);
        let p6 = instantiate("ML-RQ1.6", &t, BoxSpec::default()).unwrap();
        let p7 = instantiate("ML-RQ1.7", &t, BoxSpec::default()).unwrap();
        assert_eq!(p6.pre, p7.pre);
        assert_eq!(p6.post, p7.post);
        let mut expected = vec![
            plain(v(VarRef::bg_out(5)), Comparator::Ge, 70.0, None),
            plain(v(VarRef::bg_out(5)), Comparator::Le, 180.0, None),
        ];
        for j in 0..5 {
            expected.push(Formula::Or(vec![
                plain(v(VarRef::bg_out(j)), Comparator::Le, 70.0, None),
                plain(v(VarRef::bg_out(j)), Comparator::Ge, 180.0, None),
            ]));
        }
        assert_eq!(p6.post, Formula::And(expected));
    }

    #[test]
    fn errors() {
        assert_eq!(
            instantiate("ML-RQ1.3", &th(&[]), BoxSpec::default()),
            Err(PropertyError::NotSupported {
                id: "ML-RQ1.3".into(),
                reason: "no available data".into()
            })
        );
        assert!(matches!(instantiate("ML-RQ9", &th(&[]), BoxSpec::default()), Err(PropertyError::UnknownTemplate(_))));
        assert_eq!(
            instantiate("ML-RQ1.2", &th(&[("beta1", 1.0)]), BoxSpec::default()),
            Err(PropertyError::MissingThreshold {
                id: "ML-RQ1.2".into(),
                name: "rho1".into()
            })
        );
    }

    #[test]
    fn zero_thresholds_make_rq1_4_trivial() {
        let b = BoxSpec::uniform(Interval::new(100.0, 200.0), Interval::unit(), Interval::unit());
        let p = instantiate("ML-RQ1.4", &th(&[("beta2", 0.0), ("alpha", 0.0)]), b).unwrap();
        let mut x = vec![150.0; INPUT_DIM];
        x[12..].iter_mut().for_each(|v| *v = 0.0);
        assert!(p.pre.eval(&x, &[0.0; 6]));
        for y in [[100.0; 6], [100.0, 90.0, 80.0, 70.0, 60.0, 50.0]] {
            assert!(p.post.eval(&x, &y));
            assert!(p.evaluate_concrete(&x, &y));
        }
    }

    #[test]
    fn reference_rows() {
        let rows = reference_queries();
        assert_eq!(rows.len(), 8);
        let r1 = &rows[0].property;
        assert_eq!(r1.id, "ML-RQ1.1");
        assert_eq!(r1.input_box.get(VarRef::bg_in(3)), Some(Interval::new(130.0, 180.0)));
        assert_eq!(r1.input_box.get(VarRef::in_in(7)), Some(Interval::unit()));
        assert_eq!(r1.thresholds["Delta"], 20.0);
        assert_eq!(rows[1].property.input_box.get(VarRef::bg_in(0)), Some(Interval::new(109.0, 180.0)));

        let r3 = &rows[2].property;
        assert_eq!(r3.input_box.get(VarRef::in_in(0)), Some(Interval::point(5.0)));
        assert_eq!(r3.input_box.get(VarRef::in_in(1)), Some(Interval::point(0.006525)));
        assert_eq!(r3.input_box.get(VarRef::m_in(4)), Some(Interval::point(0.0)));

        let r7 = &rows[6].property;
        assert_eq!(r7.id, "ML-RQ1.2");
        assert_eq!(r7.input_box.get(VarRef::bg_in(11)), Some(Interval::point(180.0)));
        assert_eq!(r7.input_box.get(VarRef::in_in(11)), Some(Interval::point(0.006525)));
        assert_eq!(r7.input_box.get(VarRef::m_in(11)), Some(Interval::point(20.0)));
        assert_eq!(r7.input_box.get(VarRef::m_in(10)), Some(Interval::point(0.0)));
        assert_eq!(r7.post, plain(v(VarRef::bg_out(5)), Comparator::Gt, 200.0, None));
        assert_eq!(rows[7].property.input_box.get(VarRef::bg_in(0)), Some(Interval::new(180.0, 183.0)));
        for r in &rows {
            r.property.validate().unwrap();
            assert!(r.property.input_box.dims.iter().all(Option::is_some));
        }
    }
}
