//! Mapping property values into network units.
//!
//! Input `x` in physical units relates to the network input `x'` through the
//! scaler as `x = range * x' + min`, so an affine atom over physical inputs
//! stays affine over network inputs. Outputs are never scaled.

use serde::{Deserialize, Serialize};

use super::{AffineAtom, BoxSpec, Interval, LinExpr, Property, Result, Term, UnitMode, VarRef};
use crate::nn::MinMaxScaler;

/// One unit decision, recorded for every box entry and input atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitNote {
    pub location: String,
    /// True when the value was read as physical and passed through the scaler.
    pub mapped: bool,
}

fn is_physical(mode: UnitMode, magnitude: f64) -> bool {
    match mode {
        UnitMode::NetworkNative => false,
        UnitMode::Physical => true,
        UnitMode::Mixed => magnitude > 1.0,
    }
}

fn map_expr(e: &LinExpr, s: &MinMaxScaler) -> LinExpr {
    let mut constant = e.constant;
    let terms = e
        .terms
        .iter()
        .map(|t| {
            let k = t.var.position();
            constant += t.coef * s.min()[k];
            Term {
                coef: t.coef * s.range(k),
                var: t.var,
            }
        })
        .collect();
    LinExpr { terms, constant }
}

/// Rewrites `prop` into network units with every box entry present. In mixed
/// mode a box entry is physical when either end exceeds 1 in magnitude, and an
/// input atom when its bound does.
pub fn to_network_units(prop: &Property, scaler: &MinMaxScaler) -> Result<(Property, Vec<UnitNote>)> {
    prop.validate()?;
    let mode = prop.unit_mode;
    let mut notes = Vec::new();
    let mut dims = Vec::with_capacity(prop.input_box.dims.len());
    for (k, d) in prop.input_box.dims.iter().enumerate() {
        let var = VarRef::from_input_position(k);
        let iv = match d {
            None => Interval::unit(),
            Some(iv) => {
                let mapped = is_physical(mode, iv.lo.abs().max(iv.hi.abs()));
                notes.push(UnitNote {
                    location: format!("box {var}"),
                    mapped,
                });
                if mapped {
                    Interval::new(scaler.apply_one(k, iv.lo), scaler.apply_one(k, iv.hi))
                } else {
                    *iv
                }
            }
        };
        dims.push(Some(iv));
    }
    let mut atom_index = 0;
    let pre = prop.pre.map_atoms(&mut |a: &AffineAtom| {
        atom_index += 1;
        let mapped = is_physical(mode, a.bound.abs());
        notes.push(UnitNote {
            location: format!("pre atom {atom_index}"),
            mapped,
        });
        if mapped {
            AffineAtom {
                expr: map_expr(&a.expr, scaler),
                ..a.clone()
            }
        } else {
            a.clone()
        }
    });
    let out = Property {
        id: prop.id.clone(),
        input_box: BoxSpec { dims },
        pre,
        post: prop.post.clone(),
        thresholds: prop.thresholds.clone(),
        unit_mode: UnitMode::NetworkNative,
    };
    out.validate()?;
    Ok((out, notes))
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::dataset::INPUT_DIM;

    fn scaler() -> MinMaxScaler {
        // BG 40..400, insulin 0..10, meal 0..100
        let mut min = vec![40.0; 12];
        let mut max = vec![400.0; 12];
        min.extend([0.0; 24]);
        max.extend([10.0; 12]);
        max.extend([100.0; 12]);
        MinMaxScaler::from_bounds(min, max).unwrap()
    }

    #[test]
    fn mixed_box_maps_only_large_values() {
        let p = &reference_queries()[6].property;
        let (n, notes) = to_network_units(p, &scaler()).unwrap();
        assert_eq!(n.unit_mode, UnitMode::NetworkNative);
        assert_eq!(n.input_box.get(VarRef::bg_in(0)), Some(Interval::point(140.0 / 360.0)));
        assert_eq!(n.input_box.get(VarRef::in_in(0)), Some(Interval::point(0.006525)));
        assert_eq!(n.input_box.get(VarRef::m_in(11)), Some(Interval::point(0.2)));
        assert_eq!(n.input_box.get(VarRef::m_in(0)), Some(Interval::point(0.0)));
        assert_eq!(notes.len(), INPUT_DIM);
        assert_eq!(notes.iter().filter(|n| n.mapped).count(), 13);
    }

    #[test]
    fn mapped_atoms_agree_pointwise() {
        let th = [("Delta".to_string(), 20.0)].into();
        let b = BoxSpec::uniform(Interval::new(130.0, 180.0), Interval::unit(), Interval::unit());
        let p = instantiate("ML-RQ1.1", &th, b).unwrap();
        let s = scaler();
        let (n, _) = to_network_units(&p, &s).unwrap();
        let physical: Vec<f64> = (0..INPUT_DIM).map(|k| if k < 12 { 130.0 + 4.5 * k as f64 } else { 0.0 }).collect();
        let native = s.apply(&physical);
        for (a, b) in p.pre.atoms().iter().zip(n.pre.atoms()) {
            let y = [0.0; 6];
            assert!((a.expr.eval(&physical, &y) - b.expr.eval(&native, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn native_mode_is_untouched_and_physical_maps_everything() {
        let mut p = reference_queries()[2].property.clone();
        p.unit_mode = UnitMode::NetworkNative;
        let (n, notes) = to_network_units(&p, &scaler()).unwrap();
        assert_eq!(n.input_box, p.input_box);
        assert!(notes.iter().all(|n| !n.mapped));
        p.unit_mode = UnitMode::Physical;
        let (n, _) = to_network_units(&p, &scaler()).unwrap();
        let iv = n.input_box.get(VarRef::in_in(1)).unwrap();
        assert!((iv.lo - 0.0006525).abs() < 1e-15 && iv.lo == iv.hi);
    }
}
