//! Dense two-phase simplex over a bounded box, Bland's rule throughout.
//!
//! Variables live in `[lo, hi]`; fixed variables (`lo == hi`) are substituted
//! out before the tableau is built. Every row is scaled to unit infinity norm,
//! and tolerances are measured on the scaled rows.

use crate::property::Interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `coef . x  relation  rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coef: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn le(coef: Vec<f64>, rhs: f64) -> Self {
        Self { coef, relation: Relation::Le, rhs }
    }

    pub fn ge(coef: Vec<f64>, rhs: f64) -> Self {
        Self { coef, relation: Relation::Ge, rhs }
    }

    /// Violation of the row at `x` after scaling to unit infinity norm.
    pub fn scaled_violation(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coef.iter().zip(x).map(|(a, v)| a * v).sum();
        let norm = self.coef.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1.0);
        let d = (lhs - self.rhs) / norm;
        match self.relation {
            Relation::Le => d.max(0.0),
            Relation::Ge => (-d).max(0.0),
            Relation::Eq => d.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Feasible(Vec<f64>),
    Infeasible,
}

/// Numerical trouble: cycling guard hit, unbounded ray in a bounded problem, or
/// a returned point that fails its own constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpInstability(pub String);

pub const DEFAULT_LP_TOLERANCE: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-10;

pub fn lp_feasible(bounds: &[Interval], constraints: &[Constraint], tol: f64) -> Result<LpOutcome, LpInstability> {
    Ok(match lp_maximize(&vec![0.0; bounds.len()], bounds, constraints, tol)? {
        Some((x, _)) => LpOutcome::Feasible(x),
        None => LpOutcome::Infeasible,
    })
}

/// Maximises `objective . x`; `None` when infeasible. The box keeps every
/// problem bounded.
pub fn lp_maximize(
    objective: &[f64],
    bounds: &[Interval],
    constraints: &[Constraint],
    tol: f64,
) -> Result<Option<(Vec<f64>, f64)>, LpInstability> {
    let n = bounds.len();
    if bounds.iter().any(|b| !(b.lo <= b.hi)) {
        return Ok(None);
    }
    let free: Vec<usize> = (0..n).filter(|&i| bounds[i].hi > bounds[i].lo).collect();
    let base: Vec<f64> = bounds.iter().map(|b| b.lo).collect();

    // rows over u = x_free - lo_free
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(constraints.len() + free.len());
    for c in constraints {
        debug_assert_eq!(c.coef.len(), n);
        let a: Vec<f64> = free.iter().map(|&i| c.coef[i]).collect();
        let offset: f64 = c.coef.iter().zip(&base).map(|(a, v)| a * v).sum();
        let rhs = c.rhs - offset;
        let norm = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm < PIVOT_TOL {
            let scale = c.coef.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            let ok = match c.relation {
                Relation::Le => -rhs / scale <= tol,
                Relation::Ge => rhs / scale <= tol,
                Relation::Eq => rhs.abs() / scale <= tol,
            };
            if !ok {
                return Ok(None);
            }
            continue;
        }
        rows.push((a.iter().map(|v| v / norm).collect(), c.relation, rhs / norm));
    }
    for (j, &i) in free.iter().enumerate() {
        let mut a = vec![0.0; free.len()];
        a[j] = 1.0;
        rows.push((a, Relation::Le, bounds[i].hi - bounds[i].lo));
    }

    let obj: Vec<f64> = free.iter().map(|&i| objective[i]).collect();
    let u = match Tableau::solve(free.len(), rows, &obj, tol)? {
        Some(u) => u,
        None => return Ok(None),
    };
    let mut x = base;
    for (j, &i) in free.iter().enumerate() {
        x[i] += u[j];
    }
    for c in constraints {
        if c.scaled_violation(&x) > 10.0 * tol {
            return Err(LpInstability(format!("returned point violates a row by {:.3e}", c.scaled_violation(&x))));
        }
    }
    for (v, b) in x.iter_mut().zip(bounds) {
        if *v < b.lo - 10.0 * tol || *v > b.hi + 10.0 * tol {
            return Err(LpInstability("returned point leaves the box".into()));
        }
        *v = v.clamp(b.lo, b.hi);
    }
    let value = objective.iter().zip(&x).map(|(a, v)| a * v).sum();
    Ok(Some((x, value)))
}

struct Tableau {
    /// m rows of `cols` coefficients followed by the right-hand side
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn solve(nvars: usize, rows: Vec<(Vec<f64>, Relation, f64)>, objective: &[f64], tol: f64) -> Result<Option<Vec<f64>>, LpInstability> {
        let m = rows.len();
        let slack_count = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        // normalise to non-negative rhs
        let rows: Vec<(Vec<f64>, Relation, f64)> = rows
            .into_iter()
            .map(|(a, rel, b)| {
                if b < 0.0 {
                    let flipped = match rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (a.iter().map(|v| -v).collect(), flipped, -b)
                } else {
                    (a, rel, b)
                }
            })
            .collect();
        let art_count = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let first_art = nvars + slack_count;
        let cols = first_art + art_count;
        let mut t = vec![vec![0.0; cols + 1]; m];
        let mut basis = vec![0; m];
        let (mut s, mut a) = (nvars, first_art);
        for (i, (coef, rel, b)) in rows.iter().enumerate() {
            t[i][..nvars].copy_from_slice(coef);
            t[i][cols] = *b;
            match rel {
                Relation::Le => {
                    t[i][s] = 1.0;
                    basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    t[i][s] = -1.0;
                    s += 1;
                    t[i][a] = 1.0;
                    basis[i] = a;
                    a += 1;
                }
                Relation::Eq => {
                    t[i][a] = 1.0;
                    basis[i] = a;
                    a += 1;
                }
            }
        }
        let mut tab = Tableau { t, basis, cols };
        let bmax = rows.iter().fold(1.0f64, |acc, r| acc.max(r.2));
        let iter_cap = 50 * (m + cols) + 1000;

        if art_count > 0 {
            let mut cost = vec![0.0; cols];
            cost[first_art..].iter_mut().for_each(|c| *c = 1.0);
            let value = tab.minimize(&cost, cols, iter_cap)?;
            if value > tol * bmax {
                return Ok(None);
            }
            tab.evict_artificials(first_art);
        }
        // maximise objective == minimise its negation, artificials barred
        let mut cost = vec![0.0; cols];
        for (c, o) in cost.iter_mut().zip(objective) {
            *c = -o;
        }
        tab.minimize(&cost, first_art, iter_cap)?;
        let mut u = vec![0.0; nvars];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < nvars {
                u[b] = tab.t[i][cols];
            }
        }
        Ok(Some(u))
    }

    /// Primal simplex from the current basic feasible solution; only columns
    /// below `eligible` may enter. Returns the optimal objective value.
    fn minimize(&mut self, cost: &[f64], eligible: usize, iter_cap: usize) -> Result<f64, LpInstability> {
        let cols = self.cols;
        for _ in 0..iter_cap {
            // reduced costs d_j = c_j - c_B . T_j; Bland: first negative
            let mut entering = None;
            for j in 0..eligible {
                if self.basis.contains(&j) {
                    continue;
                }
                let d = cost[j] - self.t.iter().zip(&self.basis).map(|(row, &b)| cost[b] * row[j]).sum::<f64>();
                if d < -1e-12 {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(self.t.iter().zip(&self.basis).map(|(row, &b)| cost[b] * row[cols]).sum());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if row[j] > PIVOT_TOL {
                    let ratio = row[cols] / row[j];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, r)) => {
                            if ratio < r - 1e-12 || (ratio <= r + 1e-12 && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, r))
                            }
                        }
                    };
                }
            }
            let Some((i, _)) = leave else {
                return Err(LpInstability("unbounded direction in a bounded problem".into()));
            };
            self.pivot(i, j);
        }
        Err(LpInstability("iteration limit reached".into()))
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                // basic columns stay exact; rhs must not go negative from rounding
                row[c] = 0.0;
            }
        }
        let cols = self.cols;
        for row in self.t.iter_mut() {
            if row[cols] < 0.0 && row[cols] > -1e-12 {
                row[cols] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// After phase 1, pivot zero-valued artificials out of the basis where a
    /// structural column allows it; the rest sit on redundant rows.
    fn evict_artificials(&mut self, first_art: usize) {
        for i in 0..self.t.len() {
            if self.basis[i] < first_art {
                continue;
            }
            if let Some(j) = (0..first_art).find(|&j| !self.basis.contains(&j) && self.t[i][j].abs() > 1e-9) {
                self.pivot(i, j);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> Vec<Interval> {
        vec![Interval::unit(); n]
    }

    #[test]
    fn trivial_cases() {
        let b = [Interval::new(-5.0, 5.0)];
        assert!(matches!(
            lp_feasible(&b, &[Constraint::ge(vec![1.0], 0.0), Constraint::le(vec![1.0], 1.0)], 1e-7).unwrap(),
            LpOutcome::Feasible(_)
        ));
        assert_eq!(
            lp_feasible(&b, &[Constraint::ge(vec![1.0], 1.0), Constraint::le(vec![1.0], 0.0)], 1e-7).unwrap(),
            LpOutcome::Infeasible
        );
        assert_eq!(lp_feasible(&[Interval::new(0.0, 1.0)], &[Constraint::ge(vec![1.0], 2.0)], 1e-7).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn maximises_over_a_triangle() {
        // x + y <= 1.5 in the unit square, max x + 2y = 2.5 at (0.5, 1)
        let (x, v) = lp_maximize(&[1.0, 2.0], &unit(2), &[Constraint::le(vec![1.0, 1.0], 1.5)], 1e-7).unwrap().unwrap();
        assert!((v - 2.5).abs() < 1e-9);
        assert!((x[0] - 0.5).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_variables_and_equalities() {
        let b = [Interval::point(3.0), Interval::new(-10.0, 10.0), Interval::new(-10.0, 10.0)];
        let cs = [
            Constraint { coef: vec![1.0, 1.0, 0.0], relation: Relation::Eq, rhs: 5.0 },
            Constraint::ge(vec![0.0, 1.0, -1.0], 4.0),
        ];
        let (x, v) = lp_maximize(&[0.0, 0.0, 1.0], &b, &cs, 1e-7).unwrap().unwrap();
        assert_eq!(x[0], 3.0);
        assert!((x[1] - 2.0).abs() < 1e-9);
        assert!((v + 2.0).abs() < 1e-9);
        // the fixed variable alone makes a row infeasible
        let cs = [Constraint::le(vec![1.0, 0.0, 0.0], 2.0)];
        assert_eq!(lp_feasible(&b, &cs, 1e-7).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn degenerate_redundant_rows() {
        let cs: Vec<Constraint> = (0..6)
            .flat_map(|_| [Constraint::ge(vec![1.0, 1.0], 1.0), Constraint::le(vec![1.0, 1.0], 1.0)])
            .collect();
        let LpOutcome::Feasible(x) = lp_feasible(&unit(2), &cs, 1e-7).unwrap() else { panic!() };
        assert!((x[0] + x[1] - 1.0).abs() < 1e-6);
    }

    /// Random polytopes built around a known interior point are feasible; the
    /// same rows shifted past a vertex-sampled extreme are not.
    #[test]
    fn random_polytopes_against_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(1..6);
            let bounds: Vec<Interval> = (0..n)
                .map(|_| {
                    let lo = rng.gen_range(-3.0..1.0);
                    Interval::new(lo, lo + rng.gen_range(0.0..3.0))
                })
                .collect();
            let m = rng.gen_range(1..8);
            let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let p: Vec<f64> = bounds.iter().map(|b| rng.gen_range(b.lo..=b.hi)).collect();
            let dot = |a: &[f64], x: &[f64]| a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
            let cs: Vec<Constraint> = rows.iter().map(|a| Constraint::le(a.clone(), dot(a, &p) + rng.gen_range(0.0..0.5))).collect();
            match lp_feasible(&bounds, &cs, 1e-7).unwrap() {
                LpOutcome::Feasible(x) => assert!(cs.iter().all(|c| c.scaled_violation(&x) <= 1e-6)),
                LpOutcome::Infeasible => panic!("feasible by construction"),
            }
            // first row must exceed its maximum over the box: infeasible
            let a = &rows[0];
            let max: f64 = a.iter().zip(&bounds).map(|(c, b)| if *c > 0.0 { c * b.hi } else { c * b.lo }).sum();
            let mut bad = cs.clone();
            bad.push(Constraint::ge(a.clone(), max + 0.01));
            assert_eq!(lp_feasible(&bounds, &bad, 1e-7).unwrap(), LpOutcome::Infeasible);
            // LP optimum dominates every sampled point
            let obj: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, best) = lp_maximize(&obj, &bounds, &cs, 1e-7).unwrap().unwrap();
            for _ in 0..200 {
                let q: Vec<f64> = bounds.iter().map(|b| rng.gen_range(b.lo..=b.hi)).collect();
                if cs.iter().all(|c| c.scaled_violation(&q) == 0.0) {
                    assert!(dot(&obj, &q) <= best + 1e-7);
                }
            }
        }
    }
}
