//! Log-barrier interior-point solver for the two convex program shapes the
//! optimizer needs: fixed-placement CPU allocation and the per-iteration
//! placement relaxation.
//!
//! Programs are built from variables with box bounds, linear inequality and
//! equality rows, and an objective made of a linear part plus reciprocal-gap
//! terms w/(x_v - a) with domain x_v > a. Min-max objectives are expressed
//! through an epigraph variable whose pieces may themselves carry
//! reciprocal-gap terms. Every reciprocal term's domain is backed by a lower
//! bound x_v >= a + domain_margin, tightened automatically when the term is
//! added.
//!
//! The solver is deterministic: no randomness, so identical programs with
//! identical starting points produce bit-identical results. Phase 1 minimizes
//! the worst constraint violation; phase 2 follows the central path with
//! damped Newton steps, multiplying the barrier parameter by 10 until the
//! duality-gap estimate m/t drops below the requested tolerance. Inequality
//! multipliers are recovered from the final barrier iterate as 1/(t * slack).

use std::fmt;

use nalgebra::{DMatrix, DVector};

/// Default duality-gap tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Constraint violation allowed in an Optimal verdict.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Lower-bound slack inserted under every reciprocal term's pole.
pub const DOMAIN_MARGIN: f64 = 1e-6;

const MAX_BARRIER_UPDATES: usize = 200;
const MAX_NEWTON_STEPS: usize = 200;
const T_INITIAL: f64 = 1.0;
const T_FACTOR: f64 = 10.0;
/// Newton decrement^2 / 2 at which a point counts as centered.
const CENTER_TOL: f64 = 1e-9;
/// Tighter decrement bound for the final centering; dual estimates read
/// 1/(t*slack) off the last point, so its quality sets certificate quality.
const POLISH_CENTER_TOL: f64 = 1e-14;
/// Looser centering accepted when the decrement stops improving. A point
/// with decrement d is sqrt(2d)-centered, which certifies the duality gap
/// to within a few percent of m/t at this bound; ill-conditioned late-path
/// systems commonly floor between 1e-6 and 1e-4.
const STALL_CENTER_TOL: f64 = 1e-4;
const ARMIJO: f64 = 0.1;
const BACKTRACK: f64 = 0.5;
const RIDGE: f64 = 1e-12;
/// A point is strictly feasible when every row value is at most -this.
const PHASE1_SLACK: f64 = 1e-6;
/// Anchor half-width, in units of (1 + |start value|), for variables that
/// lack finite bounds during phase 1. Kept modest: the anchor is what stops
/// Newton from crawling up the log-flat region a slack-loosening variable
/// creates, and the crawl length grows with the anchor.
const PHASE1_ANCHOR: f64 = 1e3;

/// One reciprocal-gap term weight/(x[var] - shift), convex on x[var] > shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecipTerm {
    pub var: usize,
    pub shift: f64,
    pub weight: f64,
}

/// A row: lin . x + constant + sum of reciprocal terms, compared <= 0 (or
/// = 0 for equalities, which never carry reciprocal terms).
#[derive(Debug, Clone, Default)]
struct Row {
    lin: Vec<(usize, f64)>,
    constant: f64,
    recips: Vec<RecipTerm>,
}

impl Row {
    /// +inf when any reciprocal denominator is non-positive.
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, c) in &self.lin {
            v += c * x[i];
        }
        for r in &self.recips {
            let d = x[r.var] - r.shift;
            if d <= 0.0 {
                return f64::INFINITY;
            }
            v += r.weight / d;
        }
        v
    }

    fn grad(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.extend_from_slice(&self.lin);
        for r in &self.recips {
            let d = x[r.var] - r.shift;
            out.push((r.var, -r.weight / (d * d)));
        }
    }
}

/// Convex program over variables with box bounds. Rows reference variables
/// by the index `add_var` returned.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    names: Vec<String>,
    obj_lin: Vec<f64>,
    obj_recips: Vec<RecipTerm>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    ineqs: Vec<Row>,
    eqs: Vec<Row>,
    start: Option<Vec<f64>>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with box bounds (either side may be infinite).
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        assert!(lower < upper, "variable bounds must leave an interior");
        self.names.push(name.into());
        self.obj_lin.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_ineqs(&self) -> usize {
        self.ineqs.len()
    }

    pub fn var_name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn set_objective_coeff(&mut self, var: usize, coeff: f64) {
        self.obj_lin[var] = coeff;
    }

    /// Adds weight/(x[var] - shift) to the objective and raises the
    /// variable's lower bound to keep the pole outside the feasible box.
    pub fn add_objective_recip(&mut self, var: usize, shift: f64, weight: f64) {
        assert!(weight >= 0.0, "negative reciprocal weights are not convex");
        if weight == 0.0 {
            return;
        }
        self.raise_domain_bound(var, shift);
        self.obj_recips.push(RecipTerm { var, shift, weight });
    }

    /// lin . x + constant <= 0.
    pub fn add_ineq(&mut self, lin: &[(usize, f64)], constant: f64) -> usize {
        self.push_ineq(lin, constant, &[])
    }

    /// lin . x + constant + sum of reciprocal terms <= 0.
    pub fn add_ineq_with_recips(
        &mut self,
        lin: &[(usize, f64)],
        constant: f64,
        recips: &[RecipTerm],
    ) -> usize {
        self.push_ineq(lin, constant, recips)
    }

    /// Epigraph piece: lin . x + constant + recips <= x[epi]. Minimizing the
    /// epigraph variable minimizes the max over its pieces.
    pub fn add_epigraph_piece(
        &mut self,
        epi: usize,
        lin: &[(usize, f64)],
        constant: f64,
        recips: &[RecipTerm],
    ) -> usize {
        let mut full: Vec<(usize, f64)> = lin.to_vec();
        full.push((epi, -1.0));
        self.push_ineq(&full, constant, recips)
    }

    /// lin . x + constant = 0.
    pub fn add_eq(&mut self, lin: &[(usize, f64)], constant: f64) -> usize {
        for &(v, _) in lin {
            assert!(v < self.n_vars());
        }
        self.eqs.push(Row {
            lin: lin.to_vec(),
            constant,
            recips: Vec::new(),
        });
        self.eqs.len() - 1
    }

    pub fn set_start(&mut self, x: Vec<f64>) {
        assert_eq!(x.len(), self.n_vars());
        self.start = Some(x);
    }

    fn push_ineq(&mut self, lin: &[(usize, f64)], constant: f64, recips: &[RecipTerm]) -> usize {
        for &(v, _) in lin {
            assert!(v < self.n_vars());
        }
        let mut kept = Vec::with_capacity(recips.len());
        for r in recips {
            assert!(r.weight >= 0.0, "negative reciprocal weights are not convex");
            if r.weight > 0.0 {
                self.raise_domain_bound(r.var, r.shift);
                kept.push(*r);
            }
        }
        self.ineqs.push(Row {
            lin: lin.to_vec(),
            constant,
            recips: kept,
        });
        self.ineqs.len() - 1
    }

    fn raise_domain_bound(&mut self, var: usize, shift: f64) {
        assert!(var < self.n_vars());
        assert!(
            self.upper[var] > shift + DOMAIN_MARGIN,
            "variable '{}' cannot stay above a reciprocal pole at {}",
            self.names[var],
            shift
        );
        if self.lower[var] < shift + DOMAIN_MARGIN {
            self.lower[var] = shift + DOMAIN_MARGIN;
        }
    }

    /// True objective value; +inf outside a reciprocal domain.
    fn objective(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, &c) in self.obj_lin.iter().enumerate() {
            v += c * x[i];
        }
        for r in &self.obj_recips {
            let d = x[r.var] - r.shift;
            if d <= 0.0 {
                return f64::INFINITY;
            }
            v += r.weight / d;
        }
        v
    }

    fn objective_grad(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::from_column_slice(&self.obj_lin);
        for r in &self.obj_recips {
            let d = x[r.var] - r.shift;
            g[r.var] -= r.weight / (d * d);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveStatus::Optimal => write!(f, "optimal"),
            SolveStatus::Infeasible => write!(f, "infeasible"),
            SolveStatus::IterationLimit => write!(f, "iteration limit"),
        }
    }
}

/// Multipliers for every constraint, split by origin: one per inequality row
/// (in insertion order), one per equality row, and one per finite box bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Multipliers,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

impl SolverResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

enum RowKind {
    User(usize),
    Lower(usize),
    Upper(usize),
}

/// Internal flattened problem: all inequality rows (user rows first, then
/// finite box bounds), plus dense equality data.
struct Flat {
    n: usize,
    rows: Vec<Row>,
    kinds: Vec<RowKind>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    obj_lin: DVector<f64>,
    obj_recips: Vec<RecipTerm>,
}

impl Flat {
    fn build(prog: &ConvexProgram) -> Flat {
        let n = prog.n_vars();
        let mut rows = Vec::new();
        let mut kinds = Vec::new();
        for (i, r) in prog.ineqs.iter().enumerate() {
            rows.push(r.clone());
            kinds.push(RowKind::User(i));
        }
        for v in 0..n {
            if prog.lower[v].is_finite() {
                rows.push(Row {
                    lin: vec![(v, -1.0)],
                    constant: prog.lower[v],
                    recips: Vec::new(),
                });
                kinds.push(RowKind::Lower(v));
            }
            if prog.upper[v].is_finite() {
                rows.push(Row {
                    lin: vec![(v, 1.0)],
                    constant: -prog.upper[v],
                    recips: Vec::new(),
                });
                kinds.push(RowKind::Upper(v));
            }
        }
        let p = prog.eqs.len();
        let mut a_eq = DMatrix::zeros(p, n);
        let mut b_eq = DVector::zeros(p);
        for (j, r) in prog.eqs.iter().enumerate() {
            for &(v, c) in &r.lin {
                a_eq[(j, v)] += c;
            }
            b_eq[j] = -r.constant;
        }
        Flat {
            n,
            rows,
            kinds,
            a_eq,
            b_eq,
            obj_lin: DVector::from_column_slice(&prog.obj_lin),
            obj_recips: prog.obj_recips.clone(),
        }
    }

    fn max_row_value(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Barrier potential t*f0 - sum ln(-f_i); None outside the interior.
    fn potential(&self, t: f64, x: &[f64]) -> Option<f64> {
        let mut v = self.obj_lin.iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>();
        for r in &self.obj_recips {
            let d = x[r.var] - r.shift;
            if d <= 0.0 {
                return None;
            }
            v += r.weight / d;
        }
        let mut phi = t * v;
        for row in &self.rows {
            let f = row.value(x);
            if f >= 0.0 {
                return None;
            }
            phi -= (-f).ln();
        }
        Some(phi)
    }

    /// Gradient and Hessian of the barrier potential at an interior point.
    fn derivatives(&self, t: f64, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut g = self.obj_lin.clone() * t;
        let mut h = DMatrix::zeros(n, n);
        for r in &self.obj_recips {
            let d = x[r.var] - r.shift;
            g[r.var] -= t * r.weight / (d * d);
            h[(r.var, r.var)] += t * 2.0 * r.weight / (d * d * d);
        }
        let mut sg: Vec<(usize, f64)> = Vec::new();
        for row in &self.rows {
            let f = row.value(x);
            debug_assert!(f < 0.0);
            row.grad(x, &mut sg);
            let inv = 1.0 / (-f);
            for &(i, gi) in &sg {
                g[i] += gi * inv;
            }
            let inv2 = inv * inv;
            for &(i, gi) in &sg {
                for &(j, gj) in &sg {
                    h[(i, j)] += gi * gj * inv2;
                }
            }
            for r in &row.recips {
                let d = x[r.var] - r.shift;
                h[(r.var, r.var)] += 2.0 * r.weight / (d * d * d) * inv;
            }
        }
        for i in 0..n {
            h[(i, i)] += RIDGE;
        }
        (g, h)
    }
}

/// Solves a saddle system, falling back to a pseudo-inverse when the LU
/// factorization meets a singular matrix.
fn solve_linear(m: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(x) = m.clone().lu().solve(&rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let svd = m.svd(true, true);
    svd.solve(&rhs, 1e-12).ok().filter(|x| x.iter().all(|v| v.is_finite()))
}

struct CenterOutcome {
    converged: bool,
    newton_steps: usize,
    eq_dual: DVector<f64>,
}

/// Newton descent on the barrier potential at fixed t, staying on the
/// equality manifold. `x` is updated in place; `tol` bounds the Newton
/// decrement^2 / 2 at exit.
fn center(flat: &Flat, t: f64, x: &mut DVector<f64>, tol: f64) -> CenterOutcome {
    let p = flat.a_eq.nrows();
    let n = flat.n;
    let mut eq_dual = DVector::zeros(p);
    let mut prev_decrement = f64::INFINITY;
    for step in 0..MAX_NEWTON_STEPS {
        let (g, h) = flat.derivatives(t, x.as_slice());
        let (dx, w) = if p == 0 {
            match solve_linear(h.clone(), -&g) {
                Some(d) => (d, DVector::zeros(0)),
                None => return CenterOutcome { converged: false, newton_steps: step, eq_dual },
            }
        } else {
            let mut m = DMatrix::zeros(n + p, n + p);
            m.view_mut((0, 0), (n, n)).copy_from(&h);
            m.view_mut((n, 0), (p, n)).copy_from(&flat.a_eq);
            m.view_mut((0, n), (n, p)).copy_from(&flat.a_eq.transpose());
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&g));
            let r_pri = &flat.a_eq * &*x - &flat.b_eq;
            rhs.rows_mut(n, p).copy_from(&(-r_pri));
            match solve_linear(m, rhs) {
                Some(sol) => (sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned()),
                None => return CenterOutcome { converged: false, newton_steps: step, eq_dual },
            }
        };
        if p > 0 {
            eq_dual = w;
        }
        let decrement = (h * &dx).dot(&dx) / 2.0;
        if std::env::var("VNFP_DEBUG_CENTER").is_ok() {
            eprintln!("  center t={t:e} step={step} decrement={decrement:e}");
        }
        if decrement <= tol {
            return CenterOutcome { converged: true, newton_steps: step, eq_dual };
        }
        // Ill-conditioned late-path systems bottom out above `tol`: the
        // computed step stops shrinking the decrement while Armijo still
        // accepts microscopic potential decreases. A plateau this small is
        // a centered point at the numerical floor, not a failure.
        if decrement > 0.9 * prev_decrement && decrement <= STALL_CENTER_TOL {
            return CenterOutcome { converged: true, newton_steps: step, eq_dual };
        }
        prev_decrement = decrement;
        let slope = g.dot(&dx);
        let phi0 = flat
            .potential(t, x.as_slice())
            .expect("current iterate left the interior");
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..100 {
            let cand = &*x + &dx * alpha;
            if let Some(phi) = flat.potential(t, cand.as_slice()) {
                if phi <= phi0 + ARMIJO * alpha * slope {
                    *x = cand;
                    moved = true;
                    break;
                }
            }
            alpha *= BACKTRACK;
        }
        if !moved {
            return CenterOutcome {
                converged: decrement <= STALL_CENTER_TOL,
                newton_steps: step + 1,
                eq_dual,
            };
        }
    }
    CenterOutcome { converged: false, newton_steps: MAX_NEWTON_STEPS, eq_dual }
}

/// Default starting point: box midpoints, then a nudge above every
/// reciprocal pole, then projection onto the equality manifold.
fn initial_point(prog: &ConvexProgram, flat: &Flat) -> DVector<f64> {
    let n = prog.n_vars();
    let mut x = DVector::zeros(n);
    if let Some(s) = &prog.start {
        x.copy_from_slice(s);
    } else {
        for v in 0..n {
            let (lo, hi) = (prog.lower[v], prog.upper[v]);
            x[v] = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0,
                (false, true) => hi - 1.0,
                (false, false) => 0.0,
            };
        }
    }
    // Keep strictly inside finite boxes.
    for v in 0..n {
        let (lo, hi) = (prog.lower[v], prog.upper[v]);
        if lo.is_finite() && hi.is_finite() {
            let pad = 1e-3 * (hi - lo);
            x[v] = x[v].clamp(lo + pad, hi - pad);
        } else if lo.is_finite() && x[v] <= lo {
            x[v] = lo + 1.0;
        } else if hi.is_finite() && x[v] >= hi {
            x[v] = hi - 1.0;
        }
    }
    let mut raise = |v: usize, shift: f64| {
        if x[v] <= shift + DOMAIN_MARGIN {
            let hi = prog.upper[v];
            x[v] = if hi.is_finite() { 0.5 * (shift + hi) } else { shift + 1.0 };
        }
    };
    for r in &prog.obj_recips {
        raise(r.var, r.shift);
    }
    for row in &prog.ineqs {
        for r in &row.recips {
            raise(r.var, r.shift);
        }
    }
    let p = flat.a_eq.nrows();
    if p > 0 {
        // Reciprocal-domain variables must stay clear of equality rows, or
        // this projection could push them back across a pole.
        for row in &prog.eqs {
            for &(v, c) in &row.lin {
                let in_recips = prog.obj_recips.iter().any(|r| r.var == v)
                    || prog.ineqs.iter().any(|q| q.recips.iter().any(|r| r.var == v));
                assert!(
                    !(in_recips && c != 0.0),
                    "variable '{}' carries a reciprocal term and appears in an equality row",
                    prog.names[v]
                );
            }
        }
        let r = &flat.a_eq * &x - &flat.b_eq;
        let gram = &flat.a_eq * flat.a_eq.transpose();
        if let Some(y) = solve_linear(gram, r) {
            x -= flat.a_eq.transpose() * y;
        }
    }
    x
}

/// Logarithmic-barrier solve. Optimal requires the duality-gap estimate
/// m/t <= tol together with constraint violation <= FEASIBILITY_TOL.
///
/// Panics on malformed programs (out-of-range indices, negative reciprocal
/// weights, reciprocal variables inside equality rows, or no inequality
/// constraints at all); those are builder bugs, not runtime conditions.
pub fn solve(prog: &ConvexProgram, tol: f64) -> SolverResult {
    assert!(tol > 0.0);
    let flat = Flat::build(prog);
    assert!(
        !flat.rows.is_empty(),
        "program has no inequality constraints; the barrier needs at least one"
    );
    let mut iterations = 0usize;
    let mut x = initial_point(prog, &flat);

    let mut feasible = flat.max_row_value(x.as_slice()) <= -PHASE1_SLACK;
    if !feasible {
        match phase1(&flat, &mut x, &mut iterations) {
            Phase1::Feasible => feasible = true,
            Phase1::Infeasible => {
                return finish(prog, &flat, &x, 0.0, DVector::zeros(flat.a_eq.nrows()),
                              SolveStatus::Infeasible, iterations);
            }
            Phase1::IterationLimit => {
                return finish(prog, &flat, &x, 0.0, DVector::zeros(flat.a_eq.nrows()),
                              SolveStatus::IterationLimit, iterations);
            }
        }
    }
    debug_assert!(feasible);

    let m = flat.rows.len() as f64;
    // Never push t beyond what the gap target needs; centering gets harder
    // as slacks shrink toward 1/t and overshooting costs conditioning.
    let t_target = m / tol;
    let mut t = T_INITIAL.min(t_target);
    let mut eq_dual = DVector::zeros(flat.a_eq.nrows());
    for _ in 0..MAX_BARRIER_UPDATES {
        let out = center(&flat, t, &mut x, CENTER_TOL);
        iterations += out.newton_steps;
        if std::env::var("VNFP_DEBUG_BARRIER").is_ok() {
            let obj = flat.obj_lin.dot(&x)
                + flat
                    .obj_recips
                    .iter()
                    .map(|r| r.weight / (x[r.var] - r.shift))
                    .sum::<f64>();
            eprintln!(
                "phase2 t={:e} converged={} steps={} obj={:.9}",
                t, out.converged, out.newton_steps, obj
            );
        }
        if flat.a_eq.nrows() > 0 {
            eq_dual = out.eq_dual;
        }
        if !out.converged {
            return finish(prog, &flat, &x, t, eq_dual, SolveStatus::IterationLimit, iterations);
        }
        if m / t <= tol {
            let polish = center(&flat, t, &mut x, POLISH_CENTER_TOL);
            iterations += polish.newton_steps;
            if flat.a_eq.nrows() > 0 && polish.converged {
                eq_dual = polish.eq_dual;
            }
            return finish(prog, &flat, &x, t, eq_dual, SolveStatus::Optimal, iterations);
        }
        t = (t * T_FACTOR).min(t_target);
    }
    finish(prog, &flat, &x, t, eq_dual, SolveStatus::IterationLimit, iterations)
}

enum Phase1 {
    Feasible,
    Infeasible,
    IterationLimit,
}

/// Minimizes the worst violation s over {f_i(x) <= s, s >= -1}, stopping as
/// soon as the incumbent is strictly feasible for the original rows.
///
/// Box rows already strictly satisfied at the start stay hard: relaxing
/// them lets bounded variables wander far outside their boxes through a
/// nearly flat region that Newton crosses very slowly.
///
/// Variables without finite bounds get anchor rows around the start:
/// without them a variable that only loosens rows (an epigraph variable,
/// say) drives the barrier to -infinity and Newton runs away. The
/// infeasibility certificate therefore speaks for the anchored region; a
/// program feasible only beyond PHASE1_ANCHOR times its starting scale is
/// outside what this solver handles.
fn phase1(flat: &Flat, x: &mut DVector<f64>, iterations: &mut usize) -> Phase1 {
    let n = flat.n;
    let s_ix = n;
    let mut rows = Vec::with_capacity(flat.rows.len() + 1);
    for (r, kind) in flat.rows.iter().zip(&flat.kinds) {
        let mut r2 = r.clone();
        let keep_hard = matches!(kind, RowKind::Lower(_) | RowKind::Upper(_))
            && r.value(x.as_slice()) <= -PHASE1_SLACK;
        if !keep_hard {
            r2.lin.push((s_ix, -1.0));
        }
        rows.push(r2);
    }
    rows.push(Row { lin: vec![(s_ix, -1.0)], constant: -1.0, recips: Vec::new() });
    let mut has_lower = vec![false; n];
    let mut has_upper = vec![false; n];
    for kind in &flat.kinds {
        match *kind {
            RowKind::Lower(v) => has_lower[v] = true,
            RowKind::Upper(v) => has_upper[v] = true,
            RowKind::User(_) => {}
        }
    }
    for v in 0..n {
        let radius = PHASE1_ANCHOR * (1.0 + x[v].abs());
        if !has_lower[v] {
            rows.push(Row {
                lin: vec![(v, -1.0)],
                constant: x[v] - radius,
                recips: Vec::new(),
            });
        }
        if !has_upper[v] {
            rows.push(Row {
                lin: vec![(v, 1.0)],
                constant: -(x[v] + radius),
                recips: Vec::new(),
            });
        }
    }
    let p = flat.a_eq.nrows();
    let mut a_eq = DMatrix::zeros(p, n + 1);
    a_eq.view_mut((0, 0), (p, n)).copy_from(&flat.a_eq);
    let mut obj = DVector::zeros(n + 1);
    obj[s_ix] = 1.0;
    let aux = Flat {
        n: n + 1,
        rows,
        kinds: Vec::new(),
        a_eq,
        b_eq: flat.b_eq.clone(),
        obj_lin: obj,
        obj_recips: Vec::new(),
    };
    let worst = flat.max_row_value(x.as_slice());
    assert!(
        worst.is_finite(),
        "initial point sits outside a reciprocal domain; equality projection moved it"
    );
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x);
    z[s_ix] = worst + 1.0;

    let m = aux.rows.len() as f64;
    let mut t = T_INITIAL;
    for _ in 0..MAX_BARRIER_UPDATES {
        let out = center(&aux, t, &mut z, CENTER_TOL);
        *iterations += out.newton_steps;
        if std::env::var("VNFP_DEBUG_BARRIER").is_ok() {
            eprintln!(
                "phase1 t={:e} converged={} steps={} z={:?}",
                t, out.converged, out.newton_steps, z.as_slice()
            );
        }
        let cand = z.rows(0, n).into_owned();
        if flat.max_row_value(cand.as_slice()) <= -PHASE1_SLACK {
            x.copy_from(&cand);
            return Phase1::Feasible;
        }
        if !out.converged {
            break;
        }
        // At a centered point the true minimal violation is at least
        // z[s] - m/t; a positive bound certifies infeasibility.
        if z[s_ix] - m / t > 0.0 {
            x.copy_from(&cand);
            return Phase1::Infeasible;
        }
        t *= T_FACTOR;
    }
    let cand = z.rows(0, n).into_owned();
    if flat.max_row_value(cand.as_slice()) < 0.0 {
        x.copy_from(&cand);
        return Phase1::Feasible;
    }
    Phase1::IterationLimit
}

fn finish(
    prog: &ConvexProgram,
    flat: &Flat,
    x: &DVector<f64>,
    t: f64,
    eq_dual_raw: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
) -> SolverResult {
    let n = prog.n_vars();
    let mut mult = Multipliers {
        ineq: vec![0.0; prog.ineqs.len()],
        eq: vec![0.0; prog.eqs.len()],
        lower: vec![0.0; n],
        upper: vec![0.0; n],
    };
    if status == SolveStatus::Optimal {
        for (row, kind) in flat.rows.iter().zip(&flat.kinds) {
            let f = row.value(x.as_slice());
            let lambda = if f < 0.0 { 1.0 / (t * -f) } else { 0.0 };
            match kind {
                RowKind::User(i) => mult.ineq[*i] = lambda,
                RowKind::Lower(v) => mult.lower[*v] = lambda,
                RowKind::Upper(v) => mult.upper[*v] = lambda,
            }
        }
        let p = prog.eqs.len();
        if p > 0 {
            // The Newton multiplier estimates t*nu; refine by least squares
            // against the true stationarity condition.
            let mut r = prog.objective_grad(x.as_slice());
            let mut sg: Vec<(usize, f64)> = Vec::new();
            for (row, kind) in flat.rows.iter().zip(&flat.kinds) {
                let lambda = match kind {
                    RowKind::User(i) => mult.ineq[*i],
                    RowKind::Lower(v) => mult.lower[*v],
                    RowKind::Upper(v) => mult.upper[*v],
                };
                row.grad(x.as_slice(), &mut sg);
                for &(i, gi) in &sg {
                    r[i] += lambda * gi;
                }
            }
            let gram = &flat.a_eq * flat.a_eq.transpose();
            let rhs = -(&flat.a_eq * &r);
            mult.eq = match solve_linear(gram, rhs) {
                Some(nu) => nu.iter().copied().collect(),
                None => (eq_dual_raw / t).iter().copied().collect(),
            };
        }
    }
    let x_vec: Vec<f64> = x.iter().copied().collect();
    let kkt = check_kkt(prog, &x_vec, &mult);
    let mut status = status;
    if status == SolveStatus::Optimal && kkt.primal > FEASIBILITY_TOL {
        status = SolveStatus::IterationLimit;
    }
    SolverResult {
        objective: prog.objective(&x_vec),
        x: x_vec,
        multipliers: mult,
        status,
        iterations,
        kkt,
    }
}

/// Lagrangian residuals at an arbitrary point: stationarity is the inf-norm
/// of grad f0 + sum lambda_i grad f_i + A^T nu over all constraints
/// including box bounds; primal is the worst violation; complementarity is
/// max |lambda_i * f_i|.
pub fn check_kkt(prog: &ConvexProgram, x: &[f64], m: &Multipliers) -> KktResiduals {
    assert_eq!(x.len(), prog.n_vars());
    assert_eq!(m.ineq.len(), prog.ineqs.len());
    assert_eq!(m.eq.len(), prog.eqs.len());
    let mut r = prog.objective_grad(x);
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut sg: Vec<(usize, f64)> = Vec::new();
    let absorb = |r: &mut DVector<f64>, row: &Row, lambda: f64, primal: &mut f64, comp: &mut f64, sg: &mut Vec<(usize, f64)>| {
        let f = row.value(x);
        *primal = primal.max(f);
        *comp = comp.max((lambda * f).abs());
        if f.is_finite() {
            row.grad(x, sg);
            for &(i, gi) in sg.iter() {
                r[i] += lambda * gi;
            }
        }
    };
    for (row, &lambda) in prog.ineqs.iter().zip(&m.ineq) {
        absorb(&mut r, row, lambda, &mut primal, &mut comp, &mut sg);
    }
    for v in 0..prog.n_vars() {
        if prog.lower[v].is_finite() {
            let row = Row { lin: vec![(v, -1.0)], constant: prog.lower[v], recips: Vec::new() };
            absorb(&mut r, &row, m.lower[v], &mut primal, &mut comp, &mut sg);
        }
        if prog.upper[v].is_finite() {
            let row = Row { lin: vec![(v, 1.0)], constant: -prog.upper[v], recips: Vec::new() };
            absorb(&mut r, &row, m.upper[v], &mut primal, &mut comp, &mut sg);
        }
    }
    for (row, &nu) in prog.eqs.iter().zip(&m.eq) {
        let f = row.value(x);
        primal = primal.max(f.abs());
        for &(i, c) in &row.lin {
            r[i] += nu * c;
        }
    }
    KktResiduals {
        stationarity: r.amax(),
        primal: primal.max(0.0),
        complementarity: comp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Golden-section minimizer used as the independent oracle for the
    /// capacity-split example.
    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let inv_phi = 0.618_033_988_749_894_8;
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = f(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = f(d);
            }
        }
        0.5 * (lo + hi)
    }

    fn split_program() -> ConvexProgram {
        let mut p = ConvexProgram::new();
        let m1 = p.add_var("mu1", 1.0 + DOMAIN_MARGIN, f64::INFINITY);
        let m2 = p.add_var("mu2", 1.0 + DOMAIN_MARGIN, f64::INFINITY);
        p.add_objective_recip(m1, 1.0, 1.0);
        p.add_objective_recip(m2, 1.0, 1.0);
        p.add_ineq(&[(m1, 1.0), (m2, 1.0)], -10.0);
        p
    }

    #[test]
    fn recip_objective_reaches_stationary_point() {
        // minimize 1/(x-1) + x over x >= 1.001: stationarity at x = 2.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 1.001, f64::INFINITY);
        p.set_objective_coeff(x, 1.0);
        p.add_objective_recip(x, 1.0, 1.0);
        let r = solve(&p, 1e-8);
        assert!(r.is_optimal(), "{:?}", r.status);
        assert!((r.x[0] - 2.0).abs() < 1e-4, "x = {}", r.x[0]);
        assert!((r.objective - 3.0).abs() < 1e-6);
    }

    #[test]
    fn epigraph_handles_min_max() {
        // minimize max(x, 2-x): optimum x = 1, value 1.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let t = p.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective_coeff(t, 1.0);
        p.add_epigraph_piece(t, &[(x, 1.0)], 0.0, &[]);
        p.add_epigraph_piece(t, &[(x, -1.0)], 2.0, &[]);
        let r = solve(&p, 1e-8);
        assert!(r.is_optimal());
        assert!((r.x[x] - 1.0).abs() < 1e-5);
        assert!((r.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn capacity_split_matches_golden_section_oracle() {
        // Oracle first: split kappa = 10 between two queues with rate 1 each.
        let oracle = golden_min(|m1| 1.0 / (m1 - 1.0) + 1.0 / (9.0 - m1), 1.001, 8.999);
        assert!((oracle - 5.0).abs() < 1e-6, "oracle found {}", oracle);

        let p = split_program();
        let r = solve(&p, 1e-8);
        assert!(r.is_optimal());
        assert!((r.x[0] - 5.0).abs() < 1e-4);
        assert!((r.x[1] - 5.0).abs() < 1e-4);
        // Capacity row is active; its multiplier matches 1/(mu-1)^2 = 1/16.
        assert!((r.multipliers.ineq[0] - 1.0 / 16.0).abs() < 1e-3);
        assert!(r.kkt.stationarity < 1e-6);
        assert!(r.kkt.complementarity < 1e-6);
    }

    #[test]
    fn kkt_residuals_flag_perturbations() {
        let p = split_program();
        let r = solve(&p, 1e-8);
        assert!(r.kkt.stationarity <= 1e-6);

        let mut bumped = r.x.clone();
        bumped[0] += 0.5;
        let k = check_kkt(&p, &bumped, &r.multipliers);
        assert!(k.stationarity > 1e-2, "stationarity {}", k.stationarity);

        // Zero duals at an interior non-optimal point: residual equals the
        // objective gradient norm, here 1/(3-1)^2 = 0.25.
        let zeros = Multipliers {
            ineq: vec![0.0; 1],
            eq: vec![],
            lower: vec![0.0; 2],
            upper: vec![0.0; 2],
        };
        let k = check_kkt(&p, &[3.0, 3.0], &zeros);
        assert!((k.stationarity - 0.25).abs() < 1e-12);
    }

    #[test]
    fn infeasible_box_and_row_is_detected() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 2.0, f64::INFINITY);
        p.set_objective_coeff(x, 1.0);
        p.add_ineq(&[(x, 1.0)], -1.0); // x <= 1 against x >= 2
        let r = solve(&p, 1e-6);
        assert_eq!(r.status, SolveStatus::Infeasible);
        // The box stays hard during the repair, so the full gap between
        // x >= 2 and x <= 1 shows up as row violation.
        assert!(r.kkt.primal > 0.4, "primal {}", r.kkt.primal);
    }

    #[test]
    fn unbounded_descent_reports_iteration_limit() {
        // minimize x with only x <= 5: unbounded below, never Optimal.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective_coeff(x, 1.0);
        p.add_ineq(&[(x, 1.0)], -5.0);
        let r = solve(&p, 1e-6);
        assert_eq!(r.status, SolveStatus::IterationLimit);
    }

    #[test]
    fn linear_program_duality_gap_is_small() {
        // minimize x + y subject to x + y >= 1 inside [0,10]^2.
        let mut p = ConvexProgram::new();
        let x = p.add_var("x", 0.0, 10.0);
        let y = p.add_var("y", 0.0, 10.0);
        p.set_objective_coeff(x, 1.0);
        p.set_objective_coeff(y, 1.0);
        p.add_ineq(&[(x, -1.0), (y, -1.0)], 1.0);
        let r = solve(&p, 1e-8);
        assert!(r.is_optimal());
        assert!((r.objective - 1.0).abs() < 1e-6);
        // Dual bound: sum of multiplier * row constant over all constraints.
        let dual = r.multipliers.ineq[0] * 1.0
            + r.multipliers.lower[x] * 0.0
            + r.multipliers.lower[y] * 0.0
            + r.multipliers.upper[x] * -10.0
            + r.multipliers.upper[y] * -10.0;
        assert!((r.objective - dual).abs() < 1e-5, "gap {}", r.objective - dual);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut p = split_program();
        p.set_objective_coeff(0, 0.7);
        let x = vec![3.0, 4.2];
        let g = p.objective_grad(&x);
        for i in 0..2 {
            let h = 1e-5;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.objective(&xp) - p.objective(&xm)) / (2.0 * h);
            assert!(
                (g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "var {}: analytic {} vs fd {}",
                i,
                g[i],
                fd
            );
        }
    }

    #[test]
    fn identical_programs_solve_bit_for_bit_identically() {
        let mut a = split_program();
        let mut b = split_program();
        a.set_start(vec![2.0, 3.0]);
        b.set_start(vec![2.0, 3.0]);
        let ra = solve(&a, 1e-8);
        let rb = solve(&b, 1e-8);
        assert_eq!(ra.iterations, rb.iterations);
        for (va, vb) in ra.x.iter().zip(&rb.x) {
            assert_eq!(va.to_bits(), vb.to_bits());
        }
        assert_eq!(ra.objective.to_bits(), rb.objective.to_bits());
    }

    #[test]
    fn phase1_recovers_from_infeasible_start() {
        let mut p = split_program();
        p.set_start(vec![0.5, 30.0]); // violates domain and capacity row
        let r = solve(&p, 1e-8);
        assert!(r.is_optimal());
        assert!((r.x[0] - 5.0).abs() < 1e-4);
        assert!((r.x[1] - 5.0).abs() < 1e-4);
    }

    #[test]
    fn equality_rows_are_respected() {
        // minimize 1/(x-0) + 1/(y-0) with x + y = 4 fixed by an equality on
        // auxiliary shares: use plain vars u,v with u+v=1 and x=4u, y=4v.
        let mut p = ConvexProgram::new();
        let u = p.add_var("u", 0.0, 1.0);
        let v = p.add_var("v", 0.0, 1.0);
        let x = p.add_var("x", DOMAIN_MARGIN, f64::INFINITY);
        let y = p.add_var("y", DOMAIN_MARGIN, f64::INFINITY);
        p.add_eq(&[(u, 1.0), (v, 1.0)], -1.0);
        // x <= 4u, y <= 4v force the shares to fund the rates.
        p.add_ineq(&[(x, 1.0), (u, -4.0)], 0.0);
        p.add_ineq(&[(y, 1.0), (v, -4.0)], 0.0);
        p.add_objective_recip(x, 0.0, 1.0);
        p.add_objective_recip(y, 0.0, 1.0);
        let r = solve(&p, 1e-8);
        assert!(r.is_optimal());
        assert!((r.x[u] - 0.5).abs() < 1e-4);
        assert!((r.x[x] - 2.0).abs() < 1e-3);
        assert!(r.kkt.primal <= FEASIBILITY_TOL);
    }
}
