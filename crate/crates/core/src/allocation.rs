//! CPU allocation for a fixed placement: the general convex path, the
//! multiplier certificate, and a fast path that solves the full-load
//! equality system directly when the criticality graph is strongly
//! connected.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::convex::{self, ConvexProgram, RecipTerm, SolveStatus};
use crate::model::{feasible_capacity_check, CpuAllocation, Placement, ValidatedInstance};
use crate::traffic::{self, LinkViolation};

/// Duality-gap tolerance used for allocation solves; tight enough that the
/// recovered multipliers certify optimality to 1e-6.
pub const ALLOCATION_TOL: f64 = 1e-8;
/// A class is critical when its delay ratio is within this of the maximum.
pub const CRITICAL_TOL: f64 = 1e-6;
/// A host is strained when its allocated capacity is within this of full.
pub const STRAINED_TOL: f64 = 1e-6;
/// Visit counts below this are treated as "class does not traverse queue".
pub const VISIT_EPS: f64 = 1e-12;
/// Residual norm at which the full-load Newton solve is accepted.
const NEWTON_TOL: f64 = 1e-11;
const NEWTON_MAX_STEPS: usize = 100;
const NEWTON_MAX_HALVINGS: usize = 50;
/// Fraction of host slack granted at the starting point of the barrier
/// path; strictly below 1 so the start is interior.
const START_HEADROOM: f64 = 0.9;

/// Residuals of the first-order optimality system in multiplier form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateResiduals {
    /// |1 - sum of class multipliers|.
    pub multiplier_sum: f64,
    /// Worst per-queue stationarity defect.
    pub stationarity: f64,
    /// Worst constraint violation (stability, capacity, delay bounds).
    pub primal: f64,
    /// How far below zero any multiplier sits.
    pub dual: f64,
    /// Worst |multiplier * constraint slack| product.
    pub slackness: f64,
}

impl CertificateResiduals {
    pub fn within(&self, tol: f64) -> bool {
        self.multiplier_sum <= tol
            && self.stationarity <= tol
            && self.primal <= tol
            && self.dual <= 1e-9
            && self.slackness <= tol
    }
}

/// Optimality certificate: one multiplier per queue stability constraint
/// (m_q), per host capacity constraint (m_h), and per class delay-ratio
/// constraint (m_k), plus the achieved objective.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    pub m_q: Vec<f64>,
    pub m_h: Vec<f64>,
    pub m_k: Vec<f64>,
    pub rho: f64,
    pub residuals: CertificateResiduals,
}

#[derive(Debug, Clone)]
pub struct Allocation {
    pub alloc: CpuAllocation,
    pub rho: f64,
    pub certificate: KktCertificate,
    /// True when the full-load equality system produced this result.
    pub used_fast_path: bool,
}

#[derive(Debug, Clone)]
pub enum AllocError {
    InfeasiblePlacement { detail: String },
    LinkCapacityViolated { violations: Vec<LinkViolation> },
    Solver { status: SolveStatus },
}

impl fmt::Display for AllocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocError::InfeasiblePlacement { detail } => {
                write!(f, "placement admits no stable allocation: {detail}")
            }
            AllocError::LinkCapacityViolated { violations } => {
                write!(f, "{} link capacity violations", violations.len())
            }
            AllocError::Solver { status } => write!(f, "allocation solver stopped: {status}"),
        }
    }
}

impl std::error::Error for AllocError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FullLoadError {
    /// Criticality graph is not strongly connected.
    PreconditionViolated,
    NewtonDiverged,
}

impl fmt::Display for FullLoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FullLoadError::PreconditionViolated => {
                write!(f, "criticality graph is not strongly connected")
            }
            FullLoadError::NewtonDiverged => write!(f, "full-load Newton solve diverged"),
        }
    }
}

impl std::error::Error for FullLoadError {}

/// Chooses the allocation path: the full-load equality system when the
/// criticality graph is strongly connected and its result passes the
/// certificate check, the barrier solve otherwise. Strong connectivity is
/// sufficient, not necessary, so the numerical verdict has the last word.
pub fn allocate(
    inst: &ValidatedInstance,
    placement: &Placement,
) -> Result<Allocation, AllocError> {
    allocate_with_tol(inst, placement, ALLOCATION_TOL)
}

pub fn allocate_with_tol(
    inst: &ValidatedInstance,
    placement: &Placement,
    tol: f64,
) -> Result<Allocation, AllocError> {
    let graph = build_criticality_graph(inst, placement);
    if is_strongly_connected(&graph) {
        if let Ok(result) = full_load_solve(inst, placement) {
            if result.certificate.residuals.within(1e-6) {
                return Ok(result);
            }
        }
    }
    optimize_allocation_with_tol(inst, placement, tol)
}

/// General path: minimize the worst delay ratio over service rates, with
/// per-host capacity rows and per-queue stability bounds, through the
/// barrier solver. Returns the allocation with its multiplier certificate.
pub fn optimize_allocation(
    inst: &ValidatedInstance,
    placement: &Placement,
) -> Result<Allocation, AllocError> {
    optimize_allocation_with_tol(inst, placement, ALLOCATION_TOL)
}

pub fn optimize_allocation_with_tol(
    inst: &ValidatedInstance,
    placement: &Placement,
    tol: f64,
) -> Result<Allocation, AllocError> {
    let violations = traffic::link_flows(inst, placement).violations;
    if !violations.is_empty() {
        return Err(AllocError::LinkCapacityViolated { violations });
    }
    if !feasible_capacity_check(inst, placement) {
        return Err(AllocError::InfeasiblePlacement {
            detail: "aggregate arrival rate exceeds host capacity".into(),
        });
    }
    let tr = inst.traffic();
    let nq = inst.n_queues();
    let nh = inst.n_hosts();
    let margin = inst.stability_margin;

    let mut prog = ConvexProgram::new();
    let mu_vars: Vec<usize> = (0..nq)
        .map(|q| {
            prog.add_var(
                format!("mu_{}", inst.queues[q].id),
                tr.big_lambda[q] + margin,
                f64::INFINITY,
            )
        })
        .collect();
    let rho_var = prog.add_var("rho", f64::NEG_INFINITY, f64::INFINITY);
    prog.set_objective_coeff(rho_var, 1.0);

    let mut host_rows = vec![usize::MAX; nh];
    for h in 0..nh {
        let lin: Vec<(usize, f64)> = placement
            .queues_at(h)
            .map(|q| (mu_vars[q], 1.0))
            .collect();
        if lin.is_empty() {
            continue;
        }
        host_rows[h] = prog.add_ineq(&lin, -inst.hosts[h].kappa);
    }
    let net = traffic::network_latency(inst, placement);
    let mut class_rows = Vec::with_capacity(inst.n_classes());
    let mut class_pieces = Vec::with_capacity(inst.n_classes());
    for (k, class) in inst.classes.iter().enumerate() {
        let recips: Vec<RecipTerm> = (0..nq)
            .filter(|&q| tr.gamma[k][q] > 0.0)
            .map(|q| RecipTerm {
                var: mu_vars[q],
                shift: tr.big_lambda[q],
                weight: tr.gamma[k][q] / class.qos_delay,
            })
            .collect();
        class_rows.push(prog.add_epigraph_piece(rho_var, &[], net[k] / class.qos_delay, &recips));
        class_pieces.push((net[k] / class.qos_delay, recips));
    }

    // Start interior: grant each queue an equal share of 90% of its host's
    // slack, and set the epigraph variable above the resulting worst ratio.
    let mut start = vec![0.0; prog.n_vars()];
    for h in 0..nh {
        let queues: Vec<usize> = placement.queues_at(h).collect();
        if queues.is_empty() {
            continue;
        }
        let slack = inst.hosts[h].kappa
            - queues.iter().map(|&q| tr.big_lambda[q]).sum::<f64>();
        for &q in &queues {
            start[mu_vars[q]] = tr.big_lambda[q] + START_HEADROOM * slack / queues.len() as f64;
        }
    }
    let start_alloc = CpuAllocation {
        mu: (0..nq).map(|q| start[mu_vars[q]]).collect(),
    };
    match traffic::class_delays(inst, placement, &start_alloc) {
        Ok(d) => start[rho_var] = d.objective * 1.1 + 0.1,
        Err(_) => {
            return Err(AllocError::InfeasiblePlacement {
                detail: "no interior starting point exists".into(),
            })
        }
    }
    prog.set_start(start);

    let result = convex::solve(&prog, tol);
    match result.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(AllocError::InfeasiblePlacement {
                detail: "allocation program certified infeasible".into(),
            })
        }
        status => return Err(AllocError::Solver { status }),
    }

    let mu: Vec<f64> = mu_vars.iter().map(|&v| result.x[v]).collect();
    let rho = result.x[rho_var];
    let m_q: Vec<f64> = mu_vars.iter().map(|&v| result.multipliers.lower[v]).collect();
    let m_h: Vec<f64> = host_rows
        .iter()
        .map(|&r| if r == usize::MAX { 0.0 } else { result.multipliers.ineq[r] })
        .collect();
    let m_k: Vec<f64> = class_rows.iter().map(|&r| result.multipliers.ineq[r]).collect();

    let alloc = CpuAllocation { mu };
    let delays = traffic::class_delays(inst, placement, &alloc).expect("optimal point is stable");
    // The ratios the solver constrained (program pieces) must agree with the
    // ratios the queueing formulas produce; disagreement means the program
    // was assembled wrong.
    for (k, (constant, recips)) in class_pieces.iter().enumerate() {
        let piece = constant
            + recips
                .iter()
                .map(|r| r.weight / (result.x[r.var] - r.shift))
                .sum::<f64>();
        assert!(
            (delays.ratio[k] - piece).abs() <= 1e-6 * piece.abs().max(1.0),
            "delay recomputation drifted from the solved epigraph"
        );
    }
    let residuals = certificate_residuals(inst, placement, &alloc, rho, &m_q, &m_h, &m_k);
    Ok(Allocation {
        alloc,
        rho,
        certificate: KktCertificate { m_q, m_h, m_k, rho, residuals },
        used_fast_path: false,
    })
}

/// Residuals of the multiplier system at (mu, rho, M): per-queue
/// stationarity, the unit sum over class multipliers, primal feasibility,
/// multiplier nonnegativity, and the three slackness products.
pub fn certificate_residuals(
    inst: &ValidatedInstance,
    placement: &Placement,
    alloc: &CpuAllocation,
    rho: f64,
    m_q: &[f64],
    m_h: &[f64],
    m_k: &[f64],
) -> CertificateResiduals {
    let tr = inst.traffic();
    let nq = inst.n_queues();
    let nh = inst.n_hosts();
    let delays = traffic::class_delays(inst, placement, alloc)
        .expect("certificate evaluation requires a stable allocation");

    let multiplier_sum = (1.0 - m_k.iter().sum::<f64>()).abs();

    let mut stationarity: f64 = 0.0;
    for q in 0..nq {
        let gap = alloc.mu[q] - tr.big_lambda[q];
        let pull: f64 = (0..inst.n_classes())
            .map(|k| m_k[k] * tr.gamma[k][q] / (inst.classes[k].qos_delay * gap * gap))
            .sum();
        stationarity = stationarity.max((-m_q[q] + m_h[placement.host_of(q)] - pull).abs());
    }

    let mut primal: f64 = 0.0;
    let mut slackness: f64 = 0.0;
    for q in 0..nq {
        let x_q = tr.big_lambda[q] - alloc.mu[q];
        primal = primal.max(x_q);
        slackness = slackness.max((m_q[q] * x_q).abs());
    }
    for h in 0..nh {
        let y_h = placement.queues_at(h).map(|q| alloc.mu[q]).sum::<f64>() - inst.hosts[h].kappa;
        primal = primal.max(y_h);
        slackness = slackness.max((m_h[h] * y_h).abs());
    }
    for k in 0..inst.n_classes() {
        let w_k = delays.ratio[k] - rho;
        primal = primal.max(w_k);
        slackness = slackness.max((m_k[k] * w_k).abs());
    }

    let dual = -m_q
        .iter()
        .chain(m_h)
        .chain(m_k)
        .fold(f64::INFINITY, |a, &b| a.min(b))
        .min(0.0);

    CertificateResiduals {
        multiplier_sum,
        stationarity,
        primal: primal.max(0.0),
        dual: dual.max(0.0),
        slackness,
    }
}

/// Directed graph over hosts, queues, and classes that decides when the
/// full-load shortcut applies: a host and each queue placed on it point at
/// each other; a class points at every queue it visits; a queue points back
/// at a class only when that class is the sole visitor.
#[derive(Debug, Clone)]
pub struct CriticalityGraph {
    pub n_hosts: usize,
    pub n_queues: usize,
    pub n_classes: usize,
    /// Adjacency by vertex index: hosts, then queues, then classes.
    pub adj: Vec<Vec<usize>>,
}

impl CriticalityGraph {
    pub fn n_vertices(&self) -> usize {
        self.n_hosts + self.n_queues + self.n_classes
    }

    pub fn host_vertex(&self, h: usize) -> usize {
        h
    }

    pub fn queue_vertex(&self, q: usize) -> usize {
        self.n_hosts + q
    }

    pub fn class_vertex(&self, k: usize) -> usize {
        self.n_hosts + self.n_queues + k
    }
}

pub fn build_criticality_graph(
    inst: &ValidatedInstance,
    placement: &Placement,
) -> CriticalityGraph {
    let tr = inst.traffic();
    let (nh, nq, nk) = (inst.n_hosts(), inst.n_queues(), inst.n_classes());
    let mut g = CriticalityGraph {
        n_hosts: nh,
        n_queues: nq,
        n_classes: nk,
        adj: vec![Vec::new(); nh + nq + nk],
    };
    for q in 0..nq {
        let hv = placement.host_of(q);
        let qv = nh + q;
        g.adj[hv].push(qv);
        g.adj[qv].push(hv);
    }
    for k in 0..nk {
        for q in 0..nq {
            if tr.gamma[k][q] > VISIT_EPS {
                g.adj[nh + nq + k].push(nh + q);
            }
        }
    }
    for q in 0..nq {
        let visitors: Vec<usize> = (0..nk).filter(|&k| tr.gamma[k][q] > VISIT_EPS).collect();
        if let [sole] = visitors[..] {
            g.adj[nh + q].push(nh + nq + sole);
        }
    }
    g
}

/// Kosaraju over the small three-layer graph; true when a single strongly
/// connected component spans every vertex that has any edge. Hosts with no
/// placed queue are isolated by construction and do not take part: their
/// capacity constraints are slack, so their multipliers vanish and the
/// full-load system simply omits them.
pub fn is_strongly_connected(g: &CriticalityGraph) -> bool {
    let n = g.n_vertices();
    let mut rev = vec![Vec::new(); n];
    let mut active = vec![false; n];
    for (v, outs) in g.adj.iter().enumerate() {
        for &w in outs {
            rev[w].push(v);
            active[v] = true;
            active[w] = true;
        }
    }
    let n_active = active.iter().filter(|&&a| a).count();
    let Some(start) = active.iter().position(|&a| a) else {
        return true;
    };
    let reached = |adj: &[Vec<usize>]| -> usize {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(v) = stack.pop() {
            count += 1;
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        count
    };
    reached(&g.adj) == n_active && reached(&rev) == n_active
}

/// Full-load fast path: with every class critical and every host strained,
/// the optimum satisfies an equality system in (mu, rho, M_h, M_k) built
/// from per-queue stationarity, the unit multiplier sum, exact host
/// saturation, and per-class delay ratios equal to rho. Solved by damped
/// Newton from the proportional-share point; the caller cross-checks the
/// certificate because strong connectivity is only a sufficient condition.
pub fn full_load_solve(
    inst: &ValidatedInstance,
    placement: &Placement,
) -> Result<Allocation, FullLoadError> {
    let graph = build_criticality_graph(inst, placement);
    if !is_strongly_connected(&graph) {
        return Err(FullLoadError::PreconditionViolated);
    }
    let tr = inst.traffic();
    let (nh, nq, nk) = (inst.n_hosts(), inst.n_queues(), inst.n_classes());
    // Only hosts that carry a queue appear in the system; empty hosts keep
    // multiplier zero and their capacity row slack.
    let used: Vec<usize> = (0..nh)
        .filter(|&h| placement.queues_at(h).next().is_some())
        .collect();
    let mut uh_of = vec![usize::MAX; nh];
    for (uh, &h) in used.iter().enumerate() {
        uh_of[h] = uh;
    }
    let nu = used.len();
    let n = nq + 1 + nu + nk;
    let (i_mu, i_rho, i_mh, i_mk) = (0, nq, nq + 1, nq + 1 + nu);
    let net = traffic::network_latency(inst, placement);

    // Full proportional share start: used hosts saturated exactly.
    let mut z = DVector::zeros(n);
    for &h in &used {
        let queues: Vec<usize> = placement.queues_at(h).collect();
        let slack =
            inst.hosts[h].kappa - queues.iter().map(|&q| tr.big_lambda[q]).sum::<f64>();
        if slack <= 0.0 {
            return Err(FullLoadError::NewtonDiverged);
        }
        for &q in &queues {
            z[i_mu + q] = tr.big_lambda[q] + slack / queues.len() as f64;
        }
    }
    let ratio_at = |z: &DVector<f64>, k: usize| -> f64 {
        let mut d = net[k];
        for q in 0..nq {
            d += tr.gamma[k][q] / (z[i_mu + q] - tr.big_lambda[q]);
        }
        d / inst.classes[k].qos_delay
    };
    z[i_rho] = (0..nk).map(|k| ratio_at(&z, k)).fold(f64::MIN, f64::max);
    for k in 0..nk {
        z[i_mk + k] = 1.0 / nk as f64;
    }
    for (uh, &h) in used.iter().enumerate() {
        let queues: Vec<usize> = placement.queues_at(h).collect();
        let mean = queues
            .iter()
            .map(|&q| {
                let gap = z[i_mu + q] - tr.big_lambda[q];
                (0..nk)
                    .map(|k| {
                        z[i_mk + k] * tr.gamma[k][q]
                            / (inst.classes[k].qos_delay * gap * gap)
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / queues.len() as f64;
        z[i_mh + uh] = mean;
    }

    let residual = |z: &DVector<f64>| -> Option<DVector<f64>> {
        let mut f = DVector::zeros(n);
        for q in 0..nq {
            let gap = z[i_mu + q] - tr.big_lambda[q];
            if gap <= 0.0 {
                return None;
            }
            let pull: f64 = (0..nk)
                .map(|k| z[i_mk + k] * tr.gamma[k][q] / (inst.classes[k].qos_delay * gap * gap))
                .sum();
            f[q] = z[i_mh + uh_of[placement.host_of(q)]] - pull;
        }
        f[nq] = (0..nk).map(|k| z[i_mk + k]).sum::<f64>() - 1.0;
        for (uh, &h) in used.iter().enumerate() {
            f[nq + 1 + uh] =
                placement.queues_at(h).map(|q| z[i_mu + q]).sum::<f64>() - inst.hosts[h].kappa;
        }
        for k in 0..nk {
            f[nq + 1 + nu + k] = ratio_at(z, k) - z[i_rho];
        }
        Some(f)
    };

    let mut f = residual(&z).ok_or(FullLoadError::NewtonDiverged)?;
    for _ in 0..NEWTON_MAX_STEPS {
        if f.amax() <= NEWTON_TOL {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for q in 0..nq {
            let gap = z[i_mu + q] - tr.big_lambda[q];
            jac[(q, i_mu + q)] = (0..nk)
                .map(|k| {
                    2.0 * z[i_mk + k] * tr.gamma[k][q]
                        / (inst.classes[k].qos_delay * gap * gap * gap)
                })
                .sum();
            jac[(q, i_mh + uh_of[placement.host_of(q)])] = 1.0;
            for k in 0..nk {
                jac[(q, i_mk + k)] =
                    -tr.gamma[k][q] / (inst.classes[k].qos_delay * gap * gap);
            }
        }
        for k in 0..nk {
            jac[(nq, i_mk + k)] = 1.0;
        }
        for (uh, &h) in used.iter().enumerate() {
            for q in placement.queues_at(h) {
                jac[(nq + 1 + uh, i_mu + q)] = 1.0;
            }
        }
        for k in 0..nk {
            for q in 0..nq {
                let gap = z[i_mu + q] - tr.big_lambda[q];
                jac[(nq + 1 + nu + k, i_mu + q)] =
                    -tr.gamma[k][q] / (inst.classes[k].qos_delay * gap * gap);
            }
            jac[(nq + 1 + nu + k, i_rho)] = -1.0;
        }
        let dz = solve_newton_system(jac, -&f).ok_or(FullLoadError::NewtonDiverged)?;
        let norm0 = f.amax();
        let mut alpha = 1.0;
        let mut advanced = false;
        for _ in 0..NEWTON_MAX_HALVINGS {
            let cand = &z + &dz * alpha;
            if let Some(fc) = residual(&cand) {
                if fc.amax() < norm0 {
                    z = cand;
                    f = fc;
                    advanced = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !advanced {
            return Err(FullLoadError::NewtonDiverged);
        }
    }
    if f.amax() > NEWTON_TOL {
        return Err(FullLoadError::NewtonDiverged);
    }

    let alloc = CpuAllocation {
        mu: (0..nq).map(|q| z[i_mu + q]).collect(),
    };
    let rho = z[i_rho];
    let m_q = vec![0.0; nq];
    let m_h: Vec<f64> = (0..nh)
        .map(|h| if uh_of[h] == usize::MAX { 0.0 } else { z[i_mh + uh_of[h]] })
        .collect();
    let m_k: Vec<f64> = (0..nk).map(|k| z[i_mk + k]).collect();
    let residuals = certificate_residuals(inst, placement, &alloc, rho, &m_q, &m_h, &m_k);
    Ok(Allocation {
        alloc,
        rho,
        certificate: KktCertificate { m_q, m_h, m_k, rho, residuals },
        used_fast_path: true,
    })
}

fn solve_newton_system(jac: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(x) = jac.clone().lu().solve(&rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    jac.svd(true, true)
        .solve(&rhs, 1e-12)
        .ok()
        .filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Hosts whose entire capacity is allocated (within STRAINED_TOL).
pub fn strained_hosts(
    inst: &ValidatedInstance,
    placement: &Placement,
    alloc: &CpuAllocation,
) -> Vec<bool> {
    (0..inst.n_hosts())
        .map(|h| {
            let used: f64 = placement.queues_at(h).map(|q| alloc.mu[q]).sum();
            (inst.hosts[h].kappa - used).abs() <= STRAINED_TOL
                && placement.queues_at(h).next().is_some()
        })
        .collect()
}

/// Classes whose delay ratio attains the objective (within CRITICAL_TOL).
pub fn critical_classes(delays: &crate::traffic::DelayBreakdown) -> Vec<bool> {
    delays
        .ratio
        .iter()
        .map(|&r| (delays.objective - r) <= CRITICAL_TOL)
        .collect()
}

/// Every host traversed by a critical class is strained.
pub fn hosts_of_critical_classes_strained(
    inst: &ValidatedInstance,
    placement: &Placement,
    alloc: &CpuAllocation,
) -> bool {
    let delays = match traffic::class_delays(inst, placement, alloc) {
        Ok(d) => d,
        Err(_) => return false,
    };
    let critical = critical_classes(&delays);
    let strained = strained_hosts(inst, placement, alloc);
    let tr = inst.traffic();
    for (k, &is_critical) in critical.iter().enumerate() {
        if !is_critical {
            continue;
        }
        for q in 0..inst.n_queues() {
            if tr.gamma[k][q] > VISIT_EPS && !strained[placement.host_of(q)] {
                return false;
            }
        }
    }
    true
}

/// Every queue on a strained host serves at least one critical class.
pub fn strained_hosts_serve_critical_classes(
    inst: &ValidatedInstance,
    placement: &Placement,
    alloc: &CpuAllocation,
) -> bool {
    let delays = match traffic::class_delays(inst, placement, alloc) {
        Ok(d) => d,
        Err(_) => return false,
    };
    let critical = critical_classes(&delays);
    let strained = strained_hosts(inst, placement, alloc);
    let tr = inst.traffic();
    for q in 0..inst.n_queues() {
        if !strained[placement.host_of(q)] {
            continue;
        }
        let served = (0..inst.n_classes())
            .any(|k| critical[k] && tr.gamma[k][q] > VISIT_EPS);
        if !served {
            return false;
        }
    }
    true
}
