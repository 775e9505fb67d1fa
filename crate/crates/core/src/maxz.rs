//! Iterative placement heuristic: solve a convex relaxation of the joint
//! placement/allocation problem, score every host-VNF pair by how confident
//! the relaxation is about the assignment, fix the highest-scoring pair, and
//! repeat until every VNF instance is placed.
//!
//! The relaxation replaces binary assignment with fractional a_tilde in
//! [0,1], products of assignments with envelope variables phi (bounded by
//! phi <= a_tilde(h,q), phi <= a_tilde(l,r), phi >= sum - 1), and the
//! assignment-weighted capacity share with psi (psi <= a_tilde, per-host sum
//! <= 1, and mu(q) <= sum_h psi(h,q) kappa_h tying allocation to placement).
//! Already-fixed assignments collapse their variables: a_tilde becomes a
//! constant, phi degenerates to a constant or an alias of the free end.

use std::collections::BTreeMap;
use std::fmt;

use crate::convex::{self, ConvexProgram, RecipTerm, SolveStatus};
use crate::model::{Placement, ValidatedInstance};

/// Duality-gap tolerance for relaxation solves.
pub const RELAXATION_TOL: f64 = 1e-6;
/// Slack granted when testing the capacity-share indicator.
const INDICATOR_TOL: f64 = 1e-9;
/// Scores closer than this count as tied and fall to the index tie-break.
const Z_TIE_TOL: f64 = 1e-7;
/// Fraction of available range used when seeding interior starting points.
const START_FILL: f64 = 0.9;
/// Largest relative discount applied by the ordered-pair delay tie-break.
const DELAY_TIE_BREAK: f64 = 1e-3;

/// Assignment state while the heuristic runs: each VNF instance is either
/// fixed on a host or still fractional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialPlacement {
    host_of: Vec<Option<usize>>,
}

impl PartialPlacement {
    pub fn empty(n_queues: usize) -> Self {
        PartialPlacement { host_of: vec![None; n_queues] }
    }

    pub fn fix(&mut self, queue: usize, host: usize) {
        assert!(self.host_of[queue].is_none(), "assignments never change once fixed");
        self.host_of[queue] = Some(host);
    }

    pub fn host_of(&self, queue: usize) -> Option<usize> {
        self.host_of[queue]
    }

    pub fn n_queues(&self) -> usize {
        self.host_of.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.host_of.iter().filter(|h| h.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.host_of.iter().all(|h| h.is_some())
    }

    pub fn into_placement(self) -> Option<Placement> {
        let hosts: Option<Vec<usize>> = self.host_of.into_iter().collect();
        hosts.map(Placement::new)
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Var(usize),
    Fixed(f64),
}

impl Slot {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Slot::Var(v) => x[v],
            Slot::Fixed(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum PhiSlot {
    Var(usize),
    /// Product with one end fixed to 1: equals the free end's a_tilde.
    Alias(usize),
    Fixed(f64),
    /// Pair not needed by any delay or link row; reported as the product.
    Untracked,
}

/// Fractional solution of one relaxation solve.
#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    /// a_tilde[h][q]: fractional assignment.
    pub a_tilde: Vec<Vec<f64>>,
    /// psi[h][q]: fractional capacity share.
    pub psi: Vec<Vec<f64>>,
    pub phi: PhiTable,
    pub mu: Vec<f64>,
    pub rho: f64,
}

/// Product envelope values indexed by (host, host, queue, queue).
#[derive(Debug, Clone)]
pub struct PhiTable {
    nh: usize,
    nq: usize,
    data: Vec<f64>,
}

impl PhiTable {
    pub fn get(&self, h: usize, l: usize, q: usize, r: usize) -> f64 {
        self.data[((h * self.nh + l) * self.nq + q) * self.nq + r]
    }
}

/// Confidence scores: fractional assignment plus one when the capacity share
/// clears the queue's load fraction of the host.
#[derive(Debug, Clone)]
pub struct ZScoreTable {
    /// z[h][q] in [0,2].
    pub z: Vec<Vec<f64>>,
    /// Queues already fixed; excluded from the argmax.
    pub placed: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct MaxZIteration {
    pub relaxed: RelaxedSolution,
    pub scores: ZScoreTable,
    /// (host, queue) fixed at the end of this iteration.
    pub chosen: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct MaxZOutcome {
    pub placement: Placement,
    pub trace: Vec<MaxZIteration>,
}

#[derive(Debug, Clone)]
pub enum MaxZError {
    /// No host can accept any remaining VNF without exceeding capacity.
    Infeasible { queue: Option<usize> },
    Solver { status: SolveStatus },
}

impl fmt::Display for MaxZError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxZError::Infeasible { queue: Some(q) } => {
                write!(f, "no host can accept VNF instance {q}")
            }
            MaxZError::Infeasible { queue: None } => write!(f, "relaxation certified infeasible"),
            MaxZError::Solver { status } => write!(f, "relaxation solver stopped: {status}"),
        }
    }
}

impl std::error::Error for MaxZError {}

/// Relaxation program together with the variable bookkeeping needed to read
/// a solution back out.
pub struct Relaxation {
    pub prog: ConvexProgram,
    nh: usize,
    nq: usize,
    a: Vec<Slot>,
    psi: Vec<Slot>,
    mu: Vec<usize>,
    rho: usize,
    edge_of: Vec<Option<usize>>,
    phi: Vec<PhiSlot>,
}

impl Relaxation {
    fn a_slot(&self, h: usize, q: usize) -> Slot {
        self.a[h * self.nq + q]
    }

    fn phi_slot(&self, e: usize, h: usize, l: usize) -> PhiSlot {
        self.phi[(e * self.nh + h) * self.nh + l]
    }

    /// Solves the relaxation and reads the fractional solution back.
    pub fn solve(&self, tol: f64) -> Result<RelaxedSolution, MaxZError> {
        let result = convex::solve(&self.prog, tol);
        match result.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(MaxZError::Infeasible { queue: None }),
            status => return Err(MaxZError::Solver { status }),
        }
        let x = &result.x;
        let (nh, nq) = (self.nh, self.nq);
        let a_tilde: Vec<Vec<f64>> = (0..nh)
            .map(|h| (0..nq).map(|q| self.a_slot(h, q).value(x)).collect())
            .collect();
        let psi: Vec<Vec<f64>> = (0..nh)
            .map(|h| (0..nq).map(|q| self.psi[h * nq + q].value(x)).collect())
            .collect();
        let mu: Vec<f64> = self.mu.iter().map(|&v| x[v]).collect();
        let mut data = vec![0.0; nh * nh * nq * nq];
        for h in 0..nh {
            for l in 0..nh {
                for q in 0..nq {
                    for r in 0..nq {
                        let idx = ((h * nh + l) * nq + q) * nq + r;
                        let tracked = self.edge_of[q * nq + r]
                            .map(|e| self.phi_slot(e, h, l))
                            .unwrap_or(PhiSlot::Untracked);
                        data[idx] = match tracked {
                            PhiSlot::Var(v) => x[v],
                            PhiSlot::Alias(v) => x[v],
                            PhiSlot::Fixed(c) => c,
                            PhiSlot::Untracked => a_tilde[h][q] * a_tilde[l][r],
                        };
                    }
                }
            }
        }
        Ok(RelaxedSolution {
            a_tilde,
            psi,
            phi: PhiTable { nh, nq, data },
            mu,
            rho: x[self.rho],
        })
    }
}

/// Builds the relaxation for the given partial assignment. Free VNFs get
/// fractional assignment variables summing to one across hosts; fixed VNFs
/// enter as constants, collapsing their product and share variables.
/// Delay coefficient used inside the relaxation for an ordered host pair.
/// Every pair gets a distinct discount strictly below one so interchangeable
/// hosts never tie: a tied remote share otherwise smears across hosts at the
/// barrier's analytic center and stays invisible to the score indicator. The
/// discount is deterministic and only ever lowers a delay, so the relaxed
/// value stays a lower bound on every integral placement.
fn ranked_delay(inst: &ValidatedInstance, nh: usize, h: usize, l: usize) -> f64 {
    let rank = (h * nh + l + 1) as f64 / (nh * nh + 1) as f64;
    inst.links.delay(h, l) * (1.0 - DELAY_TIE_BREAK * rank)
}

pub fn build_relaxation(inst: &ValidatedInstance, fixed: &PartialPlacement) -> Relaxation {
    assert_eq!(fixed.n_queues(), inst.n_queues());
    let tr = inst.traffic();
    let (nh, nq, nk) = (inst.n_hosts(), inst.n_queues(), inst.n_classes());
    let margin = inst.stability_margin;
    let mut prog = ConvexProgram::new();

    // Assignment variables / constants.
    let mut a = vec![Slot::Fixed(0.0); nh * nq];
    for q in 0..nq {
        match fixed.host_of(q) {
            Some(hq) => {
                for h in 0..nh {
                    a[h * nq + q] = Slot::Fixed(if h == hq { 1.0 } else { 0.0 });
                }
            }
            None if nh == 1 => a[q] = Slot::Fixed(1.0),
            None => {
                let mut lin = Vec::with_capacity(nh);
                for h in 0..nh {
                    let v = prog.add_var(
                        format!("a_{}_{}", inst.hosts[h].id, inst.queues[q].id),
                        0.0,
                        1.0,
                    );
                    a[h * nq + q] = Slot::Var(v);
                    lin.push((v, 1.0));
                }
                prog.add_eq(&lin, -1.0);
            }
        }
    }

    // Capacity shares.
    let mut psi = vec![Slot::Fixed(0.0); nh * nq];
    for q in 0..nq {
        for h in 0..nh {
            let present = match fixed.host_of(q) {
                Some(hq) => h == hq,
                None => true,
            };
            if present {
                let v = prog.add_var(
                    format!("psi_{}_{}", inst.hosts[h].id, inst.queues[q].id),
                    0.0,
                    1.0,
                );
                psi[h * nq + q] = Slot::Var(v);
                if let Slot::Var(av) = a[h * nq + q] {
                    prog.add_ineq(&[(v, 1.0), (av, -1.0)], 0.0);
                }
            }
        }
    }
    for h in 0..nh {
        let lin: Vec<(usize, f64)> = (0..nq)
            .filter_map(|q| match psi[h * nq + q] {
                Slot::Var(v) => Some((v, 1.0)),
                Slot::Fixed(_) => None,
            })
            .collect();
        if !lin.is_empty() {
            prog.add_ineq(&lin, -1.0);
        }
    }

    // Service rates, objective variable, and the share coupling.
    let mu: Vec<usize> = (0..nq)
        .map(|q| {
            prog.add_var(
                format!("mu_{}", inst.queues[q].id),
                tr.big_lambda[q] + margin,
                f64::INFINITY,
            )
        })
        .collect();
    let rho = prog.add_var("rho", f64::NEG_INFINITY, f64::INFINITY);
    prog.set_objective_coeff(rho, 1.0);
    for q in 0..nq {
        let mut lin = vec![(mu[q], 1.0)];
        for h in 0..nh {
            if let Slot::Var(v) = psi[h * nq + q] {
                lin.push((v, -inst.hosts[h].kappa));
            }
        }
        prog.add_ineq(&lin, 0.0);
    }

    // Transfer edges that can generate inter-host traffic.
    let mut edges = Vec::new();
    let mut edge_of = vec![None; nq * nq];
    for q in 0..nq {
        for r in 0..nq {
            if q == r {
                continue;
            }
            if inst.classes.iter().any(|c| c.transfer_prob[q][r] > 0.0) {
                edge_of[q * nq + r] = Some(edges.len());
                edges.push((q, r));
            }
        }
    }

    // Product envelopes per edge and ordered host pair, collapsed where an
    // end is fixed. Pairs with zero delay and unbounded capacity never
    // appear in any row and stay untracked.
    let mut phi = vec![PhiSlot::Untracked; edges.len() * nh * nh];
    for (e, &(q, r)) in edges.iter().enumerate() {
        for h in 0..nh {
            for l in 0..nh {
                if h == l {
                    continue;
                }
                if inst.links.delay(h, l) <= 0.0 && inst.links.capacity(h, l).is_infinite() {
                    continue;
                }
                let slot = match (fixed.host_of(q), fixed.host_of(r)) {
                    (Some(hq), _) if hq != h => PhiSlot::Fixed(0.0),
                    (_, Some(hr)) if hr != l => PhiSlot::Fixed(0.0),
                    (Some(_), Some(_)) => PhiSlot::Fixed(1.0),
                    (Some(_), None) => match a[l * nq + r] {
                        Slot::Var(v) => PhiSlot::Alias(v),
                        Slot::Fixed(c) => PhiSlot::Fixed(c),
                    },
                    (None, Some(_)) => match a[h * nq + q] {
                        Slot::Var(v) => PhiSlot::Alias(v),
                        Slot::Fixed(c) => PhiSlot::Fixed(c),
                    },
                    (None, None) => {
                        let v = prog.add_var(
                            format!(
                                "phi_{}_{}_{}_{}",
                                inst.hosts[h].id,
                                inst.hosts[l].id,
                                inst.queues[q].id,
                                inst.queues[r].id
                            ),
                            0.0,
                            1.0,
                        );
                        let (aq, ar) = (a[h * nq + q], a[l * nq + r]);
                        if let (Slot::Var(aq), Slot::Var(ar)) = (aq, ar) {
                            prog.add_ineq(&[(v, 1.0), (aq, -1.0)], 0.0);
                            prog.add_ineq(&[(v, 1.0), (ar, -1.0)], 0.0);
                            prog.add_ineq(&[(aq, 1.0), (ar, 1.0), (v, -1.0)], -1.0);
                        }
                        PhiSlot::Var(v)
                    }
                };
                phi[(e * nh + h) * nh + l] = slot;
            }
        }
    }

    // Delay bound per class in epigraph form: processing reciprocals plus
    // the envelope-weighted inter-host delays.
    let mut pieces: Vec<(f64, Vec<(usize, f64)>, Vec<RecipTerm>)> = Vec::with_capacity(nk);
    for (k, class) in inst.classes.iter().enumerate() {
        let inv_qos = 1.0 / class.qos_delay;
        let mut lin: BTreeMap<usize, f64> = BTreeMap::new();
        let mut constant = 0.0;
        for (e, &(q, r)) in edges.iter().enumerate() {
            let w = tr.gamma[k][q] * class.transfer_prob[q][r];
            if w == 0.0 {
                continue;
            }
            for h in 0..nh {
                for l in 0..nh {
                    if h == l {
                        continue;
                    }
                    let delta = ranked_delay(inst, nh, h, l);
                    if delta <= 0.0 {
                        continue;
                    }
                    let factor = w * delta * inv_qos;
                    match phi[(e * nh + h) * nh + l] {
                        PhiSlot::Var(v) | PhiSlot::Alias(v) => {
                            *lin.entry(v).or_insert(0.0) += factor
                        }
                        PhiSlot::Fixed(c) => constant += factor * c,
                        PhiSlot::Untracked => unreachable!("positive-delay pairs are tracked"),
                    }
                }
            }
        }
        let recips: Vec<RecipTerm> = (0..nq)
            .filter(|&q| tr.gamma[k][q] > 0.0)
            .map(|q| RecipTerm {
                var: mu[q],
                shift: tr.big_lambda[q],
                weight: tr.gamma[k][q] * inv_qos,
            })
            .collect();
        let lin: Vec<(usize, f64)> = lin.into_iter().collect();
        prog.add_epigraph_piece(rho, &lin, constant, &recips);
        pieces.push((constant, lin, recips));
    }

    // Link capacity rows for finite-capacity links only.
    for h in 0..nh {
        for l in 0..nh {
            if h == l {
                continue;
            }
            let cap = inst.links.capacity(h, l);
            if cap.is_infinite() {
                continue;
            }
            let mut lin: BTreeMap<usize, f64> = BTreeMap::new();
            let mut constant = -cap;
            for (e, &(q, r)) in edges.iter().enumerate() {
                let flow: f64 = (0..nk)
                    .map(|k| tr.lambda_hat[k][q] * inst.classes[k].transfer_prob[q][r])
                    .sum();
                if flow == 0.0 {
                    continue;
                }
                match phi[(e * nh + h) * nh + l] {
                    PhiSlot::Var(v) | PhiSlot::Alias(v) => *lin.entry(v).or_insert(0.0) += flow,
                    PhiSlot::Fixed(c) => constant += flow * c,
                    PhiSlot::Untracked => unreachable!("finite-capacity pairs are tracked"),
                }
            }
            let lin: Vec<(usize, f64)> = lin.into_iter().collect();
            if lin.is_empty() && constant <= 0.0 {
                continue;
            }
            prog.add_ineq(&lin, constant);
        }
    }

    // Interior starting point: uniform assignment, shares filling most of
    // each host, rates taking most of the coupled bound.
    let mut start = vec![0.0; prog.n_vars()];
    for q in 0..nq {
        for h in 0..nh {
            if let Slot::Var(v) = a[h * nq + q] {
                start[v] = 1.0 / nh as f64;
            }
        }
    }
    for h in 0..nh {
        // Fixed queues must start above their load fraction of the host or
        // the rate coupling has no room; the rest of the host is split
        // evenly across every share present.
        let mut base = 0.0;
        let mut share_count = 0usize;
        for q in 0..nq {
            if matches!(psi[h * nq + q], Slot::Var(_)) {
                share_count += 1;
                if fixed.host_of(q) == Some(h) {
                    base += tr.big_lambda[q] / inst.hosts[h].kappa;
                }
            }
        }
        let extra = START_FILL * (1.0 - base).max(0.0) / share_count.max(1) as f64;
        for q in 0..nq {
            if let Slot::Var(v) = psi[h * nq + q] {
                start[v] = if fixed.host_of(q) == Some(h) {
                    tr.big_lambda[q] / inst.hosts[h].kappa + extra
                } else {
                    let a_now = a[h * nq + q].value(&start);
                    extra.min(START_FILL * a_now)
                };
            }
        }
    }
    for q in 0..nq {
        let bound: f64 = (0..nh)
            .map(|h| inst.hosts[h].kappa * psi[h * nq + q].value(&start))
            .sum();
        start[mu[q]] = if bound > tr.big_lambda[q] {
            tr.big_lambda[q] + START_FILL * (bound - tr.big_lambda[q])
        } else {
            // Coupling cannot be satisfied from this seed; phase 1 will
            // repair it. Stay well clear of the reciprocal pole so the
            // repair works on a sanely scaled program.
            tr.big_lambda[q] * 1.01 + 2.0 * margin
        };
    }
    for (e, &(q, r)) in edges.iter().enumerate() {
        for h in 0..nh {
            for l in 0..nh {
                if let PhiSlot::Var(v) = phi[(e * nh + h) * nh + l] {
                    let (aq, ar) = (a[h * nq + q].value(&start), a[l * nq + r].value(&start));
                    let lo = (aq + ar - 1.0).max(0.0);
                    let hi = aq.min(ar);
                    start[v] = lo + 0.5 * (hi - lo).max(0.0);
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    for (constant, lin, recips) in &pieces {
        let mut v = *constant;
        for &(ix, c) in lin {
            v += c * start[ix];
        }
        for r in recips {
            v += r.weight / (start[r.var] - r.shift);
        }
        worst = worst.max(v);
    }
    start[rho] = worst * 1.1 + 0.1;
    prog.set_start(start);

    Relaxation { prog, nh, nq, a, psi, mu, rho, edge_of, phi }
}

/// Confidence scores from a relaxed solution: fractional assignment plus an
/// indicator that the capacity share covers the queue's load fraction.
pub fn z_scores(
    relaxed: &RelaxedSolution,
    inst: &ValidatedInstance,
    fixed: &PartialPlacement,
) -> ZScoreTable {
    let tr = inst.traffic();
    // Delay rows exist only for edges that touch a fixed queue, so before the
    // first fix the program is delay-free and psi is pure interior smear; the
    // indicator carries no placement signal there and stays off.
    let delay_informed = fixed.n_fixed() > 0;
    let z = (0..inst.n_hosts())
        .map(|h| {
            (0..inst.n_queues())
                .map(|q| {
                    let threshold = tr.big_lambda[q] / inst.hosts[h].kappa;
                    let hit = delay_informed
                        && relaxed.psi[h][q] >= threshold - INDICATOR_TOL;
                    relaxed.a_tilde[h][q] + if hit { 1.0 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    ZScoreTable {
        z,
        placed: (0..inst.n_queues()).map(|q| fixed.host_of(q).is_some()).collect(),
    }
}

/// Fixing q on h keeps the partial assignment capacity-feasible.
fn can_accept(
    inst: &ValidatedInstance,
    fixed: &PartialPlacement,
    host: usize,
    queue: usize,
) -> bool {
    let tr = inst.traffic();
    let mut load = tr.big_lambda[queue];
    let mut count = 1usize;
    for q in 0..inst.n_queues() {
        if fixed.host_of(q) == Some(host) {
            load += tr.big_lambda[q];
            count += 1;
        }
    }
    load + inst.stability_margin * count as f64 <= inst.hosts[host].kappa
}

pub fn run_maxz(inst: &ValidatedInstance) -> Result<MaxZOutcome, MaxZError> {
    run_maxz_with_tol(inst, RELAXATION_TOL)
}

/// One relaxation solve per VNF instance; each iteration fixes the feasible
/// pair with the highest score, ties broken by lowest host then lowest VNF
/// index.
pub fn run_maxz_with_tol(
    inst: &ValidatedInstance,
    tol: f64,
) -> Result<MaxZOutcome, MaxZError> {
    let nq = inst.n_queues();
    let tr = inst.traffic();
    // Sound quick rejections: total load cannot exceed total capacity, and
    // no queue's rate can exceed even the largest host (the share coupling
    // caps mu(q) by a convex combination of host capacities).
    let kappa_max = inst.hosts.iter().fold(0.0f64, |m, h| m.max(h.kappa));
    let total_kappa: f64 = inst.hosts.iter().map(|h| h.kappa).sum();
    let total_load: f64 =
        tr.big_lambda.iter().map(|l| l + inst.stability_margin).sum();
    if total_load > total_kappa {
        return Err(MaxZError::Infeasible { queue: None });
    }
    if let Some(q) =
        (0..nq).find(|&q| tr.big_lambda[q] + inst.stability_margin > kappa_max)
    {
        return Err(MaxZError::Infeasible { queue: Some(q) });
    }
    let mut fixed = PartialPlacement::empty(nq);
    let mut trace = Vec::with_capacity(nq);
    for _ in 0..nq {
        let relaxation = build_relaxation(inst, &fixed);
        let relaxed = relaxation.solve(tol)?;
        let scores = z_scores(&relaxed, inst, &fixed);
        let mut best: Option<(f64, usize, usize)> = None;
        for h in 0..inst.n_hosts() {
            for q in 0..nq {
                if scores.placed[q] || !can_accept(inst, &fixed, h, q) {
                    continue;
                }
                if best.map_or(true, |(bz, _, _)| scores.z[h][q] > bz + Z_TIE_TOL) {
                    best = Some((scores.z[h][q], h, q));
                }
            }
        }
        let Some((_, h, q)) = best else {
            let unplaced = (0..nq).find(|&q| fixed.host_of(q).is_none());
            return Err(MaxZError::Infeasible { queue: unplaced });
        };
        fixed.fix(q, h);
        trace.push(MaxZIteration { relaxed, scores, chosen: (h, q) });
    }
    let placement = fixed.into_placement().expect("all instances fixed");
    Ok(MaxZOutcome { placement, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation;
    use crate::model::{
        validate_instance, Host, LinkMatrix, ProblemInstance, ServiceClass, VnfQueue,
    };

    /// Two hosts, two-queue chain; rates sized so the load fraction
    /// threshold sits at 0.2 of either host.
    fn two_host_chain(delta: f64, kappa: f64, lambda: f64) -> ValidatedInstance {
        validate_instance(ProblemInstance {
            hosts: vec![
                Host { id: "h1".into(), kappa },
                Host { id: "h2".into(), kappa },
            ],
            links: LinkMatrix::fully_connected(2, delta),
            queues: vec![VnfQueue::new("q1"), VnfQueue::new("q2")],
            classes: vec![ServiceClass {
                id: "c1".into(),
                qos_delay: 100.0,
                external_rate: vec![lambda, 0.0],
                entry_prob: vec![1.0, 0.0],
                transfer_prob: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            }],
            stability_margin: 1e-9,
        })
        .unwrap()
    }

    #[test]
    fn first_iteration_splits_assignment_evenly() {
        let inst = two_host_chain(5.0, 0.25, 0.05);
        let relaxed = build_relaxation(&inst, &PartialPlacement::empty(2))
            .solve(RELAXATION_TOL)
            .unwrap();
        for h in 0..2 {
            for q in 0..2 {
                assert!(
                    (relaxed.a_tilde[h][q] - 0.5).abs() < 0.05,
                    "a_tilde[{h}][{q}] = {}",
                    relaxed.a_tilde[h][q]
                );
                assert!((relaxed.psi[h][q] - 0.5).abs() < 0.05);
            }
        }
        // With nothing fixed the program has no delay rows, so the indicator
        // stays off and the score is the assignment share alone.
        let scores = z_scores(&relaxed, &inst, &PartialPlacement::empty(2));
        for h in 0..2 {
            for q in 0..2 {
                assert!((scores.z[h][q] - 0.5).abs() < 0.1, "z = {}", scores.z[h][q]);
            }
        }
        // Once any queue is fixed the indicator is live again.
        let mut fixed = PartialPlacement::empty(2);
        fixed.fix(0, 0);
        let relaxed = build_relaxation(&inst, &fixed).solve(RELAXATION_TOL).unwrap();
        let scores = z_scores(&relaxed, &inst, &fixed);
        let fired = (0..2).any(|h| (0..2).any(|q| scores.z[h][q] > 1.0));
        assert!(fired, "indicator never fires once a queue is fixed");
    }

    #[test]
    fn envelope_and_share_invariants_hold() {
        let inst = two_host_chain(5.0, 0.25, 0.05);
        let relaxed = build_relaxation(&inst, &PartialPlacement::empty(2))
            .solve(RELAXATION_TOL)
            .unwrap();
        let tol = 1e-6;
        for q in 0..2 {
            let total: f64 = (0..2).map(|h| relaxed.a_tilde[h][q]).sum();
            assert!((total - 1.0).abs() < tol);
        }
        for h in 0..2 {
            let shares: f64 = (0..2).map(|q| relaxed.psi[h][q]).sum();
            assert!(shares <= 1.0 + tol);
            for q in 0..2 {
                assert!(relaxed.psi[h][q] <= relaxed.a_tilde[h][q] + tol);
                for l in 0..2 {
                    for r in 0..2 {
                        let phi = relaxed.phi.get(h, l, q, r);
                        let (aq, ar) = (relaxed.a_tilde[h][q], relaxed.a_tilde[l][r]);
                        assert!(phi <= aq + tol && phi <= ar + tol);
                        assert!(phi >= aq + ar - 1.0 - tol);
                        assert!(phi >= -tol && phi <= 1.0 + tol);
                    }
                }
            }
        }
    }

    #[test]
    fn low_transfer_delay_spreads_the_chain() {
        let inst = two_host_chain(5.0, 0.25, 0.05);
        let out = run_maxz(&inst).unwrap();
        assert_eq!(out.trace.len(), 2);
        // First fix is the lexicographic tie-break (h1, q1); the second
        // iteration must then prefer the other host for q2.
        assert_eq!(out.trace[0].chosen, (0, 0));
        let z2 = &out.trace[1].scores.z;
        assert!(z2[1][1] > z2[0][1], "expected spread: {:?}", z2);
        assert_eq!(out.placement.host_of(0), 0);
        assert_eq!(out.placement.host_of(1), 1);
    }

    #[test]
    fn high_transfer_delay_colocates_the_chain() {
        let inst = two_host_chain(100.0, 0.25, 0.05);
        let out = run_maxz(&inst).unwrap();
        let z2 = &out.trace[1].scores.z;
        assert!(z2[0][1] > z2[1][1], "expected co-location: {:?}", z2);
        assert_eq!(out.placement.hosts_used(), 1);
    }

    #[test]
    fn fully_fixed_relaxation_matches_the_allocation_path() {
        let inst = two_host_chain(5.0, 0.25, 0.05);
        let mut fixed = PartialPlacement::empty(2);
        fixed.fix(0, 0);
        fixed.fix(1, 1);
        let relaxed = build_relaxation(&inst, &fixed).solve(1e-8).unwrap();
        let placement = Placement::new(vec![0, 1]);
        let exact = allocation::optimize_allocation(&inst, &placement).unwrap();
        // The pair tie-break discounts delays, so the relaxed value may sit
        // below the exact one by at most that fraction of the network share.
        assert!(
            relaxed.rho <= exact.rho * (1.0 + 1e-4),
            "relaxed {} above exact {}",
            relaxed.rho,
            exact.rho
        );
        assert!(
            relaxed.rho >= exact.rho * (1.0 - 2e-3),
            "relaxed {} too far below exact {}",
            relaxed.rho,
            exact.rho
        );
    }

    #[test]
    fn single_host_is_exact_and_trivially_placed() {
        let inst = validate_instance(ProblemInstance {
            hosts: vec![Host { id: "h1".into(), kappa: 0.25 }],
            links: LinkMatrix::fully_connected(1, 0.0),
            queues: vec![VnfQueue::new("q1"), VnfQueue::new("q2")],
            classes: vec![ServiceClass {
                id: "c1".into(),
                qos_delay: 100.0,
                external_rate: vec![0.05, 0.0],
                entry_prob: vec![1.0, 0.0],
                transfer_prob: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            }],
            stability_margin: 1e-9,
        })
        .unwrap();
        let relaxed = build_relaxation(&inst, &PartialPlacement::empty(2))
            .solve(1e-8)
            .unwrap();
        let out = run_maxz(&inst).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert_eq!(out.placement.hosts(), &[0, 0]);
        let exact = allocation::optimize_allocation(&inst, &out.placement).unwrap();
        assert!((relaxed.rho - exact.rho).abs() / exact.rho < 1e-3);
    }

    #[test]
    fn relaxed_objective_bounds_the_exact_optimum() {
        for delta in [5.0, 100.0] {
            let inst = two_host_chain(delta, 0.25, 0.05);
            let relaxed = build_relaxation(&inst, &PartialPlacement::empty(2))
                .solve(1e-8)
                .unwrap();
            let best = [[0, 0], [0, 1], [1, 0], [1, 1]]
                .iter()
                .filter_map(|hs| {
                    allocation::optimize_allocation(&inst, &Placement::new(hs.to_vec()))
                        .ok()
                        .map(|a| a.rho)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(
                relaxed.rho <= best + 1e-9,
                "delta {delta}: relaxed {} above exact {}",
                relaxed.rho,
                best
            );
        }
    }

    #[test]
    fn capacity_masking_forces_spread_and_detects_dead_ends() {
        // Neither host can hold both queues, so even a 100 ms link must not
        // produce co-location.
        let tight = two_host_chain(100.0, 0.06, 0.05);
        let out = run_maxz(&tight).unwrap();
        assert_eq!(out.placement.hosts_used(), 2);

        // Three queues into two one-queue hosts: fractional capacity is
        // plentiful, but the third fix has nowhere to go.
        let overfull = validate_instance(ProblemInstance {
            hosts: vec![
                Host { id: "h1".into(), kappa: 0.09 },
                Host { id: "h2".into(), kappa: 0.09 },
            ],
            links: LinkMatrix::fully_connected(2, 1.0),
            queues: vec![VnfQueue::new("q1"), VnfQueue::new("q2"), VnfQueue::new("q3")],
            classes: vec![ServiceClass {
                id: "c1".into(),
                qos_delay: 100.0,
                external_rate: vec![0.05, 0.0, 0.0],
                entry_prob: vec![1.0, 0.0, 0.0],
                transfer_prob: vec![
                    vec![0.0, 1.0, 0.0],
                    vec![0.0, 0.0, 1.0],
                    vec![0.0, 0.0, 0.0],
                ],
            }],
            stability_margin: 1e-9,
        })
        .unwrap();
        match run_maxz(&overfull) {
            Err(MaxZError::Infeasible { queue: Some(_) }) => {}
            other => panic!("expected infeasibility, got {:?}", other.map(|o| o.placement)),
        }
    }
}
