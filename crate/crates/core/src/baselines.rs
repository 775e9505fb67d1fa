//! Reference placement strategies: exhaustive search over every assignment,
//! load-sorted first-fit packing onto as few hosts as possible, and
//! affinity-driven co-location of queue pairs with heavy mutual traffic.
//! All of them delegate rate allocation to the allocation module.

use std::fmt;
use std::time::{Duration, Instant};

use crate::allocation::{self, Allocation};
use crate::model::{feasible_capacity_check, Placement, ValidatedInstance};
use crate::traffic;

/// Placement count above which exhaustive search refuses to run without an
/// explicit time budget.
pub const ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone)]
pub enum BaselineError {
    /// Some VNF instance fits on no host.
    Infeasible { queue: usize },
    /// |hosts|^|instances| exceeds the cap and no time budget was given.
    EnumerationTooLarge { placements: u128 },
    /// Every enumerated placement failed capacity, stability, or link checks.
    NoFeasiblePlacement,
}

impl fmt::Display for BaselineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineError::Infeasible { queue } => {
                write!(f, "VNF instance {queue} fits on no host")
            }
            BaselineError::EnumerationTooLarge { placements } => {
                write!(f, "{placements} placements exceed the enumeration cap")
            }
            BaselineError::NoFeasiblePlacement => {
                write!(f, "no enumerated placement admits a stable allocation")
            }
        }
    }
}

impl std::error::Error for BaselineError {}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub placement: Placement,
    pub allocation: Allocation,
    pub objective: f64,
    /// Total assignments visited, including capacity-skipped ones.
    pub enumerated: u128,
    /// False when a time budget stopped the search early.
    pub complete: bool,
}

/// Exhaustive search in mixed-radix order (queue 0 is the least significant
/// digit). Assignments failing the capacity check or link limits are skipped
/// without an allocation solve; ties in objective keep the earliest
/// assignment, so results are deterministic.
pub fn brute_force(
    inst: &ValidatedInstance,
    time_budget: Option<Duration>,
) -> Result<BruteForceResult, BaselineError> {
    let (nh, nq) = (inst.n_hosts(), inst.n_queues());
    let total = (nh as u128).checked_pow(nq as u32).unwrap_or(u128::MAX);
    if total > ENUMERATION_CAP && time_budget.is_none() {
        return Err(BaselineError::EnumerationTooLarge { placements: total });
    }
    let started = Instant::now();
    let mut digits = vec![0usize; nq];
    let mut best: Option<BruteForceResult> = None;
    let mut enumerated: u128 = 0;
    let mut complete = true;
    loop {
        enumerated += 1;
        let placement = Placement::new(digits.clone());
        if feasible_capacity_check(inst, &placement)
            && traffic::link_flows(inst, &placement).violations.is_empty()
        {
            if let Ok(allocation) = allocation::allocate(inst, &placement) {
                let better = best
                    .as_ref()
                    .map_or(true, |b| allocation.rho < b.objective);
                if better {
                    best = Some(BruteForceResult {
                        placement,
                        objective: allocation.rho,
                        allocation,
                        enumerated: 0,
                        complete: true,
                    });
                }
            }
        }
        if let Some(budget) = time_budget {
            if started.elapsed() > budget {
                complete = enumerated >= total;
                break;
            }
        }
        // Mixed-radix increment; overflow past the last digit ends the scan.
        let mut carry = true;
        for d in digits.iter_mut() {
            *d += 1;
            if *d < nh {
                carry = false;
                break;
            }
            *d = 0;
        }
        if carry {
            break;
        }
    }
    match best {
        Some(mut b) => {
            b.enumerated = enumerated;
            b.complete = complete;
            Ok(b)
        }
        None => Err(BaselineError::NoFeasiblePlacement),
    }
}

/// Capacity check for adding one queue to a host under a partial assignment.
fn fits(
    inst: &ValidatedInstance,
    assigned: &[Option<usize>],
    host: usize,
    queue: usize,
) -> bool {
    let tr = inst.traffic();
    let mut load = tr.big_lambda[queue];
    let mut count = 1usize;
    for (q, &a) in assigned.iter().enumerate() {
        if a == Some(host) {
            load += tr.big_lambda[q];
            count += 1;
        }
    }
    load + inst.stability_margin * count as f64 <= inst.hosts[host].kappa
}

/// Load-sorted first fit: place the heaviest instances first, reusing hosts
/// in the order they were opened and opening the lowest-index idle host only
/// when nothing open fits. Never reads link delays.
pub fn greedy_place(inst: &ValidatedInstance) -> Result<Placement, BaselineError> {
    let tr = inst.traffic();
    let nq = inst.n_queues();
    let mut order: Vec<usize> = (0..nq).collect();
    order.sort_by(|&a, &b| {
        tr.big_lambda[b]
            .partial_cmp(&tr.big_lambda[a])
            .unwrap()
            .then_with(|| inst.queues[a].id.cmp(&inst.queues[b].id))
    });
    let mut assigned: Vec<Option<usize>> = vec![None; nq];
    let mut open: Vec<usize> = Vec::new();
    for &q in &order {
        let slot = open
            .iter()
            .copied()
            .find(|&h| fits(inst, &assigned, h, q))
            .or_else(|| {
                (0..inst.n_hosts())
                    .find(|h| !open.contains(h) && fits(inst, &assigned, *h, q))
            });
        match slot {
            Some(h) => {
                if !open.contains(&h) {
                    open.push(h);
                }
                assigned[q] = Some(h);
            }
            None => return Err(BaselineError::Infeasible { queue: q }),
        }
    }
    Ok(Placement::new(assigned.into_iter().map(Option::unwrap).collect()))
}

/// Symmetric transfer mass between two queues, aggregated over classes and
/// weighted by the arrival rates feeding each direction.
pub fn affinity_weight(inst: &ValidatedInstance, q: usize, r: usize) -> f64 {
    let tr = inst.traffic();
    inst.classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            tr.lambda_hat[k][q] * c.transfer_prob[q][r]
                + tr.lambda_hat[k][r] * c.transfer_prob[r][q]
        })
        .sum()
}

/// Affinity-driven placement: repeatedly take the heaviest-traffic unplaced
/// pair and co-locate it on the least-loaded host with room for both, then
/// sweep up leftovers by first fit. Link delays are deliberately ignored;
/// that blind spot is the point of comparing against this strategy.
pub fn affinity_place(inst: &ValidatedInstance) -> Result<Placement, BaselineError> {
    let tr = inst.traffic();
    let (nh, nq) = (inst.n_hosts(), inst.n_queues());
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for q in 0..nq {
        for r in q + 1..nq {
            let w = affinity_weight(inst, q, r);
            if w > 0.0 {
                pairs.push((w, q, r));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });

    let mut assigned: Vec<Option<usize>> = vec![None; nq];
    let host_load = |assigned: &[Option<usize>], h: usize| -> f64 {
        assigned
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == Some(h))
            .map(|(q, _)| tr.big_lambda[q])
            .sum()
    };
    for &(_, q, r) in &pairs {
        match (assigned[q], assigned[r]) {
            (None, None) => {
                let mut hosts: Vec<usize> = (0..nh).collect();
                hosts.sort_by(|&a, &b| {
                    host_load(&assigned, a)
                        .partial_cmp(&host_load(&assigned, b))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                for h in hosts {
                    if fits(inst, &assigned, h, q) {
                        assigned[q] = Some(h);
                        if fits(inst, &assigned, h, r) {
                            assigned[r] = Some(h);
                        } else {
                            assigned[q] = None;
                            continue;
                        }
                        break;
                    }
                }
            }
            (Some(h), None) => {
                if fits(inst, &assigned, h, r) {
                    assigned[r] = Some(h);
                }
            }
            (None, Some(h)) => {
                if fits(inst, &assigned, h, q) {
                    assigned[q] = Some(h);
                }
            }
            (Some(_), Some(_)) => {}
        }
    }
    for q in 0..nq {
        if assigned[q].is_none() {
            match (0..nh).find(|&h| fits(inst, &assigned, h, q)) {
                Some(h) => assigned[q] = Some(h),
                None => return Err(BaselineError::Infeasible { queue: q }),
            }
        }
    }
    Ok(Placement::new(assigned.into_iter().map(Option::unwrap).collect()))
}
