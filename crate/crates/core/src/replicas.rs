//! Expansion of VNFs that run as several instances. Each replica inherits the
//! original's edges; incoming probability mass is divided among replicas by
//! per-instance fractions, and the best two-way split is located by a
//! derivative-free pattern search over the full place-and-allocate pipeline.

use std::collections::HashMap;
use std::fmt;

use crate::allocation::{self, Allocation};
use crate::model::{validate_instance, Placement, ValidatedInstance, ValidationError};

/// Absolute slack allowed when checking that split fractions sum to one.
pub const FRACTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSearchConfig {
    /// Initial splitting fraction toward the first replica.
    pub f0: f64,
    /// Initial step size.
    pub delta0: f64,
    /// Minimum step size; the search stops once the step falls below it.
    pub epsilon: f64,
}

impl Default for SplitSearchConfig {
    fn default() -> Self {
        SplitSearchConfig { f0: 0.5, delta0: 0.25, epsilon: 0.05 }
    }
}

impl SplitSearchConfig {
    pub fn validate(&self) -> Result<(), ReplicaError> {
        if !(self.epsilon > 0.0 && self.epsilon < self.delta0) {
            return Err(ReplicaError::BadConfig {
                detail: format!(
                    "step bounds must satisfy 0 < epsilon < delta0, got {} and {}",
                    self.epsilon, self.delta0
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.f0) {
            return Err(ReplicaError::BadConfig {
                detail: format!("initial fraction {} outside [0, 1]", self.f0),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum ReplicaError {
    /// Fractions for a queue are negative or do not sum to one.
    BadFractions { queue: usize, detail: String },
    BadConfig { detail: String },
    /// The expanded instance failed re-validation.
    Validation(Vec<ValidationError>),
    /// Pattern search targets a queue without exactly two instances.
    NotTwoInstances { queue: usize },
    /// Every evaluated split failed to place or allocate.
    NoFeasibleSplit,
}

impl fmt::Display for ReplicaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplicaError::BadFractions { queue, detail } => {
                write!(f, "bad split fractions for queue {queue}: {detail}")
            }
            ReplicaError::BadConfig { detail } => write!(f, "bad search config: {detail}"),
            ReplicaError::Validation(errs) => {
                write!(f, "expanded instance failed validation ({} errors)", errs.len())
            }
            ReplicaError::NotTwoInstances { queue } => {
                write!(f, "queue {queue} does not have exactly two instances")
            }
            ReplicaError::NoFeasibleSplit => {
                write!(f, "no evaluated split admits a feasible deployment")
            }
        }
    }
}

impl std::error::Error for ReplicaError {}

/// Expanded instance together with the replica bookkeeping.
#[derive(Debug, Clone)]
pub struct Replicated {
    pub instance: ValidatedInstance,
    /// Expanded queue index -> original queue index.
    pub replica_of: Vec<usize>,
    /// Original queue index -> expanded queue indices, in replica order.
    pub replicas: Vec<Vec<usize>>,
}

/// Even split for every queue: 1/N per instance, a single 1 for plain VNFs.
pub fn uniform_fractions(inst: &ValidatedInstance) -> Vec<Vec<f64>> {
    inst.queues
        .iter()
        .map(|q| vec![1.0 / q.instance_count as f64; q.instance_count])
        .collect()
}

/// Replaces each VNF having N > 1 instances with N replica queues carrying
/// the same outgoing edges. Incoming transfer probabilities, entry
/// probabilities, and external rates are scaled by the destination replica's
/// fraction, so total incoming mass is preserved. The expanded instance is
/// re-validated from scratch.
pub fn replicate_graph(
    inst: &ValidatedInstance,
    fractions: &[Vec<f64>],
) -> Result<Replicated, ReplicaError> {
    let nq = inst.n_queues();
    assert_eq!(fractions.len(), nq, "one fraction vector per queue");
    for (q, (queue, f)) in inst.queues.iter().zip(fractions).enumerate() {
        if f.len() != queue.instance_count {
            return Err(ReplicaError::BadFractions {
                queue: q,
                detail: format!(
                    "{} fractions for {} instances",
                    f.len(),
                    queue.instance_count
                ),
            });
        }
        if f.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(ReplicaError::BadFractions {
                queue: q,
                detail: "fractions must be nonnegative".into(),
            });
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > FRACTION_TOL {
            return Err(ReplicaError::BadFractions {
                queue: q,
                detail: format!("fractions sum to {sum}, expected 1"),
            });
        }
    }

    let mut replica_of = Vec::new();
    let mut replicas = vec![Vec::new(); nq];
    let mut queues = Vec::new();
    for (q, queue) in inst.queues.iter().enumerate() {
        for i in 0..queue.instance_count {
            replicas[q].push(replica_of.len());
            replica_of.push(q);
            let mut r = queue.clone();
            if queue.instance_count > 1 {
                r.id = format!("{}#{}", queue.id, i + 1);
            }
            r.instance_count = 1;
            queues.push(r);
        }
    }
    let ne = replica_of.len();
    // Fraction of the original queue's mass owned by each expanded queue.
    let share: Vec<f64> = replica_of
        .iter()
        .enumerate()
        .map(|(e, &q)| {
            let i = e - replicas[q][0];
            fractions[q][i]
        })
        .collect();

    let mut raw = inst.as_problem().clone();
    raw.queues = queues;
    for class in raw.classes.iter_mut() {
        let external = std::mem::take(&mut class.external_rate);
        let entry = std::mem::take(&mut class.entry_prob);
        let transfer = std::mem::take(&mut class.transfer_prob);
        class.external_rate = (0..ne).map(|e| external[replica_of[e]] * share[e]).collect();
        class.entry_prob = (0..ne).map(|e| entry[replica_of[e]] * share[e]).collect();
        class.transfer_prob = (0..ne)
            .map(|e| {
                (0..ne)
                    .map(|d| transfer[replica_of[e]][replica_of[d]] * share[d])
                    .collect()
            })
            .collect();
    }
    let instance = validate_instance(raw).map_err(ReplicaError::Validation)?;
    Ok(Replicated { instance, replica_of, replicas })
}

/// Result of a two-way split search: the winning fraction with the full
/// deployment found there, plus search effort counters.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    /// Fraction of the replicated VNF's load sent to its first replica.
    pub f: f64,
    pub objective: f64,
    pub replicated: Replicated,
    pub placement: Placement,
    pub allocation: Allocation,
    /// Fresh pipeline evaluations (cache hits excluded).
    pub evaluations: usize,
    /// Step halvings performed before termination.
    pub halvings: usize,
    /// Every fresh evaluation as (fraction, objective), +inf when infeasible.
    pub trace: Vec<(f64, f64)>,
}

struct Candidate {
    objective: f64,
    artifacts: Option<(Replicated, Placement, Allocation)>,
}

/// Pattern search over the splitting fraction of one two-instance VNF. Each
/// candidate f runs the full pipeline (expand, place, allocate); a candidate
/// that fails anywhere scores +inf. The current point moves to a strictly
/// better neighbor at f +- delta, otherwise delta halves; the search stops
/// when delta drops below epsilon.
pub fn pattern_search_split<P>(
    inst: &ValidatedInstance,
    replicated_vnf: usize,
    cfg: SplitSearchConfig,
    mut placer: P,
) -> Result<SplitOutcome, ReplicaError>
where
    P: FnMut(&ValidatedInstance) -> Option<Placement>,
{
    cfg.validate()?;
    if inst.queues[replicated_vnf].instance_count != 2 {
        return Err(ReplicaError::NotTwoInstances { queue: replicated_vnf });
    }

    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut best: Option<(f64, Candidate)> = None;
    let mut evaluations = 0usize;
    let mut trace: Vec<(f64, f64)> = Vec::new();

    let mut eval = |f: f64,
                    best: &mut Option<(f64, Candidate)>,
                    evaluations: &mut usize,
                    trace: &mut Vec<(f64, f64)>|
     -> f64 {
        if let Some(&obj) = cache.get(&f.to_bits()) {
            return obj;
        }
        let mut fractions = uniform_fractions(inst);
        fractions[replicated_vnf] = vec![f, 1.0 - f];
        let candidate = match replicate_graph(inst, &fractions) {
            Ok(rep) => match placer(&rep.instance) {
                Some(placement) => match allocation::allocate(&rep.instance, &placement) {
                    Ok(alloc) => Candidate {
                        objective: alloc.rho,
                        artifacts: Some((rep, placement, alloc)),
                    },
                    Err(_) => Candidate { objective: f64::INFINITY, artifacts: None },
                },
                None => Candidate { objective: f64::INFINITY, artifacts: None },
            },
            Err(_) => Candidate { objective: f64::INFINITY, artifacts: None },
        };
        let obj = candidate.objective;
        *evaluations += 1;
        trace.push((f, obj));
        cache.insert(f.to_bits(), obj);
        let improves = best.as_ref().map_or(true, |(_, b)| obj < b.objective);
        if improves {
            *best = Some((f, candidate));
        }
        obj
    };

    let mut f = cfg.f0;
    let mut delta = cfg.delta0;
    let mut halvings = 0usize;
    let mut current = eval(f, &mut best, &mut evaluations, &mut trace);
    loop {
        let up = (f + delta).min(1.0);
        let down = (f - delta).max(0.0);
        let v_up = eval(up, &mut best, &mut evaluations, &mut trace);
        let v_down = eval(down, &mut best, &mut evaluations, &mut trace);
        let (nf, nv) = if v_up < v_down { (up, v_up) } else { (down, v_down) };
        if nv < current {
            f = nf;
            current = nv;
            continue;
        }
        delta /= 2.0;
        halvings += 1;
        if delta < cfg.epsilon {
            break;
        }
    }

    match best {
        Some((bf, Candidate { objective, artifacts: Some((rep, placement, alloc)) })) => {
            // The current point only ever moves to strictly better values, so
            // it coincides with the best evaluation.
            debug_assert_eq!(bf.to_bits(), f.to_bits());
            Ok(SplitOutcome {
                f: bf,
                objective,
                replicated: rep,
                placement,
                allocation: alloc,
                evaluations,
                halvings,
                trace,
            })
        }
        _ => Err(ReplicaError::NoFeasibleSplit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Host, LinkMatrix, ProblemInstance, ServiceClass, VnfQueue,
    };

    /// Three-VNF chain with the middle VNF requesting two instances.
    fn chain_with_split_middle() -> ValidatedInstance {
        let mut mid = VnfQueue::new("q2");
        mid.instance_count = 2;
        let mut transfer = vec![vec![0.0; 3]; 3];
        transfer[0][1] = 1.0;
        transfer[1][2] = 1.0;
        validate_instance(ProblemInstance {
            hosts: vec![
                Host { id: "h1".into(), kappa: 1.0 },
                Host { id: "h2".into(), kappa: 1.0 },
            ],
            links: LinkMatrix::fully_connected(2, 5.0),
            queues: vec![VnfQueue::new("q1"), mid, VnfQueue::new("q3")],
            classes: vec![ServiceClass {
                id: "c1".into(),
                qos_delay: 100.0,
                external_rate: vec![0.2, 0.0, 0.0],
                entry_prob: vec![1.0, 0.0, 0.0],
                transfer_prob: transfer,
            }],
            stability_margin: 1e-9,
        })
        .unwrap()
    }

    /// One VNF with two instances, one class feeding it. Replicas end up
    /// alone on their hosts, so optimal rates equal the host capacities and
    /// the delay curve over f is known in closed form.
    fn single_split_vnf(kappa1: f64, kappa2: f64, rate: f64) -> ValidatedInstance {
        let mut q = VnfQueue::new("q1");
        q.instance_count = 2;
        validate_instance(ProblemInstance {
            hosts: vec![
                Host { id: "h1".into(), kappa: kappa1 },
                Host { id: "h2".into(), kappa: kappa2 },
            ],
            links: LinkMatrix::fully_connected(2, 1.0),
            queues: vec![q],
            classes: vec![ServiceClass {
                id: "c1".into(),
                qos_delay: 100.0,
                external_rate: vec![rate],
                entry_prob: vec![1.0],
                transfer_prob: vec![vec![0.0]],
            }],
            stability_margin: 1e-6,
        })
        .unwrap()
    }

    fn pin_two() -> impl FnMut(&ValidatedInstance) -> Option<Placement> {
        |_inst| Some(Placement::new(vec![0, 1]))
    }

    #[test]
    fn degenerate_split_matches_the_original_traffic() {
        let inst = chain_with_split_middle();
        let rep = replicate_graph(&inst, &[vec![1.0], vec![1.0, 0.0], vec![1.0]]).unwrap();
        assert_eq!(rep.replicas, vec![vec![0], vec![1, 2], vec![3]]);
        assert_eq!(rep.replica_of, vec![0, 1, 1, 2]);
        let orig = inst.traffic();
        let ex = rep.instance.traffic();
        // Replica 1 carries everything the original middle queue carried.
        assert!((ex.lambda_hat[0][1] - orig.lambda_hat[0][1]).abs() < 1e-12);
        assert!((ex.gamma[0][1] - orig.gamma[0][1]).abs() < 1e-12);
        assert_eq!(ex.lambda_hat[0][2], 0.0);
        // Downstream traffic is unchanged by the degenerate split.
        assert!((ex.lambda_hat[0][3] - orig.lambda_hat[0][2]).abs() < 1e-12);
    }

    #[test]
    fn even_split_halves_each_replica() {
        let inst = chain_with_split_middle();
        let rep = replicate_graph(&inst, &[vec![1.0], vec![0.5, 0.5], vec![1.0]]).unwrap();
        let tr = rep.instance.traffic();
        assert!((tr.big_lambda[1] - 0.1).abs() < 1e-12);
        assert!((tr.big_lambda[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn uneven_split_scales_like_the_fractions() {
        let inst = chain_with_split_middle();
        let rep = replicate_graph(&inst, &[vec![1.0], vec![0.3, 0.7], vec![1.0]]).unwrap();
        let tr = rep.instance.traffic();
        // The original middle queue saw 0.2 requests/ms; the resolved linear
        // system must reproduce the hand-scaled shares exactly.
        assert!((tr.big_lambda[1] - 0.06).abs() < 1e-12);
        assert!((tr.big_lambda[2] - 0.14).abs() < 1e-12);
        assert!((tr.big_lambda[3] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let inst = chain_with_split_middle();
        for fracs in [vec![0.6, 0.6], vec![1.2, -0.2], vec![1.0]] {
            let r = replicate_graph(&inst, &[vec![1.0], fracs, vec![1.0]]);
            assert!(matches!(r, Err(ReplicaError::BadFractions { queue: 1, .. })));
        }
    }

    #[test]
    fn config_rejects_step_not_below_initial() {
        let inst = single_split_vnf(10.0, 10.0, 12.0);
        let cfg = SplitSearchConfig { f0: 0.5, delta0: 0.25, epsilon: 0.25 };
        let r = pattern_search_split(&inst, 0, cfg, pin_two());
        assert!(matches!(r, Err(ReplicaError::BadConfig { .. })));
    }

    #[test]
    fn symmetric_hosts_keep_the_even_split() {
        let inst = single_split_vnf(10.0, 10.0, 12.0);
        let out =
            pattern_search_split(&inst, 0, SplitSearchConfig::default(), pin_two()).unwrap();
        assert_eq!(out.f, 0.5);
        // No move ever improves, so every step is a halving: ceil(log2(5)).
        assert_eq!(out.halvings, 3);
        assert!(out.evaluations <= 7);
    }

    #[test]
    fn uneven_hosts_shift_load_toward_the_larger_one() {
        let inst = single_split_vnf(10.0, 5.0, 12.0);
        let out =
            pattern_search_split(&inst, 0, SplitSearchConfig::default(), pin_two()).unwrap();

        // Dense-grid oracle at 0.01 resolution over the same pipeline.
        let mut grid_best = (f64::INFINITY, 0.0);
        for i in 0..=100 {
            let f = i as f64 / 100.0;
            let mut fractions = uniform_fractions(&inst);
            fractions[0] = vec![f, 1.0 - f];
            let obj = replicate_graph(&inst, &fractions)
                .ok()
                .and_then(|rep| {
                    allocation::allocate(&rep.instance, &Placement::new(vec![0, 1])).ok()
                })
                .map_or(f64::INFINITY, |a| a.rho);
            if obj < grid_best.0 {
                grid_best = (obj, f);
            }
        }
        assert!((out.f - grid_best.1).abs() <= 0.05, "f {} vs grid {}", out.f, grid_best.1);
        assert!(out.objective <= grid_best.0 * 1.02);
        assert_eq!(out.f, 0.6875);
        assert_eq!(out.halvings, 3);
        // Capacity-weighted split beats both the even split and the initial
        // guess, which are infeasible here.
        assert!(out.objective.is_finite());
    }

    #[test]
    fn search_never_regresses_from_a_feasible_start() {
        let inst = single_split_vnf(10.0, 5.0, 12.0);
        let cfg = SplitSearchConfig { f0: 0.75, ..SplitSearchConfig::default() };
        let out = pattern_search_split(&inst, 0, cfg, pin_two()).unwrap();
        let start = out
            .trace
            .iter()
            .find(|(f, _)| *f == 0.75)
            .map(|&(_, v)| v)
            .unwrap();
        assert!(out.objective <= start);
        // Local optimality at the returned point: epsilon-neighbors that were
        // evaluated do not improve.
        for &(f, v) in &out.trace {
            if (f - out.f).abs() <= cfg.epsilon + 1e-12 && f != out.f {
                assert!(v >= out.objective - 1e-9);
            }
        }
    }

    #[test]
    fn infeasible_everywhere_reports_no_split() {
        // Total load exceeds total capacity, so every fraction fails.
        let inst = single_split_vnf(4.0, 4.0, 12.0);
        let r = pattern_search_split(&inst, 0, SplitSearchConfig::default(), pin_two());
        assert!(matches!(r, Err(ReplicaError::NoFeasibleSplit)));
    }
}
