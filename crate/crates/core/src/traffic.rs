//! Traffic resolution for the open queuing network: aggregate per-queue
//! arrival rates, expected visit counts per class, response times, class
//! delays and per-link flows.
//!
//! Both linear systems are small (one |Q| x |Q| solve per class) and dense,
//! so they go through LU with partial pivoting and a residual check.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::model::{CpuAllocation, Placement, ProblemInstance, ValidatedInstance};

/// Relative residual bound accepted from the linear solves.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Per-class resolved traffic. `lambda_hat[k][q]` is the aggregate arrival
/// rate of class k into queue q (external plus forwarded, requests/ms);
/// `gamma[k][q]` is the expected number of visits a class-k request pays to
/// queue q, not counting self-transitions as separate visits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSolution {
    pub lambda_hat: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    /// Total arrival rate per queue across classes.
    pub big_lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ResolveError {
    pub class: String,
}

impl fmt::Display for ResolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "class '{}': traffic equations are numerically singular",
            self.class
        )
    }
}

impl std::error::Error for ResolveError {}

/// Solves the flow-balance and visit-count equations for every class.
/// Called during validation; assumes shapes already checked.
pub(crate) fn resolve(inst: &ProblemInstance) -> Result<TrafficSolution, ResolveError> {
    let nq = inst.queues.len();
    let mut lambda_hat = Vec::with_capacity(inst.classes.len());
    let mut gamma = Vec::with_capacity(inst.classes.len());
    for class in &inst.classes {
        let err = || ResolveError {
            class: class.id.clone(),
        };
        // (I - P^T) lambda_hat = lambda_external
        let mut a = DMatrix::<f64>::identity(nq, nq);
        for p in 0..nq {
            for q in 0..nq {
                a[(q, p)] -= class.transfer_prob[p][q];
            }
        }
        let rhs = DVector::from_column_slice(&class.external_rate);
        let lh = solve_checked(&a, &rhs).ok_or_else(err)?;

        // (I - Ptilde^T) gamma = entry_prob, with self-transitions removed.
        let mut b = DMatrix::<f64>::identity(nq, nq);
        for p in 0..nq {
            for q in 0..nq {
                if p != q {
                    b[(q, p)] -= class.transfer_prob[p][q];
                }
            }
        }
        let rhs = DVector::from_column_slice(&class.entry_prob);
        let g = solve_checked(&b, &rhs).ok_or_else(err)?;

        lambda_hat.push(lh.iter().copied().collect());
        gamma.push(g.iter().copied().collect());
    }
    let big_lambda = (0..nq)
        .map(|q| lambda_hat.iter().map(|row: &Vec<f64>| row[q]).sum())
        .collect();
    Ok(TrafficSolution {
        lambda_hat,
        gamma,
        big_lambda,
    })
}

fn solve_checked(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(rhs)?;
    let residual = (a * &x - rhs).amax();
    if residual <= RESIDUAL_TOL * rhs.amax().max(1.0) {
        Some(x)
    } else {
        None
    }
}

/// Returns the traffic solution cached at validation time.
pub fn solve_traffic(inst: &ValidatedInstance) -> TrafficSolution {
    inst.traffic().clone()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnstableQueue {
    pub queue: usize,
    pub mu: f64,
    pub lambda: f64,
}

impl fmt::Display for UnstableQueue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "queue {} is unstable: mu = {} <= arrival rate {}",
            self.queue, self.mu, self.lambda
        )
    }
}

impl std::error::Error for UnstableQueue {}

/// M/M/1 mean response time 1/(mu - lambda), in ms when rates are per ms.
pub fn response_time(mu: f64, lambda: f64) -> Result<f64, UnstableQueue> {
    if mu > lambda {
        Ok(1.0 / (mu - lambda))
    } else {
        Err(UnstableQueue {
            queue: usize::MAX,
            mu,
            lambda,
        })
    }
}

/// Expected inter-host latency per class for a placement: every traversal of
/// a transfer edge pays the delay between the endpoints' hosts. Same-host
/// hops contribute zero through the zero diagonal.
pub fn network_latency(inst: &ValidatedInstance, placement: &Placement) -> Vec<f64> {
    let tr = inst.traffic();
    let nq = inst.n_queues();
    inst.classes
        .iter()
        .enumerate()
        .map(|(k, class)| {
            let mut total = 0.0;
            for q in 0..nq {
                let g = tr.gamma[k][q];
                if g == 0.0 {
                    continue;
                }
                for r in 0..nq {
                    let p = class.transfer_prob[q][r];
                    if p > 0.0 {
                        total +=
                            g * p * inst.links.delay(placement.host_of(q), placement.host_of(r));
                    }
                }
            }
            total
        })
        .collect()
}

/// Per-class mean delays split into processing and network parts, the
/// QoS ratios, and the max ratio (the objective value of Eq-style min-max).
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBreakdown {
    pub processing: Vec<f64>,
    pub network: Vec<f64>,
    pub total: Vec<f64>,
    pub ratio: Vec<f64>,
    pub objective: f64,
}

impl DelayBreakdown {
    /// Index of the class attaining the objective.
    pub fn argmax_class(&self) -> usize {
        let mut best = 0;
        for (k, &r) in self.ratio.iter().enumerate() {
            if r > self.ratio[best] {
                best = k;
            }
        }
        best
    }
}

/// Evaluates per-class delays for a placement and CPU allocation.
///
/// Processing sums gamma-weighted response times; the network part excludes
/// q = r pairs (self-transitions never change host). Errors if any queue
/// lacks strictly positive headroom.
pub fn class_delays(
    inst: &ValidatedInstance,
    placement: &Placement,
    alloc: &CpuAllocation,
) -> Result<DelayBreakdown, UnstableQueue> {
    let tr = inst.traffic();
    let nq = inst.n_queues();
    let mut rt = vec![0.0; nq];
    for q in 0..nq {
        let mu = alloc.mu[q];
        let lam = tr.big_lambda[q];
        if mu <= lam {
            return Err(UnstableQueue {
                queue: q,
                mu,
                lambda: lam,
            });
        }
        rt[q] = 1.0 / (mu - lam);
    }
    let mut processing = Vec::with_capacity(inst.n_classes());
    let mut network = Vec::with_capacity(inst.n_classes());
    let mut total = Vec::with_capacity(inst.n_classes());
    let mut ratio = Vec::with_capacity(inst.n_classes());
    for (k, class) in inst.classes.iter().enumerate() {
        let proc: f64 = (0..nq).map(|q| tr.gamma[k][q] * rt[q]).sum();
        let mut net = 0.0;
        for q in 0..nq {
            let g = tr.gamma[k][q];
            if g == 0.0 {
                continue;
            }
            for r in 0..nq {
                if r == q {
                    continue;
                }
                let p = class.transfer_prob[q][r];
                if p > 0.0 {
                    net += g * p * inst.links.delay(placement.host_of(q), placement.host_of(r));
                }
            }
        }
        processing.push(proc);
        network.push(net);
        total.push(proc + net);
        ratio.push((proc + net) / class.qos_delay);
    }
    let objective = ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DelayBreakdown {
        processing,
        network,
        total,
        ratio,
        objective,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkViolation {
    pub from: usize,
    pub to: usize,
    pub flow: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkFlowReport {
    n: usize,
    pub flow: Vec<f64>,
    pub violations: Vec<LinkViolation>,
}

impl LinkFlowReport {
    pub fn flow(&self, h: usize, l: usize) -> f64 {
        self.flow[h * self.n + l]
    }
}

/// Aggregates transfer traffic onto host pairs and reports capacity
/// violations on finite-capacity links (diagonal flows stay on-host and are
/// never a violation).
pub fn link_flows(inst: &ValidatedInstance, placement: &Placement) -> LinkFlowReport {
    let tr = inst.traffic();
    let nh = inst.n_hosts();
    let nq = inst.n_queues();
    let mut flow = vec![0.0; nh * nh];
    for (k, class) in inst.classes.iter().enumerate() {
        for q in 0..nq {
            let lh = tr.lambda_hat[k][q];
            if lh == 0.0 {
                continue;
            }
            for r in 0..nq {
                let p = class.transfer_prob[q][r];
                if p > 0.0 {
                    flow[placement.host_of(q) * nh + placement.host_of(r)] += lh * p;
                }
            }
        }
    }
    let mut violations = Vec::new();
    for h in 0..nh {
        for l in 0..nh {
            if h == l {
                continue;
            }
            let cap = inst.links.capacity(h, l);
            if flow[h * nh + l] > cap {
                violations.push(LinkViolation {
                    from: h,
                    to: l,
                    flow: flow[h * nh + l],
                    capacity: cap,
                });
            }
        }
    }
    LinkFlowReport {
        n: nh,
        flow,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_instance, Host, LinkMatrix, ServiceClass, VnfQueue};

    fn loop_instance() -> ValidatedInstance {
        // q1 -> q2 -> q3, q3 loops back to q1 with probability 0.2.
        let raw = ProblemInstance {
            hosts: vec![
                Host {
                    id: "h1".into(),
                    kappa: 10.0,
                },
                Host {
                    id: "h2".into(),
                    kappa: 10.0,
                },
            ],
            links: LinkMatrix::fully_connected(2, 3.0),
            queues: vec![VnfQueue::new("q1"), VnfQueue::new("q2"), VnfQueue::new("q3")],
            classes: vec![ServiceClass {
                id: "c1".into(),
                qos_delay: 100.0,
                external_rate: vec![1.0, 0.0, 0.0],
                entry_prob: vec![1.0, 0.0, 0.0],
                transfer_prob: vec![
                    vec![0.0, 1.0, 0.0],
                    vec![0.0, 0.0, 1.0],
                    vec![0.2, 0.0, 0.0],
                ],
            }],
            stability_margin: 1e-6,
        };
        validate_instance(raw).unwrap()
    }

    #[test]
    fn loop_inflates_rates_by_geometric_factor() {
        let v = loop_instance();
        let tr = v.traffic();
        // lambda_hat = 1 / (1 - 0.2) = 1.25 on every queue of the cycle.
        for q in 0..3 {
            assert!((tr.lambda_hat[0][q] - 1.25).abs() < 1e-12);
            assert!((tr.gamma[0][q] - 1.25).abs() < 1e-12);
        }
        assert!((tr.big_lambda[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn visit_counts_scale_with_total_rate() {
        let v = loop_instance();
        let mut raw = v.as_problem().clone();
        for r in raw.classes[0].external_rate.iter_mut() {
            *r *= 3.0;
        }
        let v3 = validate_instance(raw).unwrap();
        for q in 0..3 {
            assert!((v3.traffic().lambda_hat[0][q] - 3.0 * v.traffic().lambda_hat[0][q]).abs()
                < 1e-9);
            assert!((v3.traffic().gamma[0][q] - v.traffic().gamma[0][q]).abs() < 1e-12);
        }
    }

    #[test]
    fn response_time_rejects_saturated_queue() {
        assert!(response_time(1.0, 1.0).is_err());
        assert!((response_time(2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn delays_split_processing_and_network() {
        let v = loop_instance();
        let placement = Placement::new(vec![0, 1, 0]);
        let alloc = CpuAllocation {
            mu: vec![2.25, 2.25, 2.25],
        };
        let d = class_delays(&v, &placement, &alloc).unwrap();
        // Each queue: R = 1/(2.25 - 1.25) = 1, gamma = 1.25.
        assert!((d.processing[0] - 3.75).abs() < 1e-12);
        // Crossing hops: q1->q2, q2->q3 both cross (3 ms), q3->q1 stays.
        // gamma * p * delta = 1.25*1*3 + 1.25*1*3 = 7.5.
        assert!((d.network[0] - 7.5).abs() < 1e-12);
        assert!((d.objective - (3.75 + 7.5) / 100.0).abs() < 1e-12);
    }

    #[test]
    fn eq7_and_eq8_network_forms_agree_without_self_loops() {
        let v = loop_instance();
        let placement = Placement::new(vec![0, 1, 1]);
        let alloc = CpuAllocation {
            mu: vec![3.0, 3.0, 3.0],
        };
        let d = class_delays(&v, &placement, &alloc).unwrap();
        let full = network_latency(&v, &placement);
        assert!((d.network[0] - full[0]).abs() < 1e-12);
    }

    #[test]
    fn link_flows_catch_capacity_violations() {
        let v = loop_instance();
        let mut raw = v.as_problem().clone();
        raw.links.set_capacity(0, 1, 1.0); // q1->q2 carries 1.25
        let v = validate_instance(raw).unwrap();
        let placement = Placement::new(vec![0, 1, 0]);
        let report = link_flows(&v, &placement);
        assert!((report.flow(0, 1) - 1.25).abs() < 1e-12);
        assert_eq!(report.violations.len(), 1);
        assert_eq!((report.violations[0].from, report.violations[0].to), (0, 1));
    }
}
