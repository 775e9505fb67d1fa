//! Domain types for the placement problem: hosts, links, VNF queues and
//! service classes, plus instance validation and the static quantities
//! derived during it (spectral radii, resolved traffic).

use std::fmt;
use std::ops::Deref;

use crate::traffic::{self, TrafficSolution};

/// Slack tolerated on routing row sums before a row is rejected.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Tolerance for the entry-probability / external-rate consistency check.
pub const ENTRY_CONSISTENCY_TOL: f64 = 1e-6;
/// Spectral radii within this distance of 1 are treated as absorbing.
pub const ABSORBING_TOL: f64 = 1e-8;
/// Default stability margin: minimum service-rate headroom per queue.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Host {
    pub id: String,
    /// CPU capacity in requests/ms.
    pub kappa: f64,
}

/// Dense per-ordered-pair link parameters between hosts. Capacities use
/// `f64::INFINITY` for unbounded links; the diagonal is zero-delay.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMatrix {
    n: usize,
    delay: Vec<f64>,
    capacity: Vec<f64>,
}

impl LinkMatrix {
    pub fn new(n: usize) -> Self {
        LinkMatrix {
            n,
            delay: vec![0.0; n * n],
            capacity: vec![f64::INFINITY; n * n],
        }
    }

    /// All off-diagonal pairs share one delay, capacities unbounded.
    pub fn fully_connected(n: usize, delay: f64) -> Self {
        let mut m = LinkMatrix::new(n);
        for h in 0..n {
            for l in 0..n {
                if h != l {
                    m.set_delay(h, l, delay);
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delay(&self, h: usize, l: usize) -> f64 {
        self.delay[h * self.n + l]
    }

    pub fn set_delay(&mut self, h: usize, l: usize, v: f64) {
        self.delay[h * self.n + l] = v;
    }

    pub fn capacity(&self, h: usize, l: usize) -> f64 {
        self.capacity[h * self.n + l]
    }

    pub fn set_capacity(&mut self, h: usize, l: usize, v: f64) {
        self.capacity[h * self.n + l] = v;
    }

    /// Multiplies every off-diagonal delay by `s` (used by sweeps).
    pub fn scale_delays(&mut self, s: f64) {
        for h in 0..self.n {
            for l in 0..self.n {
                if h != l {
                    self.delay[h * self.n + l] *= s;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnfQueue {
    pub id: String,
    /// Number of replicas this VNF may be expanded into (1 = plain).
    pub instance_count: usize,
}

impl VnfQueue {
    pub fn new(id: impl Into<String>) -> Self {
        VnfQueue {
            id: id.into(),
            instance_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceClass {
    pub id: String,
    /// QoS delay bound in ms.
    pub qos_delay: f64,
    /// External arrival rate per queue, requests/ms.
    pub external_rate: Vec<f64>,
    /// Probability that a request of this class enters at each queue.
    pub entry_prob: Vec<f64>,
    /// `transfer_prob[p][q]` = probability a request moves p -> q after
    /// service at p. Row sums at most 1; the deficit is the exit probability.
    pub transfer_prob: Vec<Vec<f64>>,
}

impl ServiceClass {
    pub fn total_external_rate(&self) -> f64 {
        self.external_rate.iter().sum()
    }

    pub fn exit_prob(&self, q: usize) -> f64 {
        (1.0 - self.transfer_prob[q].iter().sum::<f64>()).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub hosts: Vec<Host>,
    pub links: LinkMatrix,
    pub queues: Vec<VnfQueue>,
    pub classes: Vec<ServiceClass>,
    /// Minimum headroom mu(q) - Lambda(q) required everywhere.
    pub stability_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationError {
    NonStochasticRouting {
        class: String,
        row: usize,
        sum: f64,
    },
    AbsorbingRouting {
        class: String,
        spectral_radius: f64,
    },
    NegativeParameter {
        location: String,
        value: f64,
    },
    DimensionMismatch {
        location: String,
        expected: usize,
        found: usize,
    },
    EntryProbability {
        class: String,
        detail: String,
    },
    NoExternalArrivals {
        class: String,
    },
    Link {
        detail: String,
    },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationError::NonStochasticRouting { class, row, sum } => write!(
                f,
                "class '{class}': routing row {row} sums to {sum}, exceeding 1"
            ),
            ValidationError::AbsorbingRouting {
                class,
                spectral_radius,
            } => write!(
                f,
                "class '{class}': routing matrix has spectral radius {spectral_radius}; \
                 requests would never exit"
            ),
            ValidationError::NegativeParameter { location, value } => {
                write!(f, "{location}: value {value} out of range")
            }
            ValidationError::DimensionMismatch {
                location,
                expected,
                found,
            } => write!(f, "{location}: expected length {expected}, found {found}"),
            ValidationError::EntryProbability { class, detail } => {
                write!(f, "class '{class}': {detail}")
            }
            ValidationError::NoExternalArrivals { class } => {
                write!(f, "class '{class}': no positive external arrival rate")
            }
            ValidationError::Link { detail } => write!(f, "links: {detail}"),
        }
    }
}

impl std::error::Error for ValidationError {}

/// A structurally checked instance. Construction runs every validation rule
/// and resolves traffic, so downstream code can assume consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedInstance {
    inst: ProblemInstance,
    spectral_radii: Vec<f64>,
    traffic: TrafficSolution,
}

impl Deref for ValidatedInstance {
    type Target = ProblemInstance;

    fn deref(&self) -> &ProblemInstance {
        &self.inst
    }
}

impl ValidatedInstance {
    pub fn n_hosts(&self) -> usize {
        self.inst.hosts.len()
    }

    pub fn n_queues(&self) -> usize {
        self.inst.queues.len()
    }

    pub fn n_classes(&self) -> usize {
        self.inst.classes.len()
    }

    pub fn spectral_radius(&self, class: usize) -> f64 {
        self.spectral_radii[class]
    }

    pub fn traffic(&self) -> &TrafficSolution {
        &self.traffic
    }

    pub fn as_problem(&self) -> &ProblemInstance {
        &self.inst
    }

    pub fn into_inner(self) -> ProblemInstance {
        self.inst
    }

    pub fn host_index(&self, id: &str) -> Option<usize> {
        self.inst.hosts.iter().position(|h| h.id == id)
    }

    pub fn queue_index(&self, id: &str) -> Option<usize> {
        self.inst.queues.iter().position(|q| q.id == id)
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.inst.classes.iter().position(|c| c.id == id)
    }

    /// True if any VNF is declared with more than one instance.
    pub fn has_replicated_vnfs(&self) -> bool {
        self.inst.queues.iter().any(|q| q.instance_count > 1)
    }
}

/// Assignment of every queue (VNF instance) to a host index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    host_of: Vec<usize>,
}

impl Placement {
    pub fn new(host_of: Vec<usize>) -> Self {
        Placement { host_of }
    }

    pub fn host_of(&self, q: usize) -> usize {
        self.host_of[q]
    }

    pub fn hosts(&self) -> &[usize] {
        &self.host_of
    }

    pub fn n_queues(&self) -> usize {
        self.host_of.len()
    }

    pub fn queues_at(&self, h: usize) -> impl Iterator<Item = usize> + '_ {
        self.host_of
            .iter()
            .enumerate()
            .filter(move |(_, &hh)| hh == h)
            .map(|(q, _)| q)
    }

    pub fn hosts_used(&self) -> usize {
        let mut seen = vec![false; self.host_of.iter().copied().max().map_or(0, |m| m + 1)];
        let mut n = 0;
        for &h in &self.host_of {
            if !seen[h] {
                seen[h] = true;
                n += 1;
            }
        }
        n
    }

    /// Shape check against an instance: right length, host indices in range.
    pub fn conforms(&self, inst: &ValidatedInstance) -> bool {
        self.host_of.len() == inst.n_queues() && self.host_of.iter().all(|&h| h < inst.n_hosts())
    }
}

/// Service rates assigned to each queue, requests/ms.
#[derive(Debug, Clone, PartialEq)]
pub struct CpuAllocation {
    pub mu: Vec<f64>,
}

/// True iff every host can carry its assigned aggregate load with the
/// stability margin reserved per queue:
/// sum of Lambda(q) over q at h, plus margin per instance, at most kappa_h.
pub fn feasible_capacity_check(inst: &ValidatedInstance, placement: &Placement) -> bool {
    let lam = &inst.traffic().big_lambda;
    let margin = inst.stability_margin;
    for (h, host) in inst.hosts.iter().enumerate() {
        let mut load = 0.0;
        let mut count = 0usize;
        for q in 0..inst.n_queues() {
            if placement.host_of(q) == h {
                load += lam[q];
                count += 1;
            }
        }
        if load + margin * count as f64 > host.kappa {
            return false;
        }
    }
    true
}

/// Spectral radius of a nonnegative square matrix by power iteration.
///
/// Growth is measured as a geometric mean over a long window, which also
/// converges for periodic chains (pure cycles) where per-step growth
/// oscillates. Nilpotent matrices collapse to zero and report 0.
pub fn spectral_radius(p: &[Vec<f64>]) -> f64 {
    let n = p.len();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / n as f64; n];
    let burn_in = 64usize;
    let max_steps = 60_000usize;
    let mut log_acc = 0.0f64;
    let mut log_at_burn = 0.0f64;
    let mut prev_est = f64::NAN;
    let mut w = vec![0.0f64; n];
    for step in 1..=max_steps {
        for (i, wi) in w.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..n {
                s += p[j][i] * v[j];
            }
            *wi = s;
        }
        let norm: f64 = w.iter().sum();
        if norm < 1e-300 {
            return 0.0;
        }
        log_acc += norm.ln();
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if step == burn_in {
            log_at_burn = log_acc;
        }
        if step > burn_in && step % 32 == 0 {
            let est = ((log_acc - log_at_burn) / (step - burn_in) as f64).exp();
            if (est - prev_est).abs() <= 1e-12 * est.max(1.0) {
                return est;
            }
            prev_est = est;
        }
    }
    prev_est
}

pub fn validate_instance(
    raw: ProblemInstance,
) -> Result<ValidatedInstance, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let nh = raw.hosts.len();
    let nq = raw.queues.len();

    if nh == 0 {
        errors.push(ValidationError::DimensionMismatch {
            location: "hosts".into(),
            expected: 1,
            found: 0,
        });
    }
    if nq == 0 {
        errors.push(ValidationError::DimensionMismatch {
            location: "vnfs".into(),
            expected: 1,
            found: 0,
        });
    }
    if raw.stability_margin < 0.0 || !raw.stability_margin.is_finite() {
        errors.push(ValidationError::NegativeParameter {
            location: "stability_margin".into(),
            value: raw.stability_margin,
        });
    }
    for h in &raw.hosts {
        if !(h.kappa > 0.0) || !h.kappa.is_finite() {
            errors.push(ValidationError::NegativeParameter {
                location: format!("host '{}' kappa", h.id),
                value: h.kappa,
            });
        }
    }
    if raw.links.n() != nh {
        errors.push(ValidationError::DimensionMismatch {
            location: "links".into(),
            expected: nh,
            found: raw.links.n(),
        });
    } else {
        for h in 0..nh {
            if raw.links.delay(h, h) != 0.0 {
                errors.push(ValidationError::Link {
                    detail: format!("self-delay of host {h} must be 0"),
                });
            }
            for l in 0..nh {
                let d = raw.links.delay(h, l);
                if d < 0.0 || !d.is_finite() {
                    errors.push(ValidationError::NegativeParameter {
                        location: format!("link delay ({h},{l})"),
                        value: d,
                    });
                }
                let c = raw.links.capacity(h, l);
                if !(c > 0.0) {
                    errors.push(ValidationError::NegativeParameter {
                        location: format!("link capacity ({h},{l})"),
                        value: c,
                    });
                }
            }
        }
    }
    for q in &raw.queues {
        if q.instance_count == 0 {
            errors.push(ValidationError::NegativeParameter {
                location: format!("vnf '{}' instances", q.id),
                value: 0.0,
            });
        }
    }

    for class in &raw.classes {
        let cid = &class.id;
        if !(class.qos_delay > 0.0) || !class.qos_delay.is_finite() {
            errors.push(ValidationError::NegativeParameter {
                location: format!("class '{cid}' qos_delay"),
                value: class.qos_delay,
            });
        }
        if class.external_rate.len() != nq {
            errors.push(ValidationError::DimensionMismatch {
                location: format!("class '{cid}' external_rate"),
                expected: nq,
                found: class.external_rate.len(),
            });
            continue;
        }
        if class.entry_prob.len() != nq {
            errors.push(ValidationError::DimensionMismatch {
                location: format!("class '{cid}' entry_prob"),
                expected: nq,
                found: class.entry_prob.len(),
            });
            continue;
        }
        if class.transfer_prob.len() != nq
            || class.transfer_prob.iter().any(|row| row.len() != nq)
        {
            errors.push(ValidationError::DimensionMismatch {
                location: format!("class '{cid}' transfer_prob"),
                expected: nq,
                found: class.transfer_prob.len(),
            });
            continue;
        }
        for (q, &r) in class.external_rate.iter().enumerate() {
            if r < 0.0 || !r.is_finite() {
                errors.push(ValidationError::NegativeParameter {
                    location: format!("class '{cid}' external_rate[{q}]"),
                    value: r,
                });
            }
        }
        let total_rate = class.total_external_rate();
        if !(total_rate > 0.0) {
            errors.push(ValidationError::NoExternalArrivals { class: cid.clone() });
        }
        let entry_sum: f64 = class.entry_prob.iter().sum();
        if class.entry_prob.iter().any(|&p| p < 0.0 || p > 1.0 + ROW_SUM_TOL) {
            errors.push(ValidationError::EntryProbability {
                class: cid.clone(),
                detail: "entry probabilities must lie in [0, 1]".into(),
            });
        } else if (entry_sum - 1.0).abs() > ROW_SUM_TOL {
            errors.push(ValidationError::EntryProbability {
                class: cid.clone(),
                detail: format!("entry probabilities sum to {entry_sum}, expected 1"),
            });
        } else if total_rate > 0.0 {
            for q in 0..nq {
                let implied = class.external_rate[q] / total_rate;
                if (class.entry_prob[q] - implied).abs() > ENTRY_CONSISTENCY_TOL {
                    errors.push(ValidationError::EntryProbability {
                        class: cid.clone(),
                        detail: format!(
                            "entry_prob[{q}] = {} inconsistent with external rates (implies {})",
                            class.entry_prob[q], implied
                        ),
                    });
                    break;
                }
            }
        }
        for (row, probs) in class.transfer_prob.iter().enumerate() {
            if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                errors.push(ValidationError::NegativeParameter {
                    location: format!("class '{cid}' transfer_prob row {row}"),
                    value: *probs
                        .iter()
                        .find(|&&p| p < 0.0 || !p.is_finite())
                        .unwrap(),
                });
                continue;
            }
            let sum: f64 = probs.iter().sum();
            if sum > 1.0 + ROW_SUM_TOL {
                errors.push(ValidationError::NonStochasticRouting {
                    class: cid.clone(),
                    row,
                    sum,
                });
            }
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }

    let mut spectral_radii = Vec::with_capacity(raw.classes.len());
    for class in &raw.classes {
        let sr = spectral_radius(&class.transfer_prob);
        if sr >= 1.0 - ABSORBING_TOL {
            errors.push(ValidationError::AbsorbingRouting {
                class: class.id.clone(),
                spectral_radius: sr,
            });
        }
        spectral_radii.push(sr);
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    match traffic::resolve(&raw) {
        Ok(traffic) => Ok(ValidatedInstance {
            inst: raw,
            spectral_radii,
            traffic,
        }),
        Err(e) => Err(vec![ValidationError::AbsorbingRouting {
            class: e.class,
            spectral_radius: f64::NAN,
        }]),
    }
}
