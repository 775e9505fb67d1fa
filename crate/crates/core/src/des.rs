//! Discrete-event simulation of the queuing network: Poisson external
//! arrivals per class, exponential FCFS service at the allocated rates,
//! probabilistic routing, and deterministic inter-host link delays. The
//! simulator shares no formulas with the analytic delay model, so agreement
//! between the two is evidence rather than tautology.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};

use crate::model::{CpuAllocation, Placement, ValidatedInstance};
use crate::traffic::DelayBreakdown;

/// Relative slack added to confidence intervals when judging agreement with
/// analytic values; absorbs residual transient bias.
pub const COMPARE_SLACK: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Request exits discarded before measurement starts.
    pub warmup_requests: usize,
    /// Request exits measured after warmup.
    pub measured_requests: usize,
    /// Batches for the batch-means confidence intervals.
    pub batch_count: usize,
    /// Backlog at any queue beyond which the run is declared unstable.
    pub queue_bound: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            warmup_requests: 10_000,
            measured_requests: 100_000,
            batch_count: 20,
            queue_bound: 1_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.batch_count < 10 {
            return Err(SimError::BadConfig {
                detail: format!("need at least 10 batches, got {}", self.batch_count),
            });
        }
        if self.measured_requests < 10 * self.batch_count {
            return Err(SimError::BadConfig {
                detail: format!(
                    "need at least {} measured requests for {} batches",
                    10 * self.batch_count,
                    self.batch_count
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum SimError {
    BadConfig { detail: String },
    /// A queue's backlog exceeded the configured bound.
    Unstable { queue: usize, backlog: usize },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::BadConfig { detail } => write!(f, "bad simulation config: {detail}"),
            SimError::Unstable { queue, backlog } => {
                write!(f, "queue {queue} backlog reached {backlog}; system unstable")
            }
        }
    }
}

impl std::error::Error for SimError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDelayEstimate {
    pub mean: f64,
    /// 95% half-width from batch means; infinite when samples are too few.
    pub half_width: f64,
}

impl ClassDelayEstimate {
    pub fn contains(&self, value: f64) -> bool {
        (value - self.mean).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// Generator driving all randomness, recorded for reproducibility.
    pub rng_algorithm: String,
    pub class_delay: Vec<ClassDelayEstimate>,
    /// Mean request rate over each ordered host pair; diagonal entries are
    /// same-host transfers.
    pub link_flow: Vec<Vec<f64>>,
    /// Fraction of measured time each queue's server was busy.
    pub utilization: Vec<f64>,
    /// Time-average number in system per queue.
    pub mean_in_system: Vec<f64>,
    /// Mean per-visit sojourn (wait plus service) per queue.
    pub mean_sojourn: Vec<f64>,
    /// Observed arrival rate per queue during measurement.
    pub arrival_rate: Vec<f64>,
    pub measured_requests: usize,
    pub measured_time: f64,
}

/// Student-t 97.5% quantile for small degrees of freedom, normal beyond.
fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
        2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
        2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= TABLE.len() {
        TABLE[df - 1]
    } else {
        1.96
    }
}

/// Batch-means estimate over samples in arrival order. Batches must be long
/// relative to the system's correlation time for the interval to be honest;
/// the caller controls that through sample counts.
fn batch_means(samples: &[f64], batches: usize) -> ClassDelayEstimate {
    let size = samples.len() / batches;
    if size == 0 {
        let mean = if samples.is_empty() {
            f64::NAN
        } else {
            samples.iter().sum::<f64>() / samples.len() as f64
        };
        return ClassDelayEstimate { mean, half_width: f64::INFINITY };
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| samples[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    ClassDelayEstimate {
        mean: grand,
        half_width: t_quantile_975(batches - 1) * (var / batches as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy)]
enum EvKind {
    /// Next external arrival of one (class, queue) Poisson stream.
    External { stream: usize },
    /// A request reaches a queue after a link traversal.
    Arrival { queue: usize, class: usize, born: f64 },
    /// The job at the head of a queue finishes service.
    Departure { queue: usize },
}

struct Event {
    time: f64,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct QueueState {
    /// FCFS backlog; the head entry is in service. (class, born, entered).
    fifo: VecDeque<(usize, f64, f64)>,
    service: Exp<f64>,
    host: usize,
    /// Instrumentation, reset when measurement starts.
    last_flush: f64,
    area: f64,
    busy_time: f64,
    arrivals: u64,
    sojourn_sum: f64,
    sojourn_count: u64,
}

struct Sim<'a> {
    inst: &'a ValidatedInstance,
    rng: ChaCha12Rng,
    heap: BinaryHeap<Event>,
    seq: u64,
    queues: Vec<QueueState>,
    /// (class, queue, interarrival distribution) per positive external rate.
    streams: Vec<(usize, usize, Exp<f64>)>,
    /// Cumulative routing row per (class, queue); a uniform draw above the
    /// last entry means the request leaves the network.
    routing_cum: Vec<Vec<Vec<f64>>>,
    link_count: Vec<Vec<u64>>,
    samples: Vec<Vec<f64>>,
    exits: usize,
    measuring: bool,
    measure_start: f64,
    cfg: SimConfig,
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, kind: EvKind) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, kind });
    }

    /// Folds elapsed time into the queue's area and busy integrals.
    fn flush(&mut self, q: usize, t: f64) {
        let qs = &mut self.queues[q];
        let dt = t - qs.last_flush;
        let n = qs.fifo.len() as f64;
        qs.area += n * dt;
        if n > 0.0 {
            qs.busy_time += dt;
        }
        qs.last_flush = t;
    }

    fn arrive(&mut self, t: f64, queue: usize, class: usize, born: f64) -> Result<(), SimError> {
        self.flush(queue, t);
        let qs = &mut self.queues[queue];
        qs.fifo.push_back((class, born, t));
        if self.measuring {
            qs.arrivals += 1;
        }
        if qs.fifo.len() > self.cfg.queue_bound {
            return Err(SimError::Unstable { queue, backlog: qs.fifo.len() });
        }
        if qs.fifo.len() == 1 {
            let s = qs.service.sample(&mut self.rng);
            self.push(t + s, EvKind::Departure { queue });
        }
        Ok(())
    }

    /// Completes service at a queue; returns true once the measurement
    /// target is reached by an exiting request.
    fn depart(&mut self, t: f64, queue: usize) -> Result<bool, SimError> {
        self.flush(queue, t);
        let (class, born, entered) = self.queues[queue]
            .fifo
            .pop_front()
            .expect("departure from an empty queue");
        if self.measuring {
            let qs = &mut self.queues[queue];
            qs.sojourn_sum += t - entered;
            qs.sojourn_count += 1;
        }
        if !self.queues[queue].fifo.is_empty() {
            let s = self.queues[queue].service.sample(&mut self.rng);
            self.push(t + s, EvKind::Departure { queue });
        }
        // Route onward or exit.
        let u: f64 = self.rng.random();
        let row = &self.routing_cum[class][queue];
        let mut dest = None;
        for (r, &cum) in row.iter().enumerate() {
            if u < cum {
                dest = Some(r);
                break;
            }
        }
        match dest {
            Some(r) => {
                let from = self.queues[queue].host;
                let to = self.queues[r].host;
                if self.measuring {
                    self.link_count[from][to] += 1;
                }
                let delay = self.inst.links.delay(from, to);
                if delay > 0.0 {
                    self.push(t + delay, EvKind::Arrival { queue: r, class, born });
                } else {
                    self.arrive(t, r, class, born)?;
                }
                Ok(false)
            }
            None => Ok(self.on_exit(t, class, born)),
        }
    }

    /// Handles one request leaving the network; returns true when the
    /// measurement target has been reached.
    fn on_exit(&mut self, t: f64, class: usize, born: f64) -> bool {
        self.exits += 1;
        if self.measuring {
            self.samples[class].push(t - born);
            if self.samples.iter().map(Vec::len).sum::<usize>() >= self.cfg.measured_requests {
                return true;
            }
        } else if self.exits >= self.cfg.warmup_requests {
            self.begin_measurement(t);
        }
        false
    }

    fn begin_measurement(&mut self, t: f64) {
        for q in 0..self.queues.len() {
            self.flush(q, t);
            let qs = &mut self.queues[q];
            qs.area = 0.0;
            qs.busy_time = 0.0;
            qs.arrivals = 0;
            qs.sojourn_sum = 0.0;
            qs.sojourn_count = 0;
        }
        for row in self.link_count.iter_mut() {
            row.fill(0);
        }
        self.measuring = true;
        self.measure_start = t;
    }

    fn report(mut self, t_end: f64) -> SimReport {
        for q in 0..self.queues.len() {
            self.flush(q, t_end);
        }
        let span = t_end - self.measure_start;
        let class_delay = self
            .samples
            .iter()
            .map(|s| batch_means(s, self.cfg.batch_count))
            .collect();
        SimReport {
            rng_algorithm: "chacha12".into(),
            class_delay,
            link_flow: self
                .link_count
                .iter()
                .map(|row| row.iter().map(|&c| c as f64 / span).collect())
                .collect(),
            utilization: self.queues.iter().map(|q| q.busy_time / span).collect(),
            mean_in_system: self.queues.iter().map(|q| q.area / span).collect(),
            mean_sojourn: self
                .queues
                .iter()
                .map(|q| {
                    if q.sojourn_count == 0 {
                        f64::NAN
                    } else {
                        q.sojourn_sum / q.sojourn_count as f64
                    }
                })
                .collect(),
            arrival_rate: self
                .queues
                .iter()
                .map(|q| q.arrivals as f64 / span)
                .collect(),
            measured_requests: self.samples.iter().map(Vec::len).sum(),
            measured_time: span,
        }
    }
}

/// Runs the network simulation and reports batch-means delay estimates plus
/// per-queue and per-link measurements.
pub fn simulate(
    inst: &ValidatedInstance,
    placement: &Placement,
    alloc: &CpuAllocation,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let (nh, nq, nk) = (inst.n_hosts(), inst.n_queues(), inst.n_classes());
    assert!(placement.conforms(inst), "placement does not fit the instance");
    assert_eq!(alloc.mu.len(), nq, "one service rate per queue");
    assert!(
        alloc.mu.iter().all(|&m| m > 0.0 && m.is_finite()),
        "service rates must be positive"
    );

    let queues = (0..nq)
        .map(|q| QueueState {
            fifo: VecDeque::new(),
            service: Exp::new(alloc.mu[q]).expect("positive service rate"),
            host: placement.host_of(q),
            last_flush: 0.0,
            area: 0.0,
            busy_time: 0.0,
            arrivals: 0,
            sojourn_sum: 0.0,
            sojourn_count: 0,
        })
        .collect();
    let mut streams = Vec::new();
    for (k, class) in inst.classes.iter().enumerate() {
        for (q, &rate) in class.external_rate.iter().enumerate() {
            if rate > 0.0 {
                streams.push((k, q, Exp::new(rate).expect("positive rate")));
            }
        }
    }
    let routing_cum = inst
        .classes
        .iter()
        .map(|class| {
            class
                .transfer_prob
                .iter()
                .map(|row| {
                    row.iter()
                        .scan(0.0, |acc, &p| {
                            *acc += p;
                            Some(*acc)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut sim = Sim {
        inst,
        rng: ChaCha12Rng::seed_from_u64(cfg.seed),
        heap: BinaryHeap::new(),
        seq: 0,
        queues,
        streams,
        routing_cum,
        link_count: vec![vec![0; nh]; nh],
        samples: vec![Vec::new(); nk],
        exits: 0,
        measuring: false,
        measure_start: 0.0,
        cfg: *cfg,
    };

    for s in 0..sim.streams.len() {
        let dt = sim.streams[s].2.sample(&mut sim.rng);
        sim.push(dt, EvKind::External { stream: s });
    }

    loop {
        let ev = sim
            .heap
            .pop()
            .expect("external streams keep the event heap nonempty");
        let t = ev.time;
        match ev.kind {
            EvKind::External { stream } => {
                let (class, queue, dist) = sim.streams[stream];
                let dt = dist.sample(&mut sim.rng);
                sim.push(t + dt, EvKind::External { stream });
                sim.arrive(t, queue, class, t)?;
            }
            EvKind::Arrival { queue, class, born } => {
                sim.arrive(t, queue, class, born)?;
            }
            EvKind::Departure { queue } => {
                if sim.depart(t, queue)? {
                    return Ok(sim.report(t));
                }
            }
        }
    }
}

/// Verdict of one class's analytic-versus-simulated comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassVerdict {
    pub class: usize,
    pub pass: bool,
    pub analytic: f64,
    pub simulated: f64,
    /// Absolute tolerance applied: CI half-width plus relative slack.
    pub tolerance: f64,
}

/// PASS per class when the analytic total delay lies inside the simulated
/// 95% interval widened by a small relative slack.
pub fn compare_to_analytic(report: &SimReport, analytic: &DelayBreakdown) -> Vec<ClassVerdict> {
    report
        .class_delay
        .iter()
        .enumerate()
        .map(|(k, est)| {
            let tolerance = est.half_width + COMPARE_SLACK * analytic.total[k];
            ClassVerdict {
                class: k,
                pass: (analytic.total[k] - est.mean).abs() <= tolerance,
                analytic: analytic.total[k],
                simulated: est.mean,
                tolerance,
            }
        })
        .collect()
}
