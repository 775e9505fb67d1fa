//! Scenario ingestion: a TOML document describing hosts, links, VNFs, and
//! service classes, with an optional pinned placement and an optional sweep
//! block. Parsing yields exactly one validated instance or a diagnostic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Deserialize;

use crate::model::{
    validate_instance, Host, LinkMatrix, Placement, ProblemInstance, ServiceClass,
    ValidatedInstance, ValidationError, VnfQueue,
};

/// Only this schema version is understood.
pub const SCHEMA_VERSION: u32 = 1;

/// Default stability margin when a scenario does not set one, requests/ms.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum ScenarioError {
    /// Syntax or schema violations, with positions where the parser has them.
    Parse { detail: String },
    UnsupportedVersion { found: u32 },
    /// Structurally valid document with inconsistent content.
    Semantic { problems: Vec<String> },
    /// The assembled instance failed model validation.
    Validation(Vec<ValidationError>),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Parse { detail } => write!(f, "parse error: {detail}"),
            ScenarioError::UnsupportedVersion { found } => {
                write!(f, "schema_version {found} not supported (expected {SCHEMA_VERSION})")
            }
            ScenarioError::Semantic { problems } => {
                write!(f, "scenario is inconsistent: {}", problems.join("; "))
            }
            ScenarioError::Validation(errs) => {
                write!(f, "instance validation failed with {} errors", errs.len())
            }
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Multiplies every inter-host link delay.
    LinkDelayScale,
    /// Multiplies every class's external arrival rates.
    ExternalRateScale,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepParameter::LinkDelayScale => write!(f, "link_delay_scale"),
            SweepParameter::ExternalRateScale => write!(f, "external_rate_scale"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Parsed scenario: the base instance plus optional pinned placement and
/// sweep description. Pinned placements keep their textual form because they
/// may name replica queues that only exist after expansion.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub instance: ValidatedInstance,
    pub pinned: Option<BTreeMap<String, String>>,
    pub sweep: Option<Sweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    schema_version: u32,
    id: String,
    #[serde(default)]
    stability_margin: Option<f64>,
    hosts: Vec<HostDoc>,
    links: LinksDoc,
    vnfs: Vec<VnfDoc>,
    classes: Vec<ClassDoc>,
    #[serde(default)]
    placement: Option<BTreeMap<String, String>>,
    #[serde(default)]
    sweep: Option<SweepDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HostDoc {
    id: String,
    kappa: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinksDoc {
    default_delay_ms: f64,
    #[serde(default)]
    default_capacity: Option<f64>,
    #[serde(default)]
    entries: Vec<LinkEntryDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkEntryDoc {
    from: String,
    to: String,
    #[serde(default)]
    delay_ms: Option<f64>,
    #[serde(default)]
    capacity: Option<f64>,
    /// Entries apply to both directions unless set to false.
    #[serde(default = "default_true")]
    symmetric: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VnfDoc {
    id: String,
    #[serde(default = "default_one")]
    instance_count: usize,
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassDoc {
    id: String,
    qos_delay_ms: f64,
    /// Queue id -> external arrival rate, requests/ms.
    external_rates: BTreeMap<String, f64>,
    /// Optional explicit entry distribution; defaults to rates normalized.
    #[serde(default)]
    entry_probs: Option<BTreeMap<String, f64>>,
    /// From-queue id -> (to-queue id -> probability).
    #[serde(default)]
    transfers: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Parses a scenario document into a validated instance.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let doc: ScenarioDoc =
        toml::from_str(text).map_err(|e| ScenarioError::Parse { detail: e.to_string() })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::UnsupportedVersion { found: doc.schema_version });
    }

    let mut problems = Vec::new();
    let host_ix: BTreeMap<&str, usize> = doc
        .hosts
        .iter()
        .enumerate()
        .map(|(i, h)| (h.id.as_str(), i))
        .collect();
    if host_ix.len() != doc.hosts.len() {
        problems.push("duplicate host ids".into());
    }
    let queue_ix: BTreeMap<&str, usize> = doc
        .vnfs
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.as_str(), i))
        .collect();
    if queue_ix.len() != doc.vnfs.len() {
        problems.push("duplicate vnf ids".into());
    }
    {
        let class_ids: BTreeSet<&str> = doc.classes.iter().map(|c| c.id.as_str()).collect();
        if class_ids.len() != doc.classes.len() {
            problems.push("duplicate class ids".into());
        }
    }

    let nh = doc.hosts.len();
    let nq = doc.vnfs.len();
    let mut links = LinkMatrix::new(nh);
    for h in 0..nh {
        for l in 0..nh {
            if h != l {
                links.set_delay(h, l, doc.links.default_delay_ms);
                if let Some(c) = doc.links.default_capacity {
                    links.set_capacity(h, l, c);
                }
            }
        }
    }
    for e in &doc.links.entries {
        let (Some(&from), Some(&to)) =
            (host_ix.get(e.from.as_str()), host_ix.get(e.to.as_str()))
        else {
            problems.push(format!("link entry references unknown host '{}'/'{}'", e.from, e.to));
            continue;
        };
        if from == to {
            problems.push(format!("link entry from '{}' to itself", e.from));
            continue;
        }
        let mut apply = |a: usize, b: usize| {
            if let Some(d) = e.delay_ms {
                links.set_delay(a, b, d);
            }
            if let Some(c) = e.capacity {
                links.set_capacity(a, b, c);
            }
        };
        apply(from, to);
        if e.symmetric {
            apply(to, from);
        }
    }

    let mut classes = Vec::new();
    for c in &doc.classes {
        let mut external = vec![0.0; nq];
        for (qid, &rate) in &c.external_rates {
            match queue_ix.get(qid.as_str()) {
                Some(&q) => external[q] = rate,
                None => problems.push(format!(
                    "class '{}' external_rates references unknown vnf '{qid}'",
                    c.id
                )),
            }
        }
        let total: f64 = external.iter().sum();
        let entry = match &c.entry_probs {
            Some(map) => {
                let mut entry = vec![0.0; nq];
                for (qid, &p) in map {
                    match queue_ix.get(qid.as_str()) {
                        Some(&q) => entry[q] = p,
                        None => problems.push(format!(
                            "class '{}' entry_probs references unknown vnf '{qid}'",
                            c.id
                        )),
                    }
                }
                entry
            }
            None if total > 0.0 => external.iter().map(|&r| r / total).collect(),
            None => vec![0.0; nq],
        };
        let mut transfer = vec![vec![0.0; nq]; nq];
        for (from_id, row) in &c.transfers {
            let Some(&from) = queue_ix.get(from_id.as_str()) else {
                problems.push(format!(
                    "class '{}' transfers references unknown vnf '{from_id}'",
                    c.id
                ));
                continue;
            };
            for (to_id, &p) in row {
                match queue_ix.get(to_id.as_str()) {
                    Some(&to) => transfer[from][to] = p,
                    None => problems.push(format!(
                        "class '{}' transfers references unknown vnf '{to_id}'",
                        c.id
                    )),
                }
            }
        }
        classes.push(ServiceClass {
            id: c.id.clone(),
            qos_delay: c.qos_delay_ms,
            external_rate: external,
            entry_prob: entry,
            transfer_prob: transfer,
        });
    }

    if let Some(pinned) = &doc.placement {
        for (qid, hid) in pinned {
            // Replica names like "q#2" become valid only after expansion.
            let base = qid.split('#').next().unwrap_or(qid);
            if !queue_ix.contains_key(qid.as_str()) && !queue_ix.contains_key(base) {
                problems.push(format!("placement references unknown vnf '{qid}'"));
            }
            if !host_ix.contains_key(hid.as_str()) {
                problems.push(format!("placement references unknown host '{hid}'"));
            }
        }
    }
    if let Some(sweep) = &doc.sweep {
        if sweep.values.is_empty() {
            problems.push("sweep block has no values".into());
        }
        if sweep.values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            problems.push("sweep values must be positive and finite".into());
        }
    }
    if !problems.is_empty() {
        return Err(ScenarioError::Semantic { problems });
    }

    let instance = validate_instance(ProblemInstance {
        hosts: doc
            .hosts
            .iter()
            .map(|h| Host { id: h.id.clone(), kappa: h.kappa })
            .collect(),
        links,
        queues: doc
            .vnfs
            .iter()
            .map(|q| VnfQueue { id: q.id.clone(), instance_count: q.instance_count })
            .collect(),
        classes,
        stability_margin: doc.stability_margin.unwrap_or(DEFAULT_STABILITY_MARGIN),
    })
    .map_err(ScenarioError::Validation)?;

    Ok(Scenario {
        id: doc.id,
        instance,
        pinned: doc.placement,
        sweep: doc.sweep.map(|s| Sweep { parameter: s.parameter, values: s.values }),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    parameter: SweepParameter,
    values: Vec<f64>,
}

/// Applies one sweep value to the base instance and re-validates.
pub fn apply_sweep_value(
    base: &ValidatedInstance,
    parameter: SweepParameter,
    value: f64,
) -> Result<ValidatedInstance, Vec<ValidationError>> {
    let mut raw = base.as_problem().clone();
    match parameter {
        SweepParameter::LinkDelayScale => raw.links.scale_delays(value),
        SweepParameter::ExternalRateScale => {
            for class in raw.classes.iter_mut() {
                for r in class.external_rate.iter_mut() {
                    *r *= value;
                }
            }
        }
    }
    validate_instance(raw)
}

/// Resolves a pinned placement against an instance, matching queue ids
/// exactly. Queues missing from the map make the resolution fail.
pub fn resolve_placement(
    inst: &ValidatedInstance,
    pinned: &BTreeMap<String, String>,
) -> Result<Placement, ScenarioError> {
    let mut problems = Vec::new();
    let mut host_of = Vec::with_capacity(inst.n_queues());
    for q in &inst.queues {
        match pinned.get(&q.id) {
            Some(hid) => match inst.host_index(hid) {
                Some(h) => host_of.push(h),
                None => problems.push(format!("placement references unknown host '{hid}'")),
            },
            None => problems.push(format!("no pinned host for vnf '{}'", q.id)),
        }
    }
    if problems.is_empty() {
        Ok(Placement::new(host_of))
    } else {
        Err(ScenarioError::Semantic { problems })
    }
}

/// Bundled scenario corpus, embedded so the binary needs no data directory.
pub mod corpus {
    macro_rules! scenario_files {
        ($($name:ident => $file:literal),+ $(,)?) => {
            $(pub const $name: &str =
                include_str!(concat!("../scenarios/", $file));)+

            /// Every bundled scenario as (file stem, contents).
            pub fn all() -> Vec<(&'static str, &'static str)> {
                vec![$((
                    {
                        let f: &str = $file;
                        &f[..f.len() - ".toml".len()]
                    },
                    $name,
                )),+]
            }
        };
    }

    scenario_files! {
        EXAMPLE1_FIG4 => "example1_fig4.toml",
        EXAMPLE2 => "example2.toml",
        EXAMPLE3 => "example3.toml",
        FIG3_EQUAL_QOS => "fig3_equal_qos.toml",
        FIG3_UNEQUAL_QOS => "fig3_unequal_qos.toml",
        CHAIN_DELTA => "chain_delta.toml",
        CHAIN_RATE => "chain_rate.toml",
        LIGHT_MESH_DELTA => "light_mesh_delta.toml",
        LIGHT_MESH_RATE => "light_mesh_rate.toml",
        HEAVY_MESH_DELTA => "heavy_mesh_delta.toml",
        HEAVY_MESH_RATE => "heavy_mesh_rate.toml",
        HEAVY_MESH_MULTICLASS => "heavy_mesh_multiclass.toml",
        MULTI_INSTANCE_CHAIN => "multi_instance_chain.toml",
        SPLIT_ORACLE => "split_oracle.toml",
        EXTREME_MESH_DEG4 => "extreme_mesh_deg4.toml",
        EXTREME_MESH_DEG6 => "extreme_mesh_deg6.toml",
    }

    /// Looks a scenario up by its file stem.
    pub fn by_name(name: &str) -> Option<&'static str> {
        all().into_iter().find(|(n, _)| *n == name).map(|(_, text)| text)
    }
}
