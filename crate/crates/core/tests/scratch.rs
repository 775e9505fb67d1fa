use vnfp::allocation::optimize_allocation;
use vnfp::baselines::{affinity_place, brute_force, greedy_place};
use vnfp::maxz::run_maxz;
use vnfp::model::{Placement, ValidatedInstance};
use vnfp::scenario::{apply_sweep_value, corpus, parse_scenario};

fn objective(inst: &ValidatedInstance, placement: &Placement) -> f64 {
    optimize_allocation(inst, placement).map(|a| a.rho).unwrap_or(f64::INFINITY)
}

#[test]
#[ignore]
fn probe_panic() {
    let sc = parse_scenario(corpus::HEAVY_MESH_DELTA).unwrap();
    for scale in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0] {
        let inst = apply_sweep_value(&sc.instance, vnfp::scenario::SweepParameter::LinkDelayScale, scale).unwrap();
        match run_maxz(&inst) {
            Ok(res) => {
                let hosts: std::collections::BTreeSet<_> = res.placement.hosts().iter().copied().collect();
                println!(
                    "scale {scale:4}: ok  hosts={} obj={:.4}",
                    hosts.len(),
                    objective(&inst, &res.placement)
                );
            }
            Err(e) => println!("scale {scale:4}: ERR {e:?}"),
        }
    }
}

#[test]
#[ignore]
fn probe_sweeps() {
    for name in ["chain_delta", "light_mesh_delta", "heavy_mesh_delta", "chain_rate", "light_mesh_rate", "heavy_mesh_rate"] {
        let sc = parse_scenario(corpus::by_name(name).unwrap()).unwrap();
        let sweep = sc.sweep.clone().unwrap();
        println!("=== {name} ===");
        for &v in &sweep.values {
            let inst = apply_sweep_value(&sc.instance, sweep.parameter, v).unwrap();
            let brute = brute_force(&inst, None).unwrap();
            let greedy = greedy_place(&inst).unwrap();
            let affinity = affinity_place(&inst).unwrap();
            let b_obj = brute.objective;
            let g_obj = objective(&inst, &greedy);
            let a_obj = objective(&inst, &affinity);
            match run_maxz(&inst) {
                Ok(m) => {
                    let m_obj = objective(&inst, &m.placement);
                    let hosts: std::collections::BTreeSet<_> = m.placement.hosts().iter().copied().collect();
                    let bhosts: std::collections::BTreeSet<_> = brute.placement.hosts().iter().copied().collect();
                    println!(
                        "v={v:5.2} maxz h={} {m_obj:8.4} | brute h={} {b_obj:8.4} | greedy {g_obj:8.4} | aff {a_obj:8.4} | gap {:+.3} | mz {:?} br {:?}",
                        hosts.len(),
                        bhosts.len(),
                        m_obj / b_obj - 1.0,
                        m.placement.hosts(),
                        brute.placement.hosts(),
                    );
                }
                Err(e) => println!("v={v:5.2} maxz ERR {e:?} | brute {b_obj:8.4}"),
            }
        }
    }
}

#[test]
#[ignore]
fn probe_barrier_failure() {
    use vnfp::maxz::{build_relaxation, z_scores, PartialPlacement, RELAXATION_TOL};
    let sc = parse_scenario(corpus::LIGHT_MESH_DELTA).unwrap();
    let inst = apply_sweep_value(&sc.instance, vnfp::scenario::SweepParameter::LinkDelayScale, 2.0).unwrap();
    let mut fixed = PartialPlacement::empty(inst.n_queues());
    for it in 0..inst.n_queues() {
        let relaxation = build_relaxation(&inst, &fixed);
        match relaxation.solve(RELAXATION_TOL) {
            Ok(rel) => {
                let scores = z_scores(&rel, &inst, &fixed);
                let mut best: Option<(f64, usize, usize)> = None;
                for h in 0..inst.n_hosts() {
                    for q in 0..inst.n_queues() {
                        if scores.placed[q] {
                            continue;
                        }
                        if best.map_or(true, |(bz, _, _)| scores.z[h][q] > bz + 1e-7) {
                            best = Some((scores.z[h][q], h, q));
                        }
                    }
                }
                let (z, h, q) = best.unwrap();
                println!("iter {it}: fix q{q} on h{h} (z={z:.4}, rho~{:.4})", rel.rho);
                fixed.fix(q, h);
            }
            Err(e) => {
                println!("iter {it}: SOLVE FAILED {e:?}");
                break;
            }
        }
    }
}

#[test]
#[ignore]
fn probe_barrier_trace() {
    use vnfp::maxz::{build_relaxation, PartialPlacement, RELAXATION_TOL};
    let sc = parse_scenario(corpus::LIGHT_MESH_DELTA).unwrap();
    let inst = apply_sweep_value(&sc.instance, vnfp::scenario::SweepParameter::LinkDelayScale, 2.0).unwrap();
    let mut fixed = PartialPlacement::empty(inst.n_queues());
    fixed.fix(1, 0);
    let relaxation = build_relaxation(&inst, &fixed);
    let out = relaxation.solve(RELAXATION_TOL);
    println!("result: {:?}", out.map(|r| r.rho));
}

#[test]
#[ignore]
fn probe_trace_rate() {
    use vnfp::maxz::run_maxz;
    let name = std::env::var("PROBE_SCENARIO").unwrap_or_else(|_| "chain_rate".into());
    let scale: f64 = std::env::var("PROBE_SCALE").map(|s| s.parse().unwrap()).unwrap_or(1.73);
    let param = if name.ends_with("rate") {
        vnfp::scenario::SweepParameter::ExternalRateScale
    } else {
        vnfp::scenario::SweepParameter::LinkDelayScale
    };
    let sc = parse_scenario(corpus::by_name(&name).unwrap()).unwrap();
    let inst = apply_sweep_value(&sc.instance, param, scale).unwrap();
    let tr = inst.traffic();
    println!("lambda: {:?}", tr.big_lambda.iter().map(|l| (l * 100.0).round() / 100.0).collect::<Vec<_>>());
    let out = run_maxz(&inst).unwrap();
    for (i, it) in out.trace.iter().enumerate() {
        let (h, q) = it.chosen;
        println!("iter {i}: fix q{q} -> h{h}   rho~{:.4}", it.relaxed.rho);
        for hh in 0..inst.n_hosts() {
            let zrow: Vec<String> = (0..inst.n_queues())
                .map(|qq| format!("{:.3}", it.scores.z[hh][qq]))
                .collect();
            let arow: Vec<String> = (0..inst.n_queues())
                .map(|qq| format!("{:.3}", it.relaxed.a_tilde[hh][qq]))
                .collect();
            let prow: Vec<String> = (0..inst.n_queues())
                .map(|qq| format!("{:.3}", it.relaxed.psi[hh][qq]))
                .collect();
            println!("  h{hh} z=[{}] a=[{}] psi=[{}]", zrow.join(" "), arow.join(" "), prow.join(" "));
        }
    }
    println!("final: {:?}", out.placement.hosts());
}

// ---- corpus tuning probe ----

use vnfp::model::{validate_instance, Host, LinkMatrix, ProblemInstance, ServiceClass, VnfQueue};

fn make3(names: &[&str], transfer: Vec<Vec<f64>>, delta: f64, rate: f64) -> ValidatedInstance {
    let nq = names.len();
    let mut ext = vec![0.0; nq];
    ext[0] = rate;
    let mut entry = vec![0.0; nq];
    entry[0] = 1.0;
    validate_instance(ProblemInstance {
        hosts: (0..3).map(|h| Host { id: format!("h{h}"), kappa: 10.0 }).collect(),
        links: LinkMatrix::fully_connected(3, delta),
        queues: names.iter().map(|q| VnfQueue::new(*q)).collect(),
        classes: vec![ServiceClass {
            id: "rt".into(),
            qos_delay: 500.0,
            external_rate: ext,
            entry_prob: entry,
            transfer_prob: transfer,
        }],
        stability_margin: vnfp::model::DEFAULT_STABILITY_MARGIN,
    })
    .unwrap()
}

fn envf(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

// chain: attenuating pipeline with restart. Stages s1..s5 taper linearly from
// g1 down to g6 (each stage may complete the request), s5->s6 always, and s6
// restarts at s1 with probability p derived from the entry amplification.
fn chain_inst(delta: f64, rate: f64) -> ValidatedInstance {
    let l = envf("TUNE_CHAIN_L", 9.67);
    let g1 = envf("TUNE_CHAIN_G1", 1.908);
    let g6 = envf("TUNE_CHAIN_G6", 1.40);
    let d = (l - g6 - 5.0 * g1) / 10.0;
    let gam: Vec<f64> = (0..5).map(|i| g1 + d * i as f64).chain([g6]).collect();
    let p = (g1 - 1.0) / g6;
    assert!(d < 0.0 && gam[4] >= g6 && p > 0.0 && p < 1.0, "bad chain knobs");
    let mut t = vec![vec![0.0; 6]; 6];
    for i in 0..5 {
        t[i][i + 1] = gam[i + 1] / gam[i];
        assert!(t[i][i + 1] <= 1.0, "bad chain taper");
    }
    t[5][0] = p;
    make3(&["s1", "s2", "s3", "s4", "s5", "s6"], t, delta, rate)
}

// light mesh: ingress->{filter_a w, filter_b 1-w}; filters->merge; merge->serve;
// serve->egress q (else exit); egress->ingress p2 (else exit).
fn light_inst(delta: f64, rate: f64) -> ValidatedInstance {
    let q = envf("TUNE_LIGHT_Q", 0.6995);
    let p2 = envf("TUNE_LIGHT_P2", 0.74);
    let w = envf("TUNE_LIGHT_W", 0.5);
    let mut t = vec![vec![0.0; 6]; 6];
    t[0][1] = w;
    t[0][2] = 1.0 - w;
    t[1][3] = 1.0;
    t[2][3] = 1.0;
    t[3][4] = 1.0;
    t[4][5] = q;
    t[5][0] = p2;
    make3(&["ingress", "filter_a", "filter_b", "merge", "serve", "egress"], t, delta, rate)
}

// heavy mesh: 6-cycle front->pa->pb->pc->assemble->egress with forward-skip
// chords c at each stage, an inner retry edge pb->pa b, and egress->front loop.
// The loop probability is derived from the target total load L.
fn heavy_inst(delta: f64, rate: f64) -> ValidatedInstance {
    let l = envf("TUNE_HEAVY_L", 9.70);
    let c = envf("TUNE_HEAVY_C", 0.10);
    let b = envf("TUNE_HEAVY_B", 0.28);
    // Per-visit rates relative to front: exits occur only at egress, so the
    // egress rate equals the front rate and the loop closes consistently.
    let ra = ((1.0 - c) + b * c) / (1.0 - b * (1.0 - c));
    let rb = c + (1.0 - c) * ra;
    let rc = c * ra + (1.0 - b - c) * rb;
    let rasm = c * rb + (1.0 - c) * rc;
    let reg = c * rc + rasm;
    assert!((reg - 1.0).abs() < 1e-9, "egress rate should match front rate");
    let m = 2.0 + ra + rb + rc + rasm;
    let gf = l / m;
    let p = 1.0 - 1.0 / gf;
    assert!(p > 0.0 && p < 1.0 && b + c < 1.0, "bad heavy knobs");
    let mut t = vec![vec![0.0; 6]; 6];
    // 0 front, 1 pa, 2 pb, 3 pc, 4 assemble, 5 egress
    t[0][1] = 1.0 - c;
    t[0][2] = c;
    t[1][2] = 1.0 - c;
    t[1][3] = c;
    t[2][1] = b;
    t[2][3] = 1.0 - b - c;
    t[2][4] = c;
    t[3][4] = 1.0 - c;
    t[3][5] = c;
    t[4][5] = 1.0;
    t[5][0] = p;
    make3(&["front", "proc_a", "proc_b", "proc_c", "assemble", "egress"], t, delta, rate)
}

fn eval_cells(label: &str, build: &dyn Fn(f64, f64) -> ValidatedInstance, dgrid: &[f64], rgrid: &[f64]) {
    let inst0 = build(50.0, 1.0);
    let tr = inst0.traffic();
    let l: f64 = tr.big_lambda.iter().sum();
    let g: Vec<String> = tr.big_lambda.iter().map(|x| format!("{x:.3}")).collect();
    println!("=== {label}: L={l:.4} gamma=[{}] ===", g.join(" "));
    for (tag, grid) in [("delta", dgrid), ("rate", rgrid)] {
        let mut bad = 0;
        for &v in grid {
            let inst = if tag == "delta" { build(v, 1.0) } else { build(50.0, v) };
            let br = brute_force(&inst, None).unwrap();
            let gr = objective(&inst, &greedy_place(&inst).unwrap());
            let af = objective(&inst, &affinity_place(&inst).unwrap());
            let (mz, mzp) = match run_maxz(&inst) {
                Ok(r) => (objective(&inst, &r.placement), format!("{:?}", r.placement.hosts())),
                Err(e) => (f64::INFINITY, format!("ERR {e:?}")),
            };
            let gap = mz / br.objective - 1.0;
            let mut flags = String::new();
            if gap > 0.15 {
                flags.push_str(" GAP");
                bad += 1;
            }
            if mz > gr * (1.0 + 1e-9) {
                flags.push_str(" >greedy");
            }
            if mz > af * (1.0 + 1e-9) {
                flags.push_str(" >aff");
            }
            println!(
                "  {tag} {v:7.2}: mz={mz:.4} br={:.4} gr={gr:.4} af={af:.4} gap={gap:+.3} mzp={mzp} brp={:?}{flags}",
                br.objective,
                br.placement.hosts()
            );
        }
        println!("  -> {tag}: {bad} bad cells");
    }
}

#[test]
#[ignore]
fn probe_tune() {
    let dgrid: Vec<f64> = (1..=8).map(|i| 50.0 * i as f64).collect();
    let rgrid = [0.1, 0.37, 0.64, 0.91, 1.19, 1.46, 1.73, 2.0];
    let which = std::env::var("TUNE_GRAPH").unwrap_or_else(|_| "all".into());
    if which == "all" || which == "chain" {
        eval_cells("chain", &chain_inst, &dgrid, &rgrid);
    }
    if which == "all" || which == "light" {
        eval_cells("light", &light_inst, &dgrid, &rgrid);
    }
    if which == "all" || which == "heavy" {
        eval_cells("heavy", &heavy_inst, &dgrid, &rgrid);
    }
}

#[test]
#[ignore]
fn probe_thresholds() {
    let which = std::env::var("TUNE_GRAPH").unwrap_or_else(|_| "all".into());
    let builders: Vec<(&str, &dyn Fn(f64, f64) -> ValidatedInstance)> = vec![
        ("chain", &chain_inst),
        ("light", &light_inst),
        ("heavy", &heavy_inst),
    ];
    for (label, build) in builders {
        if which != "all" && which != label {
            continue;
        }
        // Scan delta at s=1: report hosts-used for maxz and brute at each point.
        let mut mz_last_split = 0.0;
        let mut mz_first_co = f64::NAN;
        let mut br_last_split = 0.0;
        let mut br_first_co = f64::NAN;
        for i in 0..=12 {
            let d = 40.0 + 10.0 * i as f64;
            let inst = build(d, 1.0);
            let br = brute_force(&inst, None).unwrap();
            let bh: std::collections::BTreeSet<_> = br.placement.hosts().iter().copied().collect();
            let mh = match run_maxz(&inst) {
                Ok(r) => r.placement.hosts().iter().copied().collect::<std::collections::BTreeSet<_>>().len(),
                Err(_) => 0,
            };
            if mh > 1 {
                mz_last_split = d;
            } else if mz_first_co.is_nan() {
                mz_first_co = d;
            }
            if bh.len() > 1 {
                br_last_split = d;
            } else if br_first_co.is_nan() {
                br_first_co = d;
            }
        }
        println!(
            "{label}: delta@s=1  mz split..{mz_last_split} co from {mz_first_co} | brute split..{br_last_split} co from {br_first_co}"
        );
        // Scan s at delta=50 around the protected cell.
        for i in 0..=10 {
            let s = 0.85 + 0.02 * i as f64;
            let inst = build(50.0, s);
            let br = brute_force(&inst, None).unwrap();
            let bh: std::collections::BTreeSet<_> = br.placement.hosts().iter().copied().collect();
            let (mh, mo) = match run_maxz(&inst) {
                Ok(r) => (
                    r.placement.hosts().iter().copied().collect::<std::collections::BTreeSet<_>>().len(),
                    objective(&inst, &r.placement),
                ),
                Err(_) => (0, f64::INFINITY),
            };
            println!(
                "  {label} s={s:.2}: mz hosts={mh} obj={mo:.4} | brute hosts={} obj={:.4} | gap {:+.3}",
                bh.len(),
                br.objective,
                mo / br.objective - 1.0
            );
        }
    }
}

#[test]
#[ignore]
fn probe_trace_tune() {
    let graph = std::env::var("PROBE_GRAPH").unwrap_or_else(|_| "chain".into());
    let delta = envf("PROBE_DELTA", 50.0);
    let rate = envf("PROBE_RATE", 1.0);
    let inst = match graph.as_str() {
        "chain" => chain_inst(delta, rate),
        "light" => light_inst(delta, rate),
        _ => heavy_inst(delta, rate),
    };
    let tr = inst.traffic();
    println!("lambda: {:?}", tr.big_lambda.iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    match run_maxz(&inst) {
        Err(e) => println!("ERR {e:?}"),
        Ok(out) => {
            for (i, it) in out.trace.iter().enumerate() {
                let (h, q) = it.chosen;
                println!("iter {i}: fix q{q} -> h{h}   rho~{:.4}", it.relaxed.rho);
                for hh in 0..inst.n_hosts() {
                    let zrow: Vec<String> = (0..inst.n_queues())
                        .map(|qq| format!("{:.3}", it.scores.z[hh][qq]))
                        .collect();
                    let arow: Vec<String> = (0..inst.n_queues())
                        .map(|qq| format!("{:.3}", it.relaxed.a_tilde[hh][qq]))
                        .collect();
                    let prow: Vec<String> = (0..inst.n_queues())
                        .map(|qq| format!("{:.3}", it.relaxed.psi[hh][qq]))
                        .collect();
                    println!("  h{hh} z=[{}] a=[{}] psi=[{}]", zrow.join(" "), arow.join(" "), prow.join(" "));
                }
            }
            println!("final: {:?}", out.placement.hosts());
        }
    }
}
