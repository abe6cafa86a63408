use anyhow::Result;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde_json::{json, Value};
use shiftforge_core::bridge::{equivalence_check, sample_paths, telescoping, to_composition, Telescoping};
use shiftforge_core::measure::{Budget, MeasureError, MomentValue};
use shiftforge_core::scalar::format_rational;
use shiftforge_core::tree::VertexAddress;
use shiftforge_core::verification::{
    consistency_suite, injectivity_entries, moment_profile, oracle_entry, power_dense_verdict, trivial_domain_verdict, Entry,
    Verdict, CERTIFICATE_BOUND,
};
use shiftforge_core::{Interval, RationalModel, ShiftModel};

use crate::config::{Format, RunConfig};
use crate::output::{json_bytes, write_atomic, Csv};

/// Ancestor/descendant pairs checked for telescoping.
const TELESCOPING_PATHS: usize = 100;
/// Atoms listed per vertex in the manifest.
const MANIFEST_ATOMS: usize = 4;

pub fn build_model(cfg: &RunConfig) -> RationalModel {
    ShiftModel::new(cfg.n, cfg.rooted, Budget::new(cfg.horizon, cfg.precision.clone()))
}

fn lossy(q: &BigRational) -> String {
    q.to_f64().map(|f| f.to_string()).unwrap_or_else(|| "inf".into())
}

fn weight_json(model: &RationalModel, v: &VertexAddress) -> Value {
    if model.shape().rooted && v.is_anchor() {
        return Value::Null;
    }
    match model.lambda_sq(v) {
        Ok(l) => l.to_json(),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn atoms_json(model: &RationalModel, v: &VertexAddress, count: usize) -> Value {
    match model.mu(v).and_then(|mu| mu.atoms(count)) {
        Ok(atoms) => Value::Array(atoms.iter().map(|a| a.to_json()).collect()),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn construct(cfg: &RunConfig) -> Result<Verdict> {
    let model = build_model(cfg);
    let vertices = model.truncation(cfg.depth, cfg.breadth);
    let samples: Vec<Value> = vertices
        .par_iter()
        .map(|v| {
            json!({
                "vertex": v.to_string(),
                "parent": model.parent(v).map(|p| p.to_string()),
                "lambda_sq": weight_json(&model, v),
                "atoms": atoms_json(&model, v, MANIFEST_ATOMS),
            })
        })
        .collect();
    let manifest = json!({
        "config": cfg.to_json(),
        "model": model.manifest(),
        "vertex_count": vertices.len(),
        "vertices": samples,
    });
    write_atomic(&cfg.out, "manifest.json", &json_bytes(&manifest))?;
    if cfg.format == Format::Csv {
        let mut csv = Csv::new(&["vertex", "parent", "lambda_sq_lo", "lambda_sq_hi"]);
        for s in manifest["vertices"].as_array().unwrap() {
            let (lo, hi) = match s["lambda_sq"].as_array() {
                Some(pair) => (pair[0].as_str().unwrap_or("").to_string(), pair[1].as_str().unwrap_or("").to_string()),
                None => (String::new(), String::new()),
            };
            csv.row([s["vertex"].as_str().unwrap().to_string(), s["parent"].as_str().unwrap_or("").to_string(), lo, hi]);
        }
        write_atomic(&cfg.out, "weights.csv", &csv.into_bytes())?;
    }
    Ok(Verdict::Pass)
}

fn profile_entries(model: &RationalModel, vertices: &[VertexAddress]) -> Vec<Entry> {
    vertices
        .par_iter()
        .map(|u| {
            let (verdict, data) = match moment_profile(model, u) {
                Ok((low, high)) => (
                    if low.is_finite() && high.is_divergent() { Verdict::Pass } else { Verdict::Fail },
                    json!({ "degree_n": low.to_json(), "degree_n_plus_1": high.to_json() }),
                ),
                Err(e) => (error_verdict(&e), json!({ "error": e.to_string() })),
            };
            Entry { vertex: u.clone(), check: "moment_profile".into(), verdict, data }
        })
        .collect()
}

fn error_verdict(e: &MeasureError) -> Verdict {
    match e {
        MeasureError::PrecisionUnreachable { .. } | MeasureError::Unresolved(_) => Verdict::Unresolved,
        _ => Verdict::Fail,
    }
}

fn bridge_entries(model: &RationalModel, vertices: &[VertexAddress], depth: usize, breadth: usize) -> Vec<Entry> {
    let top = &vertices[0];
    let cm = to_composition(model, top);
    let jobs: Vec<(VertexAddress, u32)> =
        vertices.iter().flat_map(|u| (0..=model.order()).map(move |k| (u.clone(), k))).collect();
    let mut out: Vec<Entry> = jobs.par_iter().map(|(u, k)| equivalence_check(model, &cm, u, *k, breadth)).collect();

    // one generation past the truncation so the sample reaches TELESCOPING_PATHS at the default shape
    let paths = sample_paths(model, top, depth + 1, breadth, TELESCOPING_PATHS);
    let results: Vec<_> = paths.par_iter().map(|(u, v)| telescoping(&cm, u, v)).collect();
    let mut counts = [0usize; 3];
    let mut problems = Vec::new();
    let mut verdicts = Vec::new();
    for ((u, v), r) in paths.iter().zip(&results) {
        match r {
            Ok(Telescoping::Exact) => counts[0] += 1,
            Ok(Telescoping::Enclosed) => counts[1] += 1,
            Ok(Telescoping::Broken) => {
                counts[2] += 1;
                verdicts.push(Verdict::Fail);
                problems.push(json!({ "from": u.to_string(), "to": v.to_string() }));
            }
            Err(e) => {
                verdicts.push(error_verdict(e));
                problems.push(json!({ "from": u.to_string(), "to": v.to_string(), "error": e.to_string() }));
            }
        }
    }
    out.push(Entry {
        vertex: top.clone(),
        check: "telescoping".into(),
        verdict: Verdict::combine(verdicts),
        data: json!({ "paths": paths.len(), "exact": counts[0], "enclosed": counts[1], "broken": counts[2], "problems": problems }),
    });
    out
}

/// Every verification entry for the configured truncation, in a fixed order.
pub fn verification_entries(cfg: &RunConfig, model: &RationalModel) -> Vec<Entry> {
    let vertices = model.truncation(cfg.depth, cfg.breadth);
    let n = model.order();
    let mut entries = consistency_suite(model, &vertices, cfg.horizon, &cfg.precision);
    entries.extend(profile_entries(model, &vertices));
    entries.extend(power_dense_verdict(model, n, cfg.depth, cfg.breadth));
    entries.extend(trivial_domain_verdict(model, n + 1, cfg.depth, cfg.breadth));
    if let Some(k) = cfg.expect_dense {
        if k != n {
            entries.extend(power_dense_verdict(model, k, cfg.depth, cfg.breadth));
        }
    }
    entries.extend(injectivity_entries(model, &vertices));
    entries.extend(bridge_entries(model, &vertices, cfg.depth, cfg.breadth));
    entries.push(oracle_entry(model, &vertices[0], cfg.breadth));
    entries
}

pub fn verify(cfg: &RunConfig) -> Result<Verdict> {
    let model = build_model(cfg);
    let entries = verification_entries(cfg, &model);
    let verdict = Verdict::combine(entries.iter().map(|e| e.verdict));
    let mut summary = std::collections::BTreeMap::<String, Vec<Verdict>>::new();
    for e in &entries {
        summary.entry(e.check.clone()).or_default().push(e.verdict);
    }
    let summary: serde_json::Map<String, Value> =
        summary.into_iter().map(|(k, v)| (k, Value::from(Verdict::combine(v).as_str()))).collect();
    match cfg.format {
        Format::Json => {
            let report = json!({
                "config": cfg.to_json(),
                "model": model.manifest(),
                "entries": entries.iter().map(Entry::to_json).collect::<Vec<_>>(),
                "summary": summary,
                "verdict": verdict.as_str(),
            });
            write_atomic(&cfg.out, "report.json", &json_bytes(&report))?;
        }
        Format::Csv => {
            let mut csv = Csv::new(&["vertex", "check", "verdict", "data"]);
            for e in &entries {
                csv.row([e.vertex.to_string(), e.check.clone(), e.verdict.as_str().into(), e.data.to_string()]);
            }
            write_atomic(&cfg.out, "report.csv", &csv.into_bytes())?;
        }
    }
    for (check, v) in &summary {
        println!("{check}: {}", v.as_str().unwrap());
    }
    println!("verdict: {}", verdict.as_str());
    Ok(verdict)
}

struct Selection {
    vertices: Vec<VertexAddress>,
    degrees: Vec<i32>,
}

fn selection(cfg: &RunConfig, model: &RationalModel) -> Selection {
    let n = model.order() as i32;
    Selection {
        vertices: cfg.vertices.clone().unwrap_or_else(|| vec![model.shape().anchor()]),
        degrees: cfg.degrees.clone().unwrap_or_else(|| vec![n, n + 1]),
    }
}

/// Running partial sums `Σ_{i' ≤ i} mass·support^d` over the first `terms` atoms.
fn partial_sums(model: &RationalModel, v: &VertexAddress, degree: i32, terms: usize) -> Result<Vec<Interval<BigRational>>, MeasureError> {
    let atoms = model.mu(v)?.atoms(terms)?;
    let mut acc = Interval::zero();
    Ok(atoms
        .iter()
        .map(|a| {
            acc = &acc + &a.mass.scale_rational(&a.support.pow(degree));
            acc.clone()
        })
        .collect())
}

fn moment_json(value: &MomentValue<BigRational>) -> Value {
    let mut out = json!({ "value": value.to_json() });
    if let Some(cert) = value.certificate() {
        let check = cert.verify(&BigRational::from_integer(CERTIFICATE_BOUND.into()));
        out["certificate_check"] = json!({
            "bound": CERTIFICATE_BOUND,
            "index": check.index.to_string(),
            "partial_sum_lower": format_rational(&check.partial_sum_lower),
            "passed": check.passed,
            "witness": cert.description(),
        });
    }
    out
}

pub fn export(cfg: &RunConfig) -> Result<Verdict> {
    let model = build_model(cfg);
    let sel = selection(cfg, &model);
    let mut verdicts = Vec::new();
    match cfg.format {
        Format::Json => {
            let records: Vec<Value> = sel
                .vertices
                .par_iter()
                .map(|v| {
                    let moments: Vec<Value> = sel
                        .degrees
                        .iter()
                        .map(|&d| match model.mu(v).and_then(|mu| mu.moment_with(d, model.budget())) {
                            Ok(m) => json!({ "degree": d, "moment": moment_json(&m) }),
                            Err(e) => json!({ "degree": d, "error": e.to_string() }),
                        })
                        .collect();
                    json!({
                        "vertex": v.to_string(),
                        "parent": model.parent(v).map(|p| p.to_string()),
                        "lambda_sq": weight_json(&model, v),
                        "atoms": atoms_json(&model, v, cfg.terms),
                        "moments": moments,
                    })
                })
                .collect();
            let truncation = model.truncation(cfg.depth, cfg.breadth);
            let cm = to_composition(&model, &truncation[0]);
            let bridge: Vec<Value> = truncation
                .par_iter()
                .map(|v| cm.entry_json(v).unwrap_or_else(|e| json!({ "vertex": v.to_string(), "error": e.to_string() })))
                .collect();
            let doc = json!({
                "config": cfg.to_json(),
                "model": model.manifest(),
                "vertices": records,
                "bridge": bridge,
            });
            write_atomic(&cfg.out, "export.json", &json_bytes(&doc))?;
        }
        Format::Csv => {
            let mut csv = Csv::new(&["vertex", "degree", "kind", "i", "partial_sum", "upper"]);
            let jobs: Vec<(VertexAddress, i32)> =
                sel.vertices.iter().flat_map(|v| sel.degrees.iter().map(move |&d| (v.clone(), d))).collect();
            let tables: Vec<_> = jobs
                .par_iter()
                .map(|(v, d)| {
                    let sums = partial_sums(&model, v, *d, cfg.terms);
                    let moment = model.mu(v).and_then(|mu| mu.moment_with(*d, model.budget()));
                    (sums, moment)
                })
                .collect();
            for ((v, d), (sums, moment)) in jobs.iter().zip(tables) {
                let (vs, ds) = (v.to_string(), d.to_string());
                let sums = match sums {
                    Ok(s) => s,
                    Err(e) => {
                        verdicts.push(error_verdict(&e));
                        eprintln!("{vs} degree {ds}: {e}");
                        continue;
                    }
                };
                for (i, s) in sums.iter().enumerate() {
                    let (lo, hi) = s.to_rationals();
                    csv.row([vs.clone(), ds.clone(), "sum".into(), (i + 1).to_string(), lossy(&lo), lossy(&hi)]);
                }
                match moment {
                    Ok(MomentValue::Finite(iv)) => {
                        let (lo, hi) = iv.to_rationals();
                        csv.row([vs.clone(), ds.clone(), "bound".into(), String::new(), lossy(&lo), lossy(&hi)]);
                    }
                    Ok(MomentValue::Divergent(cert)) => {
                        let check = cert.verify(&BigRational::from_integer(CERTIFICATE_BOUND.into()));
                        csv.row([
                            vs.clone(),
                            ds.clone(),
                            "certificate".into(),
                            check.index.to_string(),
                            lossy(&check.partial_sum_lower),
                            String::new(),
                        ]);
                    }
                    Err(e) => {
                        verdicts.push(error_verdict(&e));
                        eprintln!("{vs} degree {ds}: {e}");
                    }
                }
            }
            write_atomic(&cfg.out, "partial_sums.csv", &csv.into_bytes())?;
        }
    }
    Ok(Verdict::combine(verdicts))
}
