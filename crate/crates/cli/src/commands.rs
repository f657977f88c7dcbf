//! The `generate`, `analyze` and `verify` subcommands.

use std::path::Path;

use dynlead::analysis::{
    matrix_spectrum, projected_sensitivity, relative_sensitivity, sensitivity, sensitivity_difference,
    singular_spectrum, spearman, SensitivityMap,
};
use dynlead::forward::{build_sphere_geometry, compute_lead_field, Sphere};
use dynlead::matrix_io::{load_any, save_matrix};
use dynlead::model::{matrix_to_vectors, vectors_to_matrix};
use dynlead::oracle::run_identity_suite;
use dynlead::scenario::Scenario;
use dynlead::{LeadField, ModelKind, ModelRegistry, NoiseModel, SourceSpace};
use nalgebra::{DMatrix, Vector3};
use serde::Serialize;

use crate::config::{ExperimentConfig, GeometryConfig, ImportConfig};
use crate::report::{opt, write_json, Csv, VERSION};
use crate::CliError;

/// Source space and lead field before any dynamics are fitted.
struct Geometry {
    sources: SourceSpace,
    lead_field: LeadField,
    sphere: Option<Sphere>,
    sensors: Option<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)>,
    neighbor_radius: Option<f64>,
    warnings: Vec<String>,
}

fn load_matrix_file(path: &Path) -> Result<DMatrix<f64>, CliError> {
    load_any(path).map_err(|e| CliError::Input(e.to_string()))
}

fn load_import(imp: &ImportConfig) -> Result<Geometry, CliError> {
    let gain = load_matrix_file(&imp.lead_field)?;
    let positions = load_matrix_file(&imp.positions)?;
    let orientations = load_matrix_file(&imp.orientations)?;
    let edges = dynlead::model::load_graph_csv(&imp.graph).map_err(|e| CliError::Input(e.to_string()))?;

    let p = gain.ncols();
    for (what, m) in [("positions", &positions), ("orientations", &orientations)] {
        if m.shape() != (p, 3) {
            return Err(CliError::Input(format!(
                "{what} is {}x{} but the lead field has {p} sources (expected {p}x3)",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if let Some(&(i, j, _)) = edges.iter().find(|&&(i, j, _)| i >= p || j >= p) {
        return Err(CliError::Input(format!(
            "graph edge ({i}, {j}) refers to a source beyond the {p} in the lead field"
        )));
    }
    let input = |e: dynlead::Error| CliError::Input(e.to_string());
    let sources = SourceSpace::from_edges(
        matrix_to_vectors(&positions).map_err(input)?,
        matrix_to_vectors(&orientations).map_err(input)?,
        &edges,
    )
    .map_err(input)?;
    Ok(Geometry {
        sources,
        lead_field: LeadField::new(gain).map_err(input)?,
        sphere: imp.sphere_radius.map(|radius| Sphere {
            center: Vector3::zeros(),
            radius,
        }),
        sensors: None,
        neighbor_radius: None,
        warnings: Vec::new(),
    })
}

fn load_geometry(cfg: &ExperimentConfig) -> Result<Geometry, CliError> {
    match &cfg.geometry {
        GeometryConfig::Synthetic(sphere) => {
            let g = build_sphere_geometry(sphere)?;
            let lead_field = compute_lead_field(&g.sources, &g.sensors, &g.sphere)?;
            Ok(Geometry {
                sensors: Some((g.sensors.positions().to_vec(), g.sensors.orientations().to_vec())),
                sources: g.sources,
                lead_field,
                sphere: Some(g.sphere),
                neighbor_radius: Some(g.neighbor_radius),
                warnings: g.warnings,
            })
        }
        GeometryConfig::Import(imp) => load_import(imp),
    }
}

fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario, CliError> {
    let g = load_geometry(cfg)?;
    for w in &g.warnings {
        eprintln!("warning: {w}");
    }
    let mut s = Scenario::from_parts(g.sources, g.lead_field, &cfg.dynamics)?;
    s.sphere = g.sphere;
    Ok(s)
}

fn write_effective_config(cfg: &ExperimentConfig) -> Result<(), CliError> {
    crate::report::write_file(&cfg.output_dir.join("effective_config.toml"), cfg.to_toml().as_bytes())
}

fn save(m: &DMatrix<f64>, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
    }
    save_matrix(m, path).map_err(|e| CliError::Output(e.to_string()))
}

#[derive(Serialize)]
struct GeometrySummary {
    version: &'static str,
    config_hash: String,
    sensor_count: usize,
    source_count: usize,
    edge_count: usize,
    mean_neighbor_count: f64,
    mean_neighbor_distance: Option<f64>,
    neighbor_radius: Option<f64>,
    warnings: Vec<String>,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let g = load_geometry(cfg)?;
    let out = &cfg.output_dir;
    let hash = cfg.hash();

    save(&vectors_to_matrix(g.sources.positions()), &out.join("positions.dlf"))?;
    save(&vectors_to_matrix(g.sources.orientations()), &out.join("orientations.dlf"))?;
    if let Some((pos, ori)) = &g.sensors {
        save(&vectors_to_matrix(pos), &out.join("sensor_positions.dlf"))?;
        save(&vectors_to_matrix(ori), &out.join("sensor_orientations.dlf"))?;
    }
    save(g.lead_field.gain(), &out.join("leadfield.dlf"))?;
    let edges = g.sources.edges();
    let mut graph = Csv::new(&hash, &["i", "j", "distance"]);
    for (i, j, d) in &edges {
        graph.row([i.to_string(), j.to_string(), d.to_string()]);
    }
    graph.write(&out.join("graph.csv"))?;

    let summary = GeometrySummary {
        version: VERSION,
        config_hash: hash,
        sensor_count: g.lead_field.sensor_count(),
        source_count: g.sources.len(),
        edge_count: edges.len(),
        mean_neighbor_count: g.sources.mean_neighbor_count(),
        mean_neighbor_distance: g.sources.mean_neighbor_distance(),
        neighbor_radius: g.neighbor_radius,
        warnings: g.warnings.clone(),
    };
    write_json(&out.join("geometry.json"), &summary)?;
    write_effective_config(cfg)?;

    for w in &g.warnings {
        eprintln!("warning: {w}");
    }
    let distance = summary
        .mean_neighbor_distance
        .map(|d| format!("{d:.6} m"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "n={} p={} mean_neighbor_distance={distance} mean_neighbors={:.2} -> {}",
        summary.sensor_count,
        summary.source_count,
        summary.mean_neighbor_count,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SpectrumEntry {
    k: usize,
    rank: usize,
    tolerance: f64,
    rows: usize,
    cols: usize,
    sigma_max: f64,
    sigma_min: f64,
}

#[derive(Serialize)]
struct ModelSummary {
    model: ModelKind,
    spectra: Vec<SpectrumEntry>,
    /// Spearman correlation between depth and relative sensitivity per k.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    depth_gain_spearman: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct AnalysisSummary {
    version: &'static str,
    config_hash: String,
    sensor_count: usize,
    source_count: usize,
    lead_field_rank: usize,
    k: Vec<usize>,
    models: Vec<ModelSummary>,
}

struct ModelResults {
    kind: ModelKind,
    ranks: Vec<usize>,
    absolute: Vec<SensitivityMap>,
    /// Null-space-projected sensitivity between consecutive k.
    null_space: Vec<Vec<f64>>,
    summary: ModelSummary,
}

/// Peak size of one stacked mapping, in MiB.
pub fn stack_mib(k: usize, n: usize, p: usize) -> f64 {
    ((2 * k + 1) * n * p * 8) as f64 / (1024.0 * 1024.0)
}

pub fn analyze(cfg: &ExperimentConfig, allow_large: bool) -> Result<(), CliError> {
    let s = build_scenario(cfg)?;
    let (n, p) = s.lead_field.gain().shape();
    let kmax = *cfg.analysis.k.last().expect("validated nonempty");
    let need = stack_mib(kmax, n, p);
    if need > cfg.analysis.memory_budget_mib {
        eprintln!(
            "warning: D(k={kmax}) needs about {need:.1} MiB, above the {:.1} MiB budget",
            cfg.analysis.memory_budget_mib
        );
        if !allow_large {
            return Err(CliError::Input(
                "stacked mapping exceeds analysis.memory_budget_mib; rerun with --allow-large to proceed".into(),
            ));
        }
    }

    let tol = cfg.analysis.rank_tolerance;
    let registry = ModelRegistry::with_builtin();
    let ctx = s.model_context(cfg.sts);
    let depths = s.depths();
    let mut results = Vec::new();
    let out = &cfg.output_dir;
    let hash = cfg.hash();

    for &kind in &cfg.analysis.models {
        let model = registry.create(kind.as_str(), &ctx, p)?;
        let mut res = ModelResults {
            kind,
            ranks: Vec::new(),
            absolute: Vec::new(),
            null_space: Vec::new(),
            summary: ModelSummary {
                model: kind,
                spectra: Vec::new(),
                depth_gain_spearman: Vec::new(),
            },
        };
        let mut previous = None;
        for &k in &cfg.analysis.k {
            let mapping = model.assemble(&s.lead_field, k)?;
            let spectrum = singular_spectrum(&mapping, tol)?;
            let mut csv = Csv::new(&hash, &["index", "singular_value", "above_tolerance"]);
            for (i, v) in spectrum.singular_values.iter().enumerate() {
                csv.row([(i + 1).to_string(), v.to_string(), (*v > spectrum.tolerance).to_string()]);
            }
            csv.write(&out.join("spectra").join(format!("{kind}_k{k}.csv")))?;

            res.ranks.push(spectrum.numerical_rank);
            res.summary.spectra.push(SpectrumEntry {
                k,
                rank: spectrum.numerical_rank,
                tolerance: spectrum.tolerance,
                rows: spectrum.shape.0,
                cols: spectrum.shape.1,
                sigma_max: spectrum.singular_values.first().copied().unwrap_or(0.0),
                sigma_min: spectrum.singular_values.last().copied().unwrap_or(0.0),
            });
            if let Some(prev) = &previous {
                res.null_space.push(projected_sensitivity(&mapping, prev, tol)?.null_space);
            }
            res.absolute.push(sensitivity(&mapping));
            previous = Some(mapping);
        }
        if let Some(d) = &depths {
            let s0 = &res.absolute[0];
            for m in &res.absolute[1..] {
                let gain: Vec<f64> = relative_sensitivity(m, s0)?
                    .into_iter()
                    .map(|g| g.unwrap_or(f64::NAN))
                    .collect();
                res.summary.depth_gain_spearman.push((m.k, spearman(d, &gain)));
            }
        }
        results.push(res);
    }

    write_rank_table(cfg, &results, &hash)?;
    write_sensitivity(cfg, &results, depths.as_deref(), &hash)?;

    let summary = AnalysisSummary {
        version: VERSION,
        config_hash: hash,
        sensor_count: n,
        source_count: p,
        lead_field_rank: matrix_spectrum(s.lead_field.gain(), tol)?.numerical_rank,
        k: cfg.analysis.k.clone(),
        models: results.into_iter().map(|r| r.summary).collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_effective_config(cfg)?;

    println!("rank(X) = {} (n={n}, p={p})", summary.lead_field_rank);
    for m in &summary.models {
        let ranks: Vec<String> = m.spectra.iter().map(|e| format!("k={}:{}", e.k, e.rank)).collect();
        println!("{:>3}  {}", m.model, ranks.join("  "));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn k_header(prefix: &[&str], ks: impl Iterator<Item = String>) -> Vec<String> {
    prefix.iter().map(|s| s.to_string()).chain(ks).collect()
}

fn header_refs(h: &[String]) -> Vec<&str> {
    h.iter().map(String::as_str).collect()
}

fn write_rank_table(cfg: &ExperimentConfig, results: &[ModelResults], hash: &str) -> Result<(), CliError> {
    let header = k_header(&["model"], cfg.analysis.k.iter().map(|k| format!("k_{k}")));
    let mut csv = Csv::new(hash, &header_refs(&header));
    for r in results {
        csv.row(std::iter::once(r.kind.to_string()).chain(r.ranks.iter().map(|v| v.to_string())));
    }
    csv.write(&cfg.output_dir.join("rank_table.csv"))
}

fn write_sensitivity(
    cfg: &ExperimentConfig,
    results: &[ModelResults],
    depths: Option<&[f64]>,
    hash: &str,
) -> Result<(), CliError> {
    let dir = cfg.output_dir.join("sensitivity");
    let ks = &cfg.analysis.k;
    let p = results[0].absolute[0].values.len();
    let depth = |i: usize| opt(depths.map(|d| d[i]));
    let per_k = k_header(&["source", "depth"], ks.iter().map(|k| format!("k_{k}")));

    for r in results {
        let mut abs = Csv::new(hash, &header_refs(&per_k));
        let mut rel = Csv::new(hash, &header_refs(&per_k));
        let relative: Vec<Vec<Option<f64>>> = r
            .absolute
            .iter()
            .map(|m| relative_sensitivity(m, &r.absolute[0]))
            .collect::<Result<_, _>>()?;
        for i in 0..p {
            abs.row([i.to_string(), depth(i)].into_iter().chain(r.absolute.iter().map(|m| m.values[i].to_string())));
            rel.row(
                [i.to_string(), depth(i)]
                    .into_iter()
                    .chain(relative.iter().map(|v| v[i].map_or_else(|| "masked".to_string(), |x| x.to_string()))),
            );
        }
        abs.write(&dir.join(format!("absolute_{}.csv", r.kind)))?;
        rel.write(&dir.join(format!("relative_{}.csv", r.kind)))?;

        if ks.len() > 1 {
            let pairs = k_header(&["source", "depth"], ks.windows(2).map(|w| format!("k_{}_to_{}", w[0], w[1])));
            let mut null = Csv::new(hash, &header_refs(&pairs));
            for i in 0..p {
                null.row([i.to_string(), depth(i)].into_iter().chain(r.null_space.iter().map(|v| v[i].to_string())));
            }
            null.write(&dir.join(format!("nullspace_{}.csv", r.kind)))?;
        }
    }

    if let Some(dyn_res) = results.iter().find(|r| r.kind == ModelKind::Dyn) {
        for other in results.iter().filter(|r| r.kind != ModelKind::Dyn) {
            let diffs: Vec<Vec<f64>> = dyn_res
                .absolute
                .iter()
                .zip(&other.absolute)
                .map(|(a, b)| sensitivity_difference(a, b))
                .collect::<Result<_, _>>()?;
            let mut csv = Csv::new(hash, &header_refs(&per_k));
            for i in 0..p {
                csv.row([i.to_string(), depth(i)].into_iter().chain(diffs.iter().map(|d| d[i].to_string())));
            }
            csv.write(&dir.join(format!("difference_dyn_minus_{}.csv", other.kind)))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    version: &'static str,
    config_hash: String,
    sensor_count: usize,
    source_count: usize,
    #[serde(flatten)]
    suite: dynlead::oracle::SuiteReport,
}

/// Returns whether every check passed.
pub fn verify(cfg: &ExperimentConfig) -> Result<bool, CliError> {
    let s = Scenario::synthetic(&cfg.oracle.geometry, &cfg.dynamics)?;
    let (n, p) = s.lead_field.gain().shape();
    let noise = NoiseModel::new(
        DMatrix::identity(n, n) * cfg.oracle.sensor_noise,
        cfg.dynamics.nu.resolve(p, cfg.dynamics.phi)?,
    )?;
    let suite = run_identity_suite(&s.dynamics, &s.lead_field, &noise, &cfg.oracle.suite_settings())?;

    for c in &suite.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let note = if c.negative_control { "  (negative control)" } else { "" };
        println!("{verdict}  {:<44} {:.3e} / {:.3e}{note}", c.name, c.measured, c.bound);
    }
    if suite.widened_bounds {
        println!("note: {} samples is below the calibration length; covariance bounds widened", suite.samples);
    }
    let passed = suite.all_passed;
    let report = VerifyReport {
        version: VERSION,
        config_hash: cfg.hash(),
        sensor_count: n,
        source_count: p,
        suite,
    };
    write_json(&cfg.output_dir.join("verify_report.json"), &report)?;
    write_effective_config(cfg)?;
    println!(
        "{} -> {}",
        if passed { "all checks passed" } else { "verification failed" },
        cfg.output_dir.join("verify_report.json").display()
    );
    Ok(passed)
}
