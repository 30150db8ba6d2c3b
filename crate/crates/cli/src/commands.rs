//! Subcommand implementations. Each returns a table plus the
//! command-specific parameters echoed into the header.

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use sofi_rgl::fisher::{
    antibunching_fi, antibunching_rgl, fi_per_photon, g_relative_gap, optimal_frame_time, rgl, rgl_pix,
    si_pixel_fi, zeta_max, zeta_max_asymptotic,
};
use sofi_rgl::mc::{
    compare_summaries, cumulant_image_check, empirical_summary_like, fit_gaussian_width, score_fi_oracle,
    simulate_frames,
};
use sofi_rgl::summary::{summary, SchemeSpec};

use crate::error::CliError;
use crate::grid::{self, Grid};
use crate::output::Table;
use crate::params::{Axis, Metric, ModelKind, Physics, Settings, Target};

pub struct Report {
    pub table: Table,
    pub params: Map<String, Value>,
    /// Rows whose extraction did not converge or hit a search boundary.
    pub flagged: usize,
    /// Failed validation checks.
    pub failed_checks: usize,
}

impl Report {
    fn new(table: Table, params: Map<String, Value>) -> Self {
        Self {
            table,
            params,
            flagged: 0,
            failed_checks: 0,
        }
    }
}

fn target_names(targets: &[Target]) -> Value {
    json!(targets.iter().map(|t| t.to_string()).collect::<Vec<_>>())
}

fn range_or(settings: &Settings, default: &str) -> Grid {
    settings
        .range
        .clone()
        .unwrap_or_else(|| grid::parse("range", default).expect("valid default range"))
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Zeta => "zeta",
        Metric::ZetaPix => "zeta_pix",
    }
}

struct Point {
    zeta: f64,
    residual: f64,
    converged: bool,
    theta_min: Option<f64>,
}

fn evaluate(target: Target, physics: &Physics, metric: Metric) -> Result<Point, CliError> {
    match target {
        Target::FullData => {
            if physics.kind != ModelKind::Simplified || physics.mu_b != 0.0 {
                return Err(CliError::Usage(
                    "MAX is defined for the simplified model without background".into(),
                ));
            }
            Ok(Point {
                zeta: zeta_max(physics.p, physics.alpha, physics.nbar())?,
                residual: 0.0,
                converged: true,
                theta_min: None,
            })
        }
        Target::Scheme(s) => {
            let (model, geometry) = (physics.model()?, physics.geometry()?);
            let r = match metric {
                Metric::Zeta => rgl(s, &geometry, &model)?,
                Metric::ZetaPix => rgl_pix(s, &geometry, &model)?,
            };
            Ok(Point {
                zeta: r.zeta,
                residual: r.ratio_extrapolation_residual,
                converged: r.converged,
                theta_min: r.theta_grid_used.iter().copied().reduce(f64::min),
            })
        }
    }
}

fn schemes_only(targets: &[Target]) -> Result<Vec<SchemeSpec>, CliError> {
    targets
        .iter()
        .map(|t| match t {
            Target::Scheme(s) => Ok(*s),
            Target::FullData => Err(CliError::Usage("MAX is not a statistic scheme here".into())),
        })
        .collect()
}

pub fn fi_curve(settings: &Settings) -> Result<Report, CliError> {
    let targets = settings.targets_or(&[
        Target::Scheme(SchemeSpec::M),
        Target::Scheme(SchemeSpec::MAck(2)),
        Target::Scheme(SchemeSpec::Ac2),
    ]);
    let schemes = schemes_only(&targets)?;
    if settings.axis.is_some_and(|a| a != Axis::Theta) {
        return Err(CliError::Usage("fi-curve sweeps theta only".into()));
    }
    let thetas = match (settings.theta, &settings.range) {
        (Some(t), None) => Grid {
            spec: t.to_string(),
            values: vec![t],
        },
        _ => range_or(settings, "0.01:4:log40"),
    };
    let (model, geometry) = (settings.physics.model()?, settings.physics.geometry()?);
    let jobs: Vec<(f64, SchemeSpec)> =
        thetas.values.iter().flat_map(|&t| schemes.iter().map(move |&s| (t, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(t, s)| -> Result<Vec<Value>, CliError> {
            let f = fi_per_photon(s, &geometry, &model, t)?;
            let si = si_pixel_fi(&geometry, t)?;
            Ok(vec![json!(t), json!(s.to_string()), json!(f), json!(si), json!(f / si)])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(&["theta", "scheme", "fi_per_photon", "fi_si_pixel", "ratio"]);
    rows.into_iter().for_each(|r| table.push(r));
    let mut params = Map::new();
    params.insert("schemes".into(), target_names(&targets));
    params.insert("range".into(), json!(thetas.spec));
    Ok(Report::new(table, params))
}

pub fn rgl_point(settings: &Settings) -> Result<Report, CliError> {
    let targets = settings.targets_or(&[Target::Scheme(SchemeSpec::MAck(2))]);
    let points = targets
        .par_iter()
        .map(|&t| evaluate(t, &settings.physics, settings.metric))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(&["scheme", "metric", "zeta", "residual", "converged", "theta_min"]);
    let mut flagged = 0;
    for (t, p) in targets.iter().zip(points) {
        flagged += usize::from(!p.converged);
        table.push(vec![
            json!(t.to_string()),
            json!(metric_name(settings.metric)),
            json!(p.zeta),
            json!(p.residual),
            json!(p.converged),
            p.theta_min.map_or(Value::Null, |v| json!(v)),
        ]);
    }
    let mut params = Map::new();
    params.insert("schemes".into(), target_names(&targets));
    params.insert("metric".into(), json!(metric_name(settings.metric)));
    let mut report = Report::new(table, params);
    report.flagged = flagged;
    Ok(report)
}

pub fn zeta_max_cmd(settings: &Settings) -> Result<Report, CliError> {
    let ph = &settings.physics;
    if ph.kind != ModelKind::Simplified {
        return Err(CliError::Usage("zeta-max needs the simplified model".into()));
    }
    if settings.axis.is_some_and(|a| a != Axis::Nbar) {
        return Err(CliError::Usage("zeta-max sweeps nbar only".into()));
    }
    let nbars = settings.range.as_ref().map_or_else(|| vec![ph.nbar()], |g| g.values.clone());
    let mut table = Table::new(&["nbar", "zeta_max", "zeta_max_asymptotic", "delta_g"]);
    for n in nbars {
        table.push(vec![
            json!(n),
            json!(zeta_max(ph.p, ph.alpha, n)?),
            json!(zeta_max_asymptotic(ph.p, ph.alpha, n)?),
            json!(g_relative_gap(ph.p, ph.alpha, n)?),
        ]);
    }
    let mut params = Map::new();
    if let Some(g) = &settings.range {
        params.insert("range".into(), json!(g.spec));
    }
    Ok(Report::new(table, params))
}

pub fn sweep(settings: &Settings) -> Result<Report, CliError> {
    let axis = settings
        .axis
        .ok_or_else(|| CliError::Usage("sweep needs --axis".into()))?;
    if axis == Axis::Theta {
        return Err(CliError::Usage("use fi-curve for theta sweeps".into()));
    }
    if axis == Axis::P && settings.physics.kind == ModelKind::Markov {
        return Err(CliError::Usage("axis p applies to the simplified model only".into()));
    }
    let range = settings
        .range
        .clone()
        .ok_or_else(|| CliError::Usage("sweep needs --range".into()))?;
    let targets = settings.targets_or(&[
        Target::Scheme(SchemeSpec::M),
        Target::Scheme(SchemeSpec::MAck(2)),
        Target::Scheme(SchemeSpec::MXc2s),
        Target::Scheme(SchemeSpec::MXc2w),
        Target::Scheme(SchemeSpec::MXc2),
    ]);
    // Validate every grid point before any computation starts.
    for &v in &range.values {
        let ph = settings.physics.with(axis, v);
        ph.model()?;
        ph.geometry()?;
    }
    let jobs: Vec<(usize, f64, Target)> = range
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| targets.iter().map(move |&t| (i, v, t)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(_, v, t)| evaluate(t, &settings.physics.with(axis, v), settings.metric))
        .collect::<Result<Vec<_>, _>>()?;
    let first: Vec<f64> = points[..targets.len()].iter().map(|p| p.zeta).collect();
    let mut table = Table::new(&[axis.name(), "scheme", "zeta", "rel_change", "residual", "converged"]);
    let mut flagged = 0;
    for (k, (&(_, v, t), p)) in jobs.iter().zip(&points).enumerate() {
        let base = first[k % targets.len()];
        flagged += usize::from(!p.converged);
        table.push(vec![
            json!(v),
            json!(t.to_string()),
            json!(p.zeta),
            json!((p.zeta - base) / base),
            json!(p.residual),
            json!(p.converged),
        ]);
    }
    let mut params = Map::new();
    params.insert("schemes".into(), target_names(&targets));
    params.insert("metric".into(), json!(metric_name(settings.metric)));
    params.insert("axis".into(), json!(axis.name()));
    params.insert("range".into(), json!(range.spec));
    let mut report = Report::new(table, params);
    report.flagged = flagged;
    Ok(report)
}

pub fn tau_opt(settings: &Settings) -> Result<Report, CliError> {
    if settings.physics.kind != ModelKind::Markov {
        return Err(CliError::Usage("tau-opt needs --model markov".into()));
    }
    let axis = settings.axis.unwrap_or(Axis::Pbar);
    if matches!(axis, Axis::Theta | Axis::Tau | Axis::Nbar | Axis::P) {
        return Err(CliError::Usage(format!("tau-opt cannot sweep {}", axis.name())));
    }
    let schemes = schemes_only(&settings.targets_or(&[Target::Scheme(SchemeSpec::MAck(2))]))?;
    let values = match &settings.range {
        Some(g) => g.values.clone(),
        None if axis == Axis::Pbar => vec![settings.physics.pbar],
        None => return Err(CliError::Usage(format!("tau-opt along {} needs --range", axis.name()))),
    };
    for &v in &values {
        let ph = settings.physics.with(axis, v);
        ph.model()?;
        ph.geometry()?;
    }
    let jobs: Vec<(f64, SchemeSpec)> = values.iter().flat_map(|&v| schemes.iter().map(move |&s| (v, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(v, s)| -> Result<_, CliError> {
            let ph = settings.physics.with(axis, v);
            Ok(optimal_frame_time(s, &ph.geometry()?, &ph.model()?, settings.tau_bounds)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(&[axis.name(), "scheme", "tau_opt", "zeta", "at_boundary"]);
    let mut flagged = 0;
    for (&(v, s), r) in jobs.iter().zip(results) {
        flagged += usize::from(r.at_boundary);
        table.push(vec![json!(v), json!(s.to_string()), json!(r.tau_opt), json!(r.zeta), json!(r.at_boundary)]);
    }
    let mut params = Map::new();
    params.insert("schemes".into(), json!(schemes.iter().map(|s| s.to_string()).collect::<Vec<_>>()));
    params.insert("axis".into(), json!(axis.name()));
    params.insert("tau_min".into(), json!(settings.tau_bounds.0));
    params.insert("tau_max".into(), json!(settings.tau_bounds.1));
    if let Some(g) = &settings.range {
        params.insert("range".into(), json!(g.spec));
    }
    let mut report = Report::new(table, params);
    report.flagged = flagged;
    Ok(report)
}

pub fn antibunching(settings: &Settings) -> Result<Report, CliError> {
    let mut params = Map::new();
    let table = match &settings.range {
        Some(g) => {
            let rows = g
                .values
                .par_iter()
                .map(|&t| -> Result<Vec<Value>, CliError> {
                    let f = antibunching_fi(t, 1.0)?;
                    Ok(vec![json!(t), json!(f), json!(f / (t * t / 2.0))])
                })
                .collect::<Result<Vec<_>, _>>()?;
            params.insert("range".into(), json!(g.spec));
            let mut table = Table::new(&["theta", "fi_two_photon", "ratio_to_half_theta_sq"]);
            rows.into_iter().for_each(|r| table.push(r));
            table
        }
        None => {
            let r = antibunching_rgl()?;
            let mut table = Table::new(&["zeta", "residual", "converged"]);
            table.push(vec![json!(r.zeta), json!(r.ratio_extrapolation_residual), json!(r.converged)]);
            table
        }
    };
    Ok(Report::new(table, params))
}

/// Reference Monte Carlo checks at fixed parameters; sample sizes and seed
/// come from the settings.
pub fn validate(settings: &Settings) -> Result<Report, CliError> {
    let (frames, samples, seed) = (settings.frames, settings.samples, settings.seed);
    if frames < 1000 || samples < 1000 {
        return Err(CliError::Usage("validate needs frames and samples of at least 1000".into()));
    }
    let mut table = Table::new(&["check", "value", "reference", "tolerance", "pass"]);
    let mut failed = 0;
    let mut record = |table: &mut Table, name: &str, value: f64, reference: f64, tol: f64, pass: bool| {
        failed += usize::from(!pass);
        table.push(vec![json!(name), json!(value), json!(reference), json!(tol), json!(pass)]);
    };

    let reference = Physics {
        kind: ModelKind::Simplified,
        alpha: 0.9,
        p: 0.5,
        pbar: 100.0,
        tau_on: 1.0,
        tau_off: 1.0,
        tau: 1.0,
        dx: 0.5,
        extent: 8.0,
        mu_b: 0.0,
    };
    for kind in [ModelKind::Simplified, ModelKind::Markov] {
        let ph = Physics { kind, ..reference.clone() };
        let (model, geometry) = (ph.model()?, ph.geometry()?);
        let batch = simulate_frames(&model, &geometry, 0.2, frames, seed)?;
        let analytic = summary(SchemeSpec::MXc2, &geometry, &model, 0.2)?;
        let report = compare_summaries(&analytic, &empirical_summary_like(&batch, &analytic)?, 0.05);
        let name = match kind {
            ModelKind::Simplified => "mc_consistency_simplified_max_z",
            ModelKind::Markov => "mc_consistency_markov_max_z",
        };
        record(&mut table, name, report.max_z(), 0.0, 5.0, report.max_z() < 5.0);
    }

    let full = Physics {
        alpha: 1.0,
        pbar: 20.0,
        ..reference.clone()
    };
    let est = score_fi_oracle(&full.model()?, 0.01, samples, seed)?;
    let (z, err) = est.implied_zeta(0.01);
    let zmax = zeta_max(0.5, 1.0, 20.0)?;
    record(&mut table, "score_oracle_zeta", z, zmax, 4.0 * err, (z - zmax).abs() <= 4.0 * err);

    let bright = Physics {
        alpha: 1.0,
        pbar: 1e4,
        dx: 0.1,
        ..reference
    };
    let geometry = bright.geometry()?;
    let batch = simulate_frames(&bright.model()?, &geometry, 0.0, (frames / 50).max(1000), seed)?;
    let k1 = cumulant_image_check(&batch, 1)?;
    let k2 = cumulant_image_check(&batch, 2)?;
    let xs: Vec<f64> = (0..geometry.n_pixels).map(|i| geometry.center(i)).collect();
    let image: Vec<f64> = k2.iter().zip(&k1).map(|(a, b)| a - b).collect();
    let (_, width) = fit_gaussian_width(&xs, &image);
    let target = 0.5f64.sqrt();
    record(&mut table, "cumulant_width", width, target, 0.02 * target, (width / target - 1.0).abs() < 0.02);

    let ab = antibunching_rgl()?;
    let quarter = 2f64.powf(0.25);
    record(&mut table, "antibunching_zeta", ab.zeta, quarter, 1e-3, (ab.zeta - quarter).abs() <= 1e-3);

    let mut params = Map::new();
    params.insert("frames".into(), json!(frames));
    params.insert("samples".into(), json!(samples));
    params.insert("seed".into(), json!(seed));
    let mut report = Report::new(table, params);
    report.failed_checks = failed;
    Ok(report)
}
