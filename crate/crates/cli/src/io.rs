//! CSV schemas for designs, simulator batches, observation data,
//! hyper-parameter draws, chain traces, PoF samples and KDE curves.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;

use mfpof::design::NestedDesign;
use mfpof::gp::MfDataset;
use mfpof::prior::{HyperParams, ModelKind};

/// Write a design as `level,x1..xd` rows, one row per point per level it
/// belongs to (nested points appear at every level).
pub fn write_design_csv(path: &Path, design: &NestedDesign) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut header = vec!["level".to_string()];
    for k in 0..design.dim() {
        header.push(format!("x{}", k + 1));
    }
    w.write_record(&header)?;
    for s in 0..design.n_levels() {
        let t = design.levels()[s];
        for p in design.level_points(s) {
            let mut rec = vec![format!("{t}")];
            rec.extend(p.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a design written by [`write_design_csv`], re-validating both
/// invariants.
pub fn read_design_csv(path: &Path) -> Result<NestedDesign> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("level") || headers.len() < 2 {
        bail!("design CSV must start with a 'level' column followed by coordinates");
    }
    let dim = headers.len() - 1;
    let mut levels: Vec<f64> = Vec::new();
    let mut per_level: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t: f64 = rec.get(0).unwrap().parse()?;
        let point: Vec<f64> = (0..dim)
            .map(|k| rec.get(1 + k).unwrap().parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        match levels.iter().position(|&l| l == t) {
            Some(idx) => per_level[idx].push(point),
            None => {
                levels.push(t);
                per_level.push(vec![point]);
            }
        }
    }
    Ok(NestedDesign::from_level_points(levels, per_level)?)
}

/// One row of a simulation batch: inputs plus a per-row seed.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SimRequest {
    pub omega0: f64,
    pub zeta: f64,
    pub dt: f64,
    pub seed: u64,
}

pub fn read_sim_requests(path: &Path) -> Result<Vec<SimRequest>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    if out.is_empty() {
        bail!("empty simulation batch");
    }
    Ok(out)
}

/// `omega0,zeta,dt,seed,output,cost_ms` rows.
pub fn write_sim_results(path: &Path, rows: &[(SimRequest, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["omega0", "zeta", "dt", "seed", "output", "cost_ms"])?;
    for (req, output, cost) in rows {
        w.write_record(&[
            format!("{}", req.omega0),
            format!("{}", req.zeta),
            format!("{}", req.dt),
            format!("{}", req.seed),
            format!("{output}"),
            format!("{cost}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read observations `x1..xd,t,z`; levels are the distinct `t` values in
/// decreasing order.
pub fn read_data_csv(path: &Path, bounds: &[(f64, f64)]) -> Result<MfDataset> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = r.headers()?.clone();
    let dim = bounds.len();
    if headers.len() != dim + 2 {
        bail!(
            "observation CSV needs {} columns (x1..x{dim},t,z), found {}",
            dim + 2,
            headers.len()
        );
    }
    let mut points = Vec::new();
    let mut z = Vec::new();
    let mut levels: Vec<f64> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x: Vec<f64> = (0..dim)
            .map(|k| rec.get(k).unwrap().parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        let t: f64 = rec.get(dim).unwrap().parse()?;
        let out: f64 = rec.get(dim + 1).unwrap().parse()?;
        if !levels.contains(&t) {
            levels.push(t);
        }
        points.push((x, t));
        z.push(out);
    }
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(MfDataset::new(points, z, levels, bounds.to_vec())?)
}

/// Write observations in the `x1..xd,t,z` schema.
pub fn write_data_csv(path: &Path, data: &MfDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("x{}", k + 1)).collect();
    header.push("t".into());
    header.push("z".into());
    w.write_record(&header)?;
    for (i, (x, t)) in data.points().iter().enumerate() {
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        rec.push(format!("{t}"));
        rec.push(format!("{}", data.outputs()[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write hyper-parameter draws, one row per theta, columns in layout order.
pub fn write_thetas_csv(path: &Path, thetas: &[HyperParams]) -> Result<()> {
    if thetas.is_empty() {
        bail!("no hyper-parameter draws to write");
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string()];
    header.extend(thetas[0].kind().coordinate_names());
    w.write_record(&header)?;
    for (i, theta) in thetas.iter().enumerate() {
        let mut rec = vec![format!("{i}")];
        rec.extend(theta.log_vector().iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read hyper-parameter draws for a known model kind.
pub fn read_thetas_csv(path: &Path, kind: ModelKind) -> Result<Vec<HyperParams>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let expected = kind.param_len();
    let headers = r.headers()?.clone();
    if headers.len() != expected + 1 {
        bail!(
            "theta CSV has {} value columns, the model expects {}",
            headers.len().saturating_sub(1),
            expected
        );
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = (0..expected)
            .map(|k| rec.get(1 + k).unwrap().parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        out.push(HyperParams::new(kind, DVector::from_vec(v))?);
    }
    if out.is_empty() {
        bail!("no hyper-parameter rows in {}", path.display());
    }
    Ok(out)
}

/// Write the full chain trace: `iteration,log_posterior,<coordinates>`.
pub fn write_trace_csv(
    path: &Path,
    kind: ModelKind,
    states: &[DVector<f64>],
    log_posterior: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string(), "log_posterior".to_string()];
    header.extend(kind.coordinate_names());
    w.write_record(&header)?;
    for (i, (state, lp)) in states.iter().zip(log_posterior).enumerate() {
        let mut rec = vec![format!("{i}"), format!("{lp}")];
        rec.extend(state.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write PoF draws as `j,l,pof` with `j` the theta provenance index.
pub fn write_pof_samples_csv(path: &Path, set: &mfpof::pof::PofSampleSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["j", "l", "pof"])?;
    for (row, &j) in set.samples.iter().zip(&set.theta_index) {
        for (l, p) in row.iter().enumerate() {
            w.write_record(&[format!("{j}"), format!("{l}"), format!("{p}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read one numeric column from a CSV file.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = r.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .with_context(|| format!("no column '{column}' in {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        out.push(rec?.get(idx).unwrap().parse::<f64>()?);
    }
    if out.is_empty() {
        bail!("no rows in {}", path.display());
    }
    Ok(out)
}

/// Write `x,density` rows of a KDE curve.
pub fn write_kde_csv(path: &Path, curve: &mfpof::kde::KdeCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "density"])?;
    for (x, d) in curve.grid.iter().zip(&curve.density) {
        w.write_record(&[format!("{x}"), format!("{d}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `level,coverage` rows of a coverage curve.
pub fn write_coverage_csv(path: &Path, points: &[mfpof::pof::CoveragePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["level", "coverage"])?;
    for p in points {
        w.write_record(&[format!("{}", p.level), format!("{}", p.coverage)])?;
    }
    w.flush()?;
    Ok(())
}

/// Write a single numeric column.
pub fn write_column_csv(path: &Path, column: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([column])?;
    for v in values {
        w.write_record(&[format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}
