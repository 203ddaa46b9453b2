//! Deterministic result emission.
//!
//! CSV files carry a header row, comma separators, LF line endings, and
//! numbers printed with 17 significant digits so re-running a config
//! reproduces byte-identical artifacts. JSON documents are serialized with
//! `serde_json`, whose shortest-round-trip float encoding is likewise
//! bit-faithful.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::StageEntry;
use crate::AppError;
use msddm::aggregate::FptResult;
use msddm::montecarlo::{EmpiricalMetrics, SimOutcome};
use msddm::Boundary;

/// 17 significant digits: enough to reproduce any f64 exactly.
pub fn num(v: f64) -> String {
    format!("{:.16e}", v)
}

pub struct OutputTarget {
    pub dir: PathBuf,
    pub csv: bool,
    pub json: bool,
}

impl OutputTarget {
    pub fn new(dir: PathBuf, formats: Option<&[String]>) -> Result<Self, AppError> {
        let (mut csv, mut json) = (false, false);
        match formats {
            None => {
                csv = true;
                json = true;
            }
            Some(fs) => {
                for f in fs {
                    match f.as_str() {
                        "csv" => csv = true,
                        "json" => json = true,
                        other => {
                            return Err(AppError::config(format!(
                                "output.formats: unknown format `{other}` (expected csv or json)"
                            )));
                        }
                    }
                }
            }
        }
        Ok(OutputTarget { dir, csv, json })
    }

    pub fn prepare(&self) -> Result<(), AppError> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| AppError::io(format!("cannot create {}: {e}", self.dir.display())))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    let mut f = fs::File::create(path)
        .map_err(|e| AppError::io(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(text.as_bytes())
        .map_err(|e| AppError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), AppError> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| AppError::io(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// result documents
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct ModelHeader {
    pub x0: f64,
    pub grid_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_times_seed: Option<u64>,
    pub stages: Vec<StageEntry>,
}

#[derive(Serialize)]
pub struct StageMetricsDoc {
    pub stage_index: usize,
    pub t_start: f64,
    /// `null` for the unbounded final stage.
    pub t_end: Option<f64>,
    pub er: f64,
    pub p_decide: f64,
    pub mdt: f64,
    pub hat_mdt_upper: f64,
    pub hat_mdt_lower: f64,
    pub cond_mdt_upper: Option<f64>,
    pub cond_mdt_lower: Option<f64>,
    pub atom_upper: f64,
    pub atom_lower: f64,
}

#[derive(Serialize)]
pub struct AtomDoc {
    pub time: f64,
    pub mass: f64,
    /// `+1` upper boundary, `-1` lower boundary.
    pub boundary: i8,
}

#[derive(Serialize)]
pub struct MetricsDoc {
    pub model: ModelHeader,
    pub overall_er: f64,
    pub overall_mdt: f64,
    pub cond_mdt_upper: f64,
    pub cond_mdt_lower: f64,
    pub atoms: Vec<AtomDoc>,
    pub per_stage: Vec<StageMetricsDoc>,
}

pub fn metrics_doc(model: ModelHeader, r: &FptResult<f64>) -> MetricsDoc {
    MetricsDoc {
        model,
        overall_er: r.overall_er,
        overall_mdt: r.overall_mdt,
        cond_mdt_upper: r.cond_mdt_upper,
        cond_mdt_lower: r.cond_mdt_lower,
        atoms: r
            .cdf
            .atoms
            .iter()
            .map(|a| AtomDoc {
                time: a.time,
                mass: a.mass,
                boundary: if a.boundary == Boundary::Upper { 1 } else { -1 },
            })
            .collect(),
        per_stage: r
            .per_stage
            .iter()
            .map(|m| StageMetricsDoc {
                stage_index: m.stage_index,
                t_start: m.t_start,
                t_end: m.t_end.is_finite().then_some(m.t_end),
                er: m.er,
                p_decide: m.p_decide,
                mdt: m.mdt,
                hat_mdt_upper: m.hat_mdt_upper,
                hat_mdt_lower: m.hat_mdt_lower,
                cond_mdt_upper: m.cond_mdt_upper,
                cond_mdt_lower: m.cond_mdt_lower,
                atom_upper: m.atom_upper,
                atom_lower: m.atom_lower,
            })
            .collect(),
    }
}

/// CDF samples plus flagged atom rows, ordered by time with atoms emitted
/// at their jump position.
pub fn write_cdf_csv(path: &Path, r: &FptResult<f64>) -> Result<(), AppError> {
    let cdf = &r.cdf;
    let mut rows: Vec<(f64, u8, Vec<String>)> = Vec::with_capacity(cdf.times.len());
    for i in 0..cdf.times.len() {
        rows.push((
            cdf.times[i],
            0,
            vec![
                num(cdf.times[i]),
                num(cdf.cdf[i]),
                num(cdf.cond_upper[i]),
                num(cdf.cond_lower[i]),
                "0".to_string(),
            ],
        ));
    }
    for a in &cdf.atoms {
        rows.push((
            a.time,
            1,
            vec![
                num(a.time),
                num(a.mass),
                if a.boundary == Boundary::Upper { "1" } else { "0" }.to_string(),
                if a.boundary == Boundary::Lower { "1" } else { "0" }.to_string(),
                "1".to_string(),
            ],
        ));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    write_csv(
        path,
        &["t", "cdf", "cdf_upper", "cdf_lower", "is_atom"],
        rows.into_iter().map(|(_, _, r)| r),
    )
}

#[derive(Serialize)]
pub struct EstimateDoc {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Serialize)]
pub struct SimSummaryDoc {
    pub model: ModelHeader,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub max_time: f64,
    pub n_decided: usize,
    pub censored_fraction: f64,
    pub er: Option<EstimateDoc>,
    pub mdt: Option<EstimateDoc>,
    pub cond_mdt_upper: Option<EstimateDoc>,
    pub cond_mdt_lower: Option<EstimateDoc>,
}

pub fn sim_summary_doc(
    model: ModelHeader,
    cfg: &msddm::SimConfig64,
    m: &EmpiricalMetrics<f64>,
) -> SimSummaryDoc {
    let est = |e: &Option<msddm::montecarlo::Estimate<f64>>| {
        e.as_ref().map(|e| EstimateDoc {
            value: e.value,
            std_error: e.std_error,
        })
    };
    SimSummaryDoc {
        model,
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        seed: cfg.seed,
        max_time: cfg.max_time,
        n_decided: m.n_decided,
        censored_fraction: m.censored_fraction,
        er: est(&m.er),
        mdt: est(&m.mdt),
        cond_mdt_upper: est(&m.cond_mdt_upper),
        cond_mdt_lower: est(&m.cond_mdt_lower),
    }
}

/// `path_id, decision_time, boundary{+1,-1}, censored{0,1}`; censored rows
/// carry boundary 0 and the horizon as their decision time.
pub fn write_outcomes_csv(path: &Path, outcomes: &[SimOutcome<f64>]) -> Result<(), AppError> {
    write_csv(
        path,
        &["path_id", "decision_time", "boundary", "censored"],
        outcomes.iter().enumerate().map(|(i, o)| {
            let b = match o.boundary {
                Some(Boundary::Upper) => "1",
                Some(Boundary::Lower) => "-1",
                None => "0",
            };
            vec![
                i.to_string(),
                num(o.decision_time),
                b.to_string(),
                if o.censored() { "1" } else { "0" }.to_string(),
            ]
        }),
    )
}

#[derive(Serialize)]
pub struct KsCurveDoc {
    pub curve: String,
    pub n: usize,
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct CompareDoc {
    pub model: ModelHeader,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub ks_coefficient: f64,
    pub curves: Vec<KsCurveDoc>,
    pub all_pass: bool,
}
