//! Configuration document: schema, validation, and conversion into model
//! specifications.
//!
//! The schema is strict: unknown keys are rejected, and every validation
//! message names the offending field. Stage lists may be given explicitly or
//! produced by a small deterministic generator whose switch times are drawn
//! from a seed recorded in the document (and echoed into the emitted
//! results, so generated models are reproducible from their outputs).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use msddm::{ModelSpec64, OuModelSpec64, OuStage64, StageTheta64};

use crate::AppError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    /// Free-form notes; not interpreted.
    #[serde(default)]
    pub meta: Option<serde_json::Value>,
    pub model: ModelSection,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub reward: Option<RewardSection>,
    #[serde(default)]
    pub surface: Option<SurfaceSection>,
    #[serde(default)]
    pub ou: Option<OuSection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub x0: f64,
    #[serde(default)]
    pub grid_size: Option<usize>,
    #[serde(default)]
    pub stages: Option<Vec<StageEntry>>,
    #[serde(default)]
    pub generator: Option<GeneratorSection>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub t_start: f64,
    pub drift: f64,
    #[serde(default)]
    pub leak: f64,
    pub diffusion: f64,
    pub z_upper: f64,
    /// Defaults to `-z_upper`.
    #[serde(default)]
    pub z_lower: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub n_stages: usize,
    pub diffusion: f64,
    /// Open interval the random switch times are drawn from uniformly. The
    /// first stage always starts at the interval's lower end.
    pub time_range: [f64; 2],
    pub times_seed: u64,
    pub drift: PatternSection,
    pub threshold: PatternSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PatternSection {
    /// The same value at every stage.
    Constant(f64),
    /// Values cycled in order across stages.
    Cycle(Vec<f64>),
    /// `start + step * i` for stage index `i = 0, 1, ...`.
    Ramp { start: f64, step: f64 },
}

impl PatternSection {
    fn value(&self, i: usize) -> f64 {
        match self {
            PatternSection::Constant(v) => *v,
            PatternSection::Cycle(vs) => vs[i % vs.len()],
            PatternSection::Ramp { start, step } => start + step * i as f64,
        }
    }

    fn validate(&self, field: &str) -> Result<(), AppError> {
        if let PatternSection::Cycle(vs) = self {
            if vs.is_empty() {
                return Err(AppError::config(format!("{field}: cycle must be nonempty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub max_time: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// KS pass threshold is `ks_coefficient / sqrt(n)`.
    #[serde(default = "default_ks_coefficient")]
    pub ks_coefficient: f64,
}

fn default_ks_coefficient() -> f64 {
    1.63
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub t_nd: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridRange {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        (0..self.count)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    pub a1: GridRange,
    pub t1: GridRange,
    pub a2: f64,
    pub sigma: f64,
    /// Per-cell scan resolution; coarser than the single-curve default to
    /// keep surfaces tractable.
    #[serde(default = "default_surface_resolution")]
    pub resolution: usize,
    #[serde(default = "default_surface_grid")]
    pub grid_size: usize,
}

fn default_surface_resolution() -> usize {
    400
}

fn default_surface_grid() -> usize {
    256
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    pub pieces_per_stage: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    #[serde(default)]
    pub formats: Option<Vec<String>>,
}

/// A fully resolved model: explicit stage list (generator expanded) plus
/// bookkeeping for the result header.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub x0: f64,
    pub stages: Vec<StageEntry>,
    pub grid_size: usize,
    pub times_seed: Option<u64>,
}

impl ResolvedModel {
    pub fn has_leak(&self) -> bool {
        self.stages.iter().any(|s| s.leak != 0.0)
    }

    /// Convert to a drift-diffusion model spec; rejects leaky stages.
    pub fn to_ddm(&self) -> Result<ModelSpec64, AppError> {
        if self.has_leak() {
            return Err(AppError::config(
                "model.stages[*].leak: nonzero leak requires the `ou` command",
            ));
        }
        let mut stages = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let lower = s.z_lower.unwrap_or(-s.z_upper);
            let theta = StageTheta64::with_bounds(s.drift, s.diffusion, lower, s.z_upper)
                .map_err(|e| AppError::config(format!("model.stages[{i}]: {e}")))?
                .starting_at(s.t_start);
            stages.push(theta);
        }
        ModelSpec64::new(self.x0, stages)
            .map_err(|e| AppError::config(format!("model: {e}")))
    }

    /// Convert to an O-U model spec; requires symmetric shared thresholds.
    pub fn to_ou(&self) -> Result<OuModelSpec64, AppError> {
        let mut stages = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if let Some(lo) = s.z_lower {
                if lo != -s.z_upper {
                    return Err(AppError::config(format!(
                        "model.stages[{i}].z_lower: O-U analysis requires symmetric thresholds"
                    )));
                }
            }
            stages.push(OuStage64 {
                drift: s.drift,
                leak: s.leak,
                diffusion: s.diffusion,
                start_time: s.t_start,
                threshold: s.z_upper,
            });
        }
        OuModelSpec64::new(self.x0, stages)
            .map_err(|e| AppError::config(format!("model: {e}")))
    }
}

pub fn load_config(path: &Path) -> Result<ConfigDocument, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        AppError::config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let doc: ConfigDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        AppError::config(format!(
            "config schema error at `{}`: {}",
            e.path(),
            e.inner()
        ))
    })?;
    Ok(doc)
}

/// Expand the generator (if any) and validate the stage list field by field.
pub fn resolve_model(doc: &ConfigDocument, grid_override: Option<usize>) -> Result<ResolvedModel, AppError> {
    let m = &doc.model;
    let grid_size = grid_override
        .or(m.grid_size)
        .unwrap_or(msddm::aggregate::DEFAULT_GRID_SIZE);
    if grid_size < 2 {
        return Err(AppError::config("model.grid_size: must be at least 2"));
    }
    let (stages, times_seed) = match (&m.stages, &m.generator) {
        (Some(_), Some(_)) => {
            return Err(AppError::config(
                "model: give either `stages` or `generator`, not both",
            ));
        }
        (None, None) => {
            return Err(AppError::config(
                "model: one of `stages` or `generator` is required",
            ));
        }
        (Some(stages), None) => (stages.clone(), None),
        (None, Some(g)) => (generate_stages(g)?, Some(g.times_seed)),
    };
    if stages.is_empty() {
        return Err(AppError::config("model.stages: must be nonempty"));
    }
    for (i, s) in stages.iter().enumerate() {
        if !(s.diffusion > 0.0) {
            return Err(AppError::config(format!(
                "model.stages[{i}].diffusion: must be positive, got {}",
                s.diffusion
            )));
        }
        if s.leak < 0.0 {
            return Err(AppError::config(format!(
                "model.stages[{i}].leak: must be nonnegative, got {}",
                s.leak
            )));
        }
        let lower = s.z_lower.unwrap_or(-s.z_upper);
        if !(lower < s.z_upper) {
            return Err(AppError::config(format!(
                "model.stages[{i}].z_upper: thresholds must satisfy z_lower < z_upper"
            )));
        }
    }
    if stages[0].t_start < 0.0 {
        return Err(AppError::config(
            "model.stages[0].t_start: must be nonnegative",
        ));
    }
    for i in 1..stages.len() {
        if !(stages[i - 1].t_start < stages[i].t_start) {
            return Err(AppError::config(format!(
                "model.stages[{i}].t_start: start times must be strictly increasing \
                 ({} is not after {})",
                stages[i].t_start,
                stages[i - 1].t_start
            )));
        }
    }
    let first_lower = stages[0].z_lower.unwrap_or(-stages[0].z_upper);
    if !(first_lower < doc.model.x0 && doc.model.x0 < stages[0].z_upper) {
        return Err(AppError::config(format!(
            "model.x0: {} must lie strictly inside the first stage thresholds",
            doc.model.x0
        )));
    }
    Ok(ResolvedModel {
        x0: m.x0,
        stages,
        grid_size,
        times_seed,
    })
}

fn generate_stages(g: &GeneratorSection) -> Result<Vec<StageEntry>, AppError> {
    if g.n_stages == 0 {
        return Err(AppError::config("model.generator.n_stages: must be positive"));
    }
    let [t_lo, t_hi] = g.time_range;
    if !(t_lo >= 0.0 && t_lo < t_hi) {
        return Err(AppError::config(
            "model.generator.time_range: need 0 <= min < max",
        ));
    }
    if !(g.diffusion > 0.0) {
        return Err(AppError::config(
            "model.generator.diffusion: must be positive",
        ));
    }
    g.drift.validate("model.generator.drift")?;
    g.threshold.validate("model.generator.threshold")?;

    // the first stage starts at the range minimum; the remaining switch
    // times are uniform draws, sorted, redrawn in the (measure-zero) event
    // of a tie
    let mut rng = ChaCha8Rng::seed_from_u64(g.times_seed);
    let mut times;
    loop {
        let mut draws: Vec<f64> = (1..g.n_stages)
            .map(|_| rng.random_range(t_lo..t_hi))
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times = vec![t_lo];
        times.extend(draws);
        if times.windows(2).all(|w| w[0] < w[1]) {
            break;
        }
    }
    Ok((0..g.n_stages)
        .map(|i| {
            let z = g.threshold.value(i);
            StageEntry {
                t_start: times[i],
                drift: g.drift.value(i),
                leak: 0.0,
                diffusion: g.diffusion,
                z_upper: z,
                z_lower: None,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ConfigDocument, AppError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| AppError::config(format!("config schema error at `{}`: {}", e.path(), e.inner())))
    }

    #[test]
    fn minimal_config_parses() {
        let doc = parse(
            r#"{"model":{"x0":0.0,"stages":[
                {"t_start":0.0,"drift":1.0,"diffusion":1.0,"z_upper":1.0}]}}"#,
        )
        .unwrap();
        let m = resolve_model(&doc, None).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert!(m.to_ddm().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = parse(
            r#"{"model":{"x0":0.0,"stages":[
                {"t_start":0.0,"drifty":1.0,"diffusion":1.0,"z_upper":1.0}]}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.stages[0]"), "{msg}");
        assert!(msg.contains("drifty"), "{msg}");
    }

    #[test]
    fn unsorted_stage_times_name_the_field() {
        let doc = parse(
            r#"{"model":{"x0":0.0,"stages":[
                {"t_start":0.0,"drift":1.0,"diffusion":1.0,"z_upper":1.0},
                {"t_start":2.0,"drift":1.0,"diffusion":1.0,"z_upper":1.0},
                {"t_start":1.0,"drift":1.0,"diffusion":1.0,"z_upper":1.0}]}}"#,
        )
        .unwrap();
        let err = resolve_model(&doc, None).unwrap_err();
        assert!(err.to_string().contains("stages[2].t_start"), "{err}");
    }

    #[test]
    fn generator_is_deterministic_and_sorted() {
        let doc = parse(
            r#"{"model":{"x0":0.0,"generator":{
                "n_stages":30,"diffusion":1.0,"time_range":[0.0,10.0],"times_seed":7,
                "drift":{"cycle":[1.0,-0.75]},"threshold":{"constant":2.0}}}}"#,
        )
        .unwrap();
        let a = resolve_model(&doc, None).unwrap();
        let b = resolve_model(&doc, None).unwrap();
        assert_eq!(a.stages.len(), 30);
        assert_eq!(a.stages[0].t_start, 0.0);
        assert_eq!(a.stages[0].drift, 1.0);
        assert_eq!(a.stages[1].drift, -0.75);
        assert_eq!(a.stages[2].drift, 1.0);
        for (x, y) in a.stages.iter().zip(&b.stages) {
            assert_eq!(x.t_start, y.t_start);
        }
        assert!(a.stages.windows(2).all(|w| w[0].t_start < w[1].t_start));
    }

    #[test]
    fn ramp_patterns() {
        let doc = parse(
            r#"{"model":{"x0":0.0,"generator":{
                "n_stages":20,"diffusion":1.0,"time_range":[0.0,5.0],"times_seed":3,
                "drift":{"ramp":{"start":-0.2,"step":0.0263}},
                "threshold":{"ramp":{"start":3.0,"step":-0.1579}}}}}"#,
        )
        .unwrap();
        let m = resolve_model(&doc, None).unwrap();
        assert_eq!(m.stages[0].drift, -0.2);
        assert!((m.stages[19].drift - (-0.2 + 0.0263 * 19.0)).abs() < 1e-12);
        assert!((m.stages[19].z_upper - (3.0 - 0.1579 * 19.0)).abs() < 1e-12);
    }

    #[test]
    fn leaky_model_refuses_ddm_conversion() {
        let doc = parse(
            r#"{"model":{"x0":0.0,"stages":[
                {"t_start":0.0,"drift":0.5,"leak":0.5,"diffusion":1.0,"z_upper":2.0}]}}"#,
        )
        .unwrap();
        let m = resolve_model(&doc, None).unwrap();
        assert!(m.has_leak());
        assert!(m.to_ddm().is_err());
        assert!(m.to_ou().is_ok());
    }
}
