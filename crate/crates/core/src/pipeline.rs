//! Per-frame orchestration: temperature features, mixture fits under one and
//! two layers, posterior-weighted flow, velocity mixtures, scoring and the
//! sequential decision.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, FlowError, FlowField, WlkConfig};
use crate::hmm::{HmmState, HypothesisScore};
use crate::imaging::{self, Frame, Grid, ImagingError, SegmentationMask, DEFAULT_NORMALIZE_EPS};
use crate::mixtures::{self, Component, Dataset, Family, FamilyParams, MixtureError, MixtureFit, MixtureSpec};
use crate::numerics::MIN_ARG;
use crate::selection::{self, MetricReport};

/// Model compositions known to the detector. Groups joined by `+` are fitted
/// separately; the first group uses the temperature-stage concentration
/// `alpha0`, later groups `alpha1`.
pub const MODEL_ZOO: &[&str] = &[
    "beta_T+vm_phi",
    "beta_T+gamma_r",
    "beta_T+vm_phi_gamma_r",
    "beta_T+gauss_uv",
    "gamma_T+vm_phi",
    "gamma_T+gamma_r",
    "gamma_T+vm_phi_gamma_r",
    "gamma_T+gauss_uv",
    "gauss_T+vm_phi",
    "gauss_T+gamma_r",
    "gauss_T+vm_phi_gamma_r",
    "gauss_T+gauss_uv",
    "gauss_T_uv",
    "bga_T_r",
    "bga_T_r+vm_phi",
    "vm_phi",
    "gamma_r",
    "vm_phi_gamma_r",
    "gauss_uv",
];

pub const DEFAULT_MODEL: &str = "beta_T+vm_phi";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown model {id:?}; valid models: {}", MODEL_ZOO.join(", "))]
    UnknownModel { id: String },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("frame {t} has {found} cloud pixels; at least {required} are needed")]
    InsufficientMask { t: usize, found: usize, required: usize },
    #[error("a sequence needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// Per-pixel quantities a mixture component can read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// Raw temperature (K).
    Temperature,
    /// Temperature min-max normalized into (0, 1).
    BetaTemperature,
    /// Temperature shifted to a positive minimum.
    GammaTemperature,
    U,
    V,
    Magnitude,
    Angle,
}

impl Feature {
    pub fn is_temperature(self) -> bool {
        matches!(self, Feature::Temperature | Feature::BetaTemperature | Feature::GammaTemperature)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGroup {
    pub id: String,
    pub components: Vec<(Family, Vec<Feature>)>,
}

impl ModelGroup {
    pub fn features(&self) -> Vec<Feature> {
        self.components.iter().flat_map(|(_, f)| f.iter().copied()).collect()
    }

    pub fn is_temperature_only(&self) -> bool {
        self.features().into_iter().all(Feature::is_temperature)
    }

    /// Mixture spec whose columns index [`ModelGroup::features`] in order.
    pub fn mixture_spec(&self, clusters: usize, alpha: f64) -> Result<MixtureSpec, MixtureError> {
        let mut next = 0;
        let components = self
            .components
            .iter()
            .map(|(family, feats)| {
                let cols = (next..next + feats.len()).collect();
                next += feats.len();
                Component::new(*family, cols)
            })
            .collect();
        MixtureSpec::new(clusters, components, alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub id: String,
    pub groups: Vec<ModelGroup>,
}

impl ModelSpec {
    /// Index of the group whose two-layer posteriors weight the flow solve.
    pub fn weighting_group(&self) -> Option<usize> {
        self.groups.iter().position(ModelGroup::is_temperature_only)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

fn parse_group(text: &str) -> Option<ModelGroup> {
    let mut components: Vec<(Family, Vec<Feature>)> = Vec::new();
    let mut tokens = text.split('_').peekable();
    while let Some(fam) = tokens.next() {
        let mut feats: Vec<&str> = Vec::new();
        while let Some(&t) = tokens.peek() {
            if matches!(t, "beta" | "gamma" | "gauss" | "vm" | "bga") {
                break;
            }
            feats.push(t);
            tokens.next();
        }
        if feats.is_empty() {
            return None;
        }
        match fam {
            "beta" => {
                for f in feats {
                    (f == "T").then_some(())?;
                    components.push((Family::Beta, vec![Feature::BetaTemperature]));
                }
            }
            "gamma" => {
                for f in feats {
                    let feat = match f {
                        "T" => Feature::GammaTemperature,
                        "r" => Feature::Magnitude,
                        _ => return None,
                    };
                    components.push((Family::Gamma, vec![feat]));
                }
            }
            "vm" => {
                for f in feats {
                    (f == "phi").then_some(())?;
                    components.push((Family::VonMises, vec![Feature::Angle]));
                }
            }
            "bga" => {
                let cols: Vec<Feature> = feats
                    .iter()
                    .map(|f| match *f {
                        "T" => Some(Feature::GammaTemperature),
                        "r" => Some(Feature::Magnitude),
                        _ => None,
                    })
                    .collect::<Option<_>>()?;
                (cols.len() == 2).then_some(())?;
                components.push((Family::BivariateGamma, cols));
            }
            "gauss" => {
                let mut cols = Vec::new();
                for f in feats {
                    match f {
                        "T" => cols.push(Feature::Temperature),
                        "uv" => cols.extend([Feature::U, Feature::V]),
                        "u" => cols.push(Feature::U),
                        "v" => cols.push(Feature::V),
                        "r" => cols.push(Feature::Magnitude),
                        "phi" => cols.push(Feature::Angle),
                        _ => return None,
                    }
                }
                components.push((Family::Gaussian { dim: cols.len() }, cols));
            }
            _ => return None,
        }
    }
    (!components.is_empty()).then(|| ModelGroup {
        id: text.to_string(),
        components,
    })
}

/// Parse a model id such as `beta_T+vm_phi`.
pub fn parse_model(id: &str) -> Result<ModelSpec, PipelineError> {
    let unknown = || PipelineError::UnknownModel { id: id.to_string() };
    let groups = id.split('+').map(parse_group).collect::<Option<Vec<_>>>().ok_or_else(unknown)?;
    if groups.is_empty() {
        return Err(unknown());
    }
    Ok(ModelSpec {
        id: id.to_string(),
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: String,
    /// Dirichlet concentration of the first (temperature) group.
    pub alpha0: f64,
    /// Dirichlet concentration of the remaining (velocity) groups.
    pub alpha1: f64,
    /// Transition stickiness.
    pub beta: f64,
    pub window_half_width: usize,
    pub tau: f64,
    pub sigma: f64,
    pub restarts: usize,
    pub seed: u64,
    pub initial_layers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let wlk = WlkConfig::default();
        Self {
            model: DEFAULT_MODEL.to_string(),
            alpha0: 1.0,
            alpha1: 10.0,
            beta: 650.0,
            window_half_width: wlk.half_width,
            tau: wlk.tau,
            sigma: wlk.sigma,
            restarts: 3,
            seed: 0,
            initial_layers: 1,
        }
    }
}

impl PipelineConfig {
    pub fn wlk(&self) -> WlkConfig {
        WlkConfig {
            half_width: self.window_half_width,
            tau: self.tau,
            sigma: self.sigma,
        }
    }

    pub fn validate(&self) -> Result<ModelSpec, PipelineError> {
        let model = parse_model(&self.model)?;
        if !(self.alpha0 >= 1.0 && self.alpha1 >= 1.0) {
            return Err(PipelineError::Config(format!(
                "Dirichlet concentrations must be >= 1, got alpha0={} alpha1={}",
                self.alpha0, self.alpha1
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(PipelineError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.restarts == 0 {
            return Err(PipelineError::Config("restarts must be positive".into()));
        }
        if !(1..=2).contains(&self.initial_layers) {
            return Err(PipelineError::Config(format!(
                "initial layer count must be 1 or 2, got {}",
                self.initial_layers
            )));
        }
        self.wlk().validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub pixels: usize,
    pub mean_u: f64,
    pub mean_v: f64,
    pub median_u: f64,
    pub median_v: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl FlowStats {
    fn over(field: &FlowField, pixels: &[(usize, usize)]) -> Self {
        let mut us: Vec<f64> = pixels.iter().map(|&(i, j)| field.u.get(i, j)).collect();
        let mut vs: Vec<f64> = pixels.iter().map(|&(i, j)| field.v.get(i, j)).collect();
        let n = pixels.len().max(1) as f64;
        Self {
            pixels: pixels.len(),
            mean_u: us.iter().sum::<f64>() / n,
            mean_v: vs.iter().sum::<f64>() / n,
            median_u: median(&mut us),
            median_v: median(&mut vs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    /// Statistics of each layer's field over the pixels assigned to it.
    pub layers: Vec<FlowStats>,
    pub merged: FlowStats,
    pub singular_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: String,
    pub metrics: MetricReport,
    pub params: Vec<Vec<FamilyParams>>,
    pub weights: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart_id: usize,
}

impl GroupFit {
    fn new(group: &ModelGroup, fit: &MixtureFit) -> Self {
        Self {
            group: group.id.clone(),
            metrics: selection::metrics(fit),
            params: fit.params.clone(),
            weights: fit.weights.clone(),
            converged: fit.converged,
            iterations: fit.trace.len(),
            restart_id: fit.restart_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub l: usize,
    pub fits: Vec<GroupFit>,
    pub flow: Option<FlowSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub t: usize,
    pub chosen: usize,
    pub previous: usize,
    pub masked_pixels: usize,
    pub scores: Vec<HypothesisScore>,
    pub hypotheses: Vec<HypothesisReport>,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Dense per-hypothesis results kept for optional dumps.
#[derive(Debug, Clone)]
pub struct HypothesisArtifacts {
    pub l: usize,
    pub flow: FlowField,
    /// Per-layer weights used in the flow solve.
    pub weights: Vec<Grid>,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub record: DetectionRecord,
    pub artifacts: Vec<HypothesisArtifacts>,
}

/// Features of every cloud pixel, stored by column.
struct FeatureTable {
    pixels: Vec<(usize, usize)>,
    temperature: Vec<f64>,
    beta_t: Vec<f64>,
    gamma_t: Vec<f64>,
}

struct VelocityTable {
    u: Vec<f64>,
    v: Vec<f64>,
    r: Vec<f64>,
    phi: Vec<f64>,
}

impl VelocityTable {
    fn from_field(field: &FlowField, pixels: &[(usize, usize)]) -> Self {
        let mut out = Self {
            u: Vec::with_capacity(pixels.len()),
            v: Vec::with_capacity(pixels.len()),
            r: Vec::with_capacity(pixels.len()),
            phi: Vec::with_capacity(pixels.len()),
        };
        for &(i, j) in pixels {
            out.u.push(field.u.get(i, j));
            out.v.push(field.v.get(i, j));
            out.r.push(field.magnitude(i, j).max(MIN_ARG));
            out.phi.push(field.angle(i, j));
        }
        out
    }
}

fn group_dataset(group: &ModelGroup, temps: &FeatureTable, vel: Option<&VelocityTable>) -> Dataset {
    let columns = group
        .features()
        .into_iter()
        .map(|f| {
            let vel = || vel.expect("velocity features are computed before velocity groups");
            match f {
                Feature::Temperature => temps.temperature.clone(),
                Feature::BetaTemperature => temps.beta_t.clone(),
                Feature::GammaTemperature => temps.gamma_t.clone(),
                Feature::U => vel().u.clone(),
                Feature::V => vel().v.clone(),
                Feature::Magnitude => vel().r.clone(),
                Feature::Angle => vel().phi.clone(),
            }
        })
        .collect();
    Dataset::new(columns).expect("feature columns share the pixel count")
}

fn frame_seed(seed: u64, t: usize, group: usize) -> u64 {
    let mut x = seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (group as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct HypothesisResult {
    report: HypothesisReport,
    fits: Vec<Option<MixtureFit>>,
    posterior_sum: Option<f64>,
    artifacts: HypothesisArtifacts,
}

/// Stateful online detector for one sequence.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: PipelineConfig,
    model: ModelSpec,
    state: HmmState,
}

impl Detector {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let model = cfg.validate()?;
        let state = HmmState::new(cfg.initial_layers, cfg.beta);
        Ok(Self { cfg, model, state })
    }

    pub fn state(&self) -> &HmmState {
        &self.state
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    fn prepare(
        &self,
        prev: (&Frame, &SegmentationMask),
        cur: (&Frame, &SegmentationMask),
    ) -> Result<(FeatureTable, flow::DerivativeStack), PipelineError> {
        let (frame, mask) = cur;
        let wlk = self.cfg.wlk();
        let required = wlk.window_size() * wlk.window_size();
        let found = mask.count();
        if found < required {
            return Err(PipelineError::InsufficientMask {
                t: frame.index,
                found,
                required,
            });
        }
        let temps = FeatureTable {
            pixels: mask.pixels(),
            temperature: imaging::masked_temperatures(frame, mask)?,
            beta_t: imaging::normalize_beta(frame, mask, DEFAULT_NORMALIZE_EPS)?,
            gamma_t: imaging::normalize_gamma(frame, mask, DEFAULT_NORMALIZE_EPS)?,
        };
        let (prev_i, cur_i) = flow::to_intensity(prev, cur)?;
        let deriv = flow::derivatives(&prev_i, &cur_i, wlk.sigma)?;
        Ok((temps, deriv))
    }

    /// Fit every group of the model under `l` layers for one frame pair
    /// without touching the detector state. Failed groups are `None`.
    pub fn fit_frame(
        &self,
        prev: (&Frame, &SegmentationMask),
        cur: (&Frame, &SegmentationMask),
        l: usize,
    ) -> Result<Vec<(String, Option<MixtureFit>)>, PipelineError> {
        if !(1..=2).contains(&l) {
            return Err(PipelineError::Config(format!("layer count must be 1 or 2, got {l}")));
        }
        let (temps, deriv) = self.prepare(prev, cur)?;
        let result = self.run_hypothesis(l, cur.0.index, &temps, &deriv, cur.1)?;
        Ok(self.model.groups.iter().map(|g| g.id.clone()).zip(result.fits).collect())
    }

    /// Process the pair `(prev, cur)` and advance the detector state.
    pub fn process_frame(
        &mut self,
        prev: (&Frame, &SegmentationMask),
        cur: (&Frame, &SegmentationMask),
    ) -> Result<FrameOutput, PipelineError> {
        let (frame, mask) = cur;
        let t = frame.index;
        let found = mask.count();
        let (temps, deriv) = self.prepare(prev, cur)?;

        let results: Vec<HypothesisResult> = [1usize, 2]
            .par_iter()
            .map(|&l| self.run_hypothesis(l, t, &temps, &deriv, mask))
            .collect::<Result<_, _>>()?;

        let previous = self.state.previous_l;
        let mut flags = Vec::new();
        let scores: Vec<HypothesisScore> = results
            .iter()
            .map(|r| match r.posterior_sum {
                Some(s) => self.state.score_sum(r.report.l, s),
                None => {
                    flags.push(format!("hypothesis L={} failed", r.report.l));
                    HypothesisScore::failed(r.report.l, previous, self.cfg.beta)
                }
            })
            .collect();
        for r in &results {
            if let Some(f) = &r.report.flow {
                if f.singular_pixels > 0 {
                    flags.push(format!("L={}: {} singular flow pixels", r.report.l, f.singular_pixels));
                }
            }
            for g in &r.report.fits {
                if !g.converged {
                    flags.push(format!("L={}: {} fit did not converge", r.report.l, g.group));
                }
            }
        }
        let chosen = self.state.step(t, scores.clone());
        let mut artifacts = Vec::with_capacity(2);
        let mut hypotheses = Vec::with_capacity(2);
        for r in results {
            hypotheses.push(r.report);
            artifacts.push(r.artifacts);
        }
        Ok(FrameOutput {
            record: DetectionRecord {
                t,
                chosen,
                previous,
                masked_pixels: found,
                scores,
                hypotheses,
                flags,
                error: None,
            },
            artifacts,
        })
    }

    fn fit_group(
        &self,
        g: usize,
        l: usize,
        t: usize,
        temps: &FeatureTable,
        vel: Option<&VelocityTable>,
    ) -> Result<MixtureFit, MixtureError> {
        let group = &self.model.groups[g];
        let alpha = if g == 0 { self.cfg.alpha0 } else { self.cfg.alpha1 };
        let spec = group.mixture_spec(l, alpha)?;
        let data = group_dataset(group, temps, vel);
        let fit = mixtures::fit(&data, &spec, frame_seed(self.cfg.seed, t, g), self.cfg.restarts)?;
        let temperature = Dataset::new(vec![temps.temperature.clone()]).expect("single column");
        let means = fit.cluster_means(&temperature, 0);
        Ok(mixtures::resolve_labels(&fit, &means))
    }

    fn run_hypothesis(
        &self,
        l: usize,
        t: usize,
        temps: &FeatureTable,
        deriv: &flow::DerivativeStack,
        mask: &SegmentationMask,
    ) -> Result<HypothesisResult, PipelineError> {
        let (rows, cols) = mask.shape();
        let mut fits: Vec<Option<MixtureFit>> = vec![None; self.model.groups.len()];
        let mut error = None;

        // Flow weights: the weighting group's posteriors for two layers,
        // the mask indicator otherwise.
        let ones = Grid::from_fn(rows, cols, |i, j| if mask.get(i, j) { 1.0 } else { 0.0 });
        let mut weights = vec![ones];
        if l == 2 {
            if let Some(g) = self.model.weighting_group() {
                match self.fit_group(g, l, t, temps, None) {
                    Ok(fit) => {
                        weights = (0..l)
                            .map(|k| {
                                let mut grid = Grid::filled(rows, cols, 0.0);
                                for (n, &(i, j)) in temps.pixels.iter().enumerate() {
                                    grid.set(i, j, fit.gamma(n, k));
                                }
                                grid
                            })
                            .collect();
                        fits[g] = Some(fit);
                    }
                    Err(e) => error = Some(e.to_string()),
                }
            }
        }

        let solved = flow::wlk_solve(deriv, &weights, mask, &self.cfg.wlk())?;
        let merged = flow::merge_layers(&solved.fields, &weights, mask)?;
        let layer_stats = solved
            .fields
            .iter()
            .zip(&weights)
            .map(|(f, w)| {
                let own: Vec<(usize, usize)> = temps
                    .pixels
                    .iter()
                    .copied()
                    .filter(|&(i, j)| weights.len() == 1 || w.get(i, j) >= 0.5)
                    .collect();
                FlowStats::over(f, &own)
            })
            .collect();
        let summary = FlowSummary {
            layers: layer_stats,
            merged: FlowStats::over(&merged, &temps.pixels),
            singular_pixels: solved.singular_pixels,
        };

        if error.is_none() {
            let vel = VelocityTable::from_field(&merged, &temps.pixels);
            for g in 0..self.model.groups.len() {
                if fits[g].is_some() {
                    continue;
                }
                match self.fit_group(g, l, t, temps, Some(&vel)) {
                    Ok(fit) => fits[g] = Some(fit),
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
        }

        let reports: Vec<GroupFit> = self
            .model
            .groups
            .iter()
            .zip(&fits)
            .filter_map(|(group, fit)| fit.as_ref().map(|f| GroupFit::new(group, f)))
            .collect();
        let posterior_sum = match error {
            None => Some(fits.iter().map(|f| f.as_ref().map_or(0.0, |f| f.q)).sum()),
            Some(_) => None,
        };
        Ok(HypothesisResult {
            report: HypothesisReport {
                l,
                fits: reports,
                flow: Some(summary),
                error,
            },
            posterior_sum,
            fits,
            artifacts: HypothesisArtifacts {
                l,
                flow: merged,
                weights,
            },
        })
    }

    /// Record for a frame that could not be processed: the state is kept.
    pub fn failed_record(&self, t: usize, mask: &SegmentationMask, err: &PipelineError) -> DetectionRecord {
        DetectionRecord {
            t,
            chosen: self.state.previous_l,
            previous: self.state.previous_l,
            masked_pixels: mask.count(),
            scores: Vec::new(),
            hypotheses: Vec::new(),
            flags: vec!["frame skipped".to_string()],
            error: Some(err.to_string()),
        }
    }
}

/// Run the detector over a whole sequence, producing one record per frame
/// after the first. Frames that fail are recorded with the state unchanged.
pub fn process_sequence(
    seq: &[(Frame, SegmentationMask)],
    cfg: &PipelineConfig,
) -> Result<Vec<DetectionRecord>, PipelineError> {
    let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
    run_sequence(seq, cfg, |output| {
        out.push(output.record);
        Ok::<(), PipelineError>(())
    })?;
    Ok(out)
}

/// Like [`process_sequence`] but hands each frame's output to `sink` as soon
/// as it is ready.
pub fn run_sequence<E>(
    seq: &[(Frame, SegmentationMask)],
    cfg: &PipelineConfig,
    mut sink: impl FnMut(FrameOutput) -> Result<(), E>,
) -> Result<(), E>
where
    E: From<PipelineError>,
{
    if seq.len() < 2 {
        return Err(PipelineError::TooFewFrames(seq.len()).into());
    }
    let mut detector = Detector::new(cfg.clone())?;
    for pair in seq.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let output = match detector.process_frame((&prev.0, &prev.1), (&cur.0, &cur.1)) {
            Ok(o) => o,
            Err(e @ (PipelineError::InsufficientMask { .. } | PipelineError::Imaging(_))) => FrameOutput {
                record: detector.failed_record(cur.0.index, &cur.1, &e),
                artifacts: Vec::new(),
            },
            Err(e) => return Err(e.into()),
        };
        sink(output)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoo_parses() {
        for id in MODEL_ZOO {
            let m = parse_model(id).unwrap();
            assert_eq!(&m.id, id);
        }
        let m = parse_model("gauss_T_uv").unwrap();
        assert_eq!(m.groups.len(), 1);
        assert_eq!(m.groups[0].components[0].0, Family::Gaussian { dim: 3 });
        assert_eq!(m.weighting_group(), None);
        let m = parse_model("beta_T+vm_phi_gamma_r").unwrap();
        assert_eq!(m.groups[1].components.len(), 2);
        assert_eq!(m.weighting_group(), Some(0));
        assert!(matches!(parse_model("nosuch"), Err(PipelineError::UnknownModel { .. })));
        assert!(parse_model("beta_r").is_err());
        assert!(parse_model("bga_T").is_err());
        let err = parse_model("nosuch").unwrap_err().to_string();
        assert!(err.contains("beta_T+vm_phi"));
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let cfg = PipelineConfig {
            alpha1: 0.5,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            initial_layers: 3,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_mask_is_rejected() {
        let grid = Grid::filled(30, 30, 260.0);
        let frame = Frame::new(1, grid).unwrap();
        let mask = SegmentationMask::from_fn(30, 30, |_, _| false);
        let mut d = Detector::new(PipelineConfig::default()).unwrap();
        let err = d.process_frame((&frame, &mask), (&frame, &mask)).unwrap_err();
        assert!(matches!(err, PipelineError::InsufficientMask { found: 0, .. }));
    }
}
