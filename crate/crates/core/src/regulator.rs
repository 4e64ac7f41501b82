//! Driving-style regulation of the scorer weights.
//!
//! On a fixed cadence of simulated time a [`DirectiveProvider`] (a remote
//! language-model endpoint or the deterministic [`MockProvider`]) receives a
//! textual scene summary and answers with additive weight deltas. Deltas are
//! clamped to a band around the default weights, and any provider failure
//! leaves the weights untouched.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::scene::{ObstacleKind, SceneContext};
use crate::scorer::{ScorerWeights, WeightName};
use crate::traj::EgoStatus;

pub const QUERY_INTERVAL: f64 = 5.0;
/// Weights stay within `[LOWER, UPPER] x default`.
pub const CLAMP_LOWER: f64 = 0.5;
pub const CLAMP_UPPER: f64 = 1.5;
pub const DEFAULT_PROVIDER_TIMEOUT_MS: u64 = 2000;
pub const PROMPT_TEMPLATE: &str = include_str!("../assets/style_prompt.txt");
pub const PROMPT_TEMPLATE_ID: &str = "style-regulator-v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegulatorError {
    #[error("unknown weight key `{0}`")]
    UnknownWeightKey(String),
    #[error("non-finite delta for `{0}`")]
    InvalidDelta(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("directive provider timed out")]
    Timeout,
    #[error("directive provider transport error: {0}")]
    Transport(String),
    #[error("directive provider returned an invalid response: {0}")]
    InvalidResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Aggressive,
    Conservative,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StyleDirective<T: Real = f64> {
    pub style: Style,
    #[serde(default)]
    pub deltas: BTreeMap<String, T>,
    #[serde(default)]
    pub rationale: String,
}

impl<T: Real> StyleDirective<T> {
    pub fn neutral(rationale: impl Into<String>) -> Self {
        StyleDirective { style: Style::Neutral, deltas: BTreeMap::new(), rationale: rationale.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureClass {
    Straight,
    Gentle,
    Sharp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NearestObstacle<T: Real = f64> {
    /// Center-to-center distance from the ego.
    pub distance: T,
    pub kind: ObstacleKind,
}

/// Structured snapshot handed to the directive provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SceneSummary<T: Real = f64> {
    pub ego_speed: T,
    pub nearest_obstacle: Option<NearestObstacle<T>>,
    pub goal_distance: T,
    pub lane_curvature: T,
    pub curvature_class: CurvatureClass,
    pub weights: ScorerWeights<T>,
}

/// Lane points farther than this from the ego do not count toward the curvature class.
pub const CURVATURE_RADIUS: f64 = 30.0;
pub const SHARP_CURVATURE: f64 = 0.05;
pub const GENTLE_CURVATURE: f64 = 0.01;

impl<T: Real> SceneSummary<T> {
    pub fn new(scene: &SceneContext<T>, ego: &EgoStatus<T>, weights: &ScorerWeights<T>) -> Self {
        let dist = |p: [T; 2]| ((p[0] - ego.position[0]).powi(2) + (p[1] - ego.position[1]).powi(2)).sqrt();
        let nearest_obstacle = scene
            .obstacles
            .iter()
            .map(|o| NearestObstacle { distance: dist(o.center), kind: o.kind })
            .fold(None, |best: Option<NearestObstacle<T>>, o| match best {
                Some(b) if b.distance <= o.distance => Some(b),
                _ => Some(o),
            });
        let lane_curvature = local_lane_curvature(&scene.lane_center, ego.position, T::lit(CURVATURE_RADIUS));
        let curvature_class = if lane_curvature > T::lit(SHARP_CURVATURE) {
            CurvatureClass::Sharp
        } else if lane_curvature > T::lit(GENTLE_CURVATURE) {
            CurvatureClass::Gentle
        } else {
            CurvatureClass::Straight
        };
        SceneSummary {
            ego_speed: ego.speed,
            nearest_obstacle,
            goal_distance: dist(scene.target.point),
            lane_curvature,
            curvature_class,
            weights: *weights,
        }
    }

    /// Line-oriented text rendering used in provider prompts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ego_speed_mps: {:.2}", self.ego_speed.to_f64_lossy());
        match &self.nearest_obstacle {
            Some(o) => {
                let _ = writeln!(s, "nearest_obstacle_m: {:.2}", o.distance.to_f64_lossy());
                let _ = writeln!(s, "nearest_obstacle_kind: {}", kind_name(o.kind));
            }
            None => {
                let _ = writeln!(s, "nearest_obstacle_m: none");
            }
        }
        let _ = writeln!(s, "goal_distance_m: {:.2}", self.goal_distance.to_f64_lossy());
        let _ = writeln!(s, "lane_curvature_per_m: {:.4}", self.lane_curvature.to_f64_lossy());
        let class = match self.curvature_class {
            CurvatureClass::Straight => "straight",
            CurvatureClass::Gentle => "gentle",
            CurvatureClass::Sharp => "sharp",
        };
        let _ = writeln!(s, "lane_curvature_class: {class}");
        s.push_str(&weights_text(&self.weights));
        s
    }
}

fn kind_name(kind: ObstacleKind) -> &'static str {
    match kind {
        ObstacleKind::Vehicle => "vehicle",
        ObstacleKind::Pedestrian => "pedestrian",
        ObstacleKind::Static => "static",
    }
}

fn weights_text<T: Real>(w: &ScorerWeights<T>) -> String {
    WeightName::ALL
        .iter()
        .map(|&n| format!("{}: {:.3}\n", n, w.get(n).to_f64_lossy()))
        .collect()
}

/// Largest Menger curvature among lane vertices within `radius` of `center`.
pub fn local_lane_curvature<T: Real>(lane: &[[T; 2]], center: [T; 2], radius: T) -> T {
    let mut best = T::zero();
    for w in lane.windows(3) {
        let [a, b, c] = [w[0], w[1], w[2]];
        let near = ((b[0] - center[0]).powi(2) + (b[1] - center[1]).powi(2)).sqrt() <= radius;
        if !near {
            continue;
        }
        let ab = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let bc = ((c[0] - b[0]).powi(2) + (c[1] - b[1]).powi(2)).sqrt();
        let ca = ((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2)).sqrt();
        let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let denom = ab * bc * ca;
        if denom > T::lit(1e-12) {
            best = best.max((T::lit(2.0) * cross).abs() / denom);
        }
    }
    best
}

/// Source of style directives.
pub trait DirectiveProvider<T: Real>: Send + Sync {
    fn request(&self, summary: &SceneSummary<T>) -> Result<StyleDirective<T>, ProviderError>;
}

/// Deterministic rule table standing in for a language model.
///
/// * conservative: an obstacle closer than 10 m, or sharp lane curvature
///   (`kappa > 0.05`): `w_coll +1.5, w_lon +1.0, w_cent +0.5`
/// * aggressive: nothing within 30 m and the goal farther than 40 m:
///   `w_speed +0.5, w_lat -0.3`
/// * neutral otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockProvider;

pub const MOCK_NEAR_OBSTACLE: f64 = 10.0;
pub const MOCK_CLEAR_RADIUS: f64 = 30.0;
pub const MOCK_FAR_GOAL: f64 = 40.0;

impl<T: Real> DirectiveProvider<T> for MockProvider {
    fn request(&self, summary: &SceneSummary<T>) -> Result<StyleDirective<T>, ProviderError> {
        let nearest = summary.nearest_obstacle.map(|o| o.distance);
        let close = nearest.is_some_and(|d| d < T::lit(MOCK_NEAR_OBSTACLE));
        if close || summary.curvature_class == CurvatureClass::Sharp {
            let deltas = [(WeightName::Coll, 1.5), (WeightName::Lon, 1.0), (WeightName::Cent, 0.5)];
            return Ok(StyleDirective {
                style: Style::Conservative,
                deltas: deltas.iter().map(|(k, v)| (k.to_string(), T::lit(*v))).collect(),
                rationale: if close { "obstacle nearby".into() } else { "sharp curve ahead".into() },
            });
        }
        let clear = nearest.is_none_or(|d| d >= T::lit(MOCK_CLEAR_RADIUS));
        if clear && summary.goal_distance > T::lit(MOCK_FAR_GOAL) {
            let deltas = [(WeightName::Speed, 0.5), (WeightName::Lat, -0.3)];
            return Ok(StyleDirective {
                style: Style::Aggressive,
                deltas: deltas.iter().map(|(k, v)| (k.to_string(), T::lit(*v))).collect(),
                rationale: "open road, distant goal".into(),
            });
        }
        Ok(StyleDirective::neutral("no change"))
    }
}

#[derive(Debug, Serialize)]
struct DirectiveRequest<'a, T: Real> {
    summary: String,
    weights: &'a ScorerWeights<T>,
    prompt_template_id: &'a str,
    prompt: String,
}

/// JSON-over-HTTP provider: POSTs `{summary, weights, prompt_template_id, prompt}`
/// and expects `{style, deltas, rationale}` back.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    url: String,
    timeout: Duration,
    template_id: String,
    template: String,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        HttpProvider {
            url: url.into(),
            timeout,
            template_id: PROMPT_TEMPLATE_ID.to_string(),
            template: PROMPT_TEMPLATE.to_string(),
        }
    }

    pub fn with_template(mut self, id: impl Into<String>, template: impl Into<String>) -> Self {
        self.template_id = id.into();
        self.template = template.into();
        self
    }

    pub fn render_prompt<T: Real>(&self, summary: &SceneSummary<T>) -> String {
        self.template
            .replace("{summary}", &summary.to_text())
            .replace("{weights}", &weights_text(&summary.weights))
    }
}

impl<T: Real> DirectiveProvider<T> for HttpProvider {
    fn request(&self, summary: &SceneSummary<T>) -> Result<StyleDirective<T>, ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let body = DirectiveRequest {
            summary: summary.to_text(),
            weights: &summary.weights,
            prompt_template_id: &self.template_id,
            prompt: self.render_prompt(summary),
        };
        let response = agent.post(&self.url).send_json(&body).map_err(map_ureq_error)?;
        response
            .into_body()
            .read_json::<StyleDirective<T>>()
            .map_err(|e| match map_ureq_error(e) {
                ProviderError::Transport(msg) => ProviderError::InvalidResponse(msg),
                other => other,
            })
    }
}

fn map_ureq_error(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut || io.kind() == std::io::ErrorKind::WouldBlock => {
            ProviderError::Timeout
        }
        ureq::Error::Json(e) => ProviderError::InvalidResponse(e.to_string()),
        other => ProviderError::Transport(other.to_string()),
    }
}

pub fn should_query<T: Real>(sim_time: T, last_query_time: T) -> bool {
    sim_time - last_query_time >= T::lit(QUERY_INTERVAL)
}

/// Asks the provider; any failure degrades to a neutral directive.
pub fn query_directive<T: Real>(summary: &SceneSummary<T>, provider: &dyn DirectiveProvider<T>) -> StyleDirective<T> {
    match provider.request(summary) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("style provider failed, keeping weights: {e}");
            StyleDirective::neutral(format!("fallback: {e}"))
        }
    }
}

/// Applies additive deltas, clamping each weight to the band around the defaults.
pub fn apply_directive<T: Real>(
    weights: &ScorerWeights<T>,
    directive: &StyleDirective<T>,
) -> Result<ScorerWeights<T>, RegulatorError> {
    apply_directive_around(weights, directive, &ScorerWeights::default())
}

pub fn apply_directive_around<T: Real>(
    weights: &ScorerWeights<T>,
    directive: &StyleDirective<T>,
    defaults: &ScorerWeights<T>,
) -> Result<ScorerWeights<T>, RegulatorError> {
    let mut out = *weights;
    for (key, &delta) in &directive.deltas {
        let name: WeightName = key.parse().map_err(RegulatorError::UnknownWeightKey)?;
        if !delta.is_finite() {
            return Err(RegulatorError::InvalidDelta(key.clone()));
        }
        let base = defaults.get(name);
        let lo = base * T::lit(CLAMP_LOWER);
        let hi = base * T::lit(CLAMP_UPPER);
        *out.get_mut(name) = (out.get(name) + delta).max(lo).min(hi);
    }
    Ok(out)
}

/// A directive recorded by the regulator, with the weights it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DirectiveRecord<T: Real = f64> {
    pub time: T,
    pub directive: StyleDirective<T>,
    pub applied: bool,
    pub weights_after: ScorerWeights<T>,
}

/// Owns the mutable weight state for one episode.
pub struct StyleRegulator<T: Real = f64> {
    provider: Box<dyn DirectiveProvider<T>>,
    weights: ScorerWeights<T>,
    defaults: ScorerWeights<T>,
    last_query_time: T,
    records: Vec<DirectiveRecord<T>>,
}

impl<T: Real> StyleRegulator<T> {
    pub fn new(provider: Box<dyn DirectiveProvider<T>>, weights: ScorerWeights<T>) -> Self {
        StyleRegulator {
            provider,
            weights,
            defaults: ScorerWeights::default(),
            last_query_time: T::zero(),
            records: Vec::new(),
        }
    }

    pub fn mock(weights: ScorerWeights<T>) -> Self {
        Self::new(Box::new(MockProvider), weights)
    }

    pub fn weights(&self) -> ScorerWeights<T> {
        self.weights
    }

    pub fn records(&self) -> &[DirectiveRecord<T>] {
        &self.records
    }

    pub fn query_count(&self) -> usize {
        self.records.len()
    }

    /// Queries the provider when the cadence is due and applies the answer.
    pub fn tick(&mut self, sim_time: T, scene: &SceneContext<T>, ego: &EgoStatus<T>) -> Option<&DirectiveRecord<T>> {
        if !should_query(sim_time, self.last_query_time) {
            return None;
        }
        self.last_query_time = sim_time;
        let summary = SceneSummary::new(scene, ego, &self.weights);
        let directive = query_directive(&summary, self.provider.as_ref());
        let applied = match apply_directive_around(&self.weights, &directive, &self.defaults) {
            Ok(w) => {
                self.weights = w;
                true
            }
            Err(e) => {
                log::warn!("rejected style directive: {e}");
                false
            }
        };
        self.records.push(DirectiveRecord { time: sim_time, directive, applied, weights_after: self.weights });
        self.records.last()
    }
}
