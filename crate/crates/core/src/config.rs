//! Every pipeline and evaluation tunable in one serializable record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::components::{AreaMode, Connectivity};
use crate::error::{Error, Result};
use crate::eval::{ApMode, MatchConfig};
use crate::hough::{CircleSearch, LineSearch};
use crate::lineclust::{EpsCut, OpticsParams};
use crate::morph::NoiseParams;
use crate::raster::{CannyParams, Polarity, ThresholdMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResizeConfig {
    /// Narrower pages are upscaled to this width, keeping the aspect ratio.
    pub min_width: usize,
}

impl Default for ResizeConfig {
    fn default() -> Self {
        Self { min_width: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinarizeConfig {
    pub polarity: Polarity,
    pub threshold: ThresholdMode,
}

/// Which image the Canny detector runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeSource {
    #[default]
    Binary,
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeConfig {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
    pub source: EdgeSource,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        let p = CannyParams::default();
        Self {
            low: p.low,
            high: p.high,
            sigma: p.sigma,
            source: EdgeSource::Binary,
        }
    }
}

impl EdgeConfig {
    pub fn canny(&self) -> CannyParams {
        CannyParams {
            low: self.low,
            high: self.high,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineConfig {
    pub enabled: bool,
    pub rho_res: f64,
    pub theta_res_deg: f64,
    pub votes_min: usize,
    /// Minimum segment length as a fraction of the working image width.
    pub min_len_frac: f64,
    pub max_gap: usize,
    /// Half-width of the searched angle range around horizontal.
    pub theta_window_deg: f64,
    pub band: usize,
    /// Side of the square brush used to redraw accepted segments.
    pub thickness: usize,
}

impl Default for LineConfig {
    fn default() -> Self {
        let s = LineSearch::default();
        Self {
            enabled: true,
            rho_res: s.rho_res,
            theta_res_deg: 1.0,
            votes_min: s.votes_min,
            min_len_frac: 0.05,
            max_gap: s.max_gap,
            theta_window_deg: 5.0,
            band: s.band,
            thickness: 3,
        }
    }
}

impl LineConfig {
    pub fn search(&self, image_width: usize) -> LineSearch {
        LineSearch {
            rho_res: self.rho_res,
            theta_res: self.theta_res_deg.to_radians(),
            votes_min: self.votes_min,
            min_len: self.min_len_frac * image_width as f64,
            max_gap: self.max_gap,
            theta_window: self.theta_window_deg.to_radians(),
            band: self.band,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleConfig {
    pub enabled: bool,
    /// Pixels within this distance of a detected circle are erased.
    pub erase_half_width: f64,
    #[serde(flatten)]
    pub search: CircleSearch,
}

impl Default for CircleConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            erase_half_width: 4.5,
            search: CircleSearch::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentConfig {
    pub connectivity: Connectivity,
    pub area_mode: AreaMode,
    /// Components smaller than this fraction of the page area are dropped.
    pub min_area_frac: f64,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Eight,
            area_mode: AreaMode::BoxArea,
            min_area_frac: 0.00005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub min_samples: usize,
    #[serde(with = "crate::lineclust::finite_or_inf")]
    pub max_eps: f64,
    /// The automatic reachability cut is `cut_factor` times the median
    /// reachability, floored at `cut_floor_height_frac` times the median
    /// component height.
    pub cut_factor: f64,
    pub cut_floor_height_frac: f64,
    /// Overrides the automatic cut when set.
    pub fixed_eps: Option<f64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            min_samples: 3,
            max_eps: f64::INFINITY,
            cut_factor: 4.0,
            cut_floor_height_frac: 0.5,
            fixed_eps: None,
        }
    }
}

impl ClusterConfig {
    pub fn optics(&self, median_component_height: f64) -> OpticsParams {
        let cut = match self.fixed_eps {
            Some(eps) => EpsCut::Fixed { eps },
            None => EpsCut::Auto {
                factor: self.cut_factor,
                floor: self.cut_floor_height_frac * median_component_height,
            },
        };
        OpticsParams {
            min_samples: self.min_samples,
            max_eps: self.max_eps,
            cut,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    #[serde(flatten)]
    pub matching: MatchConfig,
    pub ap_mode: ApMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub resize: ResizeConfig,
    pub binarize: BinarizeConfig,
    pub edges: EdgeConfig,
    pub noise: NoiseParams,
    pub lines: LineConfig,
    pub circles: CircleConfig,
    pub components: ComponentConfig,
    pub clustering: ClusterConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize.min_width == 0 {
            return Err(Error::Parameter("resize.min_width must be positive".into()));
        }
        if let ThresholdMode::Local { tile: 0 } = self.binarize.threshold {
            return Err(Error::Parameter("binarize tile must be positive".into()));
        }
        let e = &self.edges;
        if !(0.0 <= e.low && e.low <= e.high && e.high <= 255.0) || !(e.sigma > 0.0) {
            return Err(Error::Parameter(format!(
                "edges need 0 <= low <= high <= 255 and sigma > 0, got {}/{}/{}",
                e.low, e.high, e.sigma
            )));
        }
        self.noise.validate()?;
        let l = &self.lines;
        if !(l.rho_res > 0.0 && l.theta_res_deg > 0.0) || l.votes_min == 0 || l.thickness == 0 {
            return Err(Error::Parameter(
                "lines need positive rho_res, theta_res_deg, votes_min and thickness".into(),
            ));
        }
        if !(l.min_len_frac >= 0.0 && l.theta_window_deg >= 0.0) {
            return Err(Error::Parameter(
                "lines min_len_frac and theta_window_deg must be non-negative".into(),
            ));
        }
        let c = &self.circles;
        if c.search.r_min == 0 || c.search.r_min > c.search.r_max || !(c.erase_half_width >= 1.0) {
            return Err(Error::Parameter(
                "circles need 0 < r_min <= r_max and erase_half_width >= 1".into(),
            ));
        }
        if !(self.components.min_area_frac >= 0.0) {
            return Err(Error::Parameter("components.min_area_frac must be non-negative".into()));
        }
        let k = &self.clustering;
        if !(k.cut_factor > 0.0 && k.cut_floor_height_frac >= 0.0) || k.fixed_eps.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::Parameter("clustering cut parameters must be positive".into()));
        }
        k.optics(0.0).validate()?;
        self.eval.matching.validate()
    }
}
