//! Model selection flags.

use diffkalman_core::models::{SeasonalArSpec, SeasonalSpec, StructuralModel, TrendSpec, DEFAULT_PARCOR_BOUND};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Trend,
    Seasonal,
    SeasonalAr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Only meaningful for the trend model; the seasonal models use order 2.
    pub trend_order: Option<usize>,
    pub period: usize,
    pub ar_order: usize,
    pub parcor_bound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Trend,
            trend_order: None,
            period: 12,
            ar_order: 2,
            parcor_bound: DEFAULT_PARCOR_BOUND,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<StructuralModel> {
        let model = match self.kind {
            ModelKind::Trend => TrendSpec::new(self.trend_order.unwrap_or(1))?.into(),
            ModelKind::Seasonal | ModelKind::SeasonalAr => {
                if let Some(k) = self.trend_order.filter(|&k| k != SeasonalSpec::TREND_ORDER) {
                    return Err(Error::Argument(format!(
                        "seasonal models use a trend of order {}, got --trend-order {k}",
                        SeasonalSpec::TREND_ORDER
                    )));
                }
                if self.kind == ModelKind::Seasonal {
                    SeasonalSpec::new(self.period)?.into()
                } else {
                    SeasonalArSpec::new(self.period, self.ar_order, self.parcor_bound)?.into()
                }
            }
        };
        Ok(model)
    }
}

/// Parses a comma-separated list of reals such as `-5.3,-5.0`.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Argument(format!("{s:?} in {text:?} is not a finite number")))
        })
        .collect()
}

/// `theta` if given (checked against the parameter count), else the
/// model's default start.
pub fn theta_or_default(model: &StructuralModel, theta: Option<&[f64]>) -> Result<Vec<f64>> {
    use diffkalman_core::ModelSpec;
    match theta {
        None => Ok(model.default_start()),
        Some(t) if t.len() == model.param_count() => Ok(t.to_vec()),
        Some(t) => Err(Error::Argument(format!(
            "{} takes {} parameters, got {}",
            model.label(),
            model.param_count(),
            t.len()
        ))),
    }
}
