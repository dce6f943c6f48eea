//! JSON form of a parameter set together with its market state.
//!
//! ```json
//! {"grid":[0,0.25,1.0],"kappa":[5.0,5.0],"theta":[0.019,0.011],
//!  "lambda":[0.414,0.414],"rho":[-0.391,-0.391],"v0":0.0036,
//!  "spot":100.0,"rd":[0.02,0.02],"rf":[0.0,0.0],"model":"heston"}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curve::{MarketState, MaturityGrid, Model, ModelParams, PiecewiseCurve};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub grid: Vec<f64>,
    pub kappa: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub v0: f64,
    pub spot: f64,
    pub rd: Vec<f64>,
    pub rf: Vec<f64>,
    pub model: Model,
}

impl ParamsFile {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("params JSON: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn build(&self) -> Result<(MarketState<f64>, ModelParams<f64>)> {
        let grid = MaturityGrid::new(self.grid.clone())?;
        let curve = |v: &[f64]| PiecewiseCurve::new(grid.clone(), v.to_vec());
        let params = ModelParams::new(
            self.model,
            curve(&self.kappa)?,
            curve(&self.theta)?,
            curve(&self.lambda)?,
            curve(&self.rho)?,
            self.v0,
        )?;
        let market = MarketState::new(self.spot, curve(&self.rd)?, curve(&self.rf)?)?;
        Ok((market, params))
    }

    /// Inverse of [`build`](Self::build); market curves are resampled onto
    /// the parameter grid.
    pub fn from_model(market: &MarketState<f64>, params: &ModelParams<f64>) -> Result<Self> {
        let grid = params.grid();
        Ok(Self {
            grid: grid.times().to_vec(),
            kappa: params.kappa.values().to_vec(),
            theta: params.theta.values().to_vec(),
            lambda: params.lambda.values().to_vec(),
            rho: params.rho.values().to_vec(),
            v0: params.v0,
            spot: market.spot,
            rd: market.rd.resample(grid)?.values().to_vec(),
            rf: market.rf.resample(grid)?.values().to_vec(),
            model: params.model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{"grid":[0,0.25,1.0],"kappa":[5.0,5.0],"theta":[0.019,0.011],"lambda":[0.414,0.414],"rho":[-0.391,-0.391],"v0":0.0036,"spot":100.0,"rd":[0.02,0.02],"rf":[0.0,0.0],"model":"heston"}"#;

    #[test]
    fn parses_documented_example() {
        let f = ParamsFile::from_json(EXAMPLE).unwrap();
        let (m, p) = f.build().unwrap();
        assert_eq!(p.model, Model::Heston);
        assert_eq!(p.theta.values(), &[0.019, 0.011]);
        assert_eq!(m.spot, 100.0);
        let back = ParamsFile::from_model(&m, &p).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_schema_violations() {
        assert!(ParamsFile::from_json(r#"{"grid":[0,1]}"#).is_err());
        let bad = EXAMPLE.replace("\"heston\"", "\"sabr\"");
        assert!(ParamsFile::from_json(&bad).is_err());
        let short = EXAMPLE.replace("[5.0,5.0]", "[5.0]");
        assert!(ParamsFile::from_json(&short).unwrap().build().is_err());
    }
}
