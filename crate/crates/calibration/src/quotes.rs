//! Implied-volatility quotes grouped into maturity buckets.
//!
//! CSV columns: `maturity,strike_or_delta,delta_flag,iv,weight`. With the
//! delta flag set (`1` or `true`) the second column is a put delta in
//! `(0, 1)`, converted to a strike at the quote's own volatility.

use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use svexp_core::blackscholes::strike_from_put_delta;
use svexp_core::curve::{MarketState, MaturityGrid};

use crate::{CalibError, Result};

/// Maturities closer than this are the same bucket.
const SAME_MATURITY: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Moneyness {
    Strike(f64),
    PutDelta(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quote {
    pub moneyness: Moneyness,
    /// Target implied volatility.
    pub iv: f64,
    pub weight: f64,
}

impl Quote {
    pub fn strike(&self, market: &MarketState<f64>, t: f64) -> Result<f64> {
        match self.moneyness {
            Moneyness::Strike(k) => Ok(k),
            Moneyness::PutDelta(d) => Ok(strike_from_put_delta(d, self.iv, market, t)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub maturity: f64,
    pub quotes: Vec<Quote>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuoteSet {
    pub buckets: Vec<Bucket>,
}

#[derive(Deserialize)]
struct Row {
    maturity: f64,
    strike_or_delta: f64,
    delta_flag: String,
    iv: f64,
    weight: f64,
}

impl QuoteSet {
    pub fn new(buckets: Vec<Bucket>) -> Result<Self> {
        if buckets.is_empty() {
            return Err(CalibError::Input("no quote buckets".into()));
        }
        let mut prev = 0.0;
        for b in &buckets {
            if !(b.maturity > prev) {
                return Err(CalibError::Input(format!("bucket maturity {} not increasing", b.maturity)));
            }
            prev = b.maturity;
            if b.quotes.is_empty() {
                return Err(CalibError::Input(format!("bucket {} has no quotes", b.maturity)));
            }
            for q in &b.quotes {
                if !(q.weight > 0.0 && q.weight.is_finite()) {
                    return Err(CalibError::Input(format!("weight {} must be positive", q.weight)));
                }
                if !(q.iv > 0.0 && q.iv.is_finite()) {
                    return Err(CalibError::Input(format!("implied vol {} must be positive", q.iv)));
                }
                match q.moneyness {
                    Moneyness::Strike(k) if !(k > 0.0 && k.is_finite()) => {
                        return Err(CalibError::Input(format!("strike {k} must be positive")));
                    }
                    Moneyness::PutDelta(d) if !(d > 0.0 && d < 1.0) => {
                        return Err(CalibError::Input(format!("put delta {d} outside (0, 1)")));
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { buckets })
    }

    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rows: Vec<Row> = Vec::new();
        for r in csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader).deserialize() {
            rows.push(r.map_err(|e| CalibError::Input(format!("quote CSV: {e}")))?);
        }
        rows.sort_by(|a, b| a.maturity.total_cmp(&b.maturity));
        let mut buckets: Vec<Bucket> = Vec::new();
        for r in rows {
            let delta = match r.delta_flag.to_ascii_lowercase().as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(CalibError::Input(format!("delta_flag must be 0/1/true/false, got {other}"))),
            };
            let moneyness = if delta { Moneyness::PutDelta(r.strike_or_delta) } else { Moneyness::Strike(r.strike_or_delta) };
            let q = Quote { moneyness, iv: r.iv, weight: r.weight };
            match buckets.last_mut() {
                Some(b) if (r.maturity - b.maturity).abs() <= SAME_MATURITY => b.quotes.push(q),
                _ => buckets.push(Bucket { maturity: r.maturity, quotes: vec![q] }),
            }
        }
        Self::new(buckets)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| CalibError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv(f)
    }

    /// Bucket maturities must be the grid times after 0.
    pub fn check_grid(&self, grid: &MaturityGrid<f64>) -> Result<()> {
        let times = &grid.times()[1..];
        let aligned = times.len() == self.buckets.len()
            && times.iter().zip(&self.buckets).all(|(t, b)| (t - b.maturity).abs() <= SAME_MATURITY * t.max(1.0));
        if !aligned {
            return Err(CalibError::Config(format!(
                "bucket maturities {:?} do not match parameter grid {:?}",
                self.buckets.iter().map(|b| b.maturity).collect::<Vec<_>>(),
                grid.times()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_rows_by_maturity() {
        let csv = "maturity,strike_or_delta,delta_flag,iv,weight\n\
                   0.25,0.25,1,0.11,1\n0.0833333,100,0,0.09,2\n0.25, 101.5 ,false,0.105,1\n0.0833333,0.1,true,0.1,1\n";
        let q = QuoteSet::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(q.buckets.len(), 2);
        assert_eq!(q.buckets[0].quotes[0].moneyness, Moneyness::Strike(100.0));
        assert_eq!(q.buckets[0].quotes[1].moneyness, Moneyness::PutDelta(0.1));
        assert_eq!(q.buckets[1].quotes[1].moneyness, Moneyness::Strike(101.5));
    }

    #[test]
    fn rejects_bad_rows() {
        let head = "maturity,strike_or_delta,delta_flag,iv,weight\n";
        for row in ["0.25,100,0,0.1,0\n", "0.25,1.5,1,0.1,1\n", "0.25,100,maybe,0.1,1\n", "0.25,100,0,-0.1,1\n"] {
            assert!(QuoteSet::from_csv(format!("{head}{row}").as_bytes()).is_err(), "{row}");
        }
        assert!(QuoteSet::from_csv(head.as_bytes()).is_err());
    }
}
