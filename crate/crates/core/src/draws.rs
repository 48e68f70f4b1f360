//! Posterior draws and their summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::ChainDiagnostics;

/// Draws of one scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// Column name, e.g. `alpha`, `gamma` or `K_N`.
    pub parameter: String,
    pub values: Vec<f64>,
    pub diagnostics: Option<ChainDiagnostics>,
}

/// Quantiles reported with every summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    #[serde(rename = "1")]
    pub q01: f64,
    #[serde(rename = "25")]
    pub q25: f64,
    #[serde(rename = "50")]
    pub q50: f64,
    #[serde(rename = "75")]
    pub q75: f64,
    #[serde(rename = "99")]
    pub q99: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawSummary {
    pub mean: f64,
    pub sd: f64,
    pub quantiles: Quantiles,
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PosteriorDraws {
    pub fn new(parameter: impl Into<String>, values: Vec<f64>) -> Self {
        PosteriorDraws {
            parameter: parameter.into(),
            values,
            diagnostics: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted(), p)
    }

    pub fn summary(&self) -> Result<DrawSummary> {
        if self.values.is_empty() {
            return Err(Error::Empty("no draws to summarize".into()));
        }
        let s = self.sorted();
        let mean = self.mean();
        let n = s.len() as f64;
        let sd = if s.len() > 1 {
            (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let q = |p| quantile_sorted(&s, p);
        Ok(DrawSummary {
            mean,
            sd,
            quantiles: Quantiles {
                q01: q(0.01),
                q25: q(0.25),
                q50: q(0.5),
                q75: q(0.75),
                q99: q(0.99),
            },
        })
    }

    /// Writes `draw,<parameter>` rows with round-trip precision.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["draw", self.parameter.as_str()])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.write_record([(i + 1).to_string(), format!("{v:?}")])?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let d = PosteriorDraws::new("x", vec![4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!(d.quantile(0.5), 3.0);
        assert_eq!(d.quantile(0.25), 2.0);
        assert_eq!(d.quantile(0.125), 1.5);
        let s = d.summary().unwrap();
        assert_eq!(s.mean, 3.0);
        let j = serde_json::to_value(s).unwrap();
        assert_eq!(j["quantiles"]["50"], 3.0);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let v = vec![0.1 + 0.2, 751.234_567_890_123_4, 1e-300];
        let d = PosteriorDraws::new("alpha", v.clone());
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("draw,alpha\n"));
        let back: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(back, v);
    }
}
