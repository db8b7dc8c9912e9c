use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::FeatureSet;
use super::fid::fid_from_features;
use super::kid::{kid, KidConfig};
use super::linalg::LinalgScalar;

/// Note attached to every report produced with a built-in extractor.
pub const BUILTIN_PROVENANCE: &str =
    "features from a built-in extractor; values are not comparable to Inception-based FID/KID";

/// FID and KID for one real/generated comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid: f64,
    pub kid_mean: f64,
    pub kid_std: f64,
    pub n_real: usize,
    pub n_gen: usize,
    pub extractor_id: String,
    pub provenance: String,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Two-line table: `Metric,FID,KID` then `Results,<fid>,<kid>`.
    pub fn to_csv(&self) -> String {
        format!("Metric,FID,KID\nResults,{:.2},{:.3}\n", self.fid, self.kid_mean)
    }

    /// Writes `<stem>.json` and `<stem>.csv` next to `json_path`.
    pub fn write(&self, json_path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(json_path, text).map_err(|e| Error::io(json_path, e))?;
        let csv_path = json_path.with_extension("csv");
        fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))
    }
}

/// Scores generated features against real ones.
pub fn evaluate<T: LinalgScalar>(
    real: &FeatureSet<T>,
    gen: &FeatureSet<T>,
    kid_cfg: &KidConfig,
    seed: u64,
) -> Result<MetricReport> {
    real.check_comparable(gen)?;
    let fid = fid_from_features(real, gen)?.as_f64();
    let k = kid(real, gen, kid_cfg, seed)?;
    let builtin = real.extractor_id == "pool" || real.extractor_id.starts_with("randproj-");
    Ok(MetricReport {
        fid,
        kid_mean: k.mean.as_f64(),
        kid_std: k.std.as_f64(),
        n_real: real.n(),
        n_gen: gen.n(),
        extractor_id: real.extractor_id.clone(),
        provenance: if builtin {
            BUILTIN_PROVENANCE.to_string()
        } else {
            "features loaded from file".to_string()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let r = MetricReport {
            fid: 43.64,
            kid_mean: 0.012,
            kid_std: 0.0,
            n_real: 2283,
            n_gen: 2283,
            extractor_id: "file".into(),
            provenance: String::new(),
        };
        assert_eq!(r.to_csv(), "Metric,FID,KID\nResults,43.64,0.012\n");
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
