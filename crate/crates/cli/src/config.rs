//! Training-run configuration file: a `[model]` table whose keys mirror the
//! model configuration fields exactly, an optional `[prior]` table (all
//! fields, or omitted entirely for the default prior), and a top-level
//! `seed`. A run is fully reproducible from this file alone.

use std::path::Path;

use serde::Deserialize;

use nslx_core::error::{Error, Result};
use nslx_core::pfn::ModelConfig;
use nslx_core::prior::PriorConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: PriorConfig,
}

pub fn load_train_file(path: &Path) -> Result<TrainFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let file: TrainFile = toml::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    file.model.validate()?;
    file.prior.validate()?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const FULL: &str = r#"
seed = 7

[model]
nlayers = 1
nheads = 2
nhidden = 16
nbins = 10
y_support = [0.0, 1.5]
batch_size = 2
total_steps = 10
warmup = 2
peak_lr = 3e-4
autoregressive_context = true
interpolation_variant = false
"#;

    #[test]
    fn parses_model_and_defaults_the_rest() {
        let f = write_tmp(FULL);
        let cfg = load_train_file(f.path()).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.nhidden, 16);
        assert_eq!(cfg.prior, PriorConfig::default());
    }

    #[test]
    fn prior_table_overrides() {
        let text = format!(
            "{FULL}\n[prior]\nshape_probs = [1.0, 0.0, 0.0]\nn_points_min = 30\n\
             n_points_max = 60\nnoise_ln_sigma_mean = -4.0\nnoise_ln_sigma_std = 1.0\n\
             rng_seed = 5\n"
        );
        let f = write_tmp(&text);
        let cfg = load_train_file(f.path()).unwrap();
        assert_eq!(cfg.prior.shape_probs, [1.0, 0.0, 0.0]);
        assert_eq!(cfg.prior.rng_seed, 5);
        assert_eq!(cfg.prior.noise_sigma_override, None);
    }

    #[test]
    fn rejects_typos_and_bad_values() {
        // Misspelled model key: the real field is then missing.
        let f = write_tmp(&FULL.replace("nlayers", "n_layers"));
        let err = load_train_file(f.path()).unwrap_err();
        assert!(err.is_validation(), "{err}");
        // Unknown top-level key (placed before [model] so it stays top-level).
        let f = write_tmp(&format!("stray = 1\n{FULL}"));
        assert!(load_train_file(f.path()).is_err());
        // Structurally valid but semantically rejected (warmup too long).
        let f = write_tmp(&FULL.replace("warmup = 2", "warmup = 10"));
        let err = load_train_file(f.path()).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("warmup"));
    }
}
