#![allow(dead_code)]

use std::path::Path;

use loadsynth::artifact::Artifact;
use loadsynth::cvae::Architecture;
use loadsynth::pipeline::{train_pipeline, PipelineConfig};
use loadsynth::simdata::{generate_cohort, CohortSpec};

/// Pipeline settings that train in well under a second.
pub fn tiny_pipeline(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_seed(seed);
    cfg.train.epochs = 2;
    cfg.train.batch_size = 64;
    cfg.train.architecture =
        Architecture { latent_dim: 4, encoder_hidden: vec![16], decoder_hidden: vec![16], ..Default::default() };
    cfg.gmm.components = 2;
    cfg
}

pub fn tiny_artifact(seed: u64) -> Artifact {
    let mut spec = CohortSpec::desk_scale(seed);
    spec.n_households = 120;
    spec.days_per_household = 6;
    let data = generate_cohort(&spec).unwrap();
    let t = train_pipeline(&data, &tiny_pipeline(seed)).unwrap();
    Artifact::new(t.model, t.mixture).unwrap()
}

/// Config file matching [`tiny_pipeline`] for CLI runs.
pub const TINY_TOML: &str = r#"
[pipeline.gmm]
components = 2
[pipeline.train]
epochs = 2
batch_size = 64
[pipeline.train.architecture]
latent_dim = 4
encoder_hidden = [16]
decoder_hidden = [16]
"#;

pub fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("loadsynth.toml");
    std::fs::write(&path, TINY_TOML).unwrap();
    path
}
