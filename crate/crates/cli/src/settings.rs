//! `key=value` config file mapped onto the library's config structs.

use ankleband::baselines::BaselineConfig;
use ankleband::eval::e2e::E2eConfig;
use ankleband::eval::ExperimentConfig;
use ankleband::imu::NormalizationConstants;
use ankleband::kv::KvMap;
use ankleband::labeling::{OverlapConfig, OverlapVariant, WindowingConfig};
use ankleband::runtime::StreamMode;
use anyhow::{bail, Context, Result};
use std::path::Path;

const KNOWN: &[&str] = &[
    "rate",
    "k",
    "stride",
    "sigma",
    "overlap",
    "acc_scale",
    "gyro_scale",
    "epochs",
    "batch_size",
    "learning_rate",
    "hidden",
    "conv_out_channels",
    "lda_lambda",
    "svm_c",
    "svm_max_passes",
    "rf_trees",
    "rf_depth",
    "dtw_candidates",
    "dtw_band",
    "prob_threshold",
    "min_consecutive",
    "double_timeout",
    "refractory",
    "device_hz",
    "link_loss",
];

#[derive(Debug, Clone)]
pub struct Settings {
    pub rate: f64,
    pub windowing: WindowingConfig,
    pub experiment: ExperimentConfig,
    pub e2e: E2eConfig,
}

impl Settings {
    pub fn defaults(seed: u64) -> Self {
        let mut experiment = ExperimentConfig {
            seed,
            ..Default::default()
        };
        experiment.train.seed = seed;
        Self {
            rate: 100.0,
            windowing: WindowingConfig {
                stride: 4,
                ..Default::default()
            },
            experiment,
            e2e: E2eConfig {
                seed,
                ..Default::default()
            },
        }
    }

    pub fn load(path: Option<&Path>, seed: u64) -> Result<Self> {
        let mut s = Self::defaults(seed);
        let Some(path) = path else {
            return Ok(s);
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let kv = KvMap::parse(&text)?;
        for key in kv.keys() {
            if !KNOWN.contains(&key) {
                bail!("unknown config key {key:?}");
            }
        }
        if let Some(v) = kv.get("rate")? {
            s.rate = v;
        }
        let w = &mut s.windowing;
        if let Some(v) = kv.get("k")? {
            w.k = v;
        }
        if let Some(v) = kv.get("stride")? {
            w.stride = v;
        }
        let variant: OverlapVariant = kv.get("overlap")?.unwrap_or(w.overlap.variant);
        w.overlap = OverlapConfig::new(kv.get("sigma")?.unwrap_or(w.overlap.sigma), variant)?;
        w.normalization = NormalizationConstants::new(
            kv.get("acc_scale")?.unwrap_or(w.normalization.acc),
            kv.get("gyro_scale")?.unwrap_or(w.normalization.gyro),
        )?;
        s.e2e.normalization = w.normalization;

        let t = &mut s.experiment.train;
        t.model.k = w.k;
        if let Some(v) = kv.get("epochs")? {
            t.epochs = v;
        }
        if let Some(v) = kv.get("batch_size")? {
            t.batch_size = v;
        }
        if let Some(v) = kv.get("learning_rate")? {
            t.learning_rate = v;
        }
        if let Some(v) = kv.get("hidden")? {
            t.model.hidden = v;
        }
        if let Some(v) = kv.get("conv_out_channels")? {
            t.model.conv_out_channels = v;
        }

        let b: &mut BaselineConfig = &mut s.experiment.baselines;
        if let Some(v) = kv.get("lda_lambda")? {
            b.lda.lambda = v;
        }
        if let Some(v) = kv.get("svm_c")? {
            b.svm.c = v;
        }
        if let Some(v) = kv.get("svm_max_passes")? {
            b.svm.max_passes = v;
        }
        if let Some(v) = kv.get("rf_trees")? {
            b.forest.trees = v;
        }
        if let Some(v) = kv.get("rf_depth")? {
            b.forest.max_depth = v;
        }
        if let Some(v) = kv.get("dtw_candidates")? {
            b.dtw.candidates_per_class = v;
        }
        if let Some(v) = kv.get::<f64>("dtw_band")? {
            b.dtw.band_fraction = (v > 0.0).then_some(v);
        }

        let e = &mut s.e2e;
        if let Some(v) = kv.get("prob_threshold")? {
            e.trigger.prob_threshold = v;
        }
        if let Some(v) = kv.get("min_consecutive")? {
            e.trigger.min_consecutive_windows = v;
        }
        if let Some(v) = kv.get("double_timeout")? {
            e.trigger.double_gesture_timeout = v;
        }
        if let Some(v) = kv.get("refractory")? {
            e.trigger.refractory = v;
        }
        if let Some(v) = kv.get("device_hz")? {
            e.mode = StreamMode::SkipWhenBusy { device_hz: v };
        }
        if let Some(v) = kv.get("link_loss")? {
            e.link_loss = v;
        }
        e.trigger.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_text(text: &str) -> Result<Settings> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, text).unwrap();
        Settings::load(Some(&path), 7)
    }

    #[test]
    fn defaults_carry_the_seed() {
        let s = Settings::load(None, 7).unwrap();
        assert_eq!(s.experiment.seed, 7);
        assert_eq!(s.experiment.train.seed, 7);
        assert_eq!(s.e2e.seed, 7);
        assert_eq!(s.windowing.stride, 4);
        assert_eq!(s.windowing.k, 60);
    }

    #[test]
    fn keys_reach_their_structs() {
        let s = load_text(
            "k=80\nsigma=0.7\noverlap=iou\nepochs=3\nhidden=32\n\
             rf_trees=4\ndtw_band=0\ndevice_hz=75\nrefractory=0.25\n",
        )
        .unwrap();
        assert_eq!(s.windowing.k, 80);
        assert_eq!(s.experiment.train.model.k, 80);
        assert_eq!(s.windowing.overlap.sigma, 0.7);
        assert_eq!(s.windowing.overlap.variant, OverlapVariant::Iou);
        assert_eq!(s.experiment.train.epochs, 3);
        assert_eq!(s.experiment.train.model.hidden, 32);
        assert_eq!(s.experiment.baselines.forest.trees, 4);
        assert_eq!(s.experiment.baselines.dtw.band_fraction, None);
        assert_eq!(s.e2e.mode, StreamMode::SkipWhenBusy { device_hz: 75.0 });
        assert_eq!(s.e2e.trigger.refractory, 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(load_text("epoch=3\n").is_err());
        assert!(load_text("epochs=three\n").is_err());
        assert!(load_text("sigma=1.5\n").is_err());
        assert!(load_text("acc_scale=0\n").is_err());
        assert!(load_text("prob_threshold=2\n").is_err());
    }
}
