use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DEFAULT_EPIPOLAR_SIGMA;
use crate::losses::{LossConfig, LossScenario};
use crate::neural_blocks::ArchConfig;
use crate::sync::Matcher;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Sls,
    ClsCat,
    ClsCor,
    ClsEpi,
}

impl Variant {
    pub fn matcher(self) -> Option<Matcher> {
        match self {
            Variant::ClsCat => Some(Matcher::Cat),
            Variant::ClsCor => Some(Matcher::Cor),
            Variant::ClsEpi => Some(Matcher::Epi),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Sls => "sls",
            Variant::ClsCat => "cls_cat",
            Variant::ClsCor => "cls_cor",
            Variant::ClsEpi => "cls_epi",
        }
    }

    pub fn has_sync(self) -> bool {
        self != Variant::Base
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "base" => Ok(Variant::Base),
            "sls" => Ok(Variant::Sls),
            "cls_cat" => Ok(Variant::ClsCat),
            "cls_cor" => Ok(Variant::ClsCor),
            "cls_epi" => Ok(Variant::ClsEpi),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_views: usize,
    pub reference_view: usize,
    /// `(width, height)` of the input images.
    pub image_size: (usize, usize),
    /// Number of feature scales `m` (1..=3).
    pub scales: usize,
    /// Upper bound on matcher working-resolution locations (`H·W`); features
    /// are average-pooled by powers of two until they fit.
    pub corr_max_cells: usize,
    /// Epipolar Gaussian std in working-resolution feature pixels.
    pub sigma: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub arch: ArchConfig,
    /// Ground-truth densities are multiplied by this for the task loss;
    /// predicted counts are divided by it.
    pub density_scale: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant, n_views: usize, image_size: (usize, usize)) -> Self {
        ModelConfig {
            variant,
            n_views,
            reference_view: 0,
            image_size,
            scales: 1,
            corr_max_cells: 160 * 95,
            sigma: DEFAULT_EPIPOLAR_SIGMA,
            loss: LossConfig::for_scenario(LossScenario::TaskOnly),
            seed: 0,
            arch: ArchConfig::default(),
            density_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        if self.n_views < 1 {
            return Err(Error::Config("at least one view is required".into()));
        }
        if self.reference_view >= self.n_views {
            return Err(Error::Config(format!(
                "reference view {} does not exist among {} views",
                self.reference_view, self.n_views
            )));
        }
        if self.variant.has_sync() && self.n_views < 2 {
            return Err(Error::Config("synchronization needs at least two views".into()));
        }
        if !(1..=3).contains(&self.scales) {
            return Err(Error::Config(format!("scales must be 1..=3, got {}", self.scales)));
        }
        if self.variant == Variant::Sls && self.scales != 1 && self.loss.scenario == LossScenario::SyncPlusUnsync {
            // Fine: SLS runs once on the concatenated projections.
        }
        if self.corr_max_cells == 0 {
            return Err(Error::Config("corr_max_cells must be positive".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if !(self.density_scale > 0.0) {
            return Err(Error::Config("density_scale must be positive".into()));
        }
        if self.variant == Variant::Base && self.loss.scenario != LossScenario::TaskOnly {
            return Err(Error::Config("the base model has no synchronization terms; use task_only".into()));
        }
        let d = 4;
        if self.image_size.0 % d != 0 || self.image_size.1 % d != 0 {
            return Err(Error::NotDivisible {
                width: self.image_size.0,
                height: self.image_size.1,
                divisor: d,
                padded_width: self.image_size.0.div_ceil(d) * d,
                padded_height: self.image_size.1.div_ceil(d) * d,
            });
        }
        Ok(())
    }

    /// Image-to-feature scale of scale `j` (0-based, coarsest first).
    pub fn feature_scale(&self, j: usize) -> f64 {
        (1 << j) as f64 / 4.0
    }

    /// Feature-map size `(h, w)` of scale `j`.
    pub fn feature_size(&self, j: usize) -> (usize, usize) {
        let f = 4 >> j;
        (self.image_size.1 / f, self.image_size.0 / f)
    }

    /// Pool factor taking scale `j` to the matcher's working resolution.
    pub fn working_pool(&self, j: usize) -> usize {
        if self.variant == Variant::ClsCat {
            return 1;
        }
        let (h, w) = self.feature_size(j);
        let mut p = 1;
        while (h / p) * (w / p) > self.corr_max_cells && h % (2 * p) == 0 && w % (2 * p) == 0 {
            p *= 2;
        }
        p
    }

    pub fn working_size(&self, j: usize) -> (usize, usize) {
        let (h, w) = self.feature_size(j);
        let p = self.working_pool(j);
        (h / p, w / p)
    }
}

/// Which frames are available for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// Unsynchronized frames plus their synchronized counterparts.
    SyncPlusUnsync,
    UnsyncOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainScenario {
    pub mode: ScenarioMode,
    /// Train on synchronized inputs (BaseS).
    pub train_on_synced: bool,
    /// After the synchronized phase, fine-tune on unsynchronized inputs at a
    /// reduced learning rate (BaseSU).
    pub finetune_unsync: bool,
}

impl TrainScenario {
    pub fn unsync_only() -> Self {
        TrainScenario {
            mode: ScenarioMode::UnsyncOnly,
            train_on_synced: false,
            finetune_unsync: false,
        }
    }

    pub fn sync_plus_unsync() -> Self {
        TrainScenario {
            mode: ScenarioMode::SyncPlusUnsync,
            train_on_synced: false,
            finetune_unsync: false,
        }
    }

    pub fn base_s() -> Self {
        TrainScenario {
            mode: ScenarioMode::SyncPlusUnsync,
            train_on_synced: true,
            finetune_unsync: false,
        }
    }

    pub fn base_su() -> Self {
        TrainScenario {
            finetune_unsync: true,
            ..Self::base_s()
        }
    }

    pub fn validate(&self, loss: &LossConfig) -> Result<()> {
        if self.mode == ScenarioMode::UnsyncOnly && (self.train_on_synced || loss.uses_warping()) {
            return Err(Error::Config(
                "unsync-only training cannot use synchronized frames or the warping loss".into(),
            ));
        }
        if self.finetune_unsync && !self.train_on_synced {
            return Err(Error::Config("fine-tuning follows a synchronized training phase".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
    /// Steps of the unsynchronized fine-tuning phase.
    pub finetune_steps: usize,
    pub finetune_lr_factor: f64,
    /// Learning-rate multiplier for the motion networks.
    #[serde(default = "unit")]
    pub motion_lr_factor: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub log_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 1000,
            finetune_steps: 500,
            finetune_lr_factor: 0.1,
            motion_lr_factor: 1.0,
            grad_clip: None,
            log_every: 10,
        }
    }
}

fn unit() -> f64 {
    1.0
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.motion_lr_factor > 0.0) {
            return Err(Error::Config("motion_lr_factor must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn working_resolution_cap() {
        let mut c = ModelConfig::new(Variant::ClsCor, 3, (64, 48));
        c.scales = 3;
        c.corr_max_cells = 192;
        assert_eq!(c.feature_size(0), (12, 16));
        assert_eq!(c.feature_size(2), (48, 64));
        assert_eq!(c.working_size(0), (12, 16));
        assert_eq!(c.working_size(1), (12, 16));
        assert_eq!(c.working_pool(2), 4);
        c.variant = Variant::ClsCat;
        assert_eq!(c.working_pool(2), 1);
    }

    #[test]
    fn guards() {
        let mut c = ModelConfig::new(Variant::Base, 3, (64, 48));
        c.validate().unwrap();
        c.reference_view = 3;
        assert!(c.validate().is_err());
        let c = ModelConfig::new(Variant::Base, 3, (63, 48));
        assert!(matches!(c.validate(), Err(Error::NotDivisible { .. })));
        assert!(TrainScenario::unsync_only()
            .validate(&LossConfig::for_scenario(LossScenario::SyncPlusUnsync))
            .is_err());
        assert_eq!("cls-epi".parse::<Variant>().unwrap(), Variant::ClsEpi);
    }
}
