//! The two-class ablation: {cold start, unsupervised init} x {single,
//! multi-stage}, fine-tuned under one budget and scored on held-out
//! windows.

use serde::Serialize;

use crate::error::Result;
use crate::network::{error_rate, finetune, Classifier, Network, NetworkSpec, TrainConfig};
use crate::synthetic::two_class_windows;
use crate::unsup::UnsupConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub unsup: bool,
    pub multi_stage: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { unsup: false, multi_stage: false },
        Variant { unsup: true, multi_stage: false },
        Variant { unsup: false, multi_stage: true },
        Variant { unsup: true, multi_stage: true },
    ];

    pub fn name(&self) -> &'static str {
        match (self.unsup, self.multi_stage) {
            (false, false) => "ConvNet-F",
            (true, false) => "ConvNet-U",
            (false, true) => "ConvNet-F-MS",
            (true, true) => "ConvNet-U-MS",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub spec: NetworkSpec,
    pub seeds: Vec<u64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Pretraining uses the first this-many training windows.
    pub unsup_windows: usize,
    pub unsup: UnsupConfig,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let mut unsup = UnsupConfig { epochs: 5, ..Default::default() };
        unsup.fista.max_iters = 100;
        AblationConfig {
            spec: NetworkSpec::small(),
            seeds: vec![1, 2, 3],
            train_per_class: 150,
            test_per_class: 300,
            unsup_windows: 100,
            unsup,
            train: TrainConfig { epochs: 5, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRun {
    pub seed: u64,
    pub variant: Variant,
    pub test_error: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AblationResult {
    pub runs: Vec<AblationRun>,
}

impl AblationResult {
    fn mean_where(&self, keep: impl Fn(&Variant) -> bool) -> f64 {
        let errs: Vec<f64> = self.runs.iter().filter(|r| keep(&r.variant)).map(|r| r.test_error).collect();
        errs.iter().sum::<f64>() / errs.len().max(1) as f64
    }

    pub fn mean(&self, v: Variant) -> f64 {
        self.mean_where(|x| *x == v)
    }

    /// Mean error of multi-stage minus single-stage, averaged over both
    /// initializations and all seeds.
    pub fn multi_stage_effect(&self) -> f64 {
        self.mean_where(|v| v.multi_stage) - self.mean_where(|v| !v.multi_stage)
    }

    /// Mean error of unsupervised init minus cold start, averaged over both
    /// architectures and all seeds.
    pub fn unsup_effect(&self) -> f64 {
        self.mean_where(|v| v.unsup) - self.mean_where(|v| !v.unsup)
    }
}

/// Every variant of one seed shares the training windows, the random
/// initialization and the fine-tuning schedule; only the pretraining and
/// the branch flag differ.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationResult> {
    let mut out = AblationResult::default();
    for &seed in &cfg.seeds {
        let train = two_class_windows(&cfg.spec.window, cfg.train_per_class, seed)?;
        let test = two_class_windows(&cfg.spec.window, cfg.test_per_class, seed.wrapping_add(1_000_000))?;
        let cold = Network::new(cfg.spec.clone(), seed)?;
        let pool = &train[..cfg.unsup_windows.min(train.len())];
        let (pretrained, _) = cold.clone().pretrain(pool, &UnsupConfig { seed, ..cfg.unsup.clone() })?;
        for variant in Variant::ALL {
            let mut net = if variant.unsup { pretrained.clone() } else { cold.clone() };
            net.spec.multi_stage = variant.multi_stage;
            net.classifier = Classifier::zeros(net.spec.geometry()?.classifier_dim);
            let (net, _) = finetune(net, &train, &TrainConfig { seed, ..cfg.train.clone() })?;
            let test_error = error_rate(&net, &test)?;
            log::info!("seed {seed} {}: test error {test_error:.4}", variant.name());
            out.runs.push(AblationRun { seed, variant, test_error });
        }
    }
    Ok(out)
}
