use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::ssgnc::SsgncConfig;
use crate::tensor::{ParamStore, Tensor};

/// Trainable weights plus the momentum-updated prototypes.
///
/// Store layout: `MLP_in` as `[W, b, W, b]`, then `θ_{l,k,m}` in
/// `(layer, prototype, order)` order, then `MLP_out` as `[W, b, W, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsgncParams {
    pub config: SsgncConfig,
    pub d_in: usize,
    pub store: ParamStore,
    /// One `K×hidden` prototype matrix per layer.
    pub prototypes: Vec<Tensor>,
}

impl SsgncParams {
    pub fn init(config: SsgncConfig, d_in: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if d_in == 0 {
            return Err(Error::InvalidConfig("ssgnc input has no feature columns".into()));
        }
        let h = config.hidden;
        let mut rng = stream(seed, &[0x55, 0]);
        let mut store = ParamStore::new();
        store.insert_glorot("mlp_in.w0", d_in, h, 1.0, &mut rng);
        store.insert("mlp_in.b0", Tensor::zeros(1, h));
        store.insert_glorot("mlp_in.w1", h, h, 1.0, &mut rng);
        store.insert("mlp_in.b1", Tensor::zeros(1, h));
        let theta_gain = 1.0 / (config.cheb_order + 1) as f64;
        for l in 0..config.layers {
            for k in 0..config.prototypes {
                for m in 0..=config.cheb_order {
                    store.insert_glorot(format!("theta.{l}.{k}.{m}"), h, h, theta_gain, &mut rng);
                }
            }
        }
        store.insert_glorot("mlp_out.w0", config.layers * h, h, 1.0, &mut rng);
        store.insert("mlp_out.b0", Tensor::zeros(1, h));
        store.insert_glorot("mlp_out.w1", h, 2, 1.0, &mut rng);
        store.insert("mlp_out.b1", Tensor::zeros(1, 2));

        let mut rng = stream(seed, &[0x55, 1]);
        let prototypes = (0..config.layers)
            .map(|_| {
                let data = (0..config.prototypes * h).map(|_| rng.sample(StandardNormal)).collect();
                Tensor::from_vec(config.prototypes, h, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            d_in,
            store,
            prototypes,
        })
    }

    pub(crate) fn mlp_in(&self) -> [usize; 4] {
        [0, 1, 2, 3]
    }

    pub(crate) fn theta(&self, layer: usize, k: usize, m: usize) -> usize {
        let c = &self.config;
        4 + (layer * c.prototypes + k) * (c.cheb_order + 1) + m
    }

    pub(crate) fn mlp_out(&self) -> [usize; 4] {
        let base = self.theta(self.config.layers, 0, 0);
        [base, base + 1, base + 2, base + 3]
    }

    fn with_prototypes(&self) -> ParamStore {
        let mut all = self.store.clone();
        for (l, c) in self.prototypes.iter().enumerate() {
            all.insert(format!("proto.{l}"), c.clone());
        }
        all
    }

    /// Checkpoint CSV (`name,row,col,value`) including prototypes.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.with_prototypes().save_csv(path)
    }

    /// Loads a checkpoint into parameters shaped by `config` and `d_in`.
    pub fn load_csv(config: SsgncConfig, d_in: usize, path: &Path) -> Result<Self> {
        let mut p = Self::init(config, d_in, 0)?;
        let mut all = p.with_prototypes();
        all.load_csv(path)?;
        let n = p.store.len();
        p.store.tensors_mut().clone_from_slice(&all.tensors()[..n]);
        p.prototypes = all.tensors()[n..].to_vec();
        Ok(p)
    }
}
