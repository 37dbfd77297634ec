//! Bootstrap CSMC: proposals from the prior mutation kernel, weights from
//! the potential. Reduces to the independence sampler at `T = N = 1`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::csmc::{KernelStrategy, LineageView, SweepConfig, SweepCtx};
use crate::error::{Error, Result};
use crate::model::{FeynmanKac, Trajectory};
use crate::Prng;

pub struct BootstrapCsmc {
    model: Arc<dyn FeynmanKac>,
}

impl BootstrapCsmc {
    pub fn new(model: Arc<dyn FeynmanKac>) -> Result<Self> {
        if model.decomposition().is_none() {
            return Err(Error::config(
                "bootstrap CSMC requires a sampleable mutation/potential decomposition",
            ));
        }
        Ok(Self { model })
    }
}

impl KernelStrategy for BootstrapCsmc {
    fn name(&self) -> &str {
        if self.model.horizon() == 1 {
            "imh1"
        } else {
            "csmc"
        }
    }

    fn model(&self) -> &dyn FeynmanKac {
        self.model.as_ref()
    }

    fn sample_aux(
        &self,
        _reference: &Trajectory,
        _config: &SweepConfig,
        _rng: &mut Prng,
    ) -> Result<Option<Vec<DVector<f64>>>> {
        Ok(None)
    }

    fn begin_sweep<'a>(
        &'a self,
        _reference: &'a Trajectory,
        _aux: Option<&'a [DVector<f64>]>,
        _config: &SweepConfig,
    ) -> Result<Box<dyn SweepCtx + 'a>> {
        Ok(Box::new(BootstrapCtx { model: self.model.as_ref() }))
    }
}

struct BootstrapCtx<'a> {
    model: &'a dyn FeynmanKac,
}

impl SweepCtx for BootstrapCtx<'_> {
    fn propose(&self, t: usize, ancestor: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        self.model.decomposition().unwrap().sample_m(t, ancestor, rng)
    }

    fn log_weight(&self, t: usize, _slot: usize, lin: &LineageView) -> f64 {
        self.model.decomposition().unwrap().log_g(t, lin.x_prev, lin.x)
    }

    fn log_q_factor(&self, t: usize, lin: &LineageView) -> f64 {
        self.model.log_q(t, lin.x_prev, lin.x)
    }
}
