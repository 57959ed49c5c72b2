use ndarray::{s, Array2};

use super::{ForecastRequest, Forecaster, RolloutError};
use crate::boxmodel::{simulate, Variant};
use crate::dataset::{Mode, Standardizer};

/// Fixed window sizes and scaling shared by the reference forecasters.
#[derive(Clone, Debug)]
struct Frame {
    variant: Variant,
    mode: Mode,
    history: usize,
    horizon: usize,
    standardizer: Standardizer,
}

/// Repeats the last history row over the horizon.
#[derive(Clone, Debug)]
pub struct Persistence(Frame);

impl Persistence {
    pub fn new(
        variant: Variant,
        mode: Mode,
        history: usize,
        horizon: usize,
        standardizer: Standardizer,
    ) -> Self {
        Persistence(Frame {
            variant,
            mode,
            history,
            horizon,
            standardizer,
        })
    }
}

/// Re-runs the simulator on the request's parameters and forcing and
/// returns the true next block. Ignores the history it is given.
#[derive(Clone, Debug)]
pub struct SimulatorOracle(Frame);

impl SimulatorOracle {
    pub fn new(
        variant: Variant,
        mode: Mode,
        history: usize,
        horizon: usize,
        standardizer: Standardizer,
    ) -> Self {
        SimulatorOracle(Frame {
            variant,
            mode,
            history,
            horizon,
            standardizer,
        })
    }
}

macro_rules! frame_accessors {
    () => {
        fn variant(&self) -> Variant {
            self.0.variant
        }

        fn mode(&self) -> Mode {
            self.0.mode
        }

        fn history(&self) -> usize {
            self.0.history
        }

        fn horizon(&self) -> usize {
            self.0.horizon
        }

        fn standardizer(&self) -> &Standardizer {
            &self.0.standardizer
        }
    };
}

impl Forecaster for Persistence {
    frame_accessors!();

    fn forecast(&self, requests: &[ForecastRequest<'_>]) -> Result<Vec<Array2<f64>>, RolloutError> {
        Ok(requests
            .iter()
            .map(|r| {
                let h = r.inputs.history;
                let last = h.row(h.nrows() - 1);
                Array2::from_shape_fn((self.0.horizon, h.ncols()), |(_, j)| last[j])
            })
            .collect())
    }
}

impl Forecaster for SimulatorOracle {
    frame_accessors!();

    fn forecast(&self, requests: &[ForecastRequest<'_>]) -> Result<Vec<Array2<f64>>, RolloutError> {
        requests
            .iter()
            .map(|r| {
                let end = r.start + self.0.horizon;
                let truth = simulate(r.params, r.noise, end)?;
                Ok(self
                    .0
                    .standardizer
                    .transform_channels(truth.channels.slice(s![r.start..end, ..])))
            })
            .collect()
    }
}
