//! Architecture hyperparameters and derived extents.

use crate::error::{Error, Result};

/// Hyperparameters of the dimension-gated network.
///
/// The input is a `(in_channels, doppler_bins, time_steps)` map. A fuse
/// convolution collapses channels, max pooling halves both axes (giving
/// the working extents `h_prime` by `w_prime`), a column-spanning embed
/// convolution lifts each time instant into `embed_dim` channels, two
/// full cross-channel time convolutions produce the gate and content
/// paths, and three cascaded 2D convolutions refine the content map
/// before the gated combine, averaging head, and dense classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateCnnConfig {
    /// Input channels of the raw map.
    pub in_channels: usize,
    /// Doppler bins (input height).
    pub doppler_bins: usize,
    /// Time steps (input width).
    pub time_steps: usize,
    /// Fuse convolution kernel; odd extents, same padding.
    pub fuse_kernel: (usize, usize),
    /// Pooling window, also used as the pooling stride.
    pub pool: (usize, usize),
    /// Channels of the embedding produced per time instant.
    pub embed_dim: usize,
    /// Taps of the gate/content time convolutions; odd.
    pub gate_taps: usize,
    /// Channels of the two inner cascade convolutions.
    pub content_channels: usize,
    /// Cascade convolution kernel; odd extents, same padding.
    pub cascade_kernel: (usize, usize),
    /// Output classes.
    pub num_classes: usize,
}

impl Default for GateCnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            doppler_bins: 30,
            time_steps: 28,
            fuse_kernel: (3, 3),
            pool: (2, 2),
            embed_dim: 16,
            gate_taps: 3,
            content_channels: 8,
            cascade_kernel: (3, 3),
            num_classes: 6,
        }
    }
}

impl GateCnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.doppler_bins == 0 || self.time_steps == 0 {
            return Err(Error::Config("doppler_bins and time_steps must be >= 1".into()));
        }
        if self.pool.0 == 0 || self.pool.1 == 0 {
            return Err(Error::Config("pool extents must be >= 1".into()));
        }
        if self.doppler_bins % self.pool.0 != 0 {
            return Err(Error::Config(format!(
                "doppler_bins {} not divisible by pool height {}",
                self.doppler_bins, self.pool.0
            )));
        }
        if self.time_steps % self.pool.1 != 0 {
            return Err(Error::Config(format!(
                "time_steps {} not divisible by pool width {}",
                self.time_steps, self.pool.1
            )));
        }
        if self.fuse_kernel.0 % 2 == 0 || self.fuse_kernel.1 % 2 == 0 {
            return Err(Error::Config(format!(
                "fuse_kernel {:?} must have odd extents for same padding",
                self.fuse_kernel
            )));
        }
        if self.cascade_kernel.0 % 2 == 0 || self.cascade_kernel.1 % 2 == 0 {
            return Err(Error::Config(format!(
                "cascade_kernel {:?} must have odd extents for same padding",
                self.cascade_kernel
            )));
        }
        if self.gate_taps % 2 == 0 {
            return Err(Error::Config(format!("gate_taps {} must be odd", self.gate_taps)));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be >= 1".into()));
        }
        if self.content_channels == 0 {
            return Err(Error::Config("content_channels must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        Ok(())
    }

    /// Doppler extent after pooling.
    pub fn h_prime(&self) -> usize {
        self.doppler_bins / self.pool.0
    }

    /// Time extent after pooling.
    pub fn w_prime(&self) -> usize {
        self.time_steps / self.pool.1
    }

    /// Same padding of the fuse convolution.
    pub fn fuse_padding(&self) -> (usize, usize) {
        (self.fuse_kernel.0 / 2, self.fuse_kernel.1 / 2)
    }

    /// Same padding of the cascade convolutions.
    pub fn cascade_padding(&self) -> (usize, usize) {
        (self.cascade_kernel.0 / 2, self.cascade_kernel.1 / 2)
    }

    /// Expected input shape `(in_channels, doppler_bins, time_steps)`.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.doppler_bins, self.time_steps]
    }
}
