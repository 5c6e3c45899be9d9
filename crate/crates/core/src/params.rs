//! Public protocol parameters and their feasibility checks.
//!
//! Every party derives the same coefficient bounds and discrete-log window from
//! (l, t, slope range), so nothing about individual thresholds is published.

use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::sharing::RingParams;

pub const DEFAULT_RING_BITS: u32 = 16;
pub const DEFAULT_FEATURE_BITS: u32 = 7;
pub const DEFAULT_SECURITY_BITS: u32 = 112;
/// Slopes are drawn from [1, SLOPE_MAX].
pub const SLOPE_MAX: u64 = 99;
/// Largest window whose baby-step giant-step recovery stays desk-feasible
/// (sqrt(2W+1) <= 2^24 multiplications per decryption).
pub const MAX_FEASIBLE_WINDOW: u64 = 1 << 47;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub ring: RingParams,
    pub feature_bits: u32,
    pub slope_max: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams::new(DEFAULT_RING_BITS, DEFAULT_FEATURE_BITS).expect("defaults are feasible")
    }
}

impl ProtocolParams {
    /// Validated parameters; see [`check`](Self::check) for the inequalities.
    pub fn new(ring_bits: u32, feature_bits: u32) -> Result<Self> {
        if ring_bits > crate::sharing::MAX_RING_BITS && feature_bits < 64 {
            let domain = 1u128 << feature_bits;
            let bounds = (1 + 2 * SLOPE_MAX as u128 * (domain - 1)) + 2 * SLOPE_MAX as u128;
            let window = bounds.checked_shl(ring_bits).filter(|w| ring_bits < 128 && *w >> ring_bits == bounds);
            let shown = window.map_or_else(|| format!("(A_max + B_max) * 2^{ring_bits}"), |w| w.to_string());
            return Err(Error::Infeasible(format!(
                "(A_max + B_max) * 2^l = {shown} exceeds the recoverable window {MAX_FEASIBLE_WINDOW} \
                 for l = {ring_bits}; the discrete-log backend needs l <= {}",
                crate::sharing::MAX_RING_BITS
            )));
        }
        let ring = RingParams::new(ring_bits)?;
        let params = ProtocolParams { ring, feature_bits, slope_max: SLOPE_MAX };
        params.check()?;
        Ok(params)
    }

    /// Largest |A| = 1 + 2 * slope_max * (2^t - 1).
    pub fn a_max(&self) -> u64 {
        1 + 2 * self.slope_max * (self.feature_domain() - 1)
    }

    /// Largest B = 2 * slope_max.
    pub fn b_max(&self) -> u64 {
        2 * self.slope_max
    }

    /// Number of quantized feature values, 2^t.
    pub fn feature_domain(&self) -> u64 {
        1u64 << self.feature_bits
    }

    /// Largest |R| = |A + B X| over all thresholds, slopes and features.
    pub fn max_evaluation(&self) -> u64 {
        // A + B X = 1 + 2b(X - theta) with X, theta in [0, 2^t).
        1 + 2 * self.slope_max * (self.feature_domain() - 1)
    }

    /// Per-share decryption window W = (A_max + B_max) * 2^l.
    pub fn window(&self) -> u64 {
        (self.a_max() + self.b_max()) * self.ring.modulus()
    }

    /// Feasibility: the reconstructed evaluation must decode unambiguously
    /// (max |R| < 2^(l-1)) and the per-share window must be recoverable.
    pub fn check(&self) -> Result<()> {
        if self.feature_bits == 0 || self.feature_bits >= self.ring.bits() {
            return Err(Error::Infeasible(format!(
                "feature bits t = {} must satisfy 0 < t < l = {}",
                self.feature_bits,
                self.ring.bits()
            )));
        }
        if self.slope_max == 0 {
            return Err(Error::Infeasible("slope range is empty".into()));
        }
        let max_r = self.max_evaluation();
        if max_r >= self.ring.half() {
            return Err(Error::Infeasible(format!(
                "1 + 2*{}*(2^{} - 1) = {max_r} is not below 2^(l-1) = {}; \
                 lower t or raise l",
                self.slope_max,
                self.feature_bits,
                self.ring.half()
            )));
        }
        let window = self.window();
        if window > MAX_FEASIBLE_WINDOW {
            return Err(Error::Infeasible(format!(
                "(A_max + B_max) * 2^l = {window} exceeds the recoverable window {MAX_FEASIBLE_WINDOW}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u8(self.ring.bits() as u8).u8(self.feature_bits as u8).u64(self.slope_max);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self> {
        let ring = RingParams::new(r.u8()? as u32)?;
        let feature_bits = r.u8()? as u32;
        let slope_max = r.u64()?;
        let params = ProtocolParams { ring, feature_bits, slope_max };
        params.check()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bounds() {
        let p = ProtocolParams::default();
        assert_eq!(p.a_max(), 1 + 198 * 127);
        assert_eq!(p.b_max(), 198);
        assert_eq!(p.window(), (25_147 + 198) * 65_536);
        assert!(p.max_evaluation() < 1 << 15);
    }

    #[test]
    fn wide_features_rejected_at_sixteen_bits() {
        let err = ProtocolParams::new(16, 10).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("2^(l-1)")), "{err}");
        // Twenty bits accommodate ten-bit features.
        let p = ProtocolParams::new(20, 10).unwrap();
        assert_eq!(p.a_max(), 1 + 198 * 1023);
    }

    #[test]
    fn sixty_four_bit_ring_refused() {
        let err = ProtocolParams::new(64, 7).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("(A_max + B_max) * 2^l")), "{err}");
    }

    #[test]
    fn encoding_round_trip() {
        let p = ProtocolParams::default();
        let mut w = Writer::new();
        p.encode(&mut w);
        let bytes = w.finish();
        assert_eq!(ProtocolParams::read(&mut Reader::new(&bytes)).unwrap(), p);
    }
}
