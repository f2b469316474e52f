use crate::field::{FixedPointCodec, PrimeField};
use crate::masking::DhGroup;
use crate::poly::{EvaluationPoints, ParamError, ProtocolParams};
use crate::union::Vocabulary;

/// Public parameters every party holds.
#[derive(Clone, Debug)]
pub struct SessionContext {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub rounds: u32,
    pub field: PrimeField,
    pub codec: FixedPointCodec,
    /// Explicit evaluation points; the standard ones are used otherwise.
    pub points: Option<EvaluationPoints>,
    pub paillier_bits: u64,
    pub group: DhGroup,
    pub vocabulary: Vocabulary,
    pub union_salt: [u8; 32],
    /// Server computes `r`, `noise` and `enc(noise)` when a query slot opens
    /// rather than when each response arrives.
    pub precompute: bool,
    /// Clients send their shares unmasked. Negative control for the
    /// server-view audit.
    #[cfg(feature = "sabotage")]
    pub leak_raw_shares: bool,
}

impl SessionContext {
    pub fn params(&self, m: usize) -> Result<ProtocolParams, ParamError> {
        match &self.points {
            Some(p) => ProtocolParams::with_points(self.field, self.n, self.t, m, self.d, p.clone()),
            None => ProtocolParams::new(self.field, self.n, self.t, m, self.d),
        }
    }

    pub fn leaks_raw_shares(&self) -> bool {
        #[cfg(feature = "sabotage")]
        {
            self.leak_raw_shares
        }
        #[cfg(not(feature = "sabotage"))]
        {
            false
        }
    }
}
