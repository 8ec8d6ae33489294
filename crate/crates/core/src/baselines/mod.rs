//! Reference models: ProMP and the CNMP family.

mod cnmp;
mod promp;

pub use cnmp::{
    cnmp_train, CnmpConfig, CnmpKind, CnmpModel, CnmpPrediction, CnmpVariant, Padding, TrainedCnmp, SIGMA_MAX,
    SIGMA_MIN,
};
pub use promp::{basis, promp_fit, PrompConfig, PrompModel, DEFAULT_BASES, DEFAULT_RIDGE};
