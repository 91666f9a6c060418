pub(crate) mod conv;
pub(crate) mod correlation;
pub(crate) mod resample;
