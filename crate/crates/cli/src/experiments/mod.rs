//! One module per command.

pub mod darcy;
pub mod rates;
pub mod source1d;
pub mod toy;
